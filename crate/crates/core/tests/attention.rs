#[path = "support/checks.rs"]
#[allow(dead_code)]
mod checks;

#[test]
fn rows_sum_to_one_minus_lambda() {
    checks::row_sums(20, 1e-5).unwrap();
}

#[test]
fn zero_lambda_is_standard_attention() {
    checks::lambda_zero_matches_reference(5, 1e-6).unwrap();
}

#[test]
fn tied_halves_cancel_at_unit_lambda() {
    checks::tied_halves_cancel(5).unwrap();
}

#[test]
fn cross_modal_switch_isolates_streams() {
    checks::ca_off_isolates_eeg(2).unwrap();
}

#[test]
fn explicit_full_ablation_is_default_build() {
    checks::all_flags_equal_default(0).unwrap();
}

