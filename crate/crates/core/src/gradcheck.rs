//! Central-difference verification of tape gradients.
//!
//! A check passes when, for every input coordinate,
//! `|analytic - numeric| / max(1, |numeric|) <= tol` with step `h = 1e-5`.

use alloc::vec::Vec;
use core::fmt;

use crate::error::Error;
use crate::rng::{stream, uniform};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub coordinates: usize,
    pub max_error: f64,
}

/// The worst offending coordinate of a failed check.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheckError {
    Op(Error),
    Mismatch(Mismatch),
}

impl fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Op(e) => write!(f, "op failed during gradient check: {e}"),
            Self::Mismatch(m) => write!(
                f,
                "gradient mismatch at input {} coordinate {}: analytic {:.9e}, numeric {:.9e} (error {:.3e})",
                m.input, m.index, m.analytic, m.numeric, m.error
            ),
        }
    }
}

impl From<Error> for GradCheckError {
    fn from(e: Error) -> Self {
        Self::Op(e)
    }
}

/// Reduce a possibly non-scalar output to a scalar with fixed pseudo-random
/// weights, so every output coordinate contributes to the check.
fn scalarize(g: &mut Graph<f64>, out: Var) -> Result<Var, Error> {
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let mut rng = stream(g.value(out).len() as u64, "gradcheck-projection");
    let w: Vec<f64> = (0..g.value(out).len()).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, Error>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, Error>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    Ok(g.value(s).item())
}

/// Tape gradients of `f` with respect to each input.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>, Error>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, Error>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    let grads = g.backward(s);
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Compare supplied gradients against central differences of `f`.
pub fn compare_gradients<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    tol: f64,
) -> Result<GradReport, GradCheckError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, Error>,
{
    let mut worst: Option<Mismatch> = None;
    let mut coordinates = 0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        for index in 0..grad.len() {
            let orig = probe[input].data()[index];
            probe[input].data_mut()[index] = orig + STEP;
            let up = evaluate(f, &probe)?;
            probe[input].data_mut()[index] = orig - STEP;
            let down = evaluate(f, &probe)?;
            probe[input].data_mut()[index] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = grad.data()[index];
            let error = (a - numeric).abs() / numeric.abs().max(1.0);
            coordinates += 1;
            if worst.as_ref().is_none_or(|w| error > w.error) {
                worst = Some(Mismatch { input, index, analytic: a, numeric, error });
            }
        }
    }
    let max_error = worst.as_ref().map_or(0.0, |w| w.error);
    match worst {
        Some(w) if !(w.error <= tol) => Err(GradCheckError::Mismatch(w)),
        _ => Ok(GradReport { coordinates, max_error }),
    }
}

/// Check the tape's backward pass of `f` at `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], tol: f64) -> Result<GradReport, GradCheckError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, Error>,
{
    let analytic = analytic_gradients(&f, inputs)?;
    compare_gradients(&f, inputs, &analytic, tol)
}

/// Random tensor with entries in `[-scale, scale]`, for check inputs.
pub fn random_tensor(seed: u64, tag: &str, shape: &[usize], scale: f64) -> Tensor<f64> {
    let mut rng = stream(seed, tag);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| uniform(&mut rng, -scale, scale)).collect()).expect("shape agrees")
}
