//! Slice-level loops shared by the tape ops.
//!
//! All matrices are row-major. The `*_acc` kernels accumulate into `c`.

use crate::scalar::Real;

/// Dot product with eight independent accumulators so the loop vectorises.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `C[n,m] += A[n,k] B[k,m]`
pub fn matmul_nn_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip != T::zero() {
                axpy(aip, &b[p * m..(p + 1) * m], crow);
            }
        }
    }
}

/// `C[n,m] += A[n,k] B[m,k]^T`
pub fn matmul_nt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            c[i * m + j] = c[i * m + j] + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `C[n,m] += A[k,n]^T B[k,m]`
pub fn matmul_tn_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for p in 0..k {
        let brow = &b[p * m..(p + 1) * m];
        for i in 0..n {
            let api = a[p * n + i];
            if api != T::zero() {
                axpy(api, brow, &mut c[i * m..(i + 1) * m]);
            }
        }
    }
}

/// Tanh approximation of GELU and its derivative.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::of(0.797_884_560_802_865_4); // sqrt(2/pi)
    let inner = c * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + tanh(inner))
}

/// `1 - 2 / (exp(2u) + 1)`: one `exp` instead of a library `tanh`, which is
/// noticeably slower for `f32`.
#[inline]
fn tanh<T: Real>(u: T) -> T {
    T::one() - T::of(2.0) / ((u + u).exp() + T::one())
}

/// Value and derivative, sharing one `exp`.
#[inline]
pub fn gelu_with_grad<T: Real>(x: T) -> (T, T) {
    let c = T::of(0.797_884_560_802_865_4);
    let x2 = x * x;
    let t = tanh(c * (x + T::of(0.044715) * x2 * x));
    let dinner = c * (T::one() + T::of(3.0 * 0.044715) * x2);
    let half = T::of(0.5);
    (half * x * (T::one() + t), half * (T::one() + t) + half * x * (T::one() - t * t) * dinner)
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(0.797_884_560_802_865_4);
    let x2 = x * x;
    let inner = c * (x + T::of(0.044715) * x2 * x);
    let t = tanh(inner);
    let dinner = c * (T::one() + T::of(3.0 * 0.044715) * x2);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dot_matches_naive_for_ragged_lengths() {
        for n in [0usize, 1, 7, 8, 9, 17, 33] {
            let a: alloc::vec::Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 3.0).collect();
            let b: alloc::vec::Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_products_agree() {
        // A: 2x3, B: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = vec![0.0f64; 4];
        matmul_nn_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c2 = vec![0.0f64; 4];
        matmul_nt_acc(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = vec![0.0f64; 4];
        matmul_tn_acc(&at, &b, &mut c3, 2, 3, 2);
        assert_eq!(c, c3);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
            assert_eq!(gelu_with_grad(x), (gelu(x), gelu_grad(x)));
        }
    }
}
