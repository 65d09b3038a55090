//! Scalar math kernels shared by the graph ops and the cache-path scorers.
//!
//! Both paths must produce bit-identical values, so every formula that
//! appears in a graph op and in a plain (no-tape) scoring routine lives
//! here exactly once.

use crate::scalar::Scalar;

/// Sequential dot product, accumulated in index order.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for i in 0..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// Cosine similarity with the zero-vector guard: a zero norm on either
/// side yields similarity 0.
#[inline]
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    dot(a, b) / (na * nb)
}

/// Gaussian kernel activation `exp(-(x - mu)^2 / (2 sigma^2))`.
#[inline]
pub fn gauss_kernel<S: Scalar>(x: S, mu: S, sigma: S) -> S {
    let d = x - mu;
    (-(d * d) / (S::of(2.0) * sigma * sigma)).exp()
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Gaussian error linear unit, tanh approximation (smooth everywhere,
/// which keeps finite-difference gradient checks clean).
#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of(0.7978845608028654); // sqrt(2/pi)
    let k = S::of(0.044715);
    let u = c * (x + k * x * x * x);
    S::of(0.5) * x * (S::one() + u.tanh())
}

/// Derivative of [`gelu`].
#[inline]
pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of(0.7978845608028654);
    let k = S::of(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (S::one() + S::of(3.0) * k * x * x);
    S::of(0.5) * (S::one() + t) + S::of(0.5) * x * (S::one() - t * t) * du
}

/// `out[i*n..][..n] = row-major (m,k) x (k,n)`, inner loop over k then n
/// so the accumulation order is fixed.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// `out = a (m,k) x b^T` where `b` is stored as `(n,k)`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out = a^T (k,m) x c` where `a` is stored as `(m,k)` and `c` as `(m,n)`.
pub fn matmul_tn<S: Scalar>(a: &[S], c: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for v in out.iter_mut() {
        *v = S::zero();
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * crow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_stable_for_large_inputs() {
        assert!(softplus(800.0f64).is_finite());
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-9);
        assert_eq!(softplus(-800.0f64), 0.0);
    }

    #[test]
    fn cosine_zero_guard() {
        assert_eq!(cosine::<f64>(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine::<f64>(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]
        let mut out = vec![0.0f64; 2];
        matmul(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2, 1, &mut out);
        assert_eq!(out, vec![3.0, 7.0]);
    }
}
