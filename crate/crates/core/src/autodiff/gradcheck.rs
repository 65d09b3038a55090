//! Central finite-difference gradient checking.

use crate::scalar::Scalar;

use super::graph::{Graph, TapeError, Var};
use super::tensor::Tensor;

/// Compare the analytic gradient of a scalar-valued tensor function
/// against central finite differences `(f(x+h) - f(x-h)) / 2h`.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<S, F>(f: F, x: &Tensor<S>, h: f64) -> Result<f64, TapeError>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, Var) -> Result<Var, TapeError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |t: &Tensor<S>| -> Result<f64, TapeError> {
        let mut g = Graph::new();
        let v = g.leaf(t.clone(), false)?;
        let y = f(&mut g, v)?;
        let ty = g.value(y);
        if !ty.is_scalar() {
            return Err(TapeError::NonScalarLoss {
                shape: ty.shape().to_vec(),
            });
        }
        Ok(ty.first().as_f64())
    };

    // Analytic gradient.
    let mut g = Graph::new();
    let v = g.leaf(x.clone(), true)?;
    let y = f(&mut g, v)?;
    if !g.value(y).is_scalar() {
        return Err(TapeError::NonScalarLoss {
            shape: g.value(y).shape().to_vec(),
        });
    }
    g.backward(y)?;
    let analytic = g.grad_or_zeros(v);

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let base = x.data()[i];
        let mut plus = x.clone();
        plus.data_mut()[i] = base + S::of(h);
        let mut minus = x.clone();
        minus.data_mut()[i] = base - S::of(h);
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let err = (analytic[i].as_f64() - numeric).abs() / numeric.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
