//! Central-difference gradient verification. Everything differentiable in
//! this crate is checked against this harness at f64; the hand-derived
//! backward passes are only trusted because these comparisons pass.

use crate::error::Result;
use crate::tensor::Tensor;

/// Compare an analytic gradient against central differences of `f` around
/// `theta`, elementwise. Returns the worst relative error, where the
/// denominator max(|analytic|, |numeric|, 1e-8) keeps near-zero coordinates
/// from dividing the comparison to pieces.
pub fn grad_check<F>(mut f: F, theta: &Tensor<f64>, analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    assert_eq!(theta.numel(), analytic.len());
    let mut worst = 0.0f64;
    for i in 0..theta.numel() {
        let mut tp = theta.clone();
        tp.data_mut()[i] += eps;
        let mut tm = theta.clone();
        tm.data_mut()[i] -= eps;
        let numeric = (f(&tp)? - f(&tm)?) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (numeric - analytic[i]).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// Same comparison restricted to a subset of coordinates — for parameter
/// tensors large enough that perturbing every element would dominate a test
/// run without adding information.
pub fn grad_check_subset<F>(
    mut f: F,
    theta: &Tensor<f64>,
    analytic: &[f64],
    indices: &[usize],
    eps: f64,
) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    assert_eq!(theta.numel(), analytic.len());
    let mut worst = 0.0f64;
    for &i in indices {
        let mut tp = theta.clone();
        tp.data_mut()[i] += eps;
        let mut tm = theta.clone();
        tm.data_mut()[i] -= eps;
        let numeric = (f(&tp)? - f(&tm)?) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (numeric - analytic[i]).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
