//! Central finite-difference oracle for reverse-mode gradients.
//!
//! Everything here runs in `f64`; the truncation error of the central
//! difference at `h = 1e-4` is far below the comparison tolerance.

use super::{backward, Element, Tensor, TensorError};

/// Default perturbation for [`gradcheck`].
pub const DEFAULT_H: f64 = 1e-4;

/// Comparison outcome for one input point.
#[derive(Debug)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

/// Largest relative disagreement between two gradient vectors, with the
/// denominator floored so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Compare the reverse-mode gradient of `f` at `x0` against central finite
/// differences with step `h`.
///
/// `f` must map its input to a scalar tensor and be deterministic, since it
/// is re-evaluated at `2n` perturbed points.
pub fn gradcheck<F>(x0: &[f64], shape: &[usize], h: f64, f: F) -> Result<GradReport, TensorError>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>, TensorError>,
{
    let x = Tensor::param(x0.to_vec(), shape)?;
    let loss = f(&x)?;
    if loss.len() != 1 {
        return Err(TensorError::Contract(format!(
            "gradcheck needs a scalar objective, got shape {:?}",
            loss.shape()
        )));
    }
    let grads = backward(&loss)?;
    let analytic = grads
        .get(&x)
        .map(|g| g.to_f64_vec())
        .unwrap_or_else(|| vec![0.0; x0.len()]);

    let mut numeric = Vec::with_capacity(x0.len());
    let mut probe = x0.to_vec();
    for i in 0..x0.len() {
        probe[i] = x0[i] + h;
        let up = eval(&probe, shape, &f)?;
        probe[i] = x0[i] - h;
        let down = eval(&probe, shape, &f)?;
        probe[i] = x0[i];
        numeric.push((up - down) / (2.0 * h));
    }

    let max_rel_error = max_rel_error(&analytic, &numeric);
    Ok(GradReport {
        analytic,
        numeric,
        max_rel_error,
    })
}

fn eval<F>(x: &[f64], shape: &[usize], f: &F) -> Result<f64, TensorError>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>, TensorError>,
{
    let t = Tensor::from_vec(x.to_vec(), shape)?;
    f(&t)?.item().map(Element::to_f64)
}
