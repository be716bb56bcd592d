//! Central-difference verification of analytic gradients.

use super::net::{DenseNetParams, GradientBundle};
use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Scale-guarded relative error: `|a - n| / max(1, |a|, |n|)`.
fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Compare `analytic` against central differences of `loss` over a flat
/// parameter vector. The loss is evaluated at `theta +- step` per coordinate.
pub fn gradient_check_flat<F>(
    theta: &[f64],
    mut loss: F,
    analytic: &[f64],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if theta.len() != analytic.len() {
        return Err(Error::Shape("analytic gradient length mismatch".into()));
    }
    let mut probe = theta.to_vec();
    let mut max_rel = 0.0_f64;
    let mut worst = 0;
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe)?;
        probe[i] = orig - step;
        let down = loss(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss not finite near parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * step);
        let rel = rel_error(analytic[i], numeric);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradCheckReport { n_params: theta.len(), max_rel_error: max_rel, worst_index: worst, tol })
}

/// Verify an analytic [`GradientBundle`] for a scalar loss of the network
/// parameters. Passes iff the max per-parameter relative error is within
/// `tol`.
pub fn gradient_check<F>(
    params: &DenseNetParams,
    mut loss: F,
    analytic: &GradientBundle,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&DenseNetParams) -> Result<f64>,
{
    let theta = params.flatten();
    let flat_analytic = analytic.flatten();
    let mut scratch = params.clone();
    gradient_check_flat(
        &theta,
        move |flat| {
            scratch.unflatten_from(flat)?;
            loss(&scratch)
        },
        &flat_analytic,
        step,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::net::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn quadratic_loss_checks_out() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let net = DenseNetParams::random(&[3, 4, 2], Activation::Relu, &mut rng);
        // loss = ||theta||^2 / 2, gradient = theta.
        let mut analytic = GradientBundle::zeros_like(&net);
        analytic.layers.clone_from(&net.layers);
        let report = gradient_check(
            &net,
            |p| Ok(p.flatten().iter().map(|v| v * v).sum::<f64>() / 2.0),
            &analytic,
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn wrong_gradient_fails() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let net = DenseNetParams::random(&[2, 2], Activation::Identity, &mut rng);
        let mut analytic = GradientBundle::zeros_like(&net);
        analytic.layers.clone_from(&net.layers);
        analytic.scale(2.5); // deliberately wrong
        let report = gradient_check(
            &net,
            |p| Ok(p.flatten().iter().map(|v| v * v).sum::<f64>() / 2.0),
            &analytic,
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_loss_is_an_evaluation_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let net = DenseNetParams::random(&[2, 2], Activation::Identity, &mut rng);
        let analytic = GradientBundle::zeros_like(&net);
        let err = gradient_check(&net, |_| Ok(f64::NAN), &analytic, 1e-5, 1e-7);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
