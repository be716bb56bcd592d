//! Diagonal Gaussian action distributions: log-density, KL divergence, and
//! the parameter gradients the policy-gradient and distillation losses need.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

const LOG_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian over continuous actions.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianActionDist {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl GaussianActionDist {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() {
            return Err(Error::Shape("mean/stddev length mismatch".into()));
        }
        if stddev.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("stddev must be strictly positive".into()));
        }
        Ok(GaussianActionDist { mean, stddev })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.stddev)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }
}

/// Log-density of `action` under `dist`:
/// `sum_i [ -(a_i - mu_i)^2 / (2 sigma_i^2) - log sigma_i - log(2 pi)/2 ]`.
pub fn gaussian_log_prob(dist: &GaussianActionDist, action: &[f64]) -> Result<f64> {
    if action.len() != dist.dim() {
        return Err(Error::Shape(format!(
            "action dim {} vs distribution dim {}",
            action.len(),
            dist.dim()
        )));
    }
    if dist.stddev.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("stddev must be strictly positive".into()));
    }
    let mut lp = 0.0;
    for i in 0..dist.dim() {
        let z = (action[i] - dist.mean[i]) / dist.stddev[i];
        lp += -0.5 * z * z - dist.stddev[i].ln() - 0.5 * LOG_2PI;
    }
    Ok(lp)
}

/// Gradient of [`gaussian_log_prob`] with respect to the mean and the
/// log-stddev (the parameterization the policy stores).
pub fn gaussian_log_prob_grad(
    dist: &GaussianActionDist,
    action: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if action.len() != dist.dim() {
        return Err(Error::Shape("action dim mismatch".into()));
    }
    let mut d_mean = vec![0.0; dist.dim()];
    let mut d_log_std = vec![0.0; dist.dim()];
    for i in 0..dist.dim() {
        let var = dist.stddev[i] * dist.stddev[i];
        let diff = action[i] - dist.mean[i];
        d_mean[i] = diff / var;
        d_log_std[i] = diff * diff / var - 1.0;
    }
    Ok((d_mean, d_log_std))
}

/// KL divergence `KL(p || q)` between diagonal Gaussians:
/// `sum_i [ log(sq_i/sp_i) + (sp_i^2 + (mp_i - mq_i)^2) / (2 sq_i^2) - 1/2 ]`.
///
/// Non-negative, zero iff `p == q`.
pub fn kl_diag_gaussian(p: &GaussianActionDist, q: &GaussianActionDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape("KL between different dimensions".into()));
    }
    if p.stddev.iter().chain(&q.stddev).any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("stddev must be strictly positive".into()));
    }
    let mut kl = 0.0;
    for i in 0..p.dim() {
        let vp = p.stddev[i] * p.stddev[i];
        let vq = q.stddev[i] * q.stddev[i];
        let diff = p.mean[i] - q.mean[i];
        kl += (q.stddev[i] / p.stddev[i]).ln() + (vp + diff * diff) / (2.0 * vq) - 0.5;
    }
    Ok(kl)
}

/// Gradient of `KL(p || q)` with respect to `p`'s mean and log-stddev,
/// holding `q` fixed (the teacher side of distillation).
pub fn kl_diag_gaussian_grad_p(
    p: &GaussianActionDist,
    q: &GaussianActionDist,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.dim() != q.dim() {
        return Err(Error::Shape("KL between different dimensions".into()));
    }
    let mut d_mean = vec![0.0; p.dim()];
    let mut d_log_std = vec![0.0; p.dim()];
    for i in 0..p.dim() {
        let vp = p.stddev[i] * p.stddev[i];
        let vq = q.stddev[i] * q.stddev[i];
        d_mean[i] = (p.mean[i] - q.mean[i]) / vq;
        d_log_std[i] = vp / vq - 1.0;
    }
    Ok((d_mean, d_log_std))
}
