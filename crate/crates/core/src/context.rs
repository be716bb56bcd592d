//! Incremental context detection.
//!
//! Contexts form an infinite Gaussian mixture over environment features with
//! a Chinese-restaurant-process prior. For each incoming task feature, a
//! potential new context is instantiated at the feature itself; the
//! posterior over `K+1` candidates decides whether to keep it; centroids are
//! then nudged toward the feature with posterior-weighted steps; and the
//! final assignment is the MAP of the updated predictive likelihood.
//!
//! All densities are evaluated in log space and normalized by max-shifted
//! exponentiation.

use crate::error::{Error, Result};
use crate::features::FeatureVector;

const LOG_2PI: f64 = 1.8378770664093453;

/// How centroids move toward an assigned feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CentroidUpdate {
    /// Step `eta * p * (x - mu)`: the plain residual, which for a lone
    /// context with full posterior reduces to the running mean.
    Normalized,
    /// Step `eta * p * (x - mu) / sigma^2`: the raw log-likelihood gradient.
    /// Overshoots the residual by `1/sigma^2` when the variance is small.
    Literal,
}

impl std::str::FromStr for CentroidUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(CentroidUpdate::Normalized),
            "literal" => Ok(CentroidUpdate::Literal),
            other => Err(Error::Parse(format!("unknown centroid update {other:?}"))),
        }
    }
}

impl CentroidUpdate {
    pub fn as_str(&self) -> &'static str {
        match self {
            CentroidUpdate::Normalized => "normalized",
            CentroidUpdate::Literal => "literal",
        }
    }
}

/// CRP state plus per-context Gaussian centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextRegistry {
    mu: Vec<Vec<f64>>,
    counts: Vec<u32>,
    alpha: f64,
    sigma2: f64,
    t: u32,
    update_rule: CentroidUpdate,
}

/// Outcome of one detection: the assigned context, whether a new context was
/// instantiated, and the normalized posterior over the `K+1` candidates that
/// were considered.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Assigned context index (0-based).
    pub z_star: usize,
    pub is_new: bool,
    pub posterior: Vec<f64>,
}

impl ContextRegistry {
    /// Seed the registry with the very first task, which is assigned to
    /// context 0 by convention without any inference.
    pub fn first(x: &FeatureVector, alpha: f64, sigma2: f64, update_rule: CentroidUpdate) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Domain("alpha must be positive".into()));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::Domain("sigma2 must be positive".into()));
        }
        if x.x.is_empty() || !x.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("feature must be non-empty and finite".into()));
        }
        Ok(ContextRegistry {
            mu: vec![x.x.clone()],
            counts: vec![1],
            alpha,
            sigma2,
            t: 1,
            update_rule,
        })
    }

    /// Rebuild a registry from raw parts (checkpoint restore).
    pub fn from_parts(
        mu: Vec<Vec<f64>>,
        counts: Vec<u32>,
        alpha: f64,
        sigma2: f64,
        t: u32,
        update_rule: CentroidUpdate,
    ) -> Result<Self> {
        if mu.len() != counts.len() {
            return Err(Error::Input("centroid/count length mismatch".into()));
        }
        if counts.iter().map(|c| *c as u64).sum::<u64>() != t as u64 {
            return Err(Error::Input("counts must sum to t".into()));
        }
        Ok(ContextRegistry { mu, counts, alpha, sigma2, t, update_rule })
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn update_rule(&self) -> CentroidUpdate {
        self.update_rule
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.mu
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    /// CRP prior over the `K` existing contexts plus one new context, with
    /// `t` tasks already seated: `m_k / (t + alpha)` and `alpha / (t + alpha)`.
    pub fn crp_prior(&self) -> Result<Vec<f64>> {
        if self.t == 0 {
            return Err(Error::Precondition(
                "prior undefined before the first task is seated".into(),
            ));
        }
        let denom = self.t as f64 + self.alpha;
        let mut prior: Vec<f64> = self.counts.iter().map(|m| *m as f64 / denom).collect();
        prior.push(self.alpha / denom);
        Ok(prior)
    }

    /// Log predictive density `ln N(x; mu_k, sigma2 I)`. Index `k == K`
    /// addresses the potential new context, whose centroid is `x` itself.
    pub fn log_likelihood(&self, x: &[f64], k: usize) -> Result<f64> {
        if k > self.k() {
            return Err(Error::Input(format!("context index {k} out of range")));
        }
        let d = x.len() as f64;
        let norm = -0.5 * d * (LOG_2PI + self.sigma2.ln());
        if k == self.k() {
            return Ok(norm);
        }
        if x.len() != self.dim() {
            return Err(Error::Shape("feature dimension mismatch".into()));
        }
        let sq: f64 = x.iter().zip(&self.mu[k]).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(norm - sq / (2.0 * self.sigma2))
    }

    /// Predictive density value (exponentiated log-likelihood).
    pub fn likelihood(&self, x: &[f64], k: usize) -> Result<f64> {
        Ok(self.log_likelihood(x, k)?.exp())
    }

    /// Normalized posterior over `K+1` candidates:
    /// `p_k ∝ m_k N(x; mu_k, sigma2)` for existing contexts and
    /// `p_new ∝ alpha N(x; x, sigma2)`.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.t == 0 {
            return Err(Error::Precondition("posterior undefined before the first task".into()));
        }
        let k = self.k();
        let mut logits = Vec::with_capacity(k + 1);
        for i in 0..k {
            // ln(0) = -inf zeroes out contexts that were instantiated but
            // never seated, which is the CRP-consistent weight.
            logits.push((self.counts[i] as f64).ln() + self.log_likelihood(x, i)?);
        }
        logits.push(self.alpha.ln() + self.log_likelihood(x, k)?);
        // Max-shifted normalization; the new-context entry is always finite.
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(max.is_finite());
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        Ok(probs)
    }

    /// Move every centroid toward `x` with step `eta_k * p_k * g_k`, where
    /// `eta_k = 1 / (m_k + p_k)` and `g_k` follows the configured update
    /// rule. `posterior` must cover exactly the kept contexts. Counts are
    /// untouched.
    pub fn update_params(&mut self, x: &[f64], posterior: &[f64]) -> Result<()> {
        if posterior.len() != self.k() {
            return Err(Error::Precondition(format!(
                "posterior covers {} contexts, registry has {}",
                posterior.len(),
                self.k()
            )));
        }
        let scale = match self.update_rule {
            CentroidUpdate::Normalized => 1.0,
            CentroidUpdate::Literal => 1.0 / self.sigma2,
        };
        for (k, p) in posterior.iter().enumerate() {
            // A freshly instantiated context counts itself.
            let m = self.counts[k].max(1) as f64;
            let eta = 1.0 / (m + p);
            let mu = &mut self.mu[k];
            for (mi, xi) in mu.iter_mut().zip(x) {
                *mi += eta * p * scale * (xi - *mi);
            }
        }
        Ok(())
    }

    /// Full detection step: instantiate a potential context at `x`, decide
    /// whether to keep it (strictly larger posterior than every existing
    /// context), update centroids, and assign by MAP of the updated
    /// predictive likelihood. Ties break toward the lowest index. Counts and
    /// `t` are only changed by [`ContextRegistry::register`].
    pub fn detect(&mut self, x: &FeatureVector) -> Result<Assignment> {
        let x = &x.x;
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature dim {} does not match registry dim {}",
                x.len(),
                self.dim()
            )));
        }
        let k_old = self.k();
        let posterior = self.posterior(x)?;
        let is_new = (0..k_old).all(|k| posterior[k_old] > posterior[k]);
        if is_new {
            self.mu.push(x.clone());
            self.counts.push(0);
        }
        let kept = self.k();
        self.update_params(x, &posterior[..kept])?;

        let mut z_star = 0;
        let mut best = f64::NEG_INFINITY;
        for k in 0..kept {
            let ll = self.log_likelihood(x, k)?;
            if ll > best {
                best = ll;
                z_star = k;
            }
        }
        Ok(Assignment { z_star, is_new, posterior })
    }

    /// Record an assignment produced by [`ContextRegistry::detect`] on this
    /// registry state: seats the task at its context.
    pub fn register(&mut self, assignment: &Assignment) -> Result<()> {
        if assignment.z_star >= self.k() {
            return Err(Error::Logic(format!(
                "assignment {} out of range for {} contexts",
                assignment.z_star,
                self.k()
            )));
        }
        self.counts[assignment.z_star] += 1;
        self.t += 1;
        Ok(())
    }

    /// Supervised seating used by the oracle and fixed-assignment baselines:
    /// `label == None` instantiates a new context at `x`; otherwise the
    /// centroid of the labeled context absorbs `x` as a running mean.
    /// Returns the context index.
    pub fn absorb(&mut self, x: &FeatureVector, label: Option<usize>) -> Result<usize> {
        match label {
            None => {
                self.mu.push(x.x.clone());
                self.counts.push(1);
                self.t += 1;
                Ok(self.k() - 1)
            }
            Some(k) => {
                if k >= self.k() {
                    return Err(Error::Logic(format!("context {k} not instantiated")));
                }
                let m = self.counts[k] as f64;
                for (mi, xi) in self.mu[k].iter_mut().zip(&x.x) {
                    *mi += (xi - *mi) / (m + 1.0);
                }
                self.counts[k] += 1;
                self.t += 1;
                Ok(k)
            }
        }
    }

    /// MAP head selection over the trained contexts only; no mutation and no
    /// new contexts. Used by the test protocol.
    pub fn map_context(&self, x: &[f64]) -> Result<usize> {
        let mut best_k = 0;
        let mut best = f64::NEG_INFINITY;
        for k in 0..self.k() {
            let ll = self.log_likelihood(x, k)?;
            if ll > best {
                best = ll;
                best_k = k;
            }
        }
        Ok(best_k)
    }
}
