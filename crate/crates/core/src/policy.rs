//! Expandable multihead policy.
//!
//! A shared representation layer feeds one output head per context. Heads
//! produce the mean of a diagonal Gaussian over actions; each head owns a
//! state-independent log-stddev vector. When a new context is instantiated
//! the policy grows by one head, initialized by one of three strategies, and
//! every pre-existing parameter stays bitwise unchanged.

use crate::context::ContextRegistry;
use crate::envs::ACTION_BOUND;
use crate::error::{Error, Result};
use crate::numkit::{
    apply_gradient, Activation, DenseNetParams, GaussianActionDist, GradientBundle, Mat,
};
use rand::Rng;

/// Default hidden width of the shared layer and of each head.
pub const DEFAULT_HIDDEN: usize = 200;

/// Initial stddev: half the action range.
fn initial_log_std() -> f64 {
    (0.5 * (2.0 * ACTION_BOUND)).ln()
}

/// How a freshly added head is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadInit {
    /// Fresh random weights.
    Random,
    /// Copy of a uniformly chosen trained head.
    RandomTrained,
    /// Copy of the trained head whose context centroid is nearest (in
    /// Euclidean distance) to the new context's centroid.
    NearestTrained,
}

impl std::str::FromStr for HeadInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(HeadInit::Random),
            "random_trained" => Ok(HeadInit::RandomTrained),
            "nearest_trained" => Ok(HeadInit::NearestTrained),
            other => Err(Error::Parse(format!("unknown head init {other:?}"))),
        }
    }
}

impl HeadInit {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadInit::Random => "random",
            HeadInit::RandomTrained => "random_trained",
            HeadInit::NearestTrained => "nearest_trained",
        }
    }
}

/// One output head: a small network from the shared representation to the
/// action mean, plus a learnable per-dimension log-stddev.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub net: DenseNetParams,
    pub log_std: Vec<f64>,
}

impl HeadParams {
    fn random<R: Rng>(hidden: usize, action_dim: usize, rng: &mut R) -> Self {
        HeadParams {
            net: DenseNetParams::random(&[hidden, hidden, action_dim], Activation::Relu, rng),
            log_std: vec![initial_log_std(); action_dim],
        }
    }
}

/// Shared representation plus expandable output heads.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiheadPolicy {
    pub shared: DenseNetParams,
    pub heads: Vec<HeadParams>,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
}

impl MultiheadPolicy {
    /// Single-head policy with random weights: one shared hidden layer and
    /// one head of the same width.
    pub fn new<R: Rng>(obs_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let shared = DenseNetParams::random(&[obs_dim, hidden], Activation::Relu, rng);
        let head = HeadParams::random(hidden, action_dim, rng);
        MultiheadPolicy { shared, heads: vec![head], obs_dim, action_dim, hidden }
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    /// Shared-layer output for a batch of observations (one row each). The
    /// shared net is a hidden layer of the composed network, so the
    /// activation applies to its output here.
    pub fn shared_forward(&self, obs: &Mat) -> Result<Mat> {
        Ok(self.shared_forward_cached(obs)?.h)
    }

    /// Shared forward keeping what the backward pass needs.
    pub fn shared_forward_cached(&self, obs: &Mat) -> Result<SharedCache> {
        let (pre, cache) = self.shared.forward_batch_cached(obs)?;
        let mut h = pre;
        for v in h.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(SharedCache { cache, h })
    }

    /// Backward through the output activation and the shared affine layer.
    /// `d_h` is the gradient with respect to the post-activation output.
    pub fn shared_backward(&self, sc: &SharedCache, d_h: &Mat) -> Result<GradientBundle> {
        let mut d_pre = d_h.clone();
        for (g, &y) in d_pre.data_mut().iter_mut().zip(sc.h.data()) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
        Ok(self.shared.backprop_cached(&sc.cache, &d_pre)?.0)
    }

    /// Action mean for a batch of observations under one head.
    pub fn mean_batch(&self, head: usize, obs: &Mat) -> Result<Mat> {
        if head >= self.k() {
            return Err(Error::Input(format!("head {head} out of range (K={})", self.k())));
        }
        let h = self.shared_forward(obs)?;
        self.heads[head].net.forward_batch(&h)
    }

    /// Gaussian action distribution for one observation under one head.
    /// Uses the single-sample forward kernel (rollout hot path).
    pub fn act_dist(&self, head: usize, obs: &[f64]) -> Result<GaussianActionDist> {
        if head >= self.k() {
            return Err(Error::Input(format!("head {head} out of range (K={})", self.k())));
        }
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation dim {} does not match policy obs_dim {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let mut h = self.shared.forward(obs)?;
        for v in &mut h {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mean = self.heads[head].net.forward(&h)?;
        let stddev: Vec<f64> = self.heads[head].log_std.iter().map(|l| l.exp()).collect();
        GaussianActionDist::new(mean, stddev)
    }

    /// Deep frozen copy serving as the distillation teacher.
    pub fn snapshot(&self) -> MultiheadPolicy {
        self.clone()
    }

    /// Append one head for a newly instantiated context. The registry must
    /// already hold the new context (`registry.K == policy.K + 1`); its last
    /// centroid locates the new context for the nearest-head strategy.
    pub fn expand<R: Rng>(
        &mut self,
        strategy: HeadInit,
        registry: &ContextRegistry,
        rng: &mut R,
    ) -> Result<usize> {
        if registry.k() != self.k() + 1 {
            return Err(Error::Precondition(format!(
                "expand expects registry K = policy K + 1, got {} vs {}",
                registry.k(),
                self.k()
            )));
        }
        let k_old = self.k();
        let new_head = match strategy {
            HeadInit::Random => HeadParams::random(self.hidden, self.action_dim, rng),
            HeadInit::RandomTrained => {
                if k_old == 0 {
                    return Err(Error::Precondition("no trained head to copy".into()));
                }
                let src = rng.gen_range(0..k_old);
                self.heads[src].clone()
            }
            HeadInit::NearestTrained => {
                if k_old == 0 {
                    return Err(Error::Precondition("no trained head to copy".into()));
                }
                let centroids = registry.centroids();
                let new_mu = &centroids[k_old];
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (k, mu) in centroids[..k_old].iter().enumerate() {
                    let d: f64 = mu
                        .iter()
                        .zip(new_mu)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    if d < best_d {
                        best_d = d;
                        best = k;
                    }
                }
                self.heads[best].clone()
            }
        };
        self.heads.push(new_head);
        Ok(self.k() - 1)
    }

    pub fn n_params(&self) -> usize {
        self.shared.n_params()
            + self
                .heads
                .iter()
                .map(|h| h.net.n_params() + h.log_std.len())
                .sum::<usize>()
    }

    /// Flat view of every parameter: shared net, then per head (net, then
    /// log_std). Order matches [`PolicyGradient::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.shared.flatten();
        for h in &self.heads {
            out.extend(h.net.flatten());
            out.extend_from_slice(&h.log_std);
        }
        out
    }

    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape("flat parameter length mismatch".into()));
        }
        let mut off = self.shared.n_params();
        self.shared.unflatten_from(&flat[..off])?;
        for h in &mut self.heads {
            let n = h.net.n_params();
            h.net.unflatten_from(&flat[off..off + n])?;
            off += n;
            let nl = h.log_std.len();
            h.log_std.copy_from_slice(&flat[off..off + nl]);
            off += nl;
        }
        Ok(())
    }

    /// `theta += lr * grad`.
    pub fn apply_gradient(&mut self, lr: f64, grad: &PolicyGradient) {
        debug_assert_eq!(grad.heads.len(), self.k());
        apply_gradient(&mut self.shared, lr, &grad.shared);
        for (h, g) in self.heads.iter_mut().zip(&grad.heads) {
            apply_gradient(&mut h.net, lr, &g.net);
            for (l, d) in h.log_std.iter_mut().zip(&g.log_std) {
                *l += lr * d;
            }
        }
    }
}

/// Intermediate values of one shared forward pass.
#[derive(Clone, Debug)]
pub struct SharedCache {
    cache: crate::numkit::ForwardCache,
    /// Post-activation shared output, the input every head sees.
    pub h: Mat,
}

/// Per-head slice of a [`PolicyGradient`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub net: GradientBundle,
    pub log_std: Vec<f64>,
}

/// Gradient of a scalar objective with respect to every policy parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradient {
    pub shared: GradientBundle,
    pub heads: Vec<HeadGrad>,
}

impl PolicyGradient {
    pub fn zeros_like(policy: &MultiheadPolicy) -> Self {
        PolicyGradient {
            shared: GradientBundle::zeros_like(&policy.shared),
            heads: policy
                .heads
                .iter()
                .map(|h| HeadGrad {
                    net: GradientBundle::zeros_like(&h.net),
                    log_std: vec![0.0; h.log_std.len()],
                })
                .collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &PolicyGradient) {
        self.shared.axpy(a, &other.shared);
        for (dst, src) in self.heads.iter_mut().zip(&other.heads) {
            dst.net.axpy(a, &src.net);
            for (d, s) in dst.log_std.iter_mut().zip(&src.log_std) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.shared.scale(a);
        for h in &mut self.heads {
            h.net.scale(a);
            for v in &mut h.log_std {
                *v *= a;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.shared.max_abs();
        for h in &self.heads {
            m = m.max(h.net.max_abs());
            for v in &h.log_std {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.shared.is_finite()
            && self
                .heads
                .iter()
                .all(|h| h.net.is_finite() && h.log_std.iter().all(|v| v.is_finite()))
    }

    /// Flat view matching [`MultiheadPolicy::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.shared.flatten();
        for h in &self.heads {
            out.extend(h.net.flatten());
            out.extend_from_slice(&h.log_std);
        }
        out
    }

    /// Inverse of [`PolicyGradient::flatten`] over this gradient's shapes.
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        let mut off = 0;
        for l in &mut self.shared.layers {
            let nw = l.weights.data().len();
            if off + nw + l.bias.len() > flat.len() {
                return Err(Error::Shape("flat gradient too short".into()));
            }
            l.weights.data_mut().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        for h in &mut self.heads {
            for l in &mut h.net.layers {
                let nw = l.weights.data().len();
                l.weights.data_mut().copy_from_slice(&flat[off..off + nw]);
                off += nw;
                let nb = l.bias.len();
                l.bias.copy_from_slice(&flat[off..off + nb]);
                off += nb;
            }
            let nl = h.log_std.len();
            h.log_std.copy_from_slice(&flat[off..off + nl]);
            off += nl;
        }
        if off != flat.len() {
            return Err(Error::Shape("flat gradient length mismatch".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::CentroidUpdate;
    use crate::features::FeatureVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn fv(x: &[f64]) -> FeatureVector {
        FeatureVector { x: x.to_vec(), n_states: 1 }
    }

    fn small_policy(seed: u64) -> MultiheadPolicy {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        MultiheadPolicy::new(3, 2, 8, &mut rng)
    }

    fn registry_with(mu: &[&[f64]]) -> ContextRegistry {
        let mut r =
            ContextRegistry::first(&fv(mu[0]), 1.0, 0.01, CentroidUpdate::Normalized).unwrap();
        for m in &mu[1..] {
            r.absorb(&fv(m), None).unwrap();
        }
        r
    }

    #[test]
    fn zeroed_policy_emits_zero_mean_and_configured_stddev() {
        let mut p = small_policy(1);
        for l in &mut p.shared.layers {
            l.weights.data_mut().fill(0.0);
            l.bias.fill(0.0);
        }
        for h in &mut p.heads {
            for l in &mut h.net.layers {
                l.weights.data_mut().fill(0.0);
                l.bias.fill(0.0);
            }
            h.log_std.fill(0.5f64.ln());
        }
        let d = p.act_dist(0, &[0.4, -0.2, 0.9]).unwrap();
        assert_eq!(d.mean, vec![0.0, 0.0]);
        assert_eq!(d.stddev, vec![0.5, 0.5]);
    }

    #[test]
    fn identical_heads_give_identical_distributions() {
        let mut p = small_policy(2);
        let copy = p.heads[0].clone();
        p.heads.push(copy);
        let obs = [0.3, 0.1, -0.7];
        assert_eq!(p.act_dist(0, &obs).unwrap(), p.act_dist(1, &obs).unwrap());
    }

    #[test]
    fn mean_matches_composed_forward_oracle() {
        let p = small_policy(3);
        let obs = vec![0.25, -0.4, 0.6];
        let d = p.act_dist(0, &obs).unwrap();
        // Independent composition: shared affine, rectify, head net.
        let mut h = p.shared.forward(&obs).unwrap();
        for v in &mut h {
            *v = v.max(0.0);
        }
        let want = p.heads[0].net.forward(&h).unwrap();
        for (g, w) in d.mean.iter().zip(&want) {
            assert!((g - w).abs() / w.abs().max(1e-300) <= 1e-12);
        }
    }

    #[test]
    fn head_out_of_range_is_an_error() {
        let p = small_policy(4);
        assert!(p.act_dist(1, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn both_copy_strategies_copy_the_single_head() {
        for strategy in [HeadInit::RandomTrained, HeadInit::NearestTrained] {
            let mut p = small_policy(5);
            let original = p.heads[0].clone();
            let reg = registry_with(&[&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]]);
            let mut rng = ChaCha12Rng::seed_from_u64(0);
            p.expand(strategy, &reg, &mut rng).unwrap();
            assert_eq!(p.k(), 2);
            assert_eq!(p.heads[1], original);
        }
    }

    #[test]
    fn nearest_strategy_picks_the_closest_centroid() {
        let mut p = small_policy(6);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        // Second head associated with centroid (1,1).
        let reg2 = registry_with(&[&[0.0, 0.0], &[1.0, 1.0]]);
        p.expand(HeadInit::Random, &reg2, &mut rng).unwrap();
        // Mark heads so the copy source is observable.
        p.heads[0].log_std = vec![-1.0, -1.0];
        p.heads[1].log_std = vec![-2.0, -2.0];
        let reg3 = registry_with(&[&[0.0, 0.0], &[1.0, 1.0], &[0.1, 0.0]]);
        p.expand(HeadInit::NearestTrained, &reg3, &mut rng).unwrap();
        assert_eq!(p.heads[2].log_std, vec![-1.0, -1.0], "head 0 is nearest");
    }

    #[test]
    fn nearest_choice_is_invariant_under_uniform_scaling() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let base = [[0.2, 0.3], [0.9, 0.1], [0.5, 0.8]];
        let new = [0.45, 0.75];
        for scale in [1.0, 3.5, 0.01] {
            let scaled: Vec<Vec<f64>> = base
                .iter()
                .map(|c| c.iter().map(|v| v * scale).collect())
                .collect();
            let new_scaled: Vec<f64> = new.iter().map(|v| v * scale).collect();
            let mut p = small_policy(8);
            p.heads.push(p.heads[0].clone());
            p.heads.push(p.heads[0].clone());
            for (i, h) in p.heads.iter_mut().enumerate() {
                h.log_std = vec![-(i as f64), -(i as f64)];
            }
            let mut reg = registry_with(&[&scaled[0], &scaled[1], &scaled[2]]);
            reg.absorb(&fv(&new_scaled), None).unwrap();
            p.expand(HeadInit::NearestTrained, &reg, &mut rng).unwrap();
            assert_eq!(p.heads[3].log_std, vec![-2.0, -2.0], "scale {scale}");
        }
    }

    #[test]
    fn expansion_leaves_existing_parameters_bitwise_unchanged() {
        let mut p = small_policy(9);
        let reg = registry_with(&[&[0.0, 0.0], &[0.5, 0.5]]);
        let before_shared = p.shared.clone();
        let before_head = p.heads[0].clone();
        let obs = [0.2, 0.2, 0.2];
        let before_out = p.act_dist(0, &obs).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        p.expand(HeadInit::Random, &reg, &mut rng).unwrap();
        assert_eq!(p.shared, before_shared);
        assert_eq!(p.heads[0], before_head);
        assert_eq!(p.act_dist(0, &obs).unwrap(), before_out);
    }

    #[test]
    fn expand_requires_registry_one_ahead() {
        let mut p = small_policy(10);
        let reg = registry_with(&[&[0.0, 0.0]]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(
            p.expand(HeadInit::Random, &reg, &mut rng),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn snapshot_is_frozen_and_idempotent() {
        let mut p = small_policy(11);
        let teacher = p.snapshot();
        assert_eq!(teacher.snapshot(), teacher);
        let obs = [0.1, 0.1, 0.1];
        let before = teacher.act_dist(0, &obs).unwrap();
        // Student drifts; teacher output unchanged.
        let mut grad = PolicyGradient::zeros_like(&p);
        grad.shared.layers[0].weights.data_mut().fill(0.05);
        p.apply_gradient(1.0, &grad);
        assert_ne!(p.act_dist(0, &obs).unwrap(), before);
        assert_eq!(teacher.act_dist(0, &obs).unwrap(), before);
        // KL(student || teacher) right after snapshotting is zero.
        let fresh = p.snapshot();
        let kl = crate::numkit::kl_diag_gaussian(
            &p.act_dist(0, &obs).unwrap(),
            &fresh.act_dist(0, &obs).unwrap(),
        )
        .unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn flatten_round_trips() {
        let mut p = small_policy(12);
        let flat = p.flatten();
        assert_eq!(flat.len(), p.n_params());
        let mut q = p.clone();
        let mut grad = PolicyGradient::zeros_like(&p);
        grad.shared.layers[0].bias[0] = 1.0;
        q.apply_gradient(0.25, &grad);
        assert_ne!(q.flatten(), flat);
        p.unflatten_from(&q.flatten()).unwrap();
        assert_eq!(p, q);
    }
}
