//! Environment feature construction.
//!
//! A task's feature vector is the mean of all observations gathered by a
//! uniform random policy over `m` exploration episodes (initial observations
//! included). The augmented coordinates are constant within a task, so the
//! feature separates tasks by their variation parameters plus a small amount
//! of positional noise.

use crate::envs::{reset, step, EnvConfig, TaskSpec, ACTION_BOUND};
use crate::error::{Error, Result};
use rand::Rng;

/// Observation-mean feature of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub x: Vec<f64>,
    /// Number of observations averaged over.
    pub n_states: usize,
}

/// One draw from the uniform random exploration policy: each coordinate
/// uniform on `[-0.1, 0.1]`.
pub fn uniform_policy_action<R: Rng>(action_dim: usize, rng: &mut R) -> Vec<f64> {
    (0..action_dim).map(|_| rng.gen_range(-ACTION_BOUND..ACTION_BOUND)).collect()
}

/// Run `m` exploration episodes and average every observation visited.
pub fn extract_feature<R: Rng>(
    task: &TaskSpec,
    cfg: &EnvConfig,
    m: usize,
    rng: &mut R,
) -> Result<FeatureVector> {
    Ok(extract_feature_logged(task, cfg, m, rng)?.0)
}

/// As [`extract_feature`], additionally returning the raw observation log
/// (used by replay oracles in tests).
pub fn extract_feature_logged<R: Rng>(
    task: &TaskSpec,
    cfg: &EnvConfig,
    m: usize,
    rng: &mut R,
) -> Result<(FeatureVector, Vec<Vec<f64>>)> {
    if m == 0 {
        return Err(Error::Input("at least one exploration trajectory required".into()));
    }
    let mut log: Vec<Vec<f64>> = Vec::new();
    for _ in 0..m {
        let (mut state, obs) = reset(task, cfg);
        log.push(obs.to_vec());
        loop {
            let action = uniform_policy_action(2, rng);
            let (next, obs, _reward, done) = step(task, cfg, &state, &action)?;
            log.push(obs.to_vec());
            state = next;
            if done {
                break;
            }
        }
    }
    let dim = log[0].len();
    let mut mean = vec![0.0; dim];
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for obs in &log {
        for j in 0..dim {
            mean[j] += obs[j];
            lo[j] = lo[j].min(obs[j]);
            hi[j] = hi[j].max(obs[j]);
        }
    }
    let n = log.len();
    for j in 0..dim {
        // Accumulation error can push the mean an ulp outside the observed
        // range; the feature must stay inside the per-coordinate hull.
        mean[j] = (mean[j] / n as f64).clamp(lo[j], hi[j]);
    }
    Ok((FeatureVector { x: mean, n_states: n }, log))
}
