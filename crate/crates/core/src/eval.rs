//! Evaluation protocol and metrics.
//!
//! Testing a task is a two-step procedure: select the head by MAP of the
//! predictive likelihood on a freshly extracted feature, then execute the
//! selected policy (deterministically by default) and average undiscounted
//! episode returns. `R_ave` averages over all tasks and episodes of one
//! evaluation; the aggregate averages `R_ave` over all evaluation points.

use crate::context::ContextRegistry;
use crate::envs::{reset, sample_uniform_tasks, step, EnvConfig, StreamType, TaskSpec, TaskStream};
use crate::error::{Error, Result};
use crate::features::extract_feature;
use crate::policy::MultiheadPolicy;
use crate::rng::rng_at;
use rand::Rng;
use rayon::prelude::*;

/// Per-evaluation knobs.
#[derive(Clone, Copy, Debug)]
pub struct EvalSettings {
    /// Test episodes per task.
    pub m_episodes: u32,
    /// Exploration trajectories for the feature used in head selection.
    pub m_explore: u32,
    /// Act with the distribution mean instead of sampling.
    pub deterministic: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { m_episodes: 5, m_explore: 10, deterministic: true }
    }
}

/// Complete metrics of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    /// `(global iteration, R_ave)` per evaluation point.
    pub r_ave_series: Vec<(u64, f64)>,
    /// Mean of the series values.
    pub r_bar_ave: f64,
    /// Context assignment per task, in stream order.
    pub assignments: Vec<usize>,
    /// Instantiated contexts at the end of the run.
    pub k_t: usize,
    /// First-iteration mean training return per task.
    pub forward_transfer: Vec<f64>,
    pub config_echo: String,
    pub wall_time_secs: f64,
    pub expansions: u32,
}

impl RunRecord {
    pub fn new(config_echo: String) -> Self {
        RunRecord {
            r_ave_series: Vec::new(),
            r_bar_ave: 0.0,
            assignments: Vec::new(),
            k_t: 0,
            forward_transfer: Vec::new(),
            config_echo,
            wall_time_secs: 0.0,
            expansions: 0,
        }
    }

    /// Recompute `r_bar_ave` from the stored series. A run too short to
    /// reach any evaluation point keeps the aggregate at zero.
    pub fn finalize_aggregate(&mut self) -> Result<()> {
        if !self.r_ave_series.is_empty() {
            self.r_bar_ave = aggregate(&self.r_ave_series)?;
        }
        Ok(())
    }
}

/// Mean of the stored `R_ave` values.
pub fn aggregate(series: &[(u64, f64)]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Input("empty evaluation series".into()));
    }
    Ok(series.iter().map(|(_, r)| r).sum::<f64>() / series.len() as f64)
}

/// Select the head for a task: extract a feature and return the MAP context
/// under the trained predictive likelihoods. Never mutates the registry and
/// never instantiates contexts.
pub fn select_policy<R: Rng>(
    policy: &MultiheadPolicy,
    registry: &ContextRegistry,
    task: &TaskSpec,
    env: &EnvConfig,
    m_explore: u32,
    rng: &mut R,
) -> Result<usize> {
    let x = extract_feature(task, env, m_explore as usize, rng)?;
    let head = registry.map_context(&x.x)?;
    if head >= policy.k() {
        return Err(Error::Logic(format!(
            "registry selected context {head} beyond policy K={}",
            policy.k()
        )));
    }
    Ok(head)
}

/// One evaluation episode; undiscounted return.
fn eval_episode<R: Rng>(
    task: &TaskSpec,
    env: &EnvConfig,
    policy: &MultiheadPolicy,
    head: usize,
    deterministic: bool,
    rng: &mut R,
) -> Result<f64> {
    let (mut state, mut obs) = reset(task, env);
    let mut total = 0.0;
    loop {
        let dist = policy.act_dist(head, &obs.to_vec())?;
        let action = if deterministic { dist.mean.clone() } else { dist.sample(rng) };
        let (next, next_obs, reward, done) = step(task, env, &state, &action)?;
        total += reward;
        state = next;
        obs = next_obs;
        if done {
            return Ok(total);
        }
    }
}

/// Evaluation outcome with per-episode detail for reference checks.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub r_ave: f64,
    /// Selected head per task.
    pub heads: Vec<usize>,
    /// Episode returns, `[task][episode]`.
    pub returns: Vec<Vec<f64>>,
}

/// Evaluate a fixed set of tasks with the two-step protocol. Tasks run in
/// parallel; every random draw is keyed by `(seed, task position)`.
pub fn evaluate_tasks(
    policy: &MultiheadPolicy,
    registry: &ContextRegistry,
    tasks: &[TaskSpec],
    env: &EnvConfig,
    settings: &EvalSettings,
    seed: u64,
) -> Result<EvalOutcome> {
    if settings.m_episodes == 0 {
        return Err(Error::Input("m_episodes must be >= 1".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Input("no tasks to evaluate".into()));
    }
    let per_task: Vec<(usize, Vec<f64>)> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| -> Result<(usize, Vec<f64>)> {
            let mut feat_rng = rng_at(seed, &[i as u64, 0]);
            let head = select_policy(policy, registry, task, env, settings.m_explore, &mut feat_rng)?;
            let mut returns = Vec::with_capacity(settings.m_episodes as usize);
            for e in 0..settings.m_episodes {
                let mut ep_rng = rng_at(seed, &[i as u64, 1 + e as u64]);
                returns.push(eval_episode(task, env, policy, head, settings.deterministic, &mut ep_rng)?);
            }
            Ok((head, returns))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut heads = Vec::with_capacity(tasks.len());
    let mut returns = Vec::with_capacity(tasks.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (head, rs) in per_task {
        sum += rs.iter().sum::<f64>();
        count += rs.len();
        heads.push(head);
        returns.push(rs);
    }
    Ok(EvalOutcome { r_ave: sum / count as f64, heads, returns })
}

/// `R_ave` over all tasks of the stream.
pub fn test_all(
    policy: &MultiheadPolicy,
    registry: &ContextRegistry,
    stream: &TaskStream,
    env: &EnvConfig,
    settings: &EvalSettings,
    seed: u64,
) -> Result<EvalOutcome> {
    evaluate_tasks(policy, registry, &stream.tasks, env, settings, seed)
}

/// Mean test return over freshly sampled, unclustered tasks never seen in
/// training. Each task is tested with the full two-step protocol.
pub fn generalization_eval(
    policy: &MultiheadPolicy,
    registry: &ContextRegistry,
    stream_type: StreamType,
    n_tasks: usize,
    env: &EnvConfig,
    settings: &EvalSettings,
    seed: u64,
) -> Result<f64> {
    if n_tasks == 0 {
        return Err(Error::Input("n_tasks must be >= 1".into()));
    }
    let tasks = sample_uniform_tasks(stream_type, n_tasks, seed);
    let outcome = evaluate_tasks(policy, registry, &tasks, env, settings, seed)?;
    Ok(outcome.r_ave)
}
