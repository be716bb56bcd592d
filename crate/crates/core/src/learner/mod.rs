//! The training loop: trajectory collection, the REINFORCE objective, the
//! distillation regularizer, and stream orchestration with baseline modes.
//!
//! Per task: extract a feature, resolve the context assignment (online
//! detection, oracle labels, nearest preset centroid, or a single fixed
//! head), expand the policy if a new context appeared, snapshot the teacher,
//! then run policy iterations of
//! `theta <- theta + beta * (grad L_ori - lambda * grad L_D)`.

mod config;
mod optim;

pub use config::{Estimator, LearnerConfig, Mode, OptimizerKind};
pub use optim::Optimizer;

use crate::context::ContextRegistry;
use crate::envs::{reset, step, EnvConfig, TaskSpec, TaskStream};
use crate::error::{Error, Result};
use crate::eval::{test_all, EvalSettings, RunRecord};
use crate::features::{extract_feature, FeatureVector};
use crate::numkit::{gaussian_log_prob, Mat};
use crate::policy::{MultiheadPolicy, PolicyGradient};
use crate::rng::{
    derive_seed, rng_at, TAG_COLLECT, TAG_EVAL, TAG_EXPAND, TAG_FEATURE, TAG_POLICY_INIT,
    TAG_PROBE,
};
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::time::Instant;

/// Stddev bounds keeping the learnable exploration noise sane: collapse
/// below ~0.02 freezes exploration and blows up 1/sigma^2 gradient scales.
const LOG_STD_MIN: f64 = -3.912023005428146; // ln(0.02)
const LOG_STD_MAX: f64 = 0.0; // ln(1)

/// One complete episode under the behavior head.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Reward-to-go per step: `G_t = sum_{u >= t} gamma^(u-t) r_u`.
pub fn returns(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for (i, r) in traj.rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

fn run_episode<R: Rng>(
    task: &TaskSpec,
    env: &EnvConfig,
    policy: &MultiheadPolicy,
    head: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let (mut state, mut obs) = reset(task, env);
    let mut traj = Trajectory {
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        log_probs: Vec::new(),
    };
    loop {
        let obs_vec = obs.to_vec();
        let dist = policy.act_dist(head, &obs_vec)?;
        let action = dist.sample(rng);
        let lp = gaussian_log_prob(&dist, &action)?;
        let (next, next_obs, reward, done) = step(task, env, &state, &action)?;
        traj.observations.push(obs_vec);
        traj.actions.push(action);
        traj.rewards.push(reward);
        traj.log_probs.push(lp);
        state = next;
        obs = next_obs;
        if done {
            return Ok(traj);
        }
    }
}

/// Sample `batch_size` complete episodes on `head`. Each episode draws from
/// its own generator derived from `(seed, episode index)`, so collection is
/// order-independent and runs in parallel without changing results.
pub fn collect(
    task: &TaskSpec,
    env: &EnvConfig,
    policy: &MultiheadPolicy,
    head: usize,
    batch_size: u32,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..batch_size as usize)
        .into_par_iter()
        .map(|e| {
            let mut rng = rng_at(seed, &[e as u64]);
            run_episode(task, env, policy, head, &mut rng)
        })
        .collect()
}

/// Per-step scalar weights of the policy-gradient estimator, already divided
/// by the number of trajectories.
fn estimator_weights(
    batch: &[Trajectory],
    gamma: f64,
    estimator: Estimator,
    baseline: bool,
) -> Vec<f64> {
    let mut weights = Vec::new();
    match estimator {
        Estimator::RewardToGo => {
            for traj in batch {
                weights.extend(returns(traj, gamma));
            }
        }
        Estimator::Trajectory => {
            for traj in batch {
                let g0 = returns(traj, gamma)[0];
                weights.extend(std::iter::repeat(g0).take(traj.len()));
            }
        }
    }
    if baseline {
        let b = weights.iter().sum::<f64>() / weights.len() as f64;
        for w in &mut weights {
            *w -= b;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for w in &mut weights {
        *w *= scale;
    }
    weights
}

/// Gradient of the REINFORCE surrogate
/// `(1/N) sum_n sum_t w_t^n log pi(a_t | s_t)` with respect to the shared
/// net and the behavior head. Other heads receive zero.
pub fn reinforce_grad(
    policy: &MultiheadPolicy,
    head: usize,
    batch: &[Trajectory],
    gamma: f64,
    estimator: Estimator,
    baseline: bool,
) -> Result<PolicyGradient> {
    if batch.is_empty() || batch.iter().all(Trajectory::is_empty) {
        return Err(Error::Input("empty batch".into()));
    }
    if head >= policy.k() {
        return Err(Error::Input(format!("head {head} out of range")));
    }
    let n: usize = batch.iter().map(Trajectory::len).sum();
    let mut obs = Vec::with_capacity(n);
    let mut act = Vec::with_capacity(n);
    for traj in batch {
        obs.extend(traj.observations.iter().cloned());
        act.extend(traj.actions.iter().cloned());
    }
    let x = Mat::from_rows(&obs)?;
    let a = Mat::from_rows(&act)?;
    let w = estimator_weights(batch, gamma, estimator, baseline);

    let sc = policy.shared_forward_cached(&x)?;
    let head_params = &policy.heads[head];
    let (mean, head_cache) = head_params.net.forward_batch_cached(&sc.h)?;

    let var: Vec<f64> = head_params.log_std.iter().map(|l| (2.0 * l).exp()).collect();
    let dim = policy.action_dim;
    let mut d_mean = Mat::zeros(n, dim);
    let mut d_log_std = vec![0.0; dim];
    for r in 0..n {
        for i in 0..dim {
            let diff = a.get(r, i) - mean.get(r, i);
            d_mean.set(r, i, w[r] * diff / var[i]);
            d_log_std[i] += w[r] * (diff * diff / var[i] - 1.0);
        }
    }

    let (head_grad, d_h) = head_params.net.backprop_cached(&head_cache, &d_mean)?;
    let shared_grad = policy.shared_backward(&sc, &d_h)?;

    let mut grad = PolicyGradient::zeros_like(policy);
    grad.shared = shared_grad;
    grad.heads[head].net = head_grad;
    grad.heads[head].log_std = d_log_std;
    Ok(grad)
}

/// Gradient and value of the distillation loss
/// `L_D = sum_k mean_s KL(pi_k(.|s) || pi_k^-(.|s))` over the heads the
/// teacher knows. Heads existing only in the student contribute zero.
pub fn distill_grad(
    policy: &MultiheadPolicy,
    teacher: &MultiheadPolicy,
    states: &Mat,
) -> Result<(PolicyGradient, f64)> {
    if states.rows() == 0 {
        return Err(Error::Input("empty state list".into()));
    }
    if teacher.k() > policy.k() {
        return Err(Error::Precondition("teacher has more heads than the student".into()));
    }
    let n = states.rows();
    let inv_n = 1.0 / n as f64;
    let dim = policy.action_dim;

    let sc = policy.shared_forward_cached(states)?;
    let teacher_h = teacher.shared_forward(states)?;

    let mut grad = PolicyGradient::zeros_like(policy);
    let mut d_h_total = Mat::zeros(n, sc.h.cols());
    let mut loss = 0.0;

    for k in 0..teacher.k() {
        let student_head = &policy.heads[k];
        let teacher_head = &teacher.heads[k];
        let (mean_s, cache_s) = student_head.net.forward_batch_cached(&sc.h)?;
        let mean_t = teacher_head.net.forward_batch(&teacher_h)?;

        let var_s: Vec<f64> = student_head.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        let var_t: Vec<f64> = teacher_head.log_std.iter().map(|l| (2.0 * l).exp()).collect();

        // State-independent part of the per-state KL.
        let mut kl_const = 0.0;
        for i in 0..dim {
            kl_const += 0.5 * (var_t[i] / var_s[i]).ln() + var_s[i] / (2.0 * var_t[i]) - 0.5;
        }

        let mut d_mean = Mat::zeros(n, dim);
        let mut kl_sum = 0.0;
        for r in 0..n {
            let mut kl_state = kl_const;
            for i in 0..dim {
                let diff = mean_s.get(r, i) - mean_t.get(r, i);
                kl_state += diff * diff / (2.0 * var_t[i]);
                d_mean.set(r, i, inv_n * diff / var_t[i]);
            }
            kl_sum += kl_state;
        }
        loss += kl_sum * inv_n;

        let (head_grad, d_h) = student_head.net.backprop_cached(&cache_s, &d_mean)?;
        grad.heads[k].net = head_grad;
        for i in 0..dim {
            grad.heads[k].log_std[i] = var_s[i] / var_t[i] - 1.0;
        }
        for (acc, v) in d_h_total.data_mut().iter_mut().zip(d_h.data()) {
            *acc += v;
        }
    }

    grad.shared = policy.shared_backward(&sc, &d_h_total)?;
    Ok((grad, loss))
}

/// All observations of a batch stacked into one matrix, the probe-state set
/// for distillation.
pub fn batch_observations(batch: &[Trajectory]) -> Result<Mat> {
    let mut obs = Vec::new();
    for traj in batch {
        obs.extend(traj.observations.iter().cloned());
    }
    Mat::from_rows(&obs)
}

/// Callbacks for run artifacts. All methods default to no-ops.
pub trait RunObserver {
    fn on_task_start(
        &mut self,
        _task_idx: usize,
        _task: &TaskSpec,
        _z_star: usize,
        _is_new: bool,
        _posterior: Option<&[f64]>,
        _k_after: usize,
    ) -> Result<()> {
        Ok(())
    }

    fn on_iteration(
        &mut self,
        _task_idx: usize,
        _iteration: u32,
        _mean_return: f64,
        _distill_loss: f64,
    ) -> Result<()> {
        Ok(())
    }

    fn on_eval(&mut self, _global_iter: u64, _r_ave: f64) -> Result<()> {
        Ok(())
    }

    fn on_task_complete(&mut self, _state: &LearnerState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NullObserver;

impl RunObserver for NullObserver {}

/// Full mutable training state; everything a checkpoint persists.
#[derive(Clone, Debug)]
pub struct LearnerState {
    pub cfg: LearnerConfig,
    pub policy: MultiheadPolicy,
    pub registry: Option<ContextRegistry>,
    pub optimizer: Optimizer,
    /// Oracle / fixed-centroid modes: external label -> context index.
    pub label_map: BTreeMap<usize, usize>,
    pub next_task: usize,
    pub global_iter: u64,
    pub eval_count: u32,
    pub record: RunRecord,
}

impl LearnerState {
    pub fn new(cfg: LearnerConfig, stream: &TaskStream) -> Result<Self> {
        cfg.validate()?;
        if stream.is_empty() {
            return Err(Error::Input("empty task stream".into()));
        }
        let obs_dim = 2 + stream.stream_type.param_dim();
        let mut init_rng = rng_at(cfg.seed, &[TAG_POLICY_INIT]);
        let policy = MultiheadPolicy::new(obs_dim, 2, cfg.hidden, &mut init_rng);
        let optimizer = Optimizer::new(cfg.optimizer, cfg.beta, &policy);
        let record = RunRecord::new(cfg.to_resolved_text());
        Ok(LearnerState {
            cfg,
            policy,
            registry: None,
            optimizer,
            label_map: BTreeMap::new(),
            next_task: 0,
            global_iter: 0,
            eval_count: 0,
            record,
        })
    }

    fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            m_episodes: self.cfg.m_episodes,
            m_explore: self.cfg.m_explore,
            deterministic: self.cfg.eval_deterministic,
        }
    }
}

/// Resolve the context assignment for one task, mutating the registry and
/// expanding the policy when a new context appears. Returns
/// `(head index, is_new, posterior if inference ran)`.
fn assign_context(
    state: &mut LearnerState,
    stream: &TaskStream,
    task_idx: usize,
    x: &FeatureVector,
) -> Result<(usize, bool, Option<Vec<f64>>)> {
    let cfg = &state.cfg;
    let task = &stream.tasks[task_idx];

    // The very first task seeds context 0 by convention in every mode.
    if state.registry.is_none() {
        let registry = ContextRegistry::first(x, cfg.alpha, cfg.sigma2, cfg.centroid_update)?;
        state.registry = Some(registry);
        let label = match cfg.mode {
            Mode::Oracle => Some(task.true_cluster),
            Mode::FixedK => Some(nearest_center(stream, x)?),
            _ => None,
        };
        if let Some(l) = label {
            state.label_map.insert(l, 0);
        }
        return Ok((0, false, None));
    }

    let registry = state.registry.as_mut().expect("registry seeded above");
    match cfg.mode {
        Mode::Naive => Ok((0, false, None)),
        Mode::Dacorl => {
            let assignment = registry.detect(x)?;
            registry.register(&assignment)?;
            if assignment.is_new {
                expand_policy(state, task_idx)?;
            }
            Ok((assignment.z_star, assignment.is_new, Some(assignment.posterior)))
        }
        Mode::Oracle | Mode::FixedK => {
            let label = match cfg.mode {
                Mode::Oracle => task.true_cluster,
                _ => nearest_center(stream, x)?,
            };
            match state.label_map.get(&label).copied() {
                Some(ctx) => {
                    registry.absorb(x, Some(ctx))?;
                    Ok((ctx, false, None))
                }
                None => {
                    let ctx = registry.absorb(x, None)?;
                    state.label_map.insert(label, ctx);
                    expand_policy(state, task_idx)?;
                    Ok((ctx, true, None))
                }
            }
        }
    }
}

/// Nearest preset cluster center (variation-parameter space) to the
/// feature's augmented coordinates.
fn nearest_center(stream: &TaskStream, x: &FeatureVector) -> Result<usize> {
    if stream.cluster_centers.is_empty() {
        return Err(Error::Precondition("stream has no preset cluster centers".into()));
    }
    let aug = &x.x[2..];
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in stream.cluster_centers.iter().enumerate() {
        if c.len() != aug.len() {
            return Err(Error::Shape("preset center dimension mismatch".into()));
        }
        let d: f64 = c.iter().zip(aug).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    Ok(best)
}

fn expand_policy(state: &mut LearnerState, task_idx: usize) -> Result<()> {
    let registry = state.registry.as_ref().expect("registry present");
    let mut rng = rng_at(state.cfg.seed, &[TAG_EXPAND, task_idx as u64]);
    if state.cfg.verify_expansion {
        let before = state.policy.clone();
        state.policy.expand(state.cfg.head_init, registry, &mut rng)?;
        verify_expansion(&before, &state.policy, state.cfg.seed, task_idx)?;
    } else {
        state.policy.expand(state.cfg.head_init, registry, &mut rng)?;
    }
    state.optimizer.sync_shape(&state.policy);
    state.record.expansions += 1;
    Ok(())
}

/// Bitwise non-destructiveness check: old parameters and old-head outputs on
/// 100 probe states must be unchanged by the expansion.
fn verify_expansion(
    before: &MultiheadPolicy,
    after: &MultiheadPolicy,
    seed: u64,
    task_idx: usize,
) -> Result<()> {
    if after.shared != before.shared {
        return Err(Error::Logic("expansion changed shared parameters".into()));
    }
    for k in 0..before.k() {
        if after.heads[k] != before.heads[k] {
            return Err(Error::Logic(format!("expansion changed head {k}")));
        }
    }
    let mut rng = rng_at(seed, &[TAG_PROBE, task_idx as u64]);
    for _ in 0..100 {
        let obs: Vec<f64> = (0..before.obs_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        for k in 0..before.k() {
            let a = before.act_dist(k, &obs)?;
            let b = after.act_dist(k, &obs)?;
            if a != b {
                return Err(Error::Logic(format!("expansion changed head {k} outputs")));
            }
        }
    }
    Ok(())
}

/// Train on one task of the stream: context assignment, expansion, teacher
/// snapshot, then `iterations_per_task` joint updates with periodic
/// evaluation over the whole stream.
pub fn train_task(
    state: &mut LearnerState,
    stream: &TaskStream,
    task_idx: usize,
    observer: &mut dyn RunObserver,
) -> Result<()> {
    let task = &stream.tasks[task_idx];
    let first_task = state.registry.is_none();

    // Exploration probe. The naive baseline only needs it once, to seed the
    // single-context registry used by the evaluation protocol.
    let need_feature = first_task || state.cfg.mode != Mode::Naive;
    let (head, is_new, posterior) = if need_feature {
        let mut feat_rng = rng_at(state.cfg.seed, &[TAG_FEATURE, task_idx as u64]);
        let x = extract_feature(task, &state.cfg.env, state.cfg.m_explore as usize, &mut feat_rng)?;
        assign_context(state, stream, task_idx, &x)?
    } else {
        (0, false, None)
    };
    state.record.assignments.push(head);
    observer.on_task_start(task_idx, task, head, is_new, posterior.as_deref(), state.policy.k())?;

    // Distillation teacher: the policy as of the start of this task. The
    // first task trains from scratch without a regularizer.
    let teacher = if first_task { None } else { Some(state.policy.snapshot()) };
    let distill_active =
        teacher.is_some() && state.cfg.lambda > 0.0 && state.cfg.mode != Mode::Naive;

    for iteration in 1..=state.cfg.iterations_per_task {
        let collect_seed =
            derive_seed(state.cfg.seed, &[TAG_COLLECT, task_idx as u64, iteration as u64]);
        let batch = collect(
            task,
            &state.cfg.env,
            &state.policy,
            head,
            state.cfg.batch_size,
            collect_seed,
        )?;
        let mean_return =
            batch.iter().map(Trajectory::undiscounted_return).sum::<f64>() / batch.len() as f64;
        if iteration == 1 {
            state.record.forward_transfer.push(mean_return);
        }

        let mut grad = reinforce_grad(
            &state.policy,
            head,
            &batch,
            state.cfg.gamma,
            state.cfg.estimator,
            state.cfg.baseline,
        )?;
        let mut distill_loss = 0.0;
        if distill_active {
            let states = batch_observations(&batch)?;
            let (d_grad, d_loss) =
                distill_grad(&state.policy, teacher.as_ref().expect("checked"), &states)?;
            grad.axpy(-state.cfg.lambda, &d_grad);
            distill_loss = d_loss;
        }
        if !grad.is_finite() || !mean_return.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient or return diverged at task {task_idx}, iteration {iteration}"
            )));
        }
        state.optimizer.apply(&mut state.policy, &grad);
        for h in &mut state.policy.heads {
            for l in &mut h.log_std {
                *l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }

        observer.on_iteration(task_idx, iteration, mean_return, distill_loss)?;
        state.global_iter += 1;
        if state.global_iter % state.cfg.eval_every as u64 == 0 {
            let eval_seed = derive_seed(state.cfg.seed, &[TAG_EVAL, state.eval_count as u64]);
            let registry = state
                .registry
                .as_ref()
                .ok_or_else(|| Error::Logic("registry must exist once training started".into()))?;
            let outcome = test_all(
                &state.policy,
                registry,
                stream,
                &state.cfg.env,
                &state.eval_settings(),
                eval_seed,
            )?;
            state.record.r_ave_series.push((state.global_iter, outcome.r_ave));
            state.eval_count += 1;
            observer.on_eval(state.global_iter, outcome.r_ave)?;
        }
    }
    Ok(())
}

/// Sequentially train over every task of the stream, producing the complete
/// run record. Fully deterministic given the config seed.
pub fn run_stream(
    cfg: &LearnerConfig,
    stream: &TaskStream,
    observer: &mut dyn RunObserver,
) -> Result<RunRecord> {
    let mut state = LearnerState::new(cfg.clone(), stream)?;
    run_stream_from(&mut state, stream, observer)
}

/// Continue a run from existing state (fresh or checkpoint-restored).
pub fn run_stream_from(
    state: &mut LearnerState,
    stream: &TaskStream,
    observer: &mut dyn RunObserver,
) -> Result<RunRecord> {
    let start = Instant::now();
    while state.next_task < stream.len() {
        let idx = state.next_task;
        train_task(state, stream, idx, observer)?;
        state.next_task += 1;
        observer.on_task_complete(state)?;
    }
    let mut record = state.record.clone();
    record.k_t = state.policy.k();
    record.finalize_aggregate()?;
    record.wall_time_secs += start.elapsed().as_secs_f64();
    state.record.wall_time_secs = record.wall_time_secs;
    Ok(record)
}

#[cfg(test)]
mod tests;
