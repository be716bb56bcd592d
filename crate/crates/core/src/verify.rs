//! Numeric verification suite: checks the analytic gradients of the
//! policy-gradient surrogate, the distillation loss, and the joint objective
//! against central finite differences over randomized small configurations.

use crate::error::Result;
use crate::learner::{distill_grad, reinforce_grad, returns, Estimator, Trajectory};
use crate::numkit::{
    gaussian_log_prob, gradient_check_flat, kl_diag_gaussian, GradCheckReport, Mat,
};
use crate::policy::MultiheadPolicy;
use crate::rng::rng_at;
use rand::Rng;

/// Aggregate outcome of one verification suite.
#[derive(Clone, Debug)]
pub struct SuiteSummary {
    pub name: &'static str,
    pub n_configs: usize,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

fn random_policy<R: Rng>(rng: &mut R) -> MultiheadPolicy {
    let obs_dim = rng.gen_range(2..=5);
    let hidden = rng.gen_range(3..=8);
    let action_dim = rng.gen_range(1..=3);
    let k = rng.gen_range(1..=3);
    let mut policy = MultiheadPolicy::new(obs_dim, action_dim, hidden, rng);
    for _ in 1..k {
        let mut head = policy.heads[0].clone();
        for l in &mut head.net.layers {
            for v in l.weights.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        for v in &mut head.log_std {
            *v += rng.gen_range(-0.3..0.3);
        }
        policy.heads.push(head);
    }
    policy
}

fn random_batch<R: Rng>(policy: &MultiheadPolicy, rng: &mut R) -> Vec<Trajectory> {
    let n_traj = rng.gen_range(1..=3);
    (0..n_traj)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            let observations: Vec<Vec<f64>> = (0..len)
                .map(|_| (0..policy.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let actions: Vec<Vec<f64>> = (0..len)
                .map(|_| (0..policy.action_dim).map(|_| rng.gen_range(-0.2..0.2)).collect())
                .collect();
            let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..0.0)).collect();
            let log_probs = vec![0.0; len];
            Trajectory { observations, actions, rewards, log_probs }
        })
        .collect()
}

/// The surrogate value whose gradient `reinforce_grad` claims to compute:
/// `sum_i w_i log pi(a_i | s_i)` with fixed estimator weights.
fn surrogate_value(
    policy: &MultiheadPolicy,
    head: usize,
    batch: &[Trajectory],
    weights: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    let mut idx = 0;
    for traj in batch {
        for (obs, action) in traj.observations.iter().zip(&traj.actions) {
            let dist = policy.act_dist(head, obs)?;
            total += weights[idx] * gaussian_log_prob(&dist, action)?;
            idx += 1;
        }
    }
    Ok(total)
}

/// Estimator weights mirroring the learner: reward-to-go minus the batch
/// mean, divided by the number of trajectories.
fn frozen_weights(batch: &[Trajectory], gamma: f64) -> Vec<f64> {
    let mut w = Vec::new();
    for traj in batch {
        w.extend(returns(traj, gamma));
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let scale = 1.0 / batch.len() as f64;
    for v in &mut w {
        *v = (*v - mean) * scale;
    }
    w
}

fn distill_value(
    policy: &MultiheadPolicy,
    teacher: &MultiheadPolicy,
    states: &[Vec<f64>],
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..teacher.k() {
        let mut kl_sum = 0.0;
        for s in states {
            let p = policy.act_dist(k, s)?;
            let q = teacher.act_dist(k, s)?;
            kl_sum += kl_diag_gaussian(&p, &q)?;
        }
        total += kl_sum / states.len() as f64;
    }
    Ok(total)
}

/// Smallest absolute pre-activation across the shared layer and every
/// head's hidden layer on the batch states. Central differences are only
/// meaningful away from rectifier kinks.
fn min_preactivation(policy: &MultiheadPolicy, states: &Mat) -> Result<f64> {
    // The shared net output is the raw affine value (single layer).
    let pre_shared = policy.shared.forward_batch(states)?;
    let mut min = pre_shared.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let mut h = pre_shared;
    for v in h.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    for head in &policy.heads {
        let first = &head.net.layers[0];
        let mut pre = crate::numkit::matmul_nt(&h, &first.weights)?;
        pre.add_row_vector(&first.bias);
        min = pre.data().iter().fold(min, |m, v| m.min(v.abs()));
    }
    Ok(min)
}

const KINK_MARGIN: f64 = 1e-3;

fn check_config(seed: u64, idx: u64, tol: f64) -> Result<[f64; 3]> {
    // Resample configurations whose pre-activations come too close to a
    // rectifier kink for finite differences to be trustworthy.
    let mut rng = rng_at(seed, &[0xC0DE, idx]);
    let (policy, batch) = loop {
        let policy = random_policy(&mut rng);
        let batch = random_batch(&policy, &mut rng);
        let states: Vec<Vec<f64>> =
            batch.iter().flat_map(|t| t.observations.iter().cloned()).collect();
        let mat = Mat::from_rows(&states)?;
        if min_preactivation(&policy, &mat)? >= KINK_MARGIN {
            break (policy, batch);
        }
    };
    let head = rng.gen_range(0..policy.k());
    let gamma = rng.gen_range(0.8..1.0);
    let lambda = rng.gen_range(0.05..1.0);
    let weights = frozen_weights(&batch, gamma);

    // Teacher: perturbed copy so the KL landscape is nontrivial.
    let mut teacher = policy.snapshot();
    for h in &mut teacher.heads {
        for l in &mut h.net.layers {
            for v in l.weights.data_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        for v in &mut h.log_std {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let states: Vec<Vec<f64>> = batch
        .iter()
        .flat_map(|t| t.observations.iter().cloned())
        .collect();
    let state_mat = Mat::from_rows(&states)?;

    let g_r = reinforce_grad(&policy, head, &batch, gamma, Estimator::RewardToGo, true)?;
    let (g_d, _) = distill_grad(&policy, &teacher, &state_mat)?;
    let mut g_joint = g_r.clone();
    g_joint.axpy(-lambda, &g_d);

    let theta = policy.flatten();
    let mut probe = policy.clone();
    let step = 1e-5;

    let r1: GradCheckReport = gradient_check_flat(
        &theta,
        |flat| {
            probe.unflatten_from(flat)?;
            surrogate_value(&probe, head, &batch, &weights)
        },
        &g_r.flatten(),
        step,
        tol,
    )?;
    let mut probe = policy.clone();
    let r2 = gradient_check_flat(
        &theta,
        |flat| {
            probe.unflatten_from(flat)?;
            distill_value(&probe, &teacher, &states)
        },
        &g_d.flatten(),
        step,
        tol,
    )?;
    let mut probe = policy.clone();
    let r3 = gradient_check_flat(
        &theta,
        |flat| {
            probe.unflatten_from(flat)?;
            Ok(surrogate_value(&probe, head, &batch, &weights)?
                - lambda * distill_value(&probe, &teacher, &states)?)
        },
        &g_joint.flatten(),
        step,
        tol,
    )?;
    Ok([r1.max_rel_error, r2.max_rel_error, r3.max_rel_error])
}

/// Run the full verification suite over `n_configs` random configurations.
/// Returns one summary per objective (surrogate, distillation, joint).
pub fn verify_gradients(n_configs: usize, tol: f64, seed: u64) -> Result<Vec<SuiteSummary>> {
    let mut maxes = [0.0f64; 3];
    for idx in 0..n_configs {
        let errs = check_config(seed, idx as u64, tol)?;
        for (m, e) in maxes.iter_mut().zip(&errs) {
            *m = m.max(*e);
        }
    }
    let names = ["policy-gradient surrogate", "distillation loss", "joint objective"];
    Ok(names
        .iter()
        .zip(&maxes)
        .map(|(name, max)| SuiteSummary {
            name,
            n_configs,
            max_rel_error: *max,
            tol,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let summaries = verify_gradients(10, 1e-4, 77).unwrap();
        for s in &summaries {
            assert!(s.passed(), "{}: max rel error {}", s.name, s.max_rel_error);
        }
    }
}
