//! Training-dynamics exploration: single-task learning curves across
//! learning rates, iteration timing at production size, and a small
//! three-mode stream comparison.
//!
//! Run: cargo run --release -p dacorl-core --example tune_train [quick|modes]

use dacorl_core::envs::{generate_stream, EnvConfig, StreamConfig, StreamType};
use dacorl_core::learner::{
    collect, reinforce_grad, run_stream, Estimator, LearnerConfig, Mode, NullObserver, Trajectory,
};
use dacorl_core::policy::MultiheadPolicy;
use dacorl_core::rng::{rng_at, TAG_POLICY_INIT};
use std::time::Instant;

fn single_task_curve_opt(beta: f64, batch: u32, iters: u32, hidden: usize, adam: bool) {
    use dacorl_core::learner::{Optimizer, OptimizerKind};
    let stream = generate_stream(StreamType::I, 3, &StreamConfig::default()).unwrap();
    let task = &stream.tasks[0];
    let env = EnvConfig::default();
    let mut rng = rng_at(0, &[TAG_POLICY_INIT]);
    let mut policy = MultiheadPolicy::new(4, 2, hidden, &mut rng);
    let kind = if adam { OptimizerKind::Adam } else { OptimizerKind::Sgd };
    let mut opt = Optimizer::new(kind, beta, &policy);
    let t0 = Instant::now();
    let mut marks = Vec::new();
    for i in 1..=iters {
        let b = collect(task, &env, &policy, 0, batch, 1000 + i as u64).unwrap();
        let mean: f64 =
            b.iter().map(Trajectory::undiscounted_return).sum::<f64>() / b.len() as f64;
        let g = reinforce_grad(&policy, 0, &b, 0.99, Estimator::RewardToGo, true).unwrap();
        opt.apply(&mut policy, &g);
        for h in &mut policy.heads {
            for l in &mut h.log_std {
                *l = l.clamp(-3.912023005428146, 0.0);
            }
        }
        if i == 1 || i % (iters / 10).max(1) == 0 {
            marks.push((i, mean));
        }
    }
    let el = t0.elapsed().as_secs_f64();
    let curve: Vec<String> = marks.iter().map(|(i, m)| format!("{i}:{m:.1}")).collect();
    println!(
        "{} beta={beta:<8} batch={batch:<3} {:.1}s ({:.1} ms/it)  {}",
        if adam { "adam" } else { "sgd " },
        el,
        1000.0 * el / iters as f64,
        curve.join("  ")
    );
}

#[allow(dead_code)]
fn single_task_curve(beta: f64, batch: u32, iters: u32, hidden: usize) {
    let stream = generate_stream(StreamType::I, 3, &StreamConfig::default()).unwrap();
    let task = &stream.tasks[0];
    let env = EnvConfig::default();
    let mut rng = rng_at(0, &[TAG_POLICY_INIT]);
    let mut policy = MultiheadPolicy::new(4, 2, hidden, &mut rng);
    let t0 = Instant::now();
    let mut marks = Vec::new();
    for i in 1..=iters {
        let b = collect(task, &env, &policy, 0, batch, 1000 + i as u64).unwrap();
        let mean: f64 =
            b.iter().map(Trajectory::undiscounted_return).sum::<f64>() / b.len() as f64;
        let g = reinforce_grad(&policy, 0, &b, 0.99, Estimator::RewardToGo, true).unwrap();
        policy.apply_gradient(beta, &g);
        for h in &mut policy.heads {
            for l in &mut h.log_std {
                *l = l.clamp(-6.9, 0.0);
            }
        }
        if i == 1 || i % (iters / 10).max(1) == 0 {
            marks.push((i, mean));
        }
    }
    let el = t0.elapsed().as_secs_f64();
    let curve: Vec<String> = marks.iter().map(|(i, m)| format!("{i}:{m:.1}")).collect();
    println!(
        "beta={beta:<8} batch={batch:<3} hidden={hidden:<4} {:.1}s ({:.1} ms/it)  {}",
        el,
        1000.0 * el / iters as f64,
        curve.join("  ")
    );
}

fn mode_comparison() {
    let cfg_stream = StreamConfig { n_clusters: 4, sizes: vec![3, 3, 3, 3], cluster_spread: 0.05 };
    let stream = generate_stream(StreamType::I, 42, &cfg_stream).unwrap();
    for (label, mode) in [("naive", Mode::Naive), ("dacorl", Mode::Dacorl), ("oracle", Mode::Oracle)]
    {
        let cfg = LearnerConfig {
            mode,
            iterations_per_task: 1000,
            batch_size: 5,
            m_episodes: 1,
            seed: 1,
            ..LearnerConfig::default()
        };
        let t0 = Instant::now();
        let record = run_stream(&cfg, &stream, &mut NullObserver).unwrap();
        let final_r = record.r_ave_series.last().unwrap().1;
        let fwd: f64 = record.forward_transfer[1..].iter().sum::<f64>()
            / (record.forward_transfer.len() - 1) as f64;
        println!(
            "{label:<8} K_T={}  final_R_ave={final_r:.2}  r_bar={:.2}  fwd_transfer={fwd:.2}  wall={:.0}s",
            record.k_t, record.r_bar_ave, t0.elapsed().as_secs_f64()
        );
    }
}

fn main() {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "quick".into());
    match arg.as_str() {
        "quick" => {
            println!("single-task learning curves (hidden=200 production size):");
            for beta in [1e-3, 3e-4, 1e-4] {
                single_task_curve_opt(beta, 5, 400, 200, false);
            }
            for beta in [3e-3, 1e-3, 3e-4] {
                single_task_curve_opt(beta, 5, 400, 200, true);
            }
        }
        "modes" => mode_comparison(),
        other => eprintln!("unknown arg {other}"),
    }
}
