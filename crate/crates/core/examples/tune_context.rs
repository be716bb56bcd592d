//! Exploration harness for the context-detection defaults: measures feature
//! noise and sweeps (alpha, sigma2) over planted streams, reporting how often
//! detection recovers exactly the planted clusters and at what purity.
//!
//! Run: cargo run --release -p dacorl-core --example tune_context

use dacorl_core::context::{CentroidUpdate, ContextRegistry};
use dacorl_core::envs::{generate_stream, EnvConfig, StreamConfig, StreamType};
use dacorl_core::features::extract_feature;
use dacorl_core::rng::{rng_at, TAG_FEATURE};

fn purity(assignments: &[usize], labels: &[usize], k: usize) -> f64 {
    let n_labels = labels.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; n_labels]; k];
    for (a, l) in assignments.iter().zip(labels) {
        table[*a][*l] += 1;
    }
    let hits: usize = table.iter().map(|row| row.iter().max().copied().unwrap_or(0)).sum();
    hits as f64 / assignments.len() as f64
}

fn main() {
    let env = EnvConfig::default();

    // 1. Feature noise: repeated extraction on one task.
    for m in [5usize, 10, 20] {
        let stream = generate_stream(StreamType::I, 0, &StreamConfig::default()).unwrap();
        let task = &stream.tasks[0];
        let feats: Vec<Vec<f64>> = (0..40)
            .map(|s| {
                let mut rng = rng_at(1000 + s, &[TAG_FEATURE]);
                extract_feature(task, &env, m, &mut rng).unwrap().x
            })
            .collect();
        let d = feats[0].len();
        let mut mean = vec![0.0; d];
        for f in &feats {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / feats.len() as f64;
            }
        }
        let mut std = vec![0.0; d];
        for f in &feats {
            for j in 0..d {
                std[j] += (f[j] - mean[j]).powi(2) / (feats.len() - 1) as f64;
            }
        }
        let std: Vec<f64> = std.iter().map(|v| v.sqrt()).collect();
        println!(
            "m={m:2}  pos-mean=({:.4},{:.4})  pos-std=({:.5},{:.5})  aug-std=({:.2e},{:.2e})",
            mean[0], mean[1], std[0], std[1], std[2], std[3]
        );
    }

    // 2. (alpha, sigma2, m) sweep over planted Type I streams.
    for m in [10usize, 40] {
        println!("\nm={m}  alpha    sigma2   | exact4/40  purity(min)  K distribution");
        for &sigma2 in &[0.004, 0.005, 0.0065, 0.008] {
            for &alpha in &[0.03, 0.01, 0.003, 0.001] {
                let (exact, min_purity, ks) = sweep_once(&env, alpha, sigma2, m, 40);
                println!(
                    "      {alpha:<8} {sigma2:<8} | {exact:>8}/40  {min_purity:.3}       {ks:?}"
                );
            }
        }
    }

    plant_sweep();

    // 3. Separation statistics of generated streams.
    let mut seps = Vec::new();
    for seed in 0..200u64 {
        let stream =
            generate_stream(StreamType::I, 30_000 + seed, &StreamConfig::default()).unwrap();
        let c = &stream.cluster_centers;
        let mut minsep = f64::INFINITY;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let d: f64 = c[i]
                    .iter()
                    .zip(&c[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                minsep = minsep.min(d);
            }
        }
        seps.push(minsep);
    }
    seps.sort_by(f64::total_cmp);
    println!(
        "\nmin-separation quantiles over 200 streams: p05={:.3} p25={:.3} p50={:.3} p75={:.3}",
        seps[10], seps[50], seps[100], seps[150]
    );
}

fn sweep_once(
    env: &EnvConfig,
    alpha: f64,
    sigma2: f64,
    m: usize,
    n_seeds: u64,
) -> (usize, f64, std::collections::BTreeMap<usize, usize>) {
    let mut exact = 0;
    let mut min_purity: f64 = 1.0;
    let mut ks = std::collections::BTreeMap::new();
    for seed in 0..n_seeds {
        let stream =
            generate_stream(StreamType::I, 10_000 + seed, &StreamConfig::default()).unwrap();
        let mut registry: Option<ContextRegistry> = None;
        let mut assignments = Vec::new();
        for (i, task) in stream.tasks.iter().enumerate() {
            let mut rng = rng_at(seed, &[TAG_FEATURE, i as u64]);
            let x = extract_feature(task, env, m, &mut rng).unwrap();
            match registry.as_mut() {
                None => {
                    registry = Some(
                        ContextRegistry::first(&x, alpha, sigma2, CentroidUpdate::Normalized)
                            .unwrap(),
                    );
                    assignments.push(0);
                }
                Some(reg) => {
                    let a = reg.detect(&x).unwrap();
                    reg.register(&a).unwrap();
                    assignments.push(a.z_star);
                }
            }
        }
        let reg = registry.unwrap();
        let labels: Vec<usize> = stream.tasks.iter().map(|t| t.true_cluster).collect();
        let p = purity(&assignments, &labels, reg.k());
        min_purity = min_purity.min(p);
        *ks.entry(reg.k()).or_insert(0usize) += 1;
        if reg.k() == 4 && p >= 0.95 {
            exact += 1;
        }
    }
    (exact, min_purity, ks)
}

// Planted synthetic feature streams: 4 Gaussian clusters in feature space
// (2 position-like coords with small noise + 2 parameter coords), centers
// drawn uniformly with a minimum-separation floor.
fn plant_sweep() {
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    let spread = 0.05;
    let pos_noise = 0.03;
    println!("\nplant: floor  alpha    sigma2   | exact4/40  purity(min)  K distribution");
    for &floor in &[0.3, 0.4, 0.5] {
        for &(alpha, sigma2) in &[
            (0.03, 0.004),
            (0.01, 0.004),
            (0.01, 0.006),
            (0.003, 0.005),
            (0.003, 0.006),
            (0.001, 0.006),
            (0.001, 0.008),
        ] {
            let mut exact = 0;
            let mut min_purity: f64 = 1.0;
            let mut ks = std::collections::BTreeMap::new();
            for seed in 0..40u64 {
                let mut rng = rng_at(50_000 + seed, &[99]);
                // Centers with rejection.
                let centers: Vec<[f64; 2]> = loop {
                    let cand: Vec<[f64; 2]> = (0..4)
                        .map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)])
                        .collect();
                    let mut ok = true;
                    for i in 0..4 {
                        for j in i + 1..4 {
                            let d = ((cand[i][0] - cand[j][0]).powi(2)
                                + (cand[i][1] - cand[j][1]).powi(2))
                            .sqrt();
                            if d < floor {
                                ok = false;
                            }
                        }
                    }
                    if ok {
                        break cand;
                    }
                };
                let mut points: Vec<(usize, Vec<f64>)> = Vec::new();
                for (c, center) in centers.iter().enumerate() {
                    let n = if c == 3 { 14 } else { 12 };
                    for _ in 0..n {
                        let px: f64 = rng.sample(StandardNormal);
                        let py: f64 = rng.sample(StandardNormal);
                        let ax: f64 = rng.sample(StandardNormal);
                        let ay: f64 = rng.sample(StandardNormal);
                        points.push((
                            c,
                            vec![
                                0.26 + pos_noise * px,
                                0.26 + pos_noise * py,
                                center[0] + spread * ax,
                                center[1] + spread * ay,
                            ],
                        ));
                    }
                }
                // Shuffle.
                for i in (1..points.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    points.swap(i, j);
                }
                let mut registry: Option<ContextRegistry> = None;
                let mut assignments = Vec::new();
                for (_, x) in &points {
                    let fv = dacorl_core::features::FeatureVector { x: x.clone(), n_states: 1 };
                    match registry.as_mut() {
                        None => {
                            registry = Some(
                                ContextRegistry::first(
                                    &fv,
                                    alpha,
                                    sigma2,
                                    CentroidUpdate::Normalized,
                                )
                                .unwrap(),
                            );
                            assignments.push(0);
                        }
                        Some(reg) => {
                            let a = reg.detect(&fv).unwrap();
                            reg.register(&a).unwrap();
                            assignments.push(a.z_star);
                        }
                    }
                }
                let reg = registry.unwrap();
                let labels: Vec<usize> = points.iter().map(|(c, _)| *c).collect();
                let p = purity(&assignments, &labels, reg.k());
                min_purity = min_purity.min(p);
                *ks.entry(reg.k()).or_insert(0usize) += 1;
                if reg.k() == 4 && p >= 0.95 {
                    exact += 1;
                }
            }
            println!(
                "       {floor:<5} {alpha:<8} {sigma2:<8} | {exact:>7}/40  {min_purity:.3}       {ks:?}"
            );
        }
    }
}
