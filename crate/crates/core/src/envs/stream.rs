//! Clustered task-stream generation.
//!
//! Cluster centers are drawn uniformly over the admissible parameter box
//! with a minimum pairwise separation; per-cluster tasks are isotropic
//! Gaussian samples around the centers, truncated to the box; the resulting
//! tasks are shuffled into a seeded random order.

use super::{Puddle, StreamType, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::{rng_at, TAG_GENERALIZE, TAG_STREAM};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

/// Margin keeping sampled parameters away from the walls of the unit square.
const PARAM_LO: f64 = 0.1;
const PARAM_HI: f64 = 0.9;

/// Puddle radius for every generated task.
const PUDDLE_RADIUS: f64 = 0.1;

/// Puddles shared by all tasks of a Type I stream.
const FIXED_PUDDLES: [[f64; 2]; 2] = [[0.3, 0.6], [0.6, 0.3]];

/// Goal shared by all tasks of a Type II stream.
const FIXED_GOAL: [f64; 2] = [0.85, 0.85];

const CENTER_ATTEMPTS: usize = 10_000;
const SAMPLE_ATTEMPTS: usize = 1_000;

/// Generation knobs for [`generate_stream`].
#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub n_clusters: usize,
    pub sizes: Vec<usize>,
    pub cluster_spread: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig { n_clusters: 4, sizes: vec![12, 12, 12, 14], cluster_spread: 0.05 }
    }
}

/// A generated dynamic environment: an ordered stream of tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub stream_type: StreamType,
    pub tasks: Vec<TaskSpec>,
    /// Cluster centers in variation-parameter space, `[n_clusters][p]`.
    pub cluster_centers: Vec<Vec<f64>>,
    pub seed: u64,
    pub cluster_spread: f64,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

fn task_from_params(stream_type: StreamType, task_id: usize, params: &[f64], cluster: usize) -> TaskSpec {
    let (goal, puddles) = match stream_type {
        StreamType::I => (
            [params[0], params[1]],
            FIXED_PUDDLES
                .iter()
                .map(|c| Puddle { center: *c, radius: PUDDLE_RADIUS })
                .collect(),
        ),
        StreamType::II => (
            FIXED_GOAL,
            vec![
                Puddle { center: [params[0], params[1]], radius: PUDDLE_RADIUS },
                Puddle { center: [params[2], params[3]], radius: PUDDLE_RADIUS },
            ],
        ),
        StreamType::III => (
            [params[0], params[1]],
            vec![
                Puddle { center: [params[2], params[3]], radius: PUDDLE_RADIUS },
                Puddle { center: [params[4], params[5]], radius: PUDDLE_RADIUS },
            ],
        ),
    };
    TaskSpec { task_id, goal, puddles, variation_params: params.to_vec(), true_cluster: cluster }
}

fn min_pairwise_distance(centers: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d: f64 = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Generate a clustered task stream, reproducible given `(stream_type, seed)`.
pub fn generate_stream(stream_type: StreamType, seed: u64, cfg: &StreamConfig) -> Result<TaskStream> {
    if cfg.sizes.len() != cfg.n_clusters {
        return Err(Error::Input(format!(
            "sizes has {} entries for {} clusters",
            cfg.sizes.len(),
            cfg.n_clusters
        )));
    }
    if !(cfg.cluster_spread > 0.0) {
        return Err(Error::Input("cluster_spread must be positive".into()));
    }
    let p = stream_type.param_dim();
    let mut rng = rng_at(seed, &[TAG_STREAM, p as u64]);

    // Cluster centers: uniform over the box, rejected until the pairwise
    // separation reaches 4x the spread.
    let separation = 4.0 * cfg.cluster_spread;
    let mut centers: Option<Vec<Vec<f64>>> = None;
    for _ in 0..CENTER_ATTEMPTS {
        let cand: Vec<Vec<f64>> = (0..cfg.n_clusters)
            .map(|_| (0..p).map(|_| rng.gen_range(PARAM_LO..PARAM_HI)).collect())
            .collect();
        if cfg.n_clusters < 2 || min_pairwise_distance(&cand) >= separation {
            centers = Some(cand);
            break;
        }
    }
    let centers = centers.ok_or_else(|| {
        Error::Generation(format!(
            "could not place {} centers with separation {separation} in {CENTER_ATTEMPTS} attempts",
            cfg.n_clusters
        ))
    })?;

    // Per-cluster samples: isotropic Gaussian truncated to the box.
    let mut tasks = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.sizes[c] {
            let mut params = vec![0.0; p];
            let mut ok = false;
            for _ in 0..SAMPLE_ATTEMPTS {
                for (v, m) in params.iter_mut().zip(center) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = m + cfg.cluster_spread * z;
                }
                if params.iter().all(|v| (PARAM_LO..=PARAM_HI).contains(v)) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                for (v, m) in params.iter_mut().zip(center) {
                    *v = m.clamp(PARAM_LO, PARAM_HI);
                }
            }
            tasks.push((c, params));
        }
    }

    tasks.shuffle(&mut rng);
    let tasks: Vec<TaskSpec> = tasks
        .into_iter()
        .enumerate()
        .map(|(id, (cluster, params))| task_from_params(stream_type, id, &params, cluster))
        .collect();

    Ok(TaskStream {
        stream_type,
        tasks,
        cluster_centers: centers,
        seed,
        cluster_spread: cfg.cluster_spread,
    })
}

/// Sample `n` unclustered tasks uniformly over the parameter box. Used for
/// generalization studies on tasks never seen during training.
pub fn sample_uniform_tasks(stream_type: StreamType, n: usize, seed: u64) -> Vec<TaskSpec> {
    let p = stream_type.param_dim();
    let mut rng = rng_at(seed, &[TAG_GENERALIZE, p as u64]);
    (0..n)
        .map(|id| {
            let params: Vec<f64> = (0..p).map(|_| rng.gen_range(PARAM_LO..PARAM_HI)).collect();
            task_from_params(stream_type, id, &params, 0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_gives_fifty_tasks_with_pinned_cluster_sizes() {
        let stream = generate_stream(StreamType::I, 7, &StreamConfig::default()).unwrap();
        assert_eq!(stream.len(), 50);
        let mut counts = [0usize; 4];
        for t in &stream.tasks {
            counts[t.true_cluster] += 1;
        }
        assert_eq!(counts, [12, 12, 12, 14]);
        assert!(min_pairwise_distance(&stream.cluster_centers) >= 4.0 * 0.05);
    }

    #[test]
    fn single_cluster_stream() {
        let cfg = StreamConfig { n_clusters: 1, sizes: vec![3], cluster_spread: 0.05 };
        let stream = generate_stream(StreamType::I, 3, &cfg).unwrap();
        assert_eq!(stream.len(), 3);
        assert!(stream.tasks.iter().all(|t| t.true_cluster == 0));
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let a = generate_stream(StreamType::III, 42, &StreamConfig::default()).unwrap();
        let b = generate_stream(StreamType::III, 42, &StreamConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_stream(StreamType::III, 43, &StreamConfig::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn variation_scope_matches_stream_type() {
        let s1 = generate_stream(StreamType::I, 5, &StreamConfig::default()).unwrap();
        // Type I: goals vary, puddles identical across tasks.
        let p0 = &s1.tasks[0].puddles;
        assert!(s1.tasks.iter().all(|t| &t.puddles == p0));
        assert!(s1.tasks.windows(2).any(|w| w[0].goal != w[1].goal));
        assert!(s1.tasks.iter().all(|t| t.variation_params == t.goal.to_vec()));

        let s2 = generate_stream(StreamType::II, 5, &StreamConfig::default()).unwrap();
        // Type II: puddles vary, goal fixed.
        let g0 = s2.tasks[0].goal;
        assert!(s2.tasks.iter().all(|t| t.goal == g0));
        assert!(s2
            .tasks
            .windows(2)
            .any(|w| w[0].puddles[0].center != w[1].puddles[0].center));

        let s3 = generate_stream(StreamType::III, 5, &StreamConfig::default()).unwrap();
        assert!(s3.tasks.windows(2).any(|w| w[0].goal != w[1].goal));
        assert!(s3
            .tasks
            .windows(2)
            .any(|w| w[0].puddles[0].center != w[1].puddles[0].center));
        assert_eq!(s3.tasks[0].variation_params.len(), 6);
    }

    #[test]
    fn parameters_stay_in_bounds() {
        for seed in 0..5 {
            let stream = generate_stream(StreamType::III, seed, &StreamConfig::default()).unwrap();
            for t in &stream.tasks {
                assert!(t.goal.iter().all(|v| (0.0..=1.0).contains(v)));
                for p in &t.puddles {
                    assert!(p.center.iter().all(|v| (0.0..=1.0).contains(v)));
                    assert!(p.radius > 0.0 && p.radius <= 0.5);
                }
            }
        }
    }

    #[test]
    fn uniform_tasks_are_deterministic_and_in_box() {
        let a = sample_uniform_tasks(StreamType::I, 10, 9);
        let b = sample_uniform_tasks(StreamType::I, 10, 9);
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|t| t.variation_params.iter().all(|v| (PARAM_LO..=PARAM_HI).contains(v))));
    }
}
