//! Benchmarks for the paths that dominate training time: batched network
//! passes, gradient computation, episode collection, and context detection.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dacorl_bench::{default_stream, env, production_policy};
use dacorl_core::context::{CentroidUpdate, ContextRegistry};
use dacorl_core::features::FeatureVector;
use dacorl_core::learner::{batch_observations, collect, distill_grad, reinforce_grad, Estimator};
use dacorl_core::numkit::{matmul_nt, matmul_tn, Mat};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn bench_gemm(c: &mut Criterion) {
    let a = Mat::from_vec(500, 200, (0..500 * 200).map(|i| (i as f64 * 0.001).sin()).collect())
        .unwrap();
    let w =
        Mat::from_vec(200, 200, (0..200 * 200).map(|i| (i as f64 * 0.002).cos()).collect()).unwrap();
    c.bench_function("gemm_nt_500x200x200", |b| b.iter(|| matmul_nt(&a, &w).unwrap()));
    c.bench_function("gemm_tn_500x200x200", |b| b.iter(|| matmul_tn(&a, &a).unwrap()));
}

fn bench_policy(c: &mut Criterion) {
    let policy = production_policy(1);
    let obs = vec![0.3, 0.4, 0.6, 0.7];
    c.bench_function("act_dist_single", |b| b.iter(|| policy.act_dist(0, &obs).unwrap()));

    let stream = default_stream(2);
    let e = env();
    c.bench_function("collect_batch5", |b| {
        b.iter(|| collect(&stream.tasks[0], &e, &policy, 0, 5, 42).unwrap())
    });

    let batch = collect(&stream.tasks[0], &e, &policy, 0, 5, 42).unwrap();
    c.bench_function("reinforce_grad_batch5", |b| {
        b.iter(|| {
            reinforce_grad(&policy, 0, &batch, 0.99, Estimator::RewardToGo, true).unwrap()
        })
    });

    let mut teacher = policy.snapshot();
    teacher.heads.push(teacher.heads[0].clone());
    let mut student = policy.snapshot();
    student.heads.push(student.heads[0].clone());
    let states = batch_observations(&batch).unwrap();
    c.bench_function("distill_grad_k2", |b| {
        b.iter(|| distill_grad(&student, &teacher, &states).unwrap())
    });
}

fn bench_context(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let first = FeatureVector { x: vec![0.2, 0.2, 0.3, 0.4], n_states: 1 };
    let base = ContextRegistry::first(&first, 0.03, 0.004, CentroidUpdate::Normalized).unwrap();
    let features: Vec<FeatureVector> = (0..50)
        .map(|_| FeatureVector {
            x: (0..4).map(|_| rng.gen_range(0.1..0.9)).collect(),
            n_states: 1,
        })
        .collect();
    c.bench_function("detect_register_50", |b| {
        b.iter_batched(
            || base.clone(),
            |mut reg| {
                for f in &features {
                    let a = reg.detect(f).unwrap();
                    reg.register(&a).unwrap();
                }
                reg
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_gemm, bench_policy, bench_context);
criterion_main!(benches);
