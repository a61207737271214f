//! Sequential vs rayon on the data-parallel hot spots: batch rollouts, DCT
//! embeddings and a whole small generation run.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pgdg::curator::DctEmbedder;
use pgdg::env::{rollout, EnvParams, Trajectory};
use pgdg::pipeline::{build_variants, generate_pgdg, load_demo, PipelineConfig};
use pgdg::sampler::{decode, init_proposal, sample_batch, ControlPoints, InitialSpread};
use pgdg::{par, seed};

fn setup(n: usize) -> (PipelineConfig, Vec<f64>, Vec<ControlPoints>) {
    let cfg = PipelineConfig::default();
    let env = cfg.env.build().unwrap();
    let demo = load_demo(&cfg, env.as_ref()).unwrap();
    let v = build_variants(&cfg, env.as_ref(), &demo).unwrap().remove(0);
    let q = init_proposal(&v.plan, cfg.sampler.control_points, &InitialSpread::Scalar(0.02), cfg.sampler.delta).unwrap();
    let samples = sample_batch(&q, n, &mut seed::rng(0));
    (cfg, v.start, samples)
}

fn rollouts(c: &mut Criterion) {
    let mut group = c.benchmark_group("rollouts");
    for n in [64usize, 512] {
        let (cfg, start, samples) = setup(n);
        let env = cfg.env.build().unwrap();
        let env = env.as_ref();
        let one = |s: &ControlPoints| {
            let plan = decode(s, env.horizon()).unwrap();
            rollout(env, &start, &plan, EnvParams::default()).unwrap().success
        };
        group.bench_with_input(BenchmarkId::new("sequential", n), &samples, |b, s| {
            b.iter(|| black_box(par::map_seq(s, one)))
        });
        group.bench_with_input(BenchmarkId::new("rayon", n), &samples, |b, s| {
            b.iter(|| black_box(par::map(s, one)))
        });
    }
    group.finish();
}

fn embeddings(c: &mut Criterion) {
    let (cfg, start, samples) = setup(256);
    let env = cfg.env.build().unwrap();
    let env = env.as_ref();
    let trajs: Vec<Trajectory> = samples
        .iter()
        .map(|s| rollout(env, &start, &decode(s, env.horizon()).unwrap(), EnvParams::default()).unwrap())
        .collect();
    let embedder = DctEmbedder::new(env.horizon(), cfg.curator.k_dct).unwrap();
    let embed = |t: &Trajectory| embedder.embed_trajectory(env, t).unwrap();
    let mut group = c.benchmark_group("dct_embedding_256");
    group.bench_function("sequential", |b| b.iter(|| black_box(par::map_seq(&trajs, embed))));
    group.bench_function("rayon", |b| b.iter(|| black_box(par::map(&trajs, embed))));
    group.finish();
}

fn generation(c: &mut Criterion) {
    let mut cfg = PipelineConfig::default();
    cfg.run.iterations = 3;
    let mut group = c.benchmark_group("generate");
    group.sample_size(10);
    group.bench_function("one_thread", |b| {
        b.iter(|| black_box(par::with_jobs(1, || generate_pgdg(&cfg)).unwrap()))
    });
    group.bench_function("all_threads", |b| {
        b.iter(|| black_box(par::with_jobs(0, || generate_pgdg(&cfg)).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, rollouts, embeddings, generation);
criterion_main!(benches);
