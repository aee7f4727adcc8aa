use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use icenet::dataset::RelationPair;
use icenet::encoders::EncoderParams;
use icenet::graph;
use icenet::par::Execution;
use icenet::synth::{generate_synthetic, SynthConfig};
use icenet::tensor::Tensor;
use icenet::trainer::{self, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(2000, 300, &mut rng);
    let b = random(300, 150, &mut rng);
    let mut group = c.benchmark_group("matmul_2000x300x150");
    for (name, exec) in MODES {
        group.bench_function(name, |bench| bench.iter(|| a.matmul_with(black_box(&b), exec).unwrap()));
    }
    group.finish();
}

fn pair_scoring(c: &mut Criterion) {
    let (ds, table) = generate_synthetic(&SynthConfig {
        words_per_cluster: 60,
        pairs_per_class: Some(2000),
        dim: 300,
        ..SynthConfig::default()
    })
    .unwrap();
    let inputs = table.matrix(ds.vocab().words()).unwrap();
    let cfg = TrainConfig::default();
    let params = EncoderParams::glorot(cfg.encoder_dims(), &mut ChaCha8Rng::seed_from_u64(1));
    let proj = params.project_all(&inputs).unwrap();
    let all: Vec<RelationPair> = ds.all_pairs().cloned().collect();
    let idx = ds.pair_index(&all).unwrap();
    let mut group = c.benchmark_group("score_and_build_graphs");
    for (name, exec) in MODES {
        group.bench_function(name, |bench| {
            bench.iter(|| graph::construct(&proj, &inputs, black_box(&idx), &cfg.graph_config(), exec).unwrap())
        });
    }
    group.finish();
}

fn suite(c: &mut Criterion) {
    let (ds, table) = generate_synthetic(&SynthConfig {
        words_per_cluster: 12,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        input_dim: 50,
        hidden_dim: 24,
        encoder_dim: 16,
        gcn_hidden_dim: 12,
        gcn_dim: 10,
        init_epochs: 10,
        epochs: 10,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("run_suite_4_seeds");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |bench, &exec| {
            bench.iter(|| trainer::run_suite(&ds, &table, &cfg, 4, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, pair_scoring, suite);
criterion_main!(benches);
