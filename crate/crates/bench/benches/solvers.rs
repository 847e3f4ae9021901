use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use wyimvc::autodiff::Optimizer;
use wyimvc::data::{apply_missing, synthesize, SyntheticSpec};
use wyimvc::dca::{solve, KappaWeights, SolverConfig};
use wyimvc::eval::max_weight_assignment;
use wyimvc::pipeline::{ModelConfig, WyimvcModel};
use wyimvc::{rng_from_seed, JointPmf};

fn discrete_solve(c: &mut Criterion) {
    let cards = vec![4, 4, 4];
    let weights: Vec<f64> = (0..64).map(|i| 1.0 + ((i * 37) % 11) as f64).collect();
    let joint = JointPmf::from_weights(cards, weights).unwrap();
    let kappa = KappaWeights::uniform(3, 0.4).unwrap();
    let cfg = SolverConfig::default();
    c.bench_function("solve_three_views_4x4x4", |b| {
        b.iter(|| solve(black_box(&joint), &kappa, 4, &cfg).unwrap())
    });
}

fn assignment(c: &mut Criterion) {
    let w: Vec<Vec<f64>> = (0..10)
        .map(|i| (0..10).map(|j| ((i * 7 + j * 13) % 17) as f64).collect())
        .collect();
    c.bench_function("assignment_10x10", |b| b.iter(|| max_weight_assignment(black_box(&w)).unwrap()));
}

fn train_epoch(c: &mut Criterion) {
    let spec = SyntheticSpec {
        samples: 1000,
        ..SyntheticSpec::default()
    };
    let ds = apply_missing(&synthesize(&spec, 0).unwrap(), 0.3, 0).unwrap();
    let cfg = ModelConfig {
        latent_dim: 8,
        hidden: vec![32],
        ..ModelConfig::default()
    };
    let model = WyimvcModel::new(cfg, &ds.view_dims(), &mut rng_from_seed(0)).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("epoch_1000_samples", |b| {
        b.iter_batched(
            || (model.clone(), Optimizer::adam(1e-3), rng_from_seed(1)),
            |(mut m, mut opt, mut rng)| m.train_epoch(&ds, &mut opt, 0, &mut rng).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, discrete_solve, assignment, train_epoch);
criterion_main!(benches);
