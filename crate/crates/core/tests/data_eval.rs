use proptest::prelude::*;

use wyimvc::autodiff::Matrix;
use wyimvc::data::{
    apply_missing, load_dataset, read_dataset_raw, synthesize, write_dataset, BenchmarkLayout,
    DatasetMeta, MultiviewDataset, SyntheticSpec,
};
use wyimvc::eval::{
    assignment_score, brute_force_assignment, clustering_accuracy, hungarian_match,
    max_weight_assignment, parse_csv, render_csv, run_experiment, spearman, summarize,
    AccuracyRecord, ExperimentConfig, ENV_OUTPUT_DIR, ENV_SEEDS,
};
use wyimvc::rng_from_seed;

fn weights(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0u32..30, k), k)
        .prop_map(|w| w.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_matches_brute_force(w in (1usize..=6).prop_flat_map(weights)) {
        let fast = max_weight_assignment(&w).unwrap();
        let brute = brute_force_assignment(&w);
        prop_assert_eq!(assignment_score(&w, &fast), assignment_score(&w, &brute));
        let mut seen = fast.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..w.len()).collect::<Vec<_>>());
    }

    #[test]
    fn accuracy_ignores_label_names(
        pred in prop::collection::vec(0usize..5, 1..80),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        seed in 0u64..1000,
    ) {
        let mut rng = rng_from_seed(seed);
        let truth: Vec<usize> = pred.iter().map(|_| rng.random_range(0..5)).collect();
        let renamed: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = clustering_accuracy(&pred, &truth, 5).unwrap();
        prop_assert_eq!(a, clustering_accuracy(&renamed, &truth, 5).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(clustering_accuracy(&truth, &truth, 5).unwrap(), 1.0);
    }

    #[test]
    fn normalization_is_idempotent(seed in 0u64..1000, rate in 0.0f64..0.9) {
        let spec = SyntheticSpec { clusters: 2, views: 2, dim: 3, samples: 40, ..SyntheticSpec::default() };
        let mut ds = apply_missing(&synthesize(&spec, seed).unwrap(), rate, seed).unwrap();
        ds.normalize();
        let once = ds.clone();
        ds.normalize();
        for v in 0..2 {
            for n in (0..ds.len()).filter(|&n| ds.is_available(n, v)) {
                for (a, b) in once.view(v).row(n).iter().zip(ds.view(v).row(n)) {
                    prop_assert!((a - b).abs() < 1e-12);
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(a));
                }
            }
        }
    }

    #[test]
    fn masks_keep_a_view_and_hit_the_requested_count(seed in 0u64..1000, rate in 0.0f64..0.99, views in 2usize..6) {
        let n = 200;
        let base = MultiviewDataset::new(vec![Matrix::zeros(n, 1); views], vec![0; n], None, DatasetMeta::default()).unwrap();
        let masked = apply_missing(&base, rate, seed).unwrap();
        prop_assert_eq!(masked.incomplete_count(), (rate * n as f64).floor() as usize);
        prop_assert!(masked.mask().iter().all(|row| row.iter().any(|&a| a)));
        prop_assert_eq!(masked.meta().mask_seed, Some(seed));
    }
}

#[test]
fn two_view_masks_split_evenly() {
    let n = 10_000;
    let base = MultiviewDataset::new(vec![Matrix::zeros(n, 1); 2], vec![0; n], None, DatasetMeta::default()).unwrap();
    let masked = apply_missing(&base, 0.5, 3).unwrap();
    assert_eq!(masked.incomplete_count(), 5000);
    let first_missing = masked.mask().iter().filter(|r| !r[0]).count() as f64;
    // binomial(5000, 1/2): sd ~ 35
    assert!((first_missing - 2500.0).abs() < 3.0 * 35.4, "{first_missing}");
}

#[test]
fn views_are_independent_given_the_label() {
    let spec = SyntheticSpec {
        clusters: 5,
        views: 2,
        dim: 1,
        samples: 10_000,
        ..SyntheticSpec::default()
    };
    let ds = synthesize(&spec, 12).unwrap();
    // pooled within-cluster correlation of the two views
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..5 {
        let rows: Vec<usize> = (0..ds.len()).filter(|&n| ds.labels()[n] == k).collect();
        let m = rows.len() as f64;
        let mx = rows.iter().map(|&n| ds.view(0).get(n, 0)).sum::<f64>() / m;
        let my = rows.iter().map(|&n| ds.view(1).get(n, 0)).sum::<f64>() / m;
        for &n in &rows {
            let (dx, dy) = (ds.view(0).get(n, 0) - mx, ds.view(1).get(n, 0) - my);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    let r = sxy / (sxx * syy).sqrt();
    assert!(r.abs() < 0.05, "partial correlation {r}");
}

#[test]
fn random_labels_score_near_chance() {
    let mut rng = rng_from_seed(77);
    let truth: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
    let pred: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
    let a = clustering_accuracy(&pred, &truth, 10).unwrap();
    assert!(a > 0.1 && a < 0.2, "{a}");
}

#[test]
fn match_maps_predicted_to_true_labels() {
    let truth = vec![0, 0, 1, 1, 2, 2];
    let pred = vec![2, 2, 0, 0, 1, 1];
    assert_eq!(hungarian_match(&pred, &truth, 3).unwrap(), vec![1, 2, 0]);
}

#[test]
fn spearman_known_values() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    assert!(spearman(&[1.0, 2.0], &[5.0, 5.0]).is_nan());
}

fn record(rate: f64, seed: u64, accuracy: f64) -> AccuracyRecord {
    AccuracyRecord {
        dataset: "synthetic".into(),
        missing_rate: rate,
        seed,
        accuracy,
        epochs: 7,
        wall_time_s: 1.25 + seed as f64,
    }
}

#[test]
fn results_csv_round_trips() {
    let records = vec![record(0.1, 0, 0.9), record(0.1, 1, 0.8), record(0.3, 0, 0.5)];
    let text = render_csv(&records);
    let (parsed, summaries) = parse_csv(&text).unwrap();
    assert_eq!(parsed, records);
    let expected = summarize(&records);
    assert_eq!(summaries.len(), 2);
    for (a, b) in summaries.iter().zip(&expected) {
        assert_eq!(a.runs, b.runs);
        assert!((a.mean_accuracy - b.mean_accuracy).abs() < 1e-15);
        assert!((a.std_accuracy - b.std_accuracy).abs() < 1e-15);
    }
    assert_eq!(summaries[1].std_accuracy, 0.0);
    assert!(parse_csv("a,b\n1,2\n").is_err());
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = ExperimentConfig::default();
    let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg, again);
    assert!(ExperimentConfig::from_toml("[model]\nwidth = 3\n").is_err());
    let partial = ExperimentConfig::from_toml("[model]\nepochs = 5\n").unwrap();
    assert_eq!(partial.model.epochs, 5);
    assert_eq!(partial.solver, cfg.solver);
}

#[test]
fn environment_overrides_seeds_and_output_directory() {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.output = "runs/out.csv".into();
    cfg.apply_overrides(|k| match k {
        k if k == ENV_SEEDS => Some("4, 5".into()),
        k if k == ENV_OUTPUT_DIR => Some("/tmp/elsewhere".into()),
        _ => None,
    })
    .unwrap();
    assert_eq!(cfg.experiment.seeds, vec![4, 5]);
    assert_eq!(cfg.experiment.output, std::path::PathBuf::from("/tmp/elsewhere/out.csv"));
    assert!(cfg
        .apply_overrides(|k| (k == ENV_SEEDS).then(|| "x".to_string()))
        .is_err());
}

#[test]
fn experiment_reruns_match_apart_from_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.missing_rates = vec![0.2, 0.4];
    cfg.experiment.seeds = vec![0, 1];
    cfg.synthetic.samples = 60;
    cfg.synthetic.clusters = 3;
    cfg.synthetic.dim = 3;
    cfg.model.latent_dim = 3;
    cfg.model.hidden = vec![5];
    cfg.model.epochs = 2;
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        cfg.experiment.output = dir.path().join(name);
        let records = run_experiment(&cfg).unwrap();
        assert_eq!(records.len(), 4);
        let text = std::fs::read_to_string(&cfg.experiment.output).unwrap();
        let (parsed, _) = parse_csv(&text).unwrap();
        outputs.push(
            parsed
                .into_iter()
                .map(|r| (r.missing_rate, r.seed, r.accuracy, r.epochs))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn datasets_survive_a_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        clusters: 3,
        views: 2,
        dim: 2,
        samples: 30,
        ..SyntheticSpec::default()
    };
    let ds = apply_missing(&synthesize(&spec, 5).unwrap(), 0.3, 5).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    assert_eq!(read_dataset_raw(dir.path()).unwrap(), ds);
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.mask(), ds.mask());
    assert_eq!(loaded.meta().normalization.as_deref(), Some("minmax"));
}

#[test]
fn benchmark_layouts_are_checked() {
    for layout in BenchmarkLayout::ALL {
        let (n, views, k) = layout.shape();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let ds = MultiviewDataset::new(vec![Matrix::zeros(n, 2); views], labels, None, DatasetMeta::default()).unwrap();
        layout.check(&ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds.subset(&(0..n.min(300)).collect::<Vec<_>>()), dir.path()).unwrap();
        let small = load_dataset(dir.path()).unwrap();
        if n > 300 {
            assert!(layout.check(&small).is_err(), "{}", layout.name());
        }
    }
}

#[test]
fn dataset_validation_rejects_bad_input() {
    let meta = DatasetMeta::default;
    assert!(MultiviewDataset::new(vec![Matrix::zeros(3, 1)], vec![0; 3], None, meta()).is_err());
    assert!(MultiviewDataset::new(vec![Matrix::zeros(3, 1), Matrix::zeros(2, 1)], vec![0; 3], None, meta()).is_err());
    let all_masked = vec![vec![true, true], vec![false, false], vec![true, false]];
    assert!(MultiviewDataset::new(vec![Matrix::zeros(3, 1); 2], vec![0; 3], Some(all_masked), meta()).is_err());
    let mut x = Matrix::zeros(3, 1);
    x.set(1, 0, f64::NAN);
    let mask = vec![vec![true, true], vec![false, true], vec![true, true]];
    assert!(MultiviewDataset::new(vec![x.clone(), Matrix::zeros(3, 1)], vec![0; 3], Some(mask), meta()).is_ok());
    assert!(MultiviewDataset::new(vec![x, Matrix::zeros(3, 1)], vec![0; 3], None, meta()).is_err());
    let ds = MultiviewDataset::new(vec![Matrix::zeros(4, 1); 2], vec![0; 4], None, meta()).unwrap();
    assert!(apply_missing(&ds, 1.0, 0).is_err());
    assert!(apply_missing(&ds, -0.1, 0).is_err());
}
