//! Label matching, clustering accuracy and the multi-seed experiment runner.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{apply_missing, load_dataset, synthesize, MultiviewDataset, SyntheticSpec};
use crate::dca::{KappaWeights, PriorMode, SolverConfig};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::pipeline::{ModelConfig, WyimvcModel};
use crate::stochastic::TemperatureDecay;

/// Maximum-weight perfect matching on a square matrix.
///
/// Returns `assignment` with `assignment[row] = column`. Runs the
/// shortest-augmenting-path form of the Hungarian method in O(k³).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Result<Vec<usize>> {
    let k = weights.len();
    if weights.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("assignment needs a square matrix"));
    }
    if weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(Error::invalid("assignment weights must be finite"));
    }
    // Minimise the negated weights. Rows and columns are 1-based below, with
    // column 0 acting as the free root of each augmenting search.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0, j) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; k];
    for j in 1..=k {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Exhaustive search over all k! assignments; the reference for small `k`.
pub fn brute_force_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    fn recurse(w: &[Vec<f64>], row: usize, used: &mut [bool], cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if row == w.len() {
            let score: f64 = cur.iter().enumerate().map(|(r, &c)| w[r][c]).sum();
            if score > best.0 {
                *best = (score, cur.clone());
            }
            return;
        }
        for c in 0..w.len() {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                recurse(w, row + 1, used, cur, best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    recurse(weights, 0, &mut vec![false; weights.len()], &mut Vec::new(), &mut best);
    best.1
}

/// Sum of matched weights.
pub fn assignment_score(weights: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(r, &c)| weights[r][c]).sum()
}

/// `confusion[p][t]` counts samples predicted `p` with true label `t`.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<f64>>> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = vec![vec![0.0; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::invalid(format!("label {} outside [0, {k})", p.max(t))));
        }
        c[p][t] += 1.0;
    }
    Ok(c)
}

/// Relabeling `mapping[p] = t` of predicted clusters that agrees with the
/// most ground-truth labels.
pub fn hungarian_match(predicted: &[usize], truth: &[usize], k: usize) -> Result<Vec<usize>> {
    max_weight_assignment(&confusion_matrix(predicted, truth, k)?)
}

/// Fraction of samples whose relabeled prediction equals the truth.
pub fn clustering_accuracy(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("accuracy of an empty labeling"));
    }
    let confusion = confusion_matrix(predicted, truth, k)?;
    let mapping = max_weight_assignment(&confusion)?;
    Ok(assignment_score(&confusion, &mapping) / truth.len() as f64)
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Dataset directory; the synthetic generator is used when absent.
    pub dataset: Option<PathBuf>,
    pub missing_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            dataset: None,
            missing_rates: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            seeds: vec![0, 1, 2, 3, 4],
            output: PathBuf::from("results.csv"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub clusters: usize,
    pub views: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub samples: usize,
    /// Generator seed, fixed across the sweep so only masks and training vary.
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self::from_spec(&SyntheticSpec::default(), 0)
    }
}

impl SyntheticSection {
    pub fn from_spec(spec: &SyntheticSpec, seed: u64) -> Self {
        Self {
            clusters: spec.clusters,
            views: spec.views,
            dim: spec.dim,
            separation: spec.separation,
            noise: spec.noise,
            samples: spec.samples,
            seed,
        }
    }

    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            clusters: self.clusters,
            views: self.views,
            dim: self.dim,
            separation: self.separation,
            noise: self.noise,
            samples: self.samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Defaults to the number of labels in the data.
    pub clusters: Option<usize>,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub imputer_hidden: Vec<usize>,
    pub kappa_a_star: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            clusters: None,
            latent_dim: m.latent_dim,
            hidden: m.hidden,
            imputer_hidden: m.imputer_hidden,
            kappa_a_star: m.kappa_a_star,
            batch_size: m.batch_size,
            epochs: m.epochs,
            learning_rate: m.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticSection {
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_decay: TemperatureDecay,
}

impl Default for StochasticSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            tau_start: m.tau_start,
            tau_end: m.tau_end,
            tau_decay: m.tau_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iters: usize,
    pub tol: f64,
    /// Total bipartition weight, spread evenly over the splits.
    pub kappa_total: f64,
    pub seed: u64,
    /// |Z|; defaults to the largest view alphabet.
    pub z_cardinality: Option<usize>,
    pub uniform_prior: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            max_iters: s.max_iters,
            tol: s.tol,
            kappa_total: 0.5,
            seed: s.seed,
            z_cardinality: None,
            uniform_prior: false,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            prior_mode: if self.uniform_prior {
                PriorMode::Uniform
            } else {
                PriorMode::Marginal
            },
        }
    }

    pub fn kappa(&self, views: usize) -> Result<KappaWeights> {
        KappaWeights::uniform(views, self.kappa_total)
    }
}

/// A full experiment file: one TOML table per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub synthetic: SyntheticSection,
    pub model: ModelSection,
    pub loss: LossConfig,
    pub stochastic: StochasticSection,
    pub solver: SolverSection,
}

/// Comma-separated seed list overriding `experiment.seeds`.
pub const ENV_SEEDS: &str = "WYIMVC_SEEDS";
/// Directory that replaces the directory part of `experiment.output`.
pub const ENV_OUTPUT_DIR: &str = "WYIMVC_OUTPUT_DIR";

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a file and applies the environment overrides.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        cfg.apply_overrides(|key| std::env::var(key).ok())?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(seeds) = lookup(ENV_SEEDS) {
            self.experiment.seeds = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{ENV_SEEDS}: bad seed {s:?}")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(dir) = lookup(ENV_OUTPUT_DIR) {
            let file = self
                .experiment
                .output
                .file_name()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("results.csv"));
            self.experiment.output = PathBuf::from(dir).join(file);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if let Some(r) = self.experiment.missing_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("missing rate {r} outside [0, 1)")));
        }
        if self.experiment.dataset.is_none() {
            self.synthetic.spec().validate()?;
        }
        Ok(())
    }

    /// Model configuration with `clusters` filled from the data when unset.
    pub fn model_config(&self, clusters_in_data: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            clusters: m.clusters.unwrap_or(clusters_in_data),
            latent_dim: m.latent_dim,
            hidden: m.hidden.clone(),
            imputer_hidden: m.imputer_hidden.clone(),
            kappa_a_star: m.kappa_a_star,
            batch_size: m.batch_size,
            epochs: m.epochs,
            learning_rate: m.learning_rate,
            tau_start: self.stochastic.tau_start,
            tau_end: self.stochastic.tau_end,
            tau_decay: self.stochastic.tau_decay,
            loss: self.loss.clone(),
        }
    }

    /// The complete dataset the sweep masks.
    pub fn base_dataset(&self) -> Result<MultiviewDataset> {
        let ds = match &self.experiment.dataset {
            Some(dir) => load_dataset(dir)?,
            None => synthesize(&self.synthetic.spec(), self.synthetic.seed)?,
        };
        if !ds.is_complete() {
            return Err(Error::invalid("experiments start from a complete dataset"));
        }
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyRecord {
    pub dataset: String,
    pub missing_rate: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub epochs: usize,
    pub wall_time_s: f64,
}

/// Mean and sample standard deviation across seeds for one missing rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSummary {
    pub dataset: String,
    pub missing_rate: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub epochs: usize,
    pub mean_wall_time_s: f64,
    pub std_wall_time_s: f64,
}

pub const CSV_HEADER: &str = "dataset,missing_rate,seed,accuracy,epochs,wall_time_s";

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by rate, in first-appearance order.
pub fn summarize(records: &[AccuracyRecord]) -> Vec<RateSummary> {
    let mut rates: Vec<f64> = Vec::new();
    for r in records {
        if !rates.contains(&r.missing_rate) {
            rates.push(r.missing_rate);
        }
    }
    rates
        .into_iter()
        .map(|rate| {
            let group: Vec<&AccuracyRecord> = records.iter().filter(|r| r.missing_rate == rate).collect();
            let acc: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
            let wall: Vec<f64> = group.iter().map(|r| r.wall_time_s).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_wall_time_s, std_wall_time_s) = mean_std(&wall);
            RateSummary {
                dataset: group[0].dataset.clone(),
                missing_rate: rate,
                runs: group.len(),
                mean_accuracy,
                std_accuracy,
                epochs: group[0].epochs,
                mean_wall_time_s,
                std_wall_time_s,
            }
        })
        .collect()
}

/// Per-run rows followed by a `mean` and a `std` row per missing rate.
pub fn render_csv(records: &[AccuracyRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3}",
            r.dataset, r.missing_rate, r.seed, r.accuracy, r.epochs, r.wall_time_s
        );
    }
    for sm in summarize(records) {
        let _ = writeln!(
            s,
            "{},{},mean,{},{},{:.3}",
            sm.dataset, sm.missing_rate, sm.mean_accuracy, sm.epochs, sm.mean_wall_time_s
        );
        let _ = writeln!(
            s,
            "{},{},std,{},{},{:.3}",
            sm.dataset, sm.missing_rate, sm.std_accuracy, sm.epochs, sm.std_wall_time_s
        );
    }
    s
}

/// Per-run records and summary rows of a results file.
pub fn parse_csv(text: &str) -> Result<(Vec<AccuracyRecord>, Vec<RateSummary>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::format(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::format("unexpected results header"));
    }
    let mut records = Vec::new();
    let mut summaries: Vec<RateSummary> = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::format(e.to_string()))?;
        let bad = || Error::format(format!("results line {}: malformed", line + 2));
        if row.len() != 6 {
            return Err(bad());
        }
        let rate: f64 = row[1].parse().map_err(|_| bad())?;
        let acc: f64 = row[3].parse().map_err(|_| bad())?;
        let epochs: usize = row[4].parse().map_err(|_| bad())?;
        let wall: f64 = row[5].parse().map_err(|_| bad())?;
        match &row[2] {
            "mean" => summaries.push(RateSummary {
                dataset: row[0].to_string(),
                missing_rate: rate,
                runs: records.iter().filter(|r: &&AccuracyRecord| r.missing_rate == rate).count(),
                mean_accuracy: acc,
                std_accuracy: f64::NAN,
                epochs,
                mean_wall_time_s: wall,
                std_wall_time_s: f64::NAN,
            }),
            "std" => {
                let s = summaries
                    .iter_mut()
                    .rev()
                    .find(|s| s.missing_rate == rate)
                    .ok_or_else(bad)?;
                s.std_accuracy = acc;
                s.std_wall_time_s = wall;
            }
            seed => records.push(AccuracyRecord {
                dataset: row[0].to_string(),
                missing_rate: rate,
                seed: seed.parse().map_err(|_| bad())?,
                accuracy: acc,
                epochs,
                wall_time_s: wall,
            }),
        }
    }
    Ok((records, summaries))
}

/// One (rate, seed) cell: mask, train, predict, score.
pub fn run_cell(
    base: &MultiviewDataset,
    model_config: &ModelConfig,
    dataset_name: &str,
    rate: f64,
    seed: u64,
) -> Result<AccuracyRecord> {
    let start = Instant::now();
    let masked = apply_missing(base, rate, seed)?;
    let (model, _) = WyimvcModel::train(model_config.clone(), &masked, seed)?;
    let predicted = model.predict_labels(&masked)?;
    let k = model_config.clusters.max(masked.num_clusters());
    let accuracy = clustering_accuracy(&predicted, masked.labels(), k)?;
    Ok(AccuracyRecord {
        dataset: dataset_name.to_string(),
        missing_rate: rate,
        seed,
        accuracy,
        epochs: model_config.epochs,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every (rate, seed) cell and writes the CSV to `experiment.output`.
/// When a cell fails, the rows finished so far are written before the error
/// is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<AccuracyRecord>> {
    config.validate()?;
    let base = config.base_dataset()?;
    let model_config = config.model_config(base.num_clusters());
    model_config.validate()?;
    let out = &config.experiment.output;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut records = Vec::new();
    for &rate in &config.experiment.missing_rates {
        for &seed in &config.experiment.seeds {
            match run_cell(&base, &model_config, &config.experiment.name, rate, seed) {
                Ok(r) => records.push(r),
                Err(e) => {
                    fs::write(out, render_csv(&records))?;
                    return Err(e);
                }
            }
        }
    }
    fs::write(out, render_csv(&records))?;
    Ok(records)
}
