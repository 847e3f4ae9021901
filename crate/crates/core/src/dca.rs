//! Difference-of-convex fixed-point solver for the relaxed common-information problem.
//!
//! The complete-view update is
//!
//! ```text
//! P'(z|x^V) ∝ P(z) exp{ Σ_S κ_S [ log P(x_S|z) + log P(x_{S^c}|z) ] }
//! ```
//!
//! where the likelihoods come from Bayes-inverting the current encoder. For a
//! sample with only the views in `A` observed, the missing-view likelihoods are
//! replaced by the prior and the exponent collapses onto `κ_A` and the per-view
//! weights `κ_a` (see [`KappaWeights::reduce`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand_distr::{Distribution, Exp1};

use crate::discrete::{
    bayes_invert, cluster_marginal, conditional_mutual_information, encoder_information,
    enumerate_bipartitions, Bipartition, ConditionalPmf, JointPmf, Likelihood,
};
use crate::error::{Error, Result};
use crate::Rng;

/// Mixture weights κ_S over the canonical splits of the views.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaWeights {
    views: usize,
    splits: Vec<Bipartition>,
    weights: Vec<f64>,
    complete_weight: f64,
}

/// Weights of the incomplete-view update for one availability pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedKappa {
    pub available: Vec<usize>,
    /// κ_A, attached to the available/missing split.
    pub kappa_available: f64,
    /// κ_a for each available view a.
    pub per_view: Vec<(usize, f64)>,
}

impl ReducedKappa {
    /// κ_{A*} = κ_A + Σ_a κ_a.
    pub fn star(&self) -> f64 {
        self.kappa_available + self.per_view.iter().map(|(_, k)| k).sum::<f64>()
    }

    pub fn kappa_of(&self, view: usize) -> f64 {
        self.per_view
            .iter()
            .find(|(a, _)| *a == view)
            .map_or(0.0, |(_, k)| *k)
    }
}

impl KappaWeights {
    /// Weights listed in the order of [`enumerate_bipartitions`].
    pub fn new(views: usize, weights: Vec<f64>) -> Result<Self> {
        let splits = enumerate_bipartitions(views)?;
        if weights.len() != splits.len() {
            return Err(Error::invalid(format!(
                "{views} views have {} splits, got {} weights",
                splits.len(),
                weights.len()
            )));
        }
        if let Some(bad) = weights.iter().find(|k| !(0.0..1.0).contains(*k)) {
            return Err(Error::invalid(format!("kappa {bad} outside [0, 1)")));
        }
        let total: f64 = weights.iter().sum();
        if total >= 1.0 {
            return Err(Error::invalid(format!("kappa weights sum to {total} >= 1")));
        }
        Ok(Self {
            views,
            splits,
            weights,
            complete_weight: 0.0,
        })
    }

    /// κ_S = total / |Π_V| on every split.
    pub fn uniform(views: usize, total: f64) -> Result<Self> {
        let n = enumerate_bipartitions(views)?.len();
        Self::new(views, vec![total / n as f64; n])
    }

    pub fn zero(views: usize) -> Result<Self> {
        Self::uniform(views, 0.0)
    }

    /// κ_A used when every view is available (no available/missing split exists).
    pub fn with_complete_weight(mut self, weight: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&weight) {
            return Err(Error::invalid(format!("kappa {weight} outside [0, 1)")));
        }
        self.complete_weight = weight;
        Ok(self)
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn splits(&self) -> &[Bipartition] {
        &self.splits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weight_of(&self, split: &Bipartition) -> f64 {
        self.splits
            .iter()
            .position(|s| s == split)
            .map_or(0.0, |i| self.weights[i])
    }

    /// Multipliers β_S = κ_S / (1 − Σκ) of the Lagrangian whose DC iteration is
    /// exactly the κ-weighted update.
    pub fn multipliers(&self) -> Vec<f64> {
        let scale = 1.0 / (1.0 - self.total());
        self.weights.iter().map(|k| k * scale).collect()
    }

    /// Reduces the split weights to an availability pattern `available`.
    ///
    /// κ_a sums κ_S over the splits that put view `a` on one side and at least
    /// one missing view on the other. κ_A is the weight of the canonical
    /// (A, Ā) split, or the configured complete weight when A is every view.
    pub fn reduce(&self, available: &[usize]) -> Result<ReducedKappa> {
        if available.is_empty() {
            return Err(Error::invalid("a sample needs at least one available view"));
        }
        for w in available.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid("available views must be sorted and unique"));
            }
        }
        if available.iter().any(|&a| a >= self.views) {
            return Err(Error::invalid(format!(
                "available view out of range for {} views",
                self.views
            )));
        }
        let missing: Vec<usize> = (0..self.views).filter(|v| !available.contains(v)).collect();
        let kappa_available = if missing.is_empty() {
            self.complete_weight
        } else {
            self.weight_of(&Bipartition::canonical(self.views, available)?)
        };
        let per_view = available
            .iter()
            .map(|&a| {
                let k: f64 = self
                    .splits
                    .iter()
                    .zip(&self.weights)
                    .filter(|(s, _)| missing.iter().any(|&nu| s.separates(a, nu)))
                    .map(|(_, k)| k)
                    .sum();
                (a, k)
            })
            .collect();
        let reduced = ReducedKappa {
            available: available.to_vec(),
            kappa_available,
            per_view,
        };
        if reduced.star() >= 1.0 {
            return Err(Error::invalid(format!(
                "reduced kappa {} >= 1 for available views {available:?}",
                reduced.star()
            )));
        }
        Ok(reduced)
    }
}

pub fn kappa_reduce(kappa: &KappaWeights, available: &[usize]) -> Result<ReducedKappa> {
    kappa.reduce(available)
}

/// Normalizes log-weights with max subtraction.
fn normalize_log(mut log_w: Vec<f64>, what: impl FnOnce() -> String) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate(format!("zero normalizer for {}", what())));
    }
    let mut sum = 0.0;
    for w in &mut log_w {
        *w = (*w - max).exp();
        sum += *w;
    }
    for w in &mut log_w {
        *w /= sum;
    }
    Ok(log_w)
}

/// `weight * ln(p)` with the convention that a zero weight contributes nothing.
fn weighted_ln(weight: f64, p: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * p.ln()
    }
}

struct SplitLikelihoods {
    weight: f64,
    side: Likelihood,
    complement: Likelihood,
}

fn split_likelihoods(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    kappa: &KappaWeights,
    warnings: &mut Vec<String>,
) -> Result<Vec<SplitLikelihoods>> {
    let mut out = Vec::new();
    for (split, &weight) in kappa.splits.iter().zip(&kappa.weights) {
        if weight == 0.0 {
            continue;
        }
        let side = bayes_invert(joint, encoder, split.side())?;
        let complement = bayes_invert(joint, encoder, split.complement())?;
        if !side.degenerate_clusters().is_empty() {
            warnings.push(format!(
                "empty clusters {:?} replaced by the data marginal",
                side.degenerate_clusters()
            ));
        }
        out.push(SplitLikelihoods {
            weight,
            side,
            complement,
        });
    }
    Ok(out)
}

fn complete_row(
    liks: &[SplitLikelihoods],
    prior: &[f64],
    config: &[usize],
) -> Result<Vec<f64>> {
    let log_w: Vec<f64> = (0..prior.len())
        .map(|z| {
            let mut e = prior[z].ln();
            for l in liks {
                e += l.weight
                    * (l.side.get(z, l.side.sub_index(config)).ln()
                        + l.complement.get(z, l.complement.sub_index(config)).ln());
            }
            e
        })
        .collect();
    normalize_log(log_w, || format!("configuration {config:?}"))
}

fn check_prior(prior: &[f64], z_card: usize) -> Result<()> {
    if prior.len() != z_card {
        return Err(Error::invalid(format!(
            "prior has {} entries, |Z| = {z_card}",
            prior.len()
        )));
    }
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("prior entries must be finite and nonnegative"));
    }
    Ok(())
}

fn update(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    kappa: &KappaWeights,
    prior: &[f64],
    warnings: &mut Vec<String>,
) -> Result<ConditionalPmf> {
    if kappa.views() != joint.views() {
        return Err(Error::invalid("kappa weights built for a different view count"));
    }
    let z_card = encoder.z_cardinality();
    check_prior(prior, z_card)?;
    let liks = split_likelihoods(joint, encoder, kappa, warnings)?;
    let mut table = Vec::with_capacity(encoder.table().len());
    for (i, &p) in joint.probs().iter().enumerate() {
        if p == 0.0 {
            // off-support rows never enter any objective; leave them where they are
            table.extend_from_slice(encoder.row(i));
            continue;
        }
        let config = joint.config_of(i);
        table.extend(complete_row(&liks, prior, &config)?);
    }
    Ok(ConditionalPmf::from_rows_unchecked(
        z_card,
        joint.cardinalities().to_vec(),
        table,
    ))
}

/// One application of the complete-view update with an explicit prior P(z).
pub fn dca_step(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    kappa: &KappaWeights,
    prior: &[f64],
) -> Result<ConditionalPmf> {
    update(joint, encoder, kappa, prior, &mut Vec::new())
}

/// I(Z; X^V) + Σ_S κ_S I(X_S; X_{S^c} | Z).
pub fn lagrangian(joint: &JointPmf, encoder: &ConditionalPmf, kappa: &KappaWeights) -> Result<f64> {
    let (mi, cmi) = information_terms(joint, encoder, kappa)?;
    Ok(mi + kappa.weights.iter().zip(&cmi).map(|(k, c)| k * c).sum::<f64>())
}

/// I(Z; X^V) + Σ_S β_S I(X_S; X_{S^c} | Z) with β from [`KappaWeights::multipliers`].
///
/// The fixed-point iteration decreases this value monotonically for any κ.
pub fn dc_objective(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    kappa: &KappaWeights,
) -> Result<f64> {
    let (mi, cmi) = information_terms(joint, encoder, kappa)?;
    Ok(mi + kappa.multipliers().iter().zip(&cmi).map(|(b, c)| b * c).sum::<f64>())
}

fn information_terms(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    kappa: &KappaWeights,
) -> Result<(f64, Vec<f64>)> {
    let mi = encoder_information(joint, encoder)?;
    let cmi = kappa
        .splits
        .iter()
        .map(|s| conditional_mutual_information(joint, encoder, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((mi, cmi))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PriorMode {
    /// P(z) recomputed from the current encoder after every step.
    #[default]
    Marginal,
    /// P(z) held at 1/|Z|.
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub prior_mode: PriorMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            seed: 0,
            prior_mode: PriorMode::Marginal,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mutual_information: f64,
    /// I(X_S; X_{S^c} | Z) per split, in split order.
    pub conditional_mi: Vec<f64>,
    pub lagrangian: f64,
    pub dc_objective: f64,
    /// Sup-norm change from the previous iterate; 0 for the initial record.
    pub step: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl SolverTrace {
    pub fn lagrangians(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lagrangian).collect()
    }

    /// Tab-separated table, one row per iteration.
    pub fn render(&self, splits: &[Bipartition]) -> String {
        let mut out = String::from("iteration\tI(Z;X)\tlagrangian\tdc_objective\tstep");
        for s in splits {
            let _ = write!(out, "\tI(S;Sc|Z){s}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.3e}",
                r.iteration, r.mutual_information, r.lagrangian, r.dc_objective, r.step
            );
            for c in &r.conditional_mi {
                let _ = write!(out, "\t{c:.12e}");
            }
            out.push('\n');
        }
        for w in &self.warnings {
            let _ = writeln!(out, "# warning: {w}");
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub encoder: ConditionalPmf,
    pub trace: SolverTrace,
    pub converged: bool,
    /// Number of updates applied.
    pub iterations: usize,
}

/// Encoder with every row drawn from a symmetric Dirichlet(1).
pub fn random_encoder(z_card: usize, cards: Vec<usize>, rng: &mut Rng) -> Result<ConditionalPmf> {
    let n: usize = cards.iter().product();
    let mut table = Vec::with_capacity(n * z_card);
    for _ in 0..n {
        let row: Vec<f64> = (0..z_card).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = row.iter().sum();
        table.extend(row.into_iter().map(|x: f64| x / s));
    }
    ConditionalPmf::new(z_card, cards, table)
}

fn record(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    kappa: &KappaWeights,
    iteration: usize,
    step: f64,
) -> Result<IterationRecord> {
    let (mi, cmi) = information_terms(joint, encoder, kappa)?;
    let lagrangian = mi + kappa.weights.iter().zip(&cmi).map(|(k, c)| k * c).sum::<f64>();
    let dc_objective = mi
        + kappa
            .multipliers()
            .iter()
            .zip(&cmi)
            .map(|(b, c)| b * c)
            .sum::<f64>();
    Ok(IterationRecord {
        iteration,
        mutual_information: mi,
        conditional_mi: cmi,
        lagrangian,
        dc_objective,
        step,
    })
}

/// Runs the fixed-point iteration from a seeded Dirichlet initialization.
pub fn solve(
    joint: &JointPmf,
    kappa: &KappaWeights,
    z_card: usize,
    config: &SolverConfig,
) -> Result<Solution> {
    let mut rng = crate::rng_from_seed(config.seed);
    let init = random_encoder(z_card, joint.cardinalities().to_vec(), &mut rng)?;
    solve_from(joint, kappa, init, config)
}

/// Runs the fixed-point iteration from a given encoder.
///
/// Stops once the sup-norm step drops below `tol`. At `max_iters` the iterate
/// with the lowest Lagrangian is returned with `converged = false`.
pub fn solve_from(
    joint: &JointPmf,
    kappa: &KappaWeights,
    init: ConditionalPmf,
    config: &SolverConfig,
) -> Result<Solution> {
    if !(config.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let z_card = init.z_cardinality();
    let mut trace = SolverTrace::default();
    let mut encoder = init;
    trace.records.push(record(joint, &encoder, kappa, 0, 0.0)?);
    let mut best = (trace.records[0].lagrangian, encoder.clone());

    for iteration in 1..=config.max_iters {
        let prior = match config.prior_mode {
            PriorMode::Marginal => cluster_marginal(joint, &encoder)?,
            PriorMode::Uniform => vec![1.0 / z_card as f64; z_card],
        };
        let mut warnings = Vec::new();
        let next = update(joint, &encoder, kappa, &prior, &mut warnings)?;
        for w in warnings {
            let w = format!("iteration {iteration}: {w}");
            if !trace.warnings.contains(&w) {
                trace.warnings.push(w);
            }
        }
        let step = next.sup_distance(&encoder);
        encoder = next;
        let rec = record(joint, &encoder, kappa, iteration, step)?;
        if rec.lagrangian < best.0 {
            best = (rec.lagrangian, encoder.clone());
        }
        trace.records.push(rec);
        if step < config.tol {
            return Ok(Solution {
                encoder,
                trace,
                converged: true,
                iterations: iteration,
            });
        }
    }
    Ok(Solution {
        encoder: best.1,
        trace,
        converged: false,
        iterations: config.max_iters,
    })
}

/// Incomplete-view update P'(z | x_A) for one sample.
///
/// `config` has an entry for every view; entries of views outside `available`
/// are never read. With every view available this is the complete-view row.
pub fn incomplete_posterior(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    kappa: &KappaWeights,
    available: &[usize],
    config: &[usize],
) -> Result<Vec<f64>> {
    let views = joint.views();
    if config.len() != views {
        return Err(Error::invalid(format!(
            "configuration has {} entries for {views} views",
            config.len()
        )));
    }
    let reduced = kappa.reduce(available)?;
    for &a in available {
        if config[a] >= joint.cardinalities()[a] {
            return Err(Error::invalid(format!("value {} out of range for view {a}", config[a])));
        }
    }
    let prior = cluster_marginal(joint, encoder)?;
    if available.len() == views {
        let liks = split_likelihoods(joint, encoder, kappa, &mut Vec::new())?;
        return complete_row(&liks, &prior, config);
    }

    // P(z | x_A) ∝ P(x_A | z) P(z)
    let lik_a = bayes_invert(joint, encoder, available)?;
    let a_index = lik_a.sub_index(config);
    let joint_a: Vec<f64> = (0..prior.len())
        .map(|z| lik_a.get(z, a_index) * prior[z])
        .collect();
    let p_xa: f64 = joint_a.iter().sum();
    if !(p_xa > 0.0) {
        return Err(Error::Degenerate(format!(
            "available configuration {:?} has zero probability",
            available.iter().map(|&a| config[a]).collect::<Vec<_>>()
        )));
    }

    let mut terms = Vec::new();
    for &(a, weight) in &reduced.per_view {
        if weight == 0.0 {
            continue;
        }
        let rest: Vec<usize> = available.iter().copied().filter(|&v| v != a).collect();
        let single = bayes_invert(joint, encoder, &[a])?;
        let others = if rest.is_empty() {
            None
        } else {
            Some(bayes_invert(joint, encoder, &rest)?)
        };
        terms.push((weight, single, others));
    }

    let log_w: Vec<f64> = (0..prior.len())
        .map(|z| {
            if prior[z] == 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut e = prior[z].ln();
            e += weighted_ln(reduced.kappa_available, joint_a[z] / p_xa / prior[z]);
            for (weight, single, others) in &terms {
                e += weight * single.get(z, single.sub_index(config)).ln();
                if let Some(o) = others {
                    e += weight * o.get(z, o.sub_index(config)).ln();
                }
            }
            e
        })
        .collect();
    normalize_log(log_w, || format!("available configuration under {available:?}"))
}

/// Heads q_S keyed by their (sorted, zero-based) view subset.
pub type HeadSet = BTreeMap<Vec<usize>, Vec<f64>>;

fn head<'a>(heads: &'a HeadSet, subset: &[usize], z_card: Option<usize>) -> Result<&'a [f64]> {
    let q = heads
        .get(subset)
        .ok_or_else(|| Error::Config(format!("missing head for view subset {subset:?}")))?;
    if let Some(k) = z_card {
        if q.len() != k {
            return Err(Error::Config(format!(
                "head for {subset:?} has {} entries, expected {k}",
                q.len()
            )));
        }
    }
    if q.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid(format!("head for {subset:?} has invalid entries")));
    }
    Ok(q)
}

fn head_z_card(heads: &HeadSet) -> Result<usize> {
    heads
        .values()
        .next()
        .map(Vec::len)
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Config("no heads supplied".into()))
}

/// q_eq(z) ∝ Π_S [q_S(z) q_{S^c}(z)]^{κ_S} under a uniform prior.
pub fn equiv_class_prob_complete(heads: &HeadSet, kappa: &KappaWeights) -> Result<Vec<f64>> {
    let z_card = head_z_card(heads)?;
    let mut log_w = vec![0.0; z_card];
    for (split, &k) in kappa.splits.iter().zip(&kappa.weights) {
        if k == 0.0 {
            continue;
        }
        let qs = head(heads, split.side(), Some(z_card))?;
        let qc = head(heads, split.complement(), Some(z_card))?;
        for z in 0..z_card {
            log_w[z] += k * (qs[z].ln() + qc[z].ln());
        }
    }
    normalize_log(log_w, || "complete-view heads".into())
}

/// q_eq;n(z) ∝ q_A(z)^{κ_A} Π_{a∈A} [q_a(z) q_{A∖a}(z)]^{κ_a}.
///
/// With every view available this is [`equiv_class_prob_complete`].
pub fn equiv_class_prob_incomplete(
    heads: &HeadSet,
    kappa: &KappaWeights,
    available: &[usize],
) -> Result<Vec<f64>> {
    let reduced = kappa.reduce(available)?;
    if available.len() == kappa.views() {
        return equiv_class_prob_complete(heads, kappa);
    }
    let z_card = head_z_card(heads)?;
    let mut log_w = vec![0.0; z_card];
    if reduced.kappa_available != 0.0 {
        let qa = head(heads, available, Some(z_card))?;
        for z in 0..z_card {
            log_w[z] += reduced.kappa_available * qa[z].ln();
        }
    }
    for &(a, k) in &reduced.per_view {
        if k == 0.0 {
            continue;
        }
        let single = head(heads, &[a], Some(z_card))?;
        let rest: Vec<usize> = available.iter().copied().filter(|&v| v != a).collect();
        let others = if rest.is_empty() {
            None
        } else {
            Some(head(heads, &rest, Some(z_card))?)
        };
        for z in 0..z_card {
            log_w[z] += k * single[z].ln();
            if let Some(o) = others {
                log_w[z] += k * o[z].ln();
            }
        }
    }
    normalize_log(log_w, || format!("heads under {available:?}"))
}

/// q*_eq(z) ∝ Π_i q_i(z)^{κ_{A*}} over the available view heads.
pub fn equiv_class_prob_condindep(view_heads: &[&[f64]], kappa_star: f64) -> Result<Vec<f64>> {
    if !(kappa_star > 0.0 && kappa_star < 1.0) {
        return Err(Error::invalid(format!("kappa_A* = {kappa_star} outside (0, 1)")));
    }
    let (first, rest) = view_heads
        .split_first()
        .ok_or_else(|| Error::invalid("at least one view head is required"))?;
    let z_card = first.len();
    if z_card == 0 || rest.iter().any(|q| q.len() != z_card) {
        return Err(Error::invalid("view heads must share a nonzero dimension"));
    }
    let mut log_w = vec![0.0; z_card];
    for q in view_heads {
        for (acc, &p) in log_w.iter_mut().zip(q.iter()) {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid(format!("invalid head entry {p}")));
            }
            *acc += kappa_star * p.ln();
        }
    }
    normalize_log(log_w, || "view heads".into())
}
