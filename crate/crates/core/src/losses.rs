//! Training losses with availability masks.
//!
//! Every loss takes a per-row mask and only reads the rows it marks as
//! available, so a fully masked sample contributes neither value nor gradient.
//! A loss with no available rows is reported as absent (`None`) and adds 0.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub imputation: f64,
    pub contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            kl: 1.0,
            imputation: 1.0,
            contrastive: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// τ_c in φ(λ) = exp(λ / τ_c).
    pub contrastive_temperature: f64,
    /// Use φ(λ) = max(λ, 1e-12) instead of the exponential.
    pub strict_contrastive: bool,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            contrastive_temperature: 0.5,
            strict_contrastive: false,
            weights: LossWeights::default(),
        }
    }
}

const STRICT_FLOOR: f64 = 1e-12;

fn available(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

fn check_rows(tape: &Tape, var: Var, mask: &[bool]) -> Result<()> {
    let rows = tape.value(var).rows();
    if rows != mask.len() {
        return Err(Error::invalid(format!(
            "mask has {} entries for {rows} rows",
            mask.len()
        )));
    }
    Ok(())
}

/// (1/N_v) Σ_n m_n ‖a_n − b_n‖².
fn masked_sq_error(tape: &mut Tape, a: Var, b: Var, mask: &[bool]) -> Result<Option<Var>> {
    check_rows(tape, a, mask)?;
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::Shape {
            op: "masked squared error",
            left: tape.value(a).shape(),
            right: tape.value(b).shape(),
        });
    }
    let idx = available(mask);
    if idx.is_empty() {
        return Ok(None);
    }
    let a = tape.gather_rows(a, &idx)?;
    let b = tape.gather_rows(b, &idx)?;
    let d = tape.sub(a, b)?;
    let sq = tape.l2_norm_sq(d);
    let total = tape.sum(sq);
    Ok(Some(tape.scale(total, 1.0 / idx.len() as f64)))
}

/// Masked reconstruction error of view features against their decoding.
pub fn loss_recon(tape: &mut Tape, x: Var, decoded: Var, mask: &[bool]) -> Result<Option<Var>> {
    masked_sq_error(tape, x, decoded, mask)
}

/// (1/N_v) Σ_n m_n ‖f(x_n)‖², the KL term against N(0, I) with constants dropped.
pub fn loss_kl(tape: &mut Tape, means: Var, mask: &[bool]) -> Result<Option<Var>> {
    check_rows(tape, means, mask)?;
    let idx = available(mask);
    if idx.is_empty() {
        return Ok(None);
    }
    let m = tape.gather_rows(means, &idx)?;
    let sq = tape.l2_norm_sq(m);
    let total = tape.sum(sq);
    Ok(Some(tape.scale(total, 1.0 / idx.len() as f64)))
}

/// Masked error between view latents (a detached target) and h(z).
pub fn loss_latent_imputation(
    tape: &mut Tape,
    target: &Matrix,
    predicted: Var,
    mask: &[bool],
) -> Result<Option<Var>> {
    let target = tape.constant(target.clone());
    masked_sq_error(tape, target, predicted, mask)
}

fn phi(tape: &mut Tape, sim: Var, config: &LossConfig) -> Var {
    if config.strict_contrastive {
        tape.clamp_min(sim, STRICT_FLOOR)
    } else {
        let scaled = tape.scale(sim, 1.0 / config.contrastive_temperature);
        tape.exp(scaled)
    }
}

/// Sum of the off-diagonal entries of a square node, as 1×1.
fn off_diagonal_sum(tape: &mut Tape, m: Var) -> Result<Var> {
    let all = tape.sum(m);
    let d = tape.diag(m)?;
    let trace = tape.sum(d);
    tape.sub(all, trace)
}

/// Contrastive alignment of two views' class-probability rows over their
/// pairwise-complete samples.
///
/// Row `n` of `c_i` and `c_j` belongs to the same sample. Positives are the
/// cross-view cosine similarities of matching rows; negatives are every
/// off-diagonal similarity of the cross-view and both within-view matrices.
/// Returns `None` when there are fewer than two rows (no negatives exist).
pub fn loss_contrastive(
    tape: &mut Tape,
    c_i: Var,
    c_j: Var,
    config: &LossConfig,
) -> Result<Option<Var>> {
    let (si, sj) = (tape.value(c_i).shape(), tape.value(c_j).shape());
    if si != sj {
        return Err(Error::Shape {
            op: "contrastive",
            left: si,
            right: sj,
        });
    }
    let n = si.0;
    if n < 2 {
        return Ok(None);
    }
    let ni = tape.normalize_rows(c_i)?;
    let nj = tape.normalize_rows(c_j)?;
    let s_ij = tape.matmul_nt(ni, nj)?;
    let s_ii = tape.matmul_nt(ni, ni)?;
    let s_jj = tape.matmul_nt(nj, nj)?;
    let e_ij = phi(tape, s_ij, config);
    let e_ii = phi(tape, s_ii, config);
    let e_jj = phi(tape, s_jj, config);

    let pos = tape.diag(e_ij)?;
    let n_ij = off_diagonal_sum(tape, e_ij)?;
    let n_ii = off_diagonal_sum(tape, e_ii)?;
    let n_jj = off_diagonal_sum(tape, e_jj)?;
    let neg = tape.add(n_ij, n_ii)?;
    let neg = tape.add(neg, n_jj)?;
    let neg = tape.broadcast(neg, n, 1)?;
    let den = tape.add(pos, neg)?;
    let log_den = tape.log(den);
    let log_pos = tape.log(pos);
    let ratio = tape.sub(log_den, log_pos)?;
    Ok(Some(tape.sum(ratio)))
}

/// Component losses of one batch; `None` marks an absent term.
#[derive(Clone, Debug, Default)]
pub struct LossTerms {
    pub recon: Vec<Option<Var>>,
    pub kl: Vec<Option<Var>>,
    pub imputation: Vec<Option<Var>>,
    /// Unordered view pairs (i < j).
    pub contrastive: Vec<((usize, usize), Option<Var>)>,
}

/// Values of every component. Absent terms hold 0 and are listed separately.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
    pub imputation: Vec<f64>,
    pub contrastive: Vec<((usize, usize), f64)>,
    pub total: f64,
    pub absent_views: Vec<usize>,
    pub skipped_pairs: Vec<(usize, usize)>,
}

impl LossReport {
    /// Weighted sum of the components.
    pub fn component_sum(&self, weights: &LossWeights) -> f64 {
        weights.recon * self.recon.iter().sum::<f64>()
            + weights.kl * self.kl.iter().sum::<f64>()
            + weights.imputation * self.imputation.iter().sum::<f64>()
            + weights.contrastive * self.contrastive.iter().map(|(_, v)| v).sum::<f64>()
    }

    /// Accumulates `other` into `self` (same layout expected).
    pub fn accumulate(&mut self, other: &LossReport) {
        if self.recon.is_empty() && self.contrastive.is_empty() {
            *self = LossReport {
                absent_views: Vec::new(),
                skipped_pairs: Vec::new(),
                ..other.clone()
            };
            return;
        }
        let add = |a: &mut Vec<f64>, b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.recon, &other.recon);
        add(&mut self.kl, &other.kl);
        add(&mut self.imputation, &other.imputation);
        for ((_, a), (_, b)) in self.contrastive.iter_mut().zip(&other.contrastive) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .recon
            .iter_mut()
            .chain(&mut self.kl)
            .chain(&mut self.imputation)
            .chain(self.contrastive.iter_mut().map(|(_, v)| v))
        {
            *v *= factor;
        }
        self.total *= factor;
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<String> {
        let named = |name: &str, vals: &[f64]| {
            vals.iter()
                .position(|v| !v.is_finite())
                .map(|i| format!("{name}[view {}]", i + 1))
        };
        named("recon", &self.recon)
            .or_else(|| named("kl", &self.kl))
            .or_else(|| named("imputation", &self.imputation))
            .or_else(|| {
                self.contrastive
                    .iter()
                    .find(|(_, v)| !v.is_finite())
                    .map(|((i, j), _)| format!("contrastive[{},{}]", i + 1, j + 1))
            })
            .or_else(|| (!self.total.is_finite()).then(|| "total".to_string()))
    }
}

/// L̄ = Σ_v (L_recon + L_KL + L_imp) + Σ_{i<j} L_con, each family scaled by its weight.
pub fn loss_total(tape: &mut Tape, terms: &LossTerms, weights: &LossWeights) -> Result<(Var, LossReport)> {
    let mut report = LossReport::default();
    let mut parts: Vec<Var> = Vec::new();
    let mut collect = |tape: &mut Tape, vals: &[Option<Var>], w: f64, out: &mut Vec<f64>| {
        for v in vals {
            match v {
                Some(v) => {
                    out.push(tape.scalar(*v));
                    parts.push(tape.scale(*v, w));
                }
                None => out.push(0.0),
            }
        }
    };
    collect(tape, &terms.recon, weights.recon, &mut report.recon);
    collect(tape, &terms.kl, weights.kl, &mut report.kl);
    collect(tape, &terms.imputation, weights.imputation, &mut report.imputation);
    for (pair, v) in &terms.contrastive {
        match v {
            Some(v) => {
                report.contrastive.push((*pair, tape.scalar(*v)));
                parts.push(tape.scale(*v, weights.contrastive));
            }
            None => {
                report.contrastive.push((*pair, 0.0));
                report.skipped_pairs.push(*pair);
            }
        }
    }
    report.absent_views = terms
        .recon
        .iter()
        .enumerate()
        .filter_map(|(v, t)| t.is_none().then_some(v))
        .collect();

    let mut total = tape.constant(Matrix::scalar(0.0));
    for p in parts {
        total = tape.add(total, p)?;
    }
    report.total = tape.scalar(total);
    Ok((total, report))
}
