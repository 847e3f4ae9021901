//! The incomplete multiview clustering model and its training loop.
//!
//! Per view `v` there are four networks: an encoder `f_v` giving the mean of
//! the Gaussian latent `w_v`, a decoder `g_v`, a categorical head `q_v` read
//! from the latent mean, and an imputation network `h_v` mapping the common
//! variable `z` back to a latent. Only available views are ever encoded. Their
//! heads are fused as `q* ∝ Π_v q_v^κ`, `z` is drawn from `q*` with
//! Gumbel-softmax during training, and evaluation uses the one-hot argmax.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Axis, Matrix, Mlp, Optimizer, ParamStore, Tape, Var};
use crate::data::MultiviewDataset;
use crate::error::{Error, Result};
use crate::losses::{
    loss_contrastive, loss_kl, loss_latent_imputation, loss_recon, loss_total, LossConfig, LossReport, LossTerms,
};
use crate::stochastic::{gaussian_latent, gumbel_noise_matrix, gumbel_softmax, TemperatureDecay, TemperatureSchedule};
use crate::{rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// |Z|, the number of clusters.
    pub clusters: usize,
    pub latent_dim: usize,
    /// Hidden widths of the encoders; decoders mirror them.
    pub hidden: Vec<usize>,
    /// Hidden widths of the imputation networks (empty means affine).
    pub imputer_hidden: Vec<usize>,
    /// Exponent shared by every view head in the fusion, in (0, 1).
    pub kappa_a_star: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_decay: TemperatureDecay,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            clusters: 10,
            latent_dim: 64,
            hidden: vec![256, 256],
            imputer_hidden: Vec::new(),
            kappa_a_star: 0.9,
            batch_size: 256,
            epochs: 400,
            learning_rate: 1e-3,
            tau_start: 1.0,
            tau_end: 0.3,
            tau_decay: TemperatureDecay::Exponential,
            loss: LossConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clusters < 2 {
            return bad(format!("clusters = {} (need >= 2)", self.clusters));
        }
        if self.latent_dim == 0 || self.hidden.contains(&0) || self.imputer_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if !(self.kappa_a_star > 0.0 && self.kappa_a_star < 1.0) {
            return bad(format!("kappa_a_star = {} outside (0, 1)", self.kappa_a_star));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning_rate = {}", self.learning_rate));
        }
        if !(self.loss.contrastive_temperature > 0.0) {
            return bad("contrastive_temperature must be positive".into());
        }
        self.temperature().validate()
    }

    pub fn temperature(&self) -> TemperatureSchedule {
        TemperatureSchedule {
            start: self.tau_start,
            end: self.tau_end,
            decay: self.tau_decay,
            horizon: self.epochs,
        }
    }
}

/// The networks of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewNets {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub head: Mlp,
    pub imputer: Mlp,
}

/// Which of the three availability cases a sample falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleCase {
    /// Every view is present.
    Complete,
    /// A single view is present; the sample joins no contrastive pair.
    NoPair,
    /// At least two views are present but not all.
    PartiallyPaired,
}

impl SampleCase {
    pub fn of(mask_row: &[bool]) -> Self {
        let present = mask_row.iter().filter(|&&m| m).count();
        if present == mask_row.len() {
            Self::Complete
        } else if present == 1 {
            Self::NoPair
        } else {
            Self::PartiallyPaired
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CaseCounts {
    pub complete: usize,
    pub no_pair: usize,
    pub partially_paired: usize,
}

impl CaseCounts {
    pub fn tally<'a>(rows: impl IntoIterator<Item = &'a Vec<bool>>) -> Self {
        let mut c = Self::default();
        for row in rows {
            match SampleCase::of(row) {
                SampleCase::Complete => c.complete += 1,
                SampleCase::NoPair => c.no_pair += 1,
                SampleCase::PartiallyPaired => c.partially_paired += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.complete + self.no_pair + self.partially_paired
    }
}

/// How `z` is produced in a forward pass.
pub enum Mode<'a> {
    /// Gaussian latent noise and a Gumbel-softmax draw at temperature `tau`.
    Train { rng: &'a mut Rng, tau: f64 },
    /// Latent means and the one-hot argmax of the fused probabilities.
    Eval,
}

/// Tape handles produced by [`WyimvcModel::forward`] for one batch.
pub struct BatchForward {
    pub batch: usize,
    /// Per view, batch positions whose view is available.
    pub available: Vec<Vec<usize>>,
    /// Per view, the gathered inputs, latent means, decodings, head log
    /// probabilities and `h_v(z)`, all over the available rows only.
    pub inputs: Vec<Option<Var>>,
    pub means: Vec<Option<Var>>,
    pub decoded: Vec<Option<Var>>,
    pub log_heads: Vec<Option<Var>>,
    pub imputed: Vec<Option<Var>>,
    /// batch × |Z| log of the fused class probabilities.
    pub log_fused: Var,
    /// batch × |Z| common variable.
    pub z: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPrediction {
    pub sample: usize,
    pub probabilities: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputedSample {
    pub sample: usize,
    pub view: usize,
    pub latent: Vec<f64>,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub tau: f64,
    /// Batch-averaged losses.
    pub loss: LossReport,
    pub cases: CaseCounts,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct WyimvcModel {
    config: ModelConfig,
    view_dims: Vec<usize>,
    store: ParamStore,
    nets: Vec<ViewNets>,
    epochs_trained: usize,
}

impl WyimvcModel {
    pub fn new(config: ModelConfig, view_dims: &[usize], rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if view_dims.len() < 2 || view_dims.contains(&0) {
            return Err(Error::invalid(format!("bad view dimensions {view_dims:?}")));
        }
        let mut store = ParamStore::new();
        let mut nets = Vec::with_capacity(view_dims.len());
        for (v, &d) in view_dims.iter().enumerate() {
            let v = v + 1;
            let enc_dims: Vec<usize> = std::iter::once(d)
                .chain(config.hidden.iter().copied())
                .chain(std::iter::once(config.latent_dim))
                .collect();
            let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
            let imp_dims: Vec<usize> = std::iter::once(config.clusters)
                .chain(config.imputer_hidden.iter().copied())
                .chain(std::iter::once(config.latent_dim))
                .collect();
            nets.push(ViewNets {
                encoder: Mlp::new(&mut store, &format!("f{v}"), &enc_dims, Activation::Linear, rng)?,
                decoder: Mlp::new(&mut store, &format!("g{v}"), &dec_dims, Activation::Linear, rng)?,
                head: Mlp::new(
                    &mut store,
                    &format!("q{v}"),
                    &[config.latent_dim, config.clusters],
                    Activation::Linear,
                    rng,
                )?,
                imputer: Mlp::new(&mut store, &format!("h{v}"), &imp_dims, Activation::Linear, rng)?,
            });
        }
        Ok(Self {
            config,
            view_dims: view_dims.to_vec(),
            store,
            nets,
            epochs_trained: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn view_dims(&self) -> &[usize] {
        &self.view_dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn nets(&self) -> &[ViewNets] {
        &self.nets
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    fn check_dataset(&self, ds: &MultiviewDataset) -> Result<()> {
        if ds.view_dims() != self.view_dims {
            return Err(Error::invalid(format!(
                "model expects view dimensions {:?}, dataset has {:?}",
                self.view_dims,
                ds.view_dims()
            )));
        }
        Ok(())
    }

    /// Runs the networks on the samples `idx` of `ds`.
    ///
    /// Masked views are never read: each view's rows are gathered from the
    /// available samples before they enter the tape.
    pub fn forward(&self, tape: &mut Tape, ds: &MultiviewDataset, idx: &[usize], mode: Mode<'_>) -> Result<BatchForward> {
        self.check_dataset(ds)?;
        let n = idx.len();
        let views = self.view_dims.len();
        let k = self.config.clusters;
        let (mut rng, tau) = match mode {
            Mode::Train { rng, tau } => (Some(rng), tau),
            Mode::Eval => (None, 0.0),
        };

        let mut available = Vec::with_capacity(views);
        let mut inputs = vec![None; views];
        let mut means = vec![None; views];
        let mut decoded = vec![None; views];
        let mut log_heads = vec![None; views];
        let mut fused: Option<Var> = None;
        for (v, nets) in self.nets.iter().enumerate() {
            let pos: Vec<usize> = (0..n).filter(|&p| ds.is_available(idx[p], v)).collect();
            if !pos.is_empty() {
                let rows: Vec<usize> = pos.iter().map(|&p| idx[p]).collect();
                let x = tape.constant(ds.view(v).select_rows(&rows));
                let mean = nets.encoder.forward(tape, &self.store, x)?;
                let w = gaussian_latent(tape, mean, rng.as_deref_mut())?;
                let dec = nets.decoder.forward(tape, &self.store, w)?;
                let logits = nets.head.forward(tape, &self.store, mean)?;
                let log_q = tape.log_softmax(logits, Axis::Rows);
                let spread = tape.scatter_rows(log_q, &pos, n)?;
                fused = Some(match fused {
                    Some(f) => tape.add(f, spread)?,
                    None => spread,
                });
                inputs[v] = Some(x);
                means[v] = Some(mean);
                decoded[v] = Some(dec);
                log_heads[v] = Some(log_q);
            }
            available.push(pos);
        }
        let fused = match fused {
            Some(f) => f,
            None => tape.constant(Matrix::zeros(n, k)),
        };
        let scaled = tape.scale(fused, self.config.kappa_a_star);
        let log_fused = tape.log_softmax(scaled, Axis::Rows);

        let z = match rng.as_deref_mut() {
            Some(rng) => {
                let noise = gumbel_noise_matrix(rng, n, k);
                gumbel_softmax(tape, log_fused, &noise, tau)?
            }
            None => {
                let probs = tape.value(log_fused);
                let mut onehot = Matrix::zeros(n, k);
                for r in 0..n {
                    onehot.set(r, argmax(probs.row(r)), 1.0);
                }
                tape.constant(onehot)
            }
        };
        let mut imputed = vec![None; views];
        for (v, nets) in self.nets.iter().enumerate() {
            if means[v].is_some() {
                let z_v = tape.gather_rows(z, &available[v])?;
                imputed[v] = Some(nets.imputer.forward(tape, &self.store, z_v)?);
            }
        }
        Ok(BatchForward {
            batch: n,
            available,
            inputs,
            means,
            decoded,
            log_heads,
            imputed,
            log_fused,
            z,
        })
    }

    /// Per-view and per-pair loss nodes of a forward pass.
    pub fn loss_terms(&self, tape: &mut Tape, fwd: &BatchForward) -> Result<LossTerms> {
        let views = self.view_dims.len();
        let cfg = &self.config.loss;
        let mut terms = LossTerms::default();
        let mut heads: Vec<Option<Var>> = vec![None; views];
        for v in 0..views {
            let (Some(x), Some(mean), Some(dec), Some(imp), Some(log_q)) = (
                fwd.inputs[v],
                fwd.means[v],
                fwd.decoded[v],
                fwd.imputed[v],
                fwd.log_heads[v],
            ) else {
                terms.recon.push(None);
                terms.kl.push(None);
                terms.imputation.push(None);
                continue;
            };
            let all = vec![true; fwd.available[v].len()];
            terms.recon.push(loss_recon(tape, x, dec, &all)?);
            terms.kl.push(loss_kl(tape, mean, &all)?);
            let target = tape.value(mean).clone();
            terms.imputation.push(loss_latent_imputation(tape, &target, imp, &all)?);
            heads[v] = Some(tape.exp(log_q));
        }
        for i in 0..views {
            for j in i + 1..views {
                let term = match (heads[i], heads[j]) {
                    (Some(qi), Some(qj)) => {
                        let (ri, rj) = paired_rows(&fwd.available[i], &fwd.available[j]);
                        if ri.len() < 2 {
                            None
                        } else {
                            let ci = tape.gather_rows(qi, &ri)?;
                            let cj = tape.gather_rows(qj, &rj)?;
                            loss_contrastive(tape, ci, cj, cfg)?
                        }
                    }
                    _ => None,
                };
                terms.contrastive.push(((i, j), term));
            }
        }
        Ok(terms)
    }

    /// Component losses and `L̄` of a forward pass.
    pub fn losses(&self, tape: &mut Tape, fwd: &BatchForward) -> Result<(Var, LossReport)> {
        let terms = self.loss_terms(tape, fwd)?;
        loss_total(tape, &terms, &self.config.loss.weights)
    }

    /// `L̄` on the samples `idx`, with its tape for differentiation.
    pub fn batch_loss(&self, ds: &MultiviewDataset, idx: &[usize], mode: Mode<'_>) -> Result<(Tape, Var, LossReport)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, ds, idx, mode)?;
        let (total, report) = self.losses(&mut tape, &fwd)?;
        Ok((tape, total, report))
    }

    /// One pass over shuffled mini-batches with an optimizer step per batch.
    pub fn train_epoch(
        &mut self,
        ds: &MultiviewDataset,
        optimizer: &mut Optimizer,
        epoch: usize,
        rng: &mut Rng,
    ) -> Result<EpochReport> {
        self.check_dataset(ds)?;
        let tau = self.config.temperature().at(epoch);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(rng);
        let mut aggregate = LossReport::default();
        let mut cases = CaseCounts::default();
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let (tape, total, report) = self.batch_loss(ds, chunk, Mode::Train { rng: &mut *rng, tau })?;
            if let Some(component) = report.non_finite_component() {
                return Err(Error::NonFinite {
                    component: format!("{component} at epoch {epoch}"),
                });
            }
            let grads = tape.backward(total)?;
            let grads = tape.param_grads(&grads, &self.store);
            for (id, g) in self.store.ids().zip(&grads) {
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        component: format!("gradient of {} at epoch {epoch}", self.store.name(id)),
                    });
                }
            }
            optimizer.step(&mut self.store, &grads);
            let counts = CaseCounts::tally(chunk.iter().map(|&i| &ds.mask()[i]));
            cases.complete += counts.complete;
            cases.no_pair += counts.no_pair;
            cases.partially_paired += counts.partially_paired;
            aggregate.accumulate(&report);
            batches += 1;
        }
        if batches > 0 {
            aggregate.scale(1.0 / batches as f64);
        }
        self.epochs_trained += 1;
        Ok(EpochReport {
            epoch,
            tau,
            loss: aggregate,
            cases,
        })
    }

    /// Trains for `config.epochs` epochs with Adam.
    pub fn fit(&mut self, ds: &MultiviewDataset, rng: &mut Rng) -> Result<Vec<EpochReport>> {
        let mut optimizer = Optimizer::adam(self.config.learning_rate);
        (0..self.config.epochs)
            .map(|epoch| self.train_epoch(ds, &mut optimizer, epoch, rng))
            .collect()
    }

    /// Builds a model from `seed` and fits it on `ds`.
    pub fn train(config: ModelConfig, ds: &MultiviewDataset, seed: u64) -> Result<(Self, Vec<EpochReport>)> {
        let mut rng = rng_from_seed(seed);
        let mut model = Self::new(config, &ds.view_dims(), &mut rng)?;
        let history = model.fit(ds, &mut rng)?;
        Ok((model, history))
    }

    fn eval_chunks(&self, ds: &MultiviewDataset) -> Vec<Vec<usize>> {
        let step = self.config.batch_size;
        (0..ds.len())
            .step_by(step)
            .map(|s| (s..(s + step).min(ds.len())).collect())
            .collect()
    }

    /// Fused class probabilities and argmax labels; no sampling.
    pub fn predict(&self, ds: &MultiviewDataset) -> Result<Vec<ClusterPrediction>> {
        let mut out = Vec::with_capacity(ds.len());
        for idx in self.eval_chunks(ds) {
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, ds, &idx, Mode::Eval)?;
            let log_fused = tape.value(fwd.log_fused);
            for (r, &sample) in idx.iter().enumerate() {
                let probabilities: Vec<f64> = log_fused.row(r).iter().map(|l| l.exp()).collect();
                let label = argmax(log_fused.row(r));
                out.push(ClusterPrediction {
                    sample,
                    probabilities,
                    label,
                });
            }
        }
        Ok(out)
    }

    pub fn predict_labels(&self, ds: &MultiviewDataset) -> Result<Vec<usize>> {
        Ok(self.predict(ds)?.into_iter().map(|p| p.label).collect())
    }

    /// `ŵ_v = h_v(z)` and `x̂_v = g_v(ŵ_v)` for every masked view, with `z`
    /// the one-hot argmax of the fused probabilities.
    pub fn impute(&self, ds: &MultiviewDataset) -> Result<Vec<ImputedSample>> {
        let mut out = Vec::new();
        for idx in self.eval_chunks(ds) {
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, ds, &idx, Mode::Eval)?;
            let mut per_view = Vec::with_capacity(self.nets.len());
            for (v, nets) in self.nets.iter().enumerate() {
                let missing: Vec<usize> = (0..idx.len()).filter(|&p| !ds.is_available(idx[p], v)).collect();
                if missing.is_empty() {
                    per_view.push(None);
                    continue;
                }
                let z = tape.gather_rows(fwd.z, &missing)?;
                let w = nets.imputer.forward(&mut tape, &self.store, z)?;
                let x = nets.decoder.forward(&mut tape, &self.store, w)?;
                per_view.push(Some((missing, w, x)));
            }
            let mut chunk: Vec<ImputedSample> = Vec::new();
            for (v, entry) in per_view.into_iter().enumerate() {
                let Some((missing, w, x)) = entry else { continue };
                for (r, &p) in missing.iter().enumerate() {
                    chunk.push(ImputedSample {
                        sample: idx[p],
                        view: v,
                        latent: tape.value(w).row(r).to_vec(),
                        features: tape.value(x).row(r).to_vec(),
                    });
                }
            }
            chunk.sort_by_key(|s| (s.sample, s.view));
            out.extend(chunk);
        }
        Ok(out)
    }

    /// Text checkpoint: a header, the configuration as TOML, then parameters.
    pub fn to_text(&self) -> Result<String> {
        let config = toml::to_string(&self.config).map_err(|e| Error::format(e.to_string()))?;
        let mut s = String::from(CHECKPOINT_MAGIC);
        s.push('\n');
        let dims: Vec<String> = self.view_dims.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "dims {}", dims.join(" "));
        let _ = writeln!(s, "epochs {}", self.epochs_trained);
        s.push_str(&config);
        s.push_str(PARAMS_MARKER);
        s.push('\n');
        s.push_str(&self.store.to_text());
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::format("not a model checkpoint"));
        }
        let field = |line: Option<&str>, key: &str| -> Result<String> {
            line.and_then(|l| l.strip_prefix(key))
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::format(format!("checkpoint is missing `{key}`")))
        };
        let dims = field(lines.next(), "dims")?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::format(format!("bad dimension {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let epochs = field(lines.next(), "epochs")?
            .parse::<usize>()
            .map_err(|_| Error::format("bad epoch count"))?;
        let rest: Vec<&str> = lines.collect();
        let split = rest
            .iter()
            .position(|l| *l == PARAMS_MARKER)
            .ok_or_else(|| Error::format("checkpoint has no parameter section"))?;
        let config: ModelConfig =
            toml::from_str(&rest[..split].join("\n")).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
        let store = ParamStore::from_text(&rest[split + 1..].join("\n"))?;

        let mut model = Self::new(config, &dims, &mut rng_from_seed(0))?;
        let layout_matches = store.len() == model.store.len()
            && model
                .store
                .ids()
                .zip(store.ids())
                .all(|(a, b)| model.store.name(a) == store.name(b) && model.store.value(a).shape() == store.value(b).shape());
        if !layout_matches {
            return Err(Error::format("checkpoint parameters do not match the configured architecture"));
        }
        model.store = store;
        model.epochs_trained = epochs;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

const CHECKPOINT_MAGIC: &str = "wyimvc-model v1";
const PARAMS_MARKER: &str = "%% parameters";

/// Positions, within each view's available list, of samples both views share.
fn paired_rows(a: &[usize], b: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ra.push(i);
                rb.push(j);
                i += 1;
                j += 1;
            }
        }
    }
    (ra, rb)
}
