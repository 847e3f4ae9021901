//! Finite-alphabet probability machinery: joint pmfs over views, encoders
//! P(z|x), Bayes inversion and information quantities.
//!
//! All tensors are dense and row-major with the last axis varying fastest.
//! Information quantities are in nats.

use std::fmt;

use crate::error::{Error, Result};

/// Upper bound on the number of joint configurations of any dense table.
pub const MAX_CONFIGURATIONS: usize = 10_000_000;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Clusters whose marginal mass is below this are treated as empty.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-300;

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

fn volume(cards: &[usize]) -> Result<usize> {
    let mut total: u128 = 1;
    for &k in cards {
        if k == 0 {
            return Err(Error::invalid("alphabet sizes must be at least 1"));
        }
        total = total.saturating_mul(k as u128);
        if total > MAX_CONFIGURATIONS as u128 {
            return Err(Error::Capacity {
                configs: total,
                limit: MAX_CONFIGURATIONS,
            });
        }
    }
    Ok(total as usize)
}

fn strides(cards: &[usize]) -> Vec<usize> {
    let mut out = vec![1; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * cards[i + 1];
    }
    out
}

/// Odometer over all configurations of `cards`, in row-major order.
struct Odometer<'a> {
    cards: &'a [usize],
    state: Vec<usize>,
    started: bool,
    done: bool,
}

impl<'a> Odometer<'a> {
    fn new(cards: &'a [usize]) -> Self {
        Self {
            cards,
            state: vec![0; cards.len()],
            started: false,
            done: cards.iter().any(|&k| k == 0),
        }
    }

    fn advance(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.state);
        }
        for axis in (0..self.cards.len()).rev() {
            self.state[axis] += 1;
            if self.state[axis] < self.cards[axis] {
                return Some(&self.state);
            }
            self.state[axis] = 0;
        }
        self.done = true;
        None
    }
}

/// Sums `probs` (shaped by `cards`) down to the axes in `keep`, in the order given.
fn marginalize(cards: &[usize], probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let kept_cards: Vec<usize> = keep.iter().map(|&a| cards[a]).collect();
    let kept_strides = strides(&kept_cards);
    let mut out = vec![0.0; kept_cards.iter().product()];
    let mut odo = Odometer::new(cards);
    let mut flat = 0;
    while let Some(config) = odo.advance() {
        let idx: usize = keep
            .iter()
            .zip(&kept_strides)
            .map(|(&a, &s)| config[a] * s)
            .sum();
        out[idx] += probs[flat];
        flat += 1;
    }
    out
}

fn index_in(config: &[usize], axes: &[usize], cards: &[usize]) -> usize {
    let mut idx = 0;
    for &a in axes {
        idx = idx * cards[a] + config[a];
    }
    idx
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Direct-summation I(A;B) where A = `group` and B = the remaining axes.
fn mutual_information_dense(cards: &[usize], probs: &[f64], group: &[usize]) -> Result<f64> {
    let rest: Vec<usize> = (0..cards.len()).filter(|a| !group.contains(a)).collect();
    if group.is_empty() || rest.is_empty() {
        return Err(Error::invalid("mutual information needs two nonempty groups"));
    }
    let pa = marginalize(cards, probs, group);
    let pb = marginalize(cards, probs, &rest);
    let mut odo = Odometer::new(cards);
    let mut flat = 0;
    let mut total = 0.0;
    while let Some(config) = odo.advance() {
        let p = probs[flat];
        flat += 1;
        if p <= 0.0 {
            continue;
        }
        let denom = pa[index_in(config, group, cards)] * pb[index_in(config, &rest, cards)];
        if denom <= 0.0 {
            return Err(Error::Degenerate(format!(
                "positive mass over zero marginal at {config:?}"
            )));
        }
        total += p * (p / denom).ln();
    }
    Ok(total)
}

fn validate_axes(axes: &[usize], n: usize, what: &str) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    for w in axes.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::invalid(format!("{what} must be sorted and unique")));
        }
    }
    if let Some(&bad) = axes.iter().find(|&&a| a >= n) {
        return Err(Error::invalid(format!(
            "{what} index {bad} out of range for {n} views"
        )));
    }
    Ok(())
}

/// Dense joint pmf p(x_1, ..., x_V) over finite view alphabets.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPmf {
    cards: Vec<usize>,
    probs: Vec<f64>,
}

impl JointPmf {
    pub fn new(cards: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if cards.len() < 2 {
            return Err(Error::invalid("a joint pmf needs at least two views"));
        }
        let n = volume(&cards)?;
        if probs.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} probabilities, got {}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("invalid probability {bad}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { cards, probs })
    }

    /// Normalizes nonnegative weights into a pmf.
    pub fn from_weights(cards: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::invalid("weights must have positive finite sum"));
        }
        Self::new(cards, weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn views(&self) -> usize {
        self.cards.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn configurations(&self) -> usize {
        self.probs.len()
    }

    pub fn index_of(&self, config: &[usize]) -> usize {
        index_in(config, &(0..self.views()).collect::<Vec<_>>(), &self.cards)
    }

    pub fn config_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.views()];
        for axis in (0..self.views()).rev() {
            out[axis] = index % self.cards[axis];
            index /= self.cards[axis];
        }
        out
    }

    pub fn prob(&self, config: &[usize]) -> f64 {
        self.probs[self.index_of(config)]
    }

    /// Marginal over the listed views (sorted), row-major in that order.
    pub fn marginal(&self, views: &[usize]) -> Result<Vec<f64>> {
        validate_axes(views, self.views(), "view subset")?;
        Ok(marginalize(&self.cards, &self.probs, views))
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    /// Plain-text form: header `V k1 ... kV`, then one probability per line.
    pub fn to_text(&self) -> String {
        let mut out = self.views().to_string();
        for k in &self.cards {
            out.push(' ');
            out.push_str(&k.to_string());
        }
        out.push('\n');
        for p in &self.probs {
            out.push_str(&format!("{p:.16e}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::format("empty pmf file"))?;
        let fields: Vec<usize> = header
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| Error::format(format!("bad header field `{f}`"))))
            .collect::<Result<_>>()?;
        let (&v, cards) = fields
            .split_first()
            .ok_or_else(|| Error::format("empty header"))?;
        if cards.len() != v {
            return Err(Error::format(format!(
                "header declares {v} views but lists {} sizes",
                cards.len()
            )));
        }
        let probs: Vec<f64> = lines
            .map(|l| l.parse().map_err(|_| Error::format(format!("bad probability `{l}`"))))
            .collect::<Result<_>>()?;
        Self::new(cards.to_vec(), probs)
    }
}

/// An encoder P(z | x) over the configurations of some views.
///
/// `table` holds one probability vector over Z per configuration, configuration-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalPmf {
    z_card: usize,
    cards: Vec<usize>,
    table: Vec<f64>,
}

impl ConditionalPmf {
    pub fn new(z_card: usize, cards: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        if z_card == 0 {
            return Err(Error::invalid("|Z| must be at least 1"));
        }
        let n = volume(&cards)?;
        if table.len() != n * z_card {
            return Err(Error::invalid(format!(
                "expected {} entries, got {}",
                n * z_card,
                table.len()
            )));
        }
        for (i, row) in table.chunks(z_card).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!("invalid entry in row {i}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self {
            z_card,
            cards,
            table,
        })
    }

    pub fn uniform(z_card: usize, cards: Vec<usize>) -> Result<Self> {
        let n = volume(&cards)?;
        let p = 1.0 / z_card as f64;
        Self::new(z_card, cards, vec![p; n * z_card])
    }

    /// Deterministic encoder z = f(x).
    pub fn deterministic(
        z_card: usize,
        cards: Vec<usize>,
        f: impl Fn(&[usize]) -> usize,
    ) -> Result<Self> {
        let n = volume(&cards)?;
        let mut table = vec![0.0; n * z_card];
        let mut odo = Odometer::new(&cards);
        let mut i = 0;
        while let Some(config) = odo.advance() {
            let z = f(config);
            if z >= z_card {
                return Err(Error::invalid(format!("encoder maps to z={z} >= |Z|")));
            }
            table[i * z_card + z] = 1.0;
            i += 1;
        }
        Self::new(z_card, cards, table)
    }

    pub fn z_cardinality(&self) -> usize {
        self.z_card
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn configurations(&self) -> usize {
        self.table.len() / self.z_card
    }

    pub fn row(&self, config_index: usize) -> &[f64] {
        &self.table[config_index * self.z_card..(config_index + 1) * self.z_card]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Largest absolute entrywise difference.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_rows_unchecked(z_card: usize, cards: Vec<usize>, table: Vec<f64>) -> Self {
        Self {
            z_card,
            cards,
            table,
        }
    }

    fn check_against(&self, joint: &JointPmf) -> Result<()> {
        if self.cards != joint.cards {
            return Err(Error::invalid(format!(
                "encoder alphabets {:?} do not match joint {:?}",
                self.cards, joint.cards
            )));
        }
        Ok(())
    }
}

/// Lifted joint p(x^V, z) = p(x^V) p(z | x^V), with z as the last axis.
fn lift(joint: &JointPmf, encoder: &ConditionalPmf) -> Result<(Vec<usize>, Vec<f64>)> {
    encoder.check_against(joint)?;
    let mut cards = joint.cards.clone();
    cards.push(encoder.z_card);
    volume(&cards)?;
    let probs = joint
        .probs
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| encoder.row(i).iter().map(move |&q| p * q))
        .collect();
    Ok((cards, probs))
}

/// Marginal P(z) induced by an encoder on a joint.
pub fn cluster_marginal(joint: &JointPmf, encoder: &ConditionalPmf) -> Result<Vec<f64>> {
    encoder.check_against(joint)?;
    let mut pz = vec![0.0; encoder.z_card];
    for (i, &p) in joint.probs.iter().enumerate() {
        for (acc, q) in pz.iter_mut().zip(encoder.row(i)) {
            *acc += p * q;
        }
    }
    Ok(pz)
}

/// I(X_A; X_B) where A = `group` and B is every other view.
pub fn mutual_information(joint: &JointPmf, group: &[usize]) -> Result<f64> {
    validate_axes(group, joint.views(), "group")?;
    mutual_information_dense(&joint.cards, &joint.probs, group)
}

/// I(Z; X^V) for the lifted joint.
pub fn encoder_information(joint: &JointPmf, encoder: &ConditionalPmf) -> Result<f64> {
    let (cards, probs) = lift(joint, encoder)?;
    let z_axis = cards.len() - 1;
    mutual_information_dense(&cards, &probs, &[z_axis])
}

/// I(Z; X_S) for a view subset S.
pub fn subset_information(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    subset: &[usize],
) -> Result<f64> {
    validate_axes(subset, joint.views(), "subset")?;
    let (cards, probs) = lift(joint, encoder)?;
    let z_axis = cards.len() - 1;
    let mut keep = subset.to_vec();
    keep.push(z_axis);
    let sub_cards: Vec<usize> = keep.iter().map(|&a| cards[a]).collect();
    let sub = marginalize(&cards, &probs, &keep);
    mutual_information_dense(&sub_cards, &sub, &[subset.len()])
}

/// I(X_S; X_{S^c} | Z) by direct summation over the lifted joint.
pub fn conditional_mutual_information(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    split: &Bipartition,
) -> Result<f64> {
    if split.views() != joint.views() {
        return Err(Error::invalid(format!(
            "split over {} views applied to a {}-view joint",
            split.views(),
            joint.views()
        )));
    }
    let (cards, probs) = lift(joint, encoder)?;
    let z_axis = cards.len() - 1;
    let with_z = |views: &[usize]| {
        let mut axes = views.to_vec();
        axes.push(z_axis);
        axes
    };
    let s_axes = with_z(split.side());
    let c_axes = with_z(split.complement());
    let p_sz = marginalize(&cards, &probs, &s_axes);
    let p_cz = marginalize(&cards, &probs, &c_axes);
    let p_z = marginalize(&cards, &probs, &[z_axis]);

    let mut odo = Odometer::new(&cards);
    let mut flat = 0;
    let mut total = 0.0;
    while let Some(config) = odo.advance() {
        let p = probs[flat];
        flat += 1;
        if p <= 0.0 {
            continue;
        }
        let num = p * p_z[config[z_axis]];
        let den = p_sz[index_in(config, &s_axes, &cards)] * p_cz[index_in(config, &c_axes, &cards)];
        if den <= 0.0 {
            return Err(Error::Degenerate(format!(
                "positive mass over zero marginal at {config:?}"
            )));
        }
        total += p * (num / den).ln();
    }
    Ok(total)
}

/// Likelihood table P(x_S | z) with the cluster marginal it was derived from.
#[derive(Clone, Debug)]
pub struct Likelihood {
    subset: Vec<usize>,
    sub_cards: Vec<usize>,
    p_z: Vec<f64>,
    table: Vec<f64>,
    degenerate: Vec<usize>,
}

impl Likelihood {
    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn cluster_marginal(&self) -> &[f64] {
        &self.p_z
    }

    pub fn sub_configurations(&self) -> usize {
        self.table.len() / self.p_z.len()
    }

    /// P(x_S = sub | z) as a pmf over sub-configurations.
    pub fn row(&self, z: usize) -> &[f64] {
        let n = self.sub_configurations();
        &self.table[z * n..(z + 1) * n]
    }

    pub fn get(&self, z: usize, sub_index: usize) -> f64 {
        self.table[z * self.sub_configurations() + sub_index]
    }

    /// Index of the restriction of a full configuration onto the subset.
    pub fn sub_index(&self, config: &[usize]) -> usize {
        let mut idx = 0;
        for (&a, &k) in self.subset.iter().zip(&self.sub_cards) {
            idx = idx * k + config[a];
        }
        idx
    }

    /// Clusters with (numerically) zero mass. Their rows hold the data marginal p(x_S).
    pub fn degenerate_clusters(&self) -> &[usize] {
        &self.degenerate
    }
}

/// Bayes inversion of an encoder: P(x_S | z) = sum_{x_{S^c}} p(x^V) p(z|x^V) / p(z).
///
/// Rows of empty clusters are filled with the data marginal p(x_S) and reported
/// through [`Likelihood::degenerate_clusters`].
pub fn bayes_invert(
    joint: &JointPmf,
    encoder: &ConditionalPmf,
    subset: &[usize],
) -> Result<Likelihood> {
    validate_axes(subset, joint.views(), "subset")?;
    let (cards, probs) = lift(joint, encoder)?;
    let z_axis = cards.len() - 1;
    let mut keep = subset.to_vec();
    keep.push(z_axis);
    // shape (x_S..., z), z fastest
    let p_sz = marginalize(&cards, &probs, &keep);
    let p_z = marginalize(&cards, &probs, &[z_axis]);
    let z_card = encoder.z_card;
    let n_sub = p_sz.len() / z_card;
    let data_marginal = marginalize(&joint.cards, &joint.probs, subset);

    let mut table = vec![0.0; z_card * n_sub];
    let mut degenerate = Vec::new();
    for z in 0..z_card {
        let row = &mut table[z * n_sub..(z + 1) * n_sub];
        if p_z[z] < EMPTY_CLUSTER_MASS {
            row.copy_from_slice(&data_marginal);
            degenerate.push(z);
            continue;
        }
        for (s, slot) in row.iter_mut().enumerate() {
            *slot = p_sz[s * z_card + z] / p_z[z];
        }
    }
    Ok(Likelihood {
        subset: subset.to_vec(),
        sub_cards: subset.iter().map(|&a| joint.cards[a]).collect(),
        p_z,
        table,
        degenerate,
    })
}

/// One unordered split (S, S^c) of the view indices, in canonical form.
///
/// Indices are zero-based; `Display` renders them one-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bipartition {
    side: Vec<usize>,
    complement: Vec<usize>,
}

impl Bipartition {
    /// Canonical split containing `set` on one side, whichever side that ends up being.
    pub fn canonical(views: usize, set: &[usize]) -> Result<Self> {
        validate_axes(set, views, "split side")?;
        if set.len() == views {
            return Err(Error::invalid("a split side must be a proper subset"));
        }
        let rest: Vec<usize> = (0..views).filter(|v| !set.contains(v)).collect();
        let (side, complement) = if set.len() < rest.len() || (set.len() == rest.len() && set[0] == 0) {
            (set.to_vec(), rest)
        } else {
            (rest, set.to_vec())
        };
        Ok(Self { side, complement })
    }

    pub fn side(&self) -> &[usize] {
        &self.side
    }

    pub fn complement(&self) -> &[usize] {
        &self.complement
    }

    pub fn views(&self) -> usize {
        self.side.len() + self.complement.len()
    }

    /// True when `a` and `b` fall on opposite sides.
    pub fn separates(&self, a: usize, b: usize) -> bool {
        self.side.contains(&a) != self.side.contains(&b)
    }
}

impl fmt::Display for Bipartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: &[usize]| {
            v.iter()
                .map(|i| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{{{}}}|{{{}}}", show(&self.side), show(&self.complement))
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// All unordered splits of `views` indices, ordered by side size then lexicographically.
pub fn enumerate_bipartitions(views: usize) -> Result<Vec<Bipartition>> {
    if views < 2 {
        return Err(Error::invalid(format!("need at least 2 views, got {views}")));
    }
    let mut out = Vec::new();
    for size in 1..=views / 2 {
        for side in combinations(views, size) {
            if 2 * size == views && side[0] != 0 {
                continue;
            }
            let complement = (0..views).filter(|v| !side.contains(v)).collect();
            out.push(Bipartition { side, complement });
        }
    }
    Ok(out)
}
