use rand::Rng as _;

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

const CHECKPOINT_MAGIC: &str = "wyimvc-params v1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)).
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Matrix::new(fan_in, fan_out, data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// Text checkpoint: a magic line, then per array `name rows cols` and one
    /// line of values with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::from(CHECKPOINT_MAGIC);
        out.push('\n');
        for (name, m) in self.names.iter().zip(&self.values) {
            out.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
            let line: Vec<String> = m.data().iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CHECKPOINT_MAGIC) {
            return Err(Error::format("missing checkpoint header"));
        }
        let mut store = Self::new();
        while let Some(header) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(Error::format(format!("bad array header `{header}`")));
            };
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad size `{s}`")));
            let (rows, cols) = (parse(rows)?, parse(cols)?);
            let values = lines.next().unwrap_or("");
            let data: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::format(format!("bad value `{v}`"))))
                .collect::<Result<_>>()?;
            store.add(name, Matrix::new(rows, cols, data)?);
        }
        Ok(store)
    }
}
