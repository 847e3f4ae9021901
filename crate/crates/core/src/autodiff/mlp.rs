use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use super::tape::{Axis, Tape, Var};
use crate::error::{Error, Result};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

/// Stack of affine layers `x W + b` followed by an activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Builds layers for `dims = [in, h1, ..., out]`: hidden layers use relu,
    /// the last uses `output`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        output: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {dims:?} for {name}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weight: store.add_glorot(format!("{name}.{i}.w"), w[0], w[1], rng),
                bias: store.add(format!("{name}.{i}.b"), Matrix::zeros(1, w[1])),
                activation: if i + 2 == dims.len() { output } else { Activation::Relu },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(store: &ParamStore, layers: Vec<Layer>) -> Result<Self> {
        for pair in layers.windows(2) {
            let out = store.value(pair[0].weight).cols();
            let inp = store.value(pair[1].weight).rows();
            if out != inp {
                return Err(Error::invalid(format!("layer widths {out} and {inp} do not chain")));
            }
        }
        for l in &layers {
            let (w, b) = (store.value(l.weight), store.value(l.bias));
            if b.shape() != (1, w.cols()) {
                return Err(Error::invalid("bias must be 1 x fan_out"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.value(self.layers[0].weight).rows()
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.value(self.layers[self.layers.len() - 1].weight).cols()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let mut h = input;
        for layer in &self.layers {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            h = match layer.activation {
                Activation::Relu => tape.relu(h),
                Activation::Linear => h,
                Activation::Softmax => tape.softmax(h, Axis::Rows),
            };
        }
        Ok(h)
    }
}
