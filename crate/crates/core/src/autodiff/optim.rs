use super::matrix::Matrix;
use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

/// First-order optimizer state: Adam moments with bias correction, or plain SGD.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
}

impl Optimizer {
    pub fn adam(learning_rate: f64) -> Self {
        Self::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            learning_rate,
        )
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in store.values_mut().iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in store
                    .values_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((x, &d), mk), vk) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mk = beta1 * *mk + (1.0 - beta1) * d;
                        *vk = beta2 * *vk + (1.0 - beta2) * d * d;
                        let m_hat = *mk / c1;
                        let v_hat = *vk / c2;
                        *x -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Matrix::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for mut opt in [Optimizer::adam(1e-3), Optimizer::sgd(0.1)] {
            let mut s = scalar_store(0.7);
            opt.step(&mut s, &[Matrix::scalar(0.0)]);
            assert_eq!(s.values()[0].data(), &[0.7]);
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let mut s = scalar_store(1.0);
        Optimizer::sgd(0.1).step(&mut s, &[Matrix::scalar(2.0)]);
        assert!((s.values()[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step() {
        // m = 0.1, v = 0.001, bias-corrected to 1 and 1: step = lr / (1 + eps)
        let mut s = scalar_store(1.0);
        Optimizer::adam(1e-3).step(&mut s, &[Matrix::scalar(1.0)]);
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((s.values()[0].data()[0] - expect).abs() < 1e-15);
    }
}
