//! Sampling primitives: the Gaussian latent `W = f(X) + ε` and Gumbel-softmax
//! relaxed samples of the common categorical variable.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::Rng;

/// Class probabilities are floored here (then renormalized) before taking logs.
pub const PROB_FLOOR: f64 = 1e-10;

pub fn floor_probs(pi: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = pi.iter().map(|&p| p.max(PROB_FLOOR)).collect();
    let s: f64 = floored.iter().sum();
    floored.into_iter().map(|p| p / s).collect()
}

/// Inverse CDF of Gumbel(0, 1).
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

fn open_uniform(rng: &mut Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

/// `d` Gumbel(0, 1) variates together with the uniforms they came from.
pub fn gumbel_sample(rng: &mut Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let uniforms: Vec<f64> = (0..d).map(|_| open_uniform(rng)).collect();
    let noise = uniforms.iter().map(|&u| gumbel_from_uniform(u)).collect();
    (noise, uniforms)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSoftmaxSample {
    pub z_tau: Vec<f64>,
    pub tau: f64,
    pub source_uniforms: Vec<f64>,
}

/// softmax((log π + s) / τ) for given Gumbel noise `s`.
pub fn gumbel_softmax_from_noise(pi: &[f64], tau: f64, noise: &[f64]) -> Vec<f64> {
    let pi = floor_probs(pi);
    let logits: Vec<f64> = pi
        .iter()
        .zip(noise)
        .map(|(p, s)| (p.ln() + s) / tau)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn gumbel_softmax_sample(pi: &[f64], tau: f64, rng: &mut Rng) -> Result<GumbelSoftmaxSample> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    if pi.is_empty() || pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("class probabilities must be finite and nonnegative"));
    }
    let (noise, uniforms) = gumbel_sample(rng, pi.len());
    Ok(GumbelSoftmaxSample {
        z_tau: gumbel_softmax_from_noise(pi, tau, &noise),
        tau,
        source_uniforms: uniforms,
    })
}

/// log g_{π,τ}(z) for z strictly inside the simplex.
pub fn gumbel_softmax_log_density(z: &[f64], pi: &[f64], tau: f64) -> Result<f64> {
    let d = z.len();
    if d == 0 || pi.len() != d {
        return Err(Error::invalid("z and π must have the same nonzero length"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    if z.iter().any(|&x| !(x > 0.0 && x < 1.0)) || (z.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("z must lie strictly inside the probability simplex"));
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("π must be strictly positive"));
    }
    let ln_gamma_d: f64 = (1..d).map(|k| (k as f64).ln()).sum();
    let mix: f64 = pi.iter().zip(z).map(|(p, x)| p / x.powf(tau)).sum();
    let per_coord: f64 = pi
        .iter()
        .zip(z)
        .map(|(p, x)| p.ln() - (tau + 1.0) * x.ln())
        .sum();
    Ok(ln_gamma_d + (d as f64 - 1.0) * tau.ln() - d as f64 * mix.ln() + per_coord)
}

/// `mean + ε` with ε ~ N(0, I) when an rng is given; `mean` itself otherwise.
pub fn gaussian_latent(tape: &mut Tape, mean: Var, rng: Option<&mut Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(mean) };
    let (r, c) = tape.value(mean).shape();
    let noise: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
    let eps = tape.constant(Matrix::new(r, c, noise)?);
    tape.add(mean, eps)
}

pub fn gumbel_noise_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| gumbel_from_uniform(open_uniform(rng)))
        .collect();
    Matrix::new(rows, cols, data).expect("shape")
}

/// Row-wise Gumbel-softmax on the tape from class log-probabilities.
///
/// The probabilities are floored at [`PROB_FLOOR`] and renormalized first.
pub fn gumbel_softmax(tape: &mut Tape, log_pi: Var, noise: &Matrix, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    let floored = tape.clamp_min(log_pi, PROB_FLOOR.ln());
    let log_pi = tape.log_softmax(floored, Axis::Rows);
    let s = tape.constant(noise.clone());
    let y = tape.add(log_pi, s)?;
    let y = tape.scale(y, 1.0 / tau);
    Ok(tape.softmax(y, Axis::Rows))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureDecay {
    Constant,
    #[default]
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: TemperatureDecay,
    /// Epochs over which `start` decays to `end`.
    pub horizon: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.3,
            decay: TemperatureDecay::Exponential,
            horizon: 400,
        }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.end > 0.0 && self.end <= self.start) {
            return Err(Error::Config(format!(
                "temperature schedule needs 0 < tau_end <= tau_start, got {} and {}",
                self.end, self.start
            )));
        }
        Ok(())
    }

    /// Temperature for a zero-based epoch; held at `end` past the horizon.
    pub fn at(&self, epoch: usize) -> f64 {
        match self.decay {
            TemperatureDecay::Constant => self.start,
            TemperatureDecay::Exponential => {
                if self.horizon <= 1 || epoch + 1 >= self.horizon {
                    return self.end;
                }
                let frac = epoch as f64 / (self.horizon - 1) as f64;
                self.start * (self.end / self.start).powf(frac)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gumbel_anchor() {
        assert_eq!(gumbel_from_uniform((-1.0f64).exp()), 0.0);
    }

    #[test]
    fn samples_on_simplex() {
        let mut rng = crate::rng_from_seed(4);
        for tau in [0.05, 0.5, 2.0] {
            for _ in 0..200 {
                let s = gumbel_softmax_sample(&[0.6, 0.3, 0.1, 0.0], tau, &mut rng).unwrap();
                assert!(s.z_tau.iter().all(|&x| x >= 0.0));
                assert!((s.z_tau.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert_eq!(s.source_uniforms.len(), 4);
            }
        }
        assert!(gumbel_softmax_sample(&[0.5, 0.5], 0.0, &mut rng).is_err());
    }

    #[test]
    fn near_one_hot_at_low_temperature() {
        let mut rng = crate::rng_from_seed(8);
        let pi = floor_probs(&[1.0, 0.0, 0.0]);
        let hits = (0..10_000)
            .filter(|_| {
                let s = gumbel_softmax_sample(&pi, 0.1, &mut rng).unwrap();
                s.z_tau[0] > 0.99
            })
            .count();
        assert!(hits >= 9_990, "{hits}");
    }

    #[test]
    fn uniform_pi_is_exchangeable() {
        let mut rng = crate::rng_from_seed(12);
        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let s = gumbel_softmax_sample(&[1.0 / 3.0; 3], 0.5, &mut rng).unwrap();
            for (acc, v) in sums.iter_mut().zip(&s.z_tau) {
                *acc += v;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn log_density_is_permutation_symmetric_under_uniform_pi() {
        let pi = [0.25; 4];
        let z = [0.1, 0.2, 0.3, 0.4];
        let zp = [0.3, 0.1, 0.4, 0.2];
        let a = gumbel_softmax_log_density(&z, &pi, 0.7).unwrap();
        let b = gumbel_softmax_log_density(&zp, &pi, 0.7).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(gumbel_softmax_log_density(&[1.0, 0.0], &[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn gaussian_latent_modes() {
        let mut tape = Tape::new();
        let mean = tape.constant(Matrix::row_vector(vec![1.0, -2.0]));
        let same = gaussian_latent(&mut tape, mean, None).unwrap();
        assert_eq!(tape.value(same), tape.value(mean));

        let mut rng = crate::rng_from_seed(2);
        let w = gaussian_latent(&mut tape, mean, Some(&mut rng)).unwrap();
        let total = tape.sum(w);
        let g = tape.backward(total).unwrap();
        assert_eq!(g.wrt(mean).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn gaussian_latent_mean_is_unbiased() {
        let mut rng = crate::rng_from_seed(5);
        let n = 100_000;
        let mut tape = Tape::new();
        let mean = tape.constant(Matrix::zeros(n, 2));
        let w = gaussian_latent(&mut tape, mean, Some(&mut rng)).unwrap();
        let v = tape.value(w);
        for c in 0..2 {
            let m: f64 = (0..n).map(|r| v.get(r, c)).sum::<f64>() / n as f64;
            assert!(m.abs() < 3.0 / (n as f64).sqrt(), "{m}");
        }
    }

    #[test]
    fn tape_gumbel_softmax_matches_plain() {
        let pi = [0.5, 0.3, 0.2];
        let noise = [0.1, -0.4, 1.3];
        let plain = gumbel_softmax_from_noise(&pi, 0.7, &noise);
        let mut tape = Tape::new();
        let log_pi = tape.constant(Matrix::row_vector(pi.iter().map(|p| p.ln()).collect()));
        let z = gumbel_softmax(&mut tape, log_pi, &Matrix::row_vector(noise.to_vec()), 0.7).unwrap();
        for (a, b) in tape.value(z).data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = TemperatureSchedule {
            horizon: 10,
            ..Default::default()
        };
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(9), 0.3);
        assert_eq!(s.at(50), 0.3);
        assert!(s.at(5) < 1.0 && s.at(5) > 0.3);
        let bad = TemperatureSchedule {
            start: 0.2,
            end: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
