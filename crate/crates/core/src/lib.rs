//! Common-information solvers and clustering for multiview data with missing views.
//!
//! Two tiers share this crate:
//!
//! * an exact tier over finite alphabets ([`discrete`], [`dca`]) that runs the
//!   difference-of-convex fixed-point iteration on a known joint pmf, including
//!   the incomplete-view posterior and the equivalent class probability fusions;
//! * an empirical tier ([`autodiff`], [`stochastic`], [`losses`], [`pipeline`])
//!   that trains per-view variational encoders with categorical heads, fuses the
//!   heads of the available views, samples the common variable with
//!   Gumbel-softmax and imputes missing views from it.
//!
//! [`data`] and [`eval`] provide dataset I/O, the missing-view masking protocol,
//! a synthetic generator, label matching and the experiment runner.

pub mod autodiff;
pub mod data;
pub mod dca;
pub mod discrete;
pub mod error;
pub mod eval;
pub mod losses;
pub mod pipeline;
pub mod stochastic;

pub use autodiff::{Matrix, ParamStore, Tape, Var};
pub use data::{MultiviewDataset, SyntheticSpec};
pub use dca::{KappaWeights, SolverConfig, SolverTrace};
pub use discrete::{Bipartition, ConditionalPmf, JointPmf};
pub use error::{Error, Result};
pub use eval::{AccuracyRecord, ExperimentConfig};
pub use losses::LossReport;
pub use pipeline::{ModelConfig, WyimvcModel};

use rand::SeedableRng;

/// Seeded generator used everywhere a run must be reproducible.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
