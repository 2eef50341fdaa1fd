//! Partition-of-unity networks (POUnets).
//!
//! A POUnet approximates `y(x) ≈ Σ_α φ_α(x) Σ_β c_{α,β} P_β(x)` where the
//! partition of unity `φ` is a trained network (normalized RBFs or a ReLU
//! ResNet with a softmax head) and `P_β` are monomials. Training alternates
//! an exact least-squares solve for `c` with Adam steps on the partition
//! parameters.
//!
//! - [`linalg`]: dense matrices and (ridge) least squares.
//! - [`poly`]: graded-lex monomial bases.
//! - [`pou`]: partition networks, gradients and initialization.
//! - [`model`]: the approximant, design matrix and loss.
//! - [`optim`]: Adam, LSGD and two-phase LSGD.
//! - [`bench`]: targets, datasets, metrics, baseline and diagnostics.

pub mod bench;
pub mod domain;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod poly;
pub mod pou;

pub use domain::Domain;
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use model::{Dataset, PouModel};
pub use optim::{LsgdConfig, TrainReport};
pub use poly::MonomialBasis;
pub use pou::{ParamVector, PartitionNet};

use rand::SeedableRng;

/// Reproducible RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}
