//! Training feedforward networks under a certified Lipschitz bound.
//!
//! The bound is certified by a block-tridiagonal linear matrix inequality. Training keeps
//! the weights strictly inside the feasible set with a log-determinant barrier whose
//! gradients come from a blocked Cholesky factorization and a selected inverse.

pub mod certify;
pub mod conv;
pub mod linalg;
pub mod lipschitz;
pub mod nn;
pub mod optim;
pub mod trainer;
pub mod wgan;

pub use linalg::{LinalgError, Matrix};
pub use lipschitz::{LipschitzError, LipschitzTarget, MultiplierMode, Multipliers};
pub use nn::{Activation, LossKind, MlpParams, Sample, Target};
