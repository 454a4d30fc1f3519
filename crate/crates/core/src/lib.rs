//! Adversarial attacks, defenses, and robustness certification for small
//! feedforward ReLU classifiers on tabular data, where the perturbation
//! budget is expressed through a feature-weighting transform: the attacker
//! may move a point by any delta with `||W delta||_p <= epsilon`.
//!
//! Modules:
//! - [`numerics`]: dense matrix/vector kernels and special functions.
//! - [`data`]: CSV datasets, standardization, covariance, feature importance.
//! - [`net`]: the multilayer perceptron, its gradients, and clean training.
//! - [`omega`]: the feature-weighting transforms (identity, importance
//!   diagonals, covariance square roots, mutable-feature masks).
//! - [`attack`]: projected gradient descent and fast gradient sign attacks
//!   under weighted budgets.
//! - [`train`]: adversarial training, budget matching, defense evaluation.
//! - [`consistency`]: Gaussian density-ratio plausibility scores for
//!   perturbations.
//! - [`certlp`]: deterministic robustness certificates from the dual of the
//!   verification linear program.
//! - [`smooth`]: randomized-smoothing certificates with anisotropic noise.
//! - [`manifest`]: run manifests for bit-exact replay of CLI invocations.

pub mod attack;
pub mod certlp;
pub mod consistency;
pub mod data;
pub mod error;
pub mod manifest;
pub mod net;
pub mod numerics;
pub mod omega;
pub mod smooth;
pub mod train;

pub use error::{Error, Result};
