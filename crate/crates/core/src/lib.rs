//! Classification of discretely observed diffusion paths.
//!
//! Paths `X̄ = (X_0, X_Δ, ..., X_1)` of `dX_t = b_Y(X_t) dt + σ(X_t) dW_t` are
//! classified by a score function built from spline approximations of the
//! class drifts and the shared squared diffusion. The coefficients are fitted
//! by minimizing the empirical L2 risk of the score, and the spline
//! dimensions are picked by penalized risk over a grid.
//!
//! Module map:
//! - [`splines`]: clamped B-spline bases and coefficient spaces.
//! - [`sim`]: Euler–Maruyama simulation of labeled path datasets.
//! - [`scores`]: weighted softmax, discretized Girsanov functionals, score
//!   functions and the oracle Bayes classifier.
//! - [`erm`]: class-weight estimation, empirical risk, its gradient, training.
//! - [`select`]: penalized choice of the spline dimensions.
//! - [`baselines`]: k-NN, plug-in classifier and the margin diagnostic.
//! - [`bench`]: repeated train/test experiments and Bayes-risk estimation.
//! - [`io`]: dataset files.

pub mod baselines;
pub mod bench;
pub mod erm;
pub mod error;
pub mod io;
pub mod optim;
pub mod scores;
pub mod select;
pub mod sim;
pub mod splines;

pub use erm::{
    empirical_risk, estimate_weights, params_from_json, risk_gradient, train_erm, FittedScore, TrainConfig,
};
pub use error::{Error, Result};
pub use scores::{softmax_weighted, OracleScore, ScoreParams};
pub use select::{select, SelectionConfig, SelectionResult};
pub use sim::{builtin_model, simulate_dataset, BuiltinModel, LabeledDataset, ModelSpec, Path, SimOptions};
pub use splines::SplineBasis;
