//! Discrete-choice estimation with a discriminative conditional restricted
//! Boltzmann machine.
//!
//! The observed choice is the visible layer, binary latent units form the
//! hidden layer and explanatory variables enter as clamped context. With no
//! latent units the model is exactly a multinomial logit, which serves as the
//! baseline.
//!
//! Row-level loops (batch gradients, likelihoods, predictions, information
//! matrices, replicate fits) run on rayon when the default `parallel` feature
//! is enabled. Results are bit-identical with and without it.

// Index loops mirror the matrix algebra more directly than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod par;
pub mod report;
pub mod sensitivity;
pub mod stats;
pub mod trainer;

pub use dataset::{kfold, load_csv, split, ChoiceDataset, CsvSchema, NormStats, SplitSpec};
pub use error::{Error, Result};
pub use inference::{predict, predict_batch, BatchPrediction, Prediction};
pub use model::{param_count, Block, CrbmParams};
pub use sensitivity::{rank_agreement, sensitivity_run, SensitivityReport};
pub use stats::{bic, log_likelihood, rho_squared, t_statistics, validation_error, FitReport, Significance};
pub use trainer::{train_crbm, train_mnl, TrainConfig, TrainTrace};
