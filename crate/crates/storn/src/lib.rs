//! Stochastic recurrent networks for sequence modeling.
//!
//! This crate trains recurrent generative models with per-timestep latent
//! variables by stochastic gradient variational Bayes: a recognition RNN
//! produces a diagonal Gaussian posterior over latents, latents feed the
//! generating RNN as extra inputs, and the reparametrized single-sample bound
//! is minimized with Adadelta plus Nesterov momentum. Marginal likelihoods
//! are estimated by importance sampling with the recognition model as
//! proposal; downstream tasks cover missing-value imputation and
//! prefix-conditioned generation.
//!
//! Start from the `examples/` directory: each example is a runnable
//! demonstration of one capability. The `storn` binary wraps the same
//! library functions behind `train`, `eval`, `sample`, `impute`, and `synth`
//! subcommands.
//!
//! Tensors and datasets are immutable values, safe to share across threads;
//! a differentiation tape belongs to a single forward/backward pass. All
//! provided drivers run sequentially, so batch results never depend on a
//! parallel schedule, and identical seeds reproduce runs bitwise.

// The numeric kernels index several parallel arrays per loop.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimator;
pub mod math;
pub mod model;
pub mod optimizer;
pub mod params;
pub mod rnn;
pub mod seed;
pub mod tape;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{
    BoundReport, Likelihood, PosteriorStats, Recognition, RecognitionMode, SrnnModel, StornHyper,
    StornModel,
};
pub use params::ParamSet;
pub use rnn::{InitScheme, RnnDims, RnnParams, SequenceBatch, Transfer};
pub use tensor::Tensor;
