//! Probes that rank sensitivity candidates from frozen per-candidate features.
//!
//! Three families share one training loop: a linear map, a DeepSets model with
//! mean pooling, and a self-attention encoder without positional information.
//! Gradients come from a small reverse-mode tape in [`tape`].

pub mod error;
pub mod loss;
pub mod model;
pub mod optim;
pub mod splits;
pub mod standardize;
pub mod tape;
pub mod train;

pub use error::{ProbeError, Result};
pub use model::{score_deepsets, score_linear, score_settransformer, Family, Objective, Probe, ProbeConfig, Selection};
pub use splits::{make_splits, SplitSpec};
pub use standardize::Standardizer;
pub use train::{evaluate_split, loss_and_gradients, train_multiseed, train_probe, ProbeExample, TrainedProbe};
