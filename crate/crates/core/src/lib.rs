//! Few-shot motion forecasting on heterogeneous sensor graphs.
//!
//! A forecasting task ([`episode::Episode`]) consists of a sensor graph, a few
//! labelled support series, and query series whose next frames are to be
//! predicted. [`model::GraphHetNet`] embeds the support set with deep-set and
//! graph-convolution blocks and conditions a graph-convolutional forecaster on
//! that embedding. Weights are shared across sensors, so one set of parameters
//! serves graphs of any size.
//!
//! Module map:
//!
//! - [`tensor`], [`autodiff`]: dense arrays and reverse-mode differentiation
//! - [`layers`]: GRU stacks, deep-set and graph-convolution blocks
//! - [`model`]: the forecaster, its deep-set-only ablation, baselines, checkpoints
//! - [`graph`]: sensor graphs and induced-subgraph sampling
//! - [`data`]: synthetic recordings, exponential-map loader, windows, normalisation
//! - [`episode`]: task assembly and meta-batches
//! - [`train`], [`optim`], [`eval`]: meta-training, Adam, error reports

pub mod autodiff;
pub mod config;
pub mod data;
pub mod episode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use episode::Episode;
pub use error::{Error, Result};
pub use graph::{MotionGraph, SamplerConfig};
pub use model::{GraphHetNet, ModelConfig, Variant};
pub use tensor::{Dims, Tensor3};

/// Frame interval of all recordings (25 fps).
pub const FRAME_MS: u32 = 40;
