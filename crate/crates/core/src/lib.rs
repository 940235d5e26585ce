//! Convolutional networks over 1D, 2D and 3D multi-channel grids, written
//! directly in terms of cross-correlation and its analytic adjoints.

pub mod check;
mod codec;
pub mod conv;
pub mod data;
pub mod error;
pub mod grid;
pub mod layers;
pub mod network;
pub mod operators;
pub mod rng;
pub mod saliency;
pub mod train;

pub use conv::{convolve, cross_correlate, output_extent, ConvGeometry, OperatorBank};
pub use data::{pgm_bytes, write_pgm, Dataset, Generator, SynthSpec};
pub use error::{Error, Result};
pub use grid::{FeatureVector, Grid, Shape};
pub use layers::{Activation, PoolKind, PoolSpec};
pub use network::{init_params, predict_class, Block, Checkpoint, InitScheme, Model, NetworkSpec, ParamVector};
pub use operators::named_operator;
pub use rng::SplitMix64;
pub use saliency::{gradient_saliency, integrated_gradients, saliency_mask, time_averaged_saliency, BaselineInput, SaliencyField};
pub use train::{backprop, evaluate, finite_difference_grad, LabeledSample, LossKind, Metrics, Optimizer, Target, Task, TrainConfig};
