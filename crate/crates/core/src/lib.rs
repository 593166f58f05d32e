//! Desk-scale toolkit for studying how network width shapes learned features.
//!
//! The crate trains small fully-connected and convolutional networks,
//! builds activation atlases for their hidden states (2-D embedding of
//! activations, per-cell whitened direction vectors, input-space
//! optimization), and runs freeze-and-fine-tune transfer scans across
//! widths and depths.
//!
//! Subsystems:
//! - [`tensor`]: dense tensors with reverse-mode autodiff and the SGD /
//!   Adam optimizers used everywhere else.
//! - [`models`]: the fixed MLP / CNN architectures, He-style init, and
//!   constant-parameter width planning.
//! - [`data`]: MNIST IDX and CIFAR binary parsers, the translated-MNIST
//!   generator, the CIFAR-100 coarse-class subset, and train-time
//!   augmentation.
//! - [`embedding`]: UMAP-style 2-D reduction (exact k-NN, fuzzy
//!   affinities, force-directed layout).
//! - [`atlas`]: activation collection, grid binning, average-and-whiten
//!   direction vectors, one-hot neuron targets.
//! - [`viz`]: input-space optimization toward a direction target under
//!   transformation robustness.
//! - [`transfer`]: training loops, frozen-feature head fine-tuning,
//!   width/depth scans with seed statistics.
//! - [`render`]: PNG mosaics, embedding histograms and scan plots.

pub mod atlas;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod models;
pub mod render;
pub mod tensor;
pub mod transfer;
pub mod util;
pub mod viz;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
