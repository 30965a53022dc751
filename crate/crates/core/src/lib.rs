//! Contrastive clustering with strongly augmented views.
//!
//! The augmentation, loss, metric, data, k-means and checkpoint modules are
//! plain Rust and build for any target. Networks, the optimizer and training
//! need the `nn` feature (on by default).

pub mod aug;
pub mod checkpoint;
pub mod data;
pub mod kmeans;
pub mod loss;
pub mod metrics;
pub mod rng;

#[cfg(feature = "nn")]
pub mod model;
#[cfg(feature = "nn")]
pub mod optim;
#[cfg(feature = "nn")]
pub mod train;
