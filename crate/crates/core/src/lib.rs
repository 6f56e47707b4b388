//! Siamese single-object tracker built from scratch on a small reverse-mode
//! tensor library: a shared convolutional backbone, channel-attention gated
//! reduction with depth-wise cross-correlation, an anchor-free head, a
//! confidence-weighted training loss, synthetic and OTB-layout data, and the
//! usual OTB/VOT-style metrics.

pub mod backbone;
pub mod bbox;
pub mod binder;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod head;
pub mod losses;
pub mod matcher;
pub mod model;
pub mod parallel;
pub mod params;
pub mod seeds;
pub mod tensor;
pub mod tracker;
pub mod trainer;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use tensor::Tensor;
