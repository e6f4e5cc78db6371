//! Binarized neural network intrusion detection for CAN bus traffic.
//!
//! The pipeline runs in five stages:
//!
//! - [`parser`] reads candump-style CSV logs and the two public dataset
//!   layouts into ordered [`CanFrame`] streams.
//! - [`featurizer`] turns each frame into a fixed-width bit vector
//!   (`ID code | interval bucket | payload bits`, 73 bits by default).
//! - [`bnn`] trains a binarized MLP with straight-through gradients.
//! - [`packed`] compiles a trained model into sign bits plus integer
//!   thresholds and runs XNOR/popcount inference.
//! - [`eval`] computes metrics and latency benchmarks.
//!
//! [`traffic`] synthesizes labeled benign and attack traffic so that the
//! whole pipeline can be exercised without the public datasets.

pub mod bnn;
pub mod error;
pub mod eval;
pub mod featurizer;
pub mod frame;
pub mod packed;
pub mod parser;
pub mod traffic;
mod wire;

pub use bnn::{BnnModel, Mode};
pub use error::{Error, ErrorCategory, Result};
pub use featurizer::{FeatureVector, Featurizer, FeaturizerConfig, IdDictionary, IntervalEncoder};
pub use frame::{CanFrame, ClassLabel};
pub use packed::PackedModel;
