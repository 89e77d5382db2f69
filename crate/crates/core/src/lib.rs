//! Hybrid recommender that serves warm and completely cold items from one
//! model.
//!
//! A stochastic gate swaps an item's collaborative-filtering vector for a
//! content-derived compensation during training, so the same scorer learns
//! to rank items with and without usage history. The crate also carries the
//! evaluation protocol: popularity-stratified cold-item folds, HR@K / MRR@K
//! over warm, cold and unified test sets, and long-tail slicing.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod network;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod split;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use data::{ContentBundle, Dataset, InteractionLog, ItemId, PopularityMode, PopularityTable, UserId};
pub use error::{CwhError, Result};
pub use trainer::{TrainConfig, TrainReport};
pub use network::{Gate, GateConfig, GateMode, ItemRef, Label, Model, ModelKind, ModelParams};
pub use scalar::Scalar;
pub use split::SplitBundle;


pub type ModelF32 = network::Model<f32>;
pub type ModelF64 = network::Model<f64>;
pub type ModelParamsF32 = network::ModelParams<f32>;
pub type ModelParamsF64 = network::ModelParams<f64>;
pub type GradientsF64 = network::Gradients<f64>;
