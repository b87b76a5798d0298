//! Library for image-query temporal activity localization: a from-scratch
//! tensor/autodiff core, the attention-based localizer model, a synthetic
//! planted-activity benchmark, baselines, and evaluation metrics.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod databench;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod localizer;
pub mod model;
pub mod region;
pub mod rng;
pub mod store;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Result, SailError};
pub use model::{SailConfig, SailModel};
pub use rng::RngState;
pub use store::ParamStore;
pub use tensor::Tensor;
