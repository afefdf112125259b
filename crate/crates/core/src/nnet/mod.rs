//! Residual landmark regressor over a small hand-written tensor substrate.

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod scalar;
pub mod wpnet;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{numeric_gradient, pointwise_equiv_check};
pub use scalar::Scalar;
pub use wpnet::{build_wpnet, forward, Gradients, HeadPool, LandmarkPrediction, NamedTensor, OutputScaling, WpnetConfig, WpnetParams};
