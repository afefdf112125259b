//! Device-free human pose estimation from WiFi channel state information.
//!
//! The crate covers the whole pipeline: a multipath channel model and a
//! synthetic scene generator standing in for a router/camera rig, the on-disk
//! dataset format, CSI preprocessing, a residual convolutional regressor that
//! maps one CSI frame to 17 body landmarks, its training loop under teacher
//! supervision, and PCK evaluation.

pub mod csi;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod nnet;
pub mod pose;
pub mod preprocess;
pub mod svg;
pub mod synth;
pub mod train;

pub use csi::{amplitude, superpose, CsiFrame, PathComponent, SubcarrierSample};
pub use dataio::{load_dataset, save_dataset, split, window_for_frame, Dataset, DatasetManifest, Splits, SyncSample};
pub use error::{Error, Result};
pub use eval::{pck, report_table, PckConfig, PckReport};
pub use nnet::{build_wpnet, forward, LandmarkPrediction, WpnetConfig, WpnetParams};
pub use pose::{PoseLandmarks, JOINT_NAMES, N_LANDMARKS};
pub use preprocess::{preprocess, InputTensor};
pub use synth::{make_scene, render_csi, Scene, SceneConfig};
pub use train::{lr_at, mse_loss, sgd_step, train, TrainConfig, TrainHistory};
