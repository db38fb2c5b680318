//! Drone pose estimation from monocular images: synthetic data, a keypoint encoder,
//! a ray-conditioned pose decoder, losses, training, a PnP comparison path and
//! dataset analysis tools.

pub mod analysis;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pnp;
pub mod report;
pub mod training;

pub use candle_core::{DType, Device, Tensor};
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, RigidPose};
pub use model::{Model, ModelConfig};
