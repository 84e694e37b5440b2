//! Multi-echo LiDAR measurement simulator and detection-data toolkit.
//!
//! The simulator turns RGB/depth/normal images into K-echo point clouds,
//! ambient images and reflectance images through a Poisson photon-transport
//! model; the toolkit side provides the deterministic preprocessing, target
//! encoding and evaluation procedures of a multi-echo detection pipeline.

// `!(x > 0.0)` rejects NaN along with non-positive values; a plain `x <= 0.0`
// would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod eval;
pub mod extract;
pub mod losses;
pub mod model;
pub mod ops;
pub mod photon;
pub mod polar;
pub mod sim;
pub mod tensor;
pub mod toy;

pub use model::{
    BoxSize, EchoGroup, FrameViolation, LidarImage, MultiEchoFrame, OrientedBox3D, SimConfig,
    validate_frame,
};
pub use photon::SimError;
pub use sim::{simulate, simulate_dense, SimOutput, ViewInput};
pub use tensor::{read_labels, read_tensor, write_labels, write_tensor, ClassMap, Tensor};
