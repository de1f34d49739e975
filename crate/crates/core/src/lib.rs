//! Person-centric video action recognition with joint 2D pose estimation.
//!
//! The pipeline crops videos to the person bounding box, feeds 8-frame
//! clips to an inflated 3D ResNet backbone, classifies actions from the
//! pooled RGB feature, estimates per-frame keypoint heatmaps and offsets
//! from the same feature, classifies actions again from the decoded pose
//! sequences with a stride-free 2D CNN, and fuses both predictions by
//! summing probabilities at test time.

pub mod backbone;
pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod model;
pub mod nn;
pub mod poseaction;
pub mod posehead;
pub mod rng;
pub mod skeleton;
pub mod synthdata;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
