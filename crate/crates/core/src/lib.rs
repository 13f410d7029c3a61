//! Pedestrian detection from LiDAR points painted with image segmentation
//! scores, encoded as geometric pillars plus semantic voxels.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod network;
pub mod painting;
pub mod pillars;
pub mod pipeline;
pub mod semantic;
pub mod targets;

pub use error::{Error, Result};
