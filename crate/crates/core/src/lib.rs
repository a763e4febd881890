//! Range-view LiDAR segmentation toolkit.
//!
//! Spherical projection with many-to-one occlusion bookkeeping, pose-chain
//! alignment, temporal max-voting refinement and its single-frame baselines,
//! a forward-only temporal cross-attention layer, IoU evaluation,
//! SemanticKITTI I/O, and a ray-cast scene generator with exact ground truth.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod rangeview;
pub mod refine;
pub mod synth;
pub mod tca;

pub use cloud::{ClassId, Point3, PointCloud};
pub use error::{Error, Result};
pub use geometry::{compose_chain, transform_cloud, RigidTransform};
pub use rangeview::{
    occlusion_stats, project, unproject_labels, LabelImage, OcclusionStats, ProjectionConfig, RangeImage,
};
