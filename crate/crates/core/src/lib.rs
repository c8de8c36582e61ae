//! Virtual dual-fluoroscope engine.
//!
//! The crate renders parallel-beam DRRs from CT volumes, forges randomized
//! radiograph-landmark training datasets, calibrates intensifier distortion
//! and the relative pose of a dual-fluoroscope rig, and registers a 3D
//! landmark model to dual fluoroscopic views by triangulation optimization.
//!
//! Module map:
//! - [`geometry`]: rigid poses, the dual-fluoroscope coordinate model,
//!   point-source projection, field-of-view tests.
//! - [`volume`] / [`landmarks`]: CT voxel grids and the named 3D landmark
//!   set with its symmetry map.
//! - [`drr`]: shear-warp DRR rendering, its brute-force oracle, landmark
//!   co-projection, and skull-mask rendering.
//! - [`forge`]: randomized dataset generation with the normalization and
//!   split contracts expected by external learners.
//! - [`calib`]: bead detection, fifth-order distortion fields, and dual-pose
//!   calibration from a four-bead alignment tool.
//! - [`register`]: the triangulation objective, the four-variant mirror
//!   strategy, and simplex pose search.
//! - [`metrics`]: six-DOF error norms, landmark MSE, and the
//!   gradient-correlation image similarity.
//! - [`phantom`]: synthetic volumes, landmark sets, and systems for
//!   validation.

pub mod calib;
pub mod drr;
pub mod forge;
pub mod geometry;
pub mod img;
pub mod landmarks;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod register;
pub mod volume;

pub use drr::{brute_force_raycast, compose_drr, project_landmarks_parallel, render_drr, render_mask, Drr, RenderParams};
pub use geometry::{
    is_visible, matrix_to_pose, pose_to_matrix, project_point, system_center, DualFluoroSystem,
    FluoroscopeGeometry, RigidPose,
};
pub use landmarks::LandmarkSet3D;
pub use register::{register, MirrorVariant, PredictedLandmarks, RegistrationResult};
pub use volume::CtVolume;
