//! Superquadric geometry and recovery toolkit.
//!
//! * [`superquadric`]: the primitive, its inside-outside function, radial
//!   distance and axis relabelings.
//! * [`mesh`]: surface sampling, meshing, watertightness, resampling,
//!   voxelization and mesh/point-cloud file formats.
//! * [`fit`]: robust single-primitive recovery by expectation, maximization
//!   and switching.
//! * [`metrics`]: hand-object evaluation metrics.
//! * [`splits`]: compositional train/test fold generation and scoring.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod mesh;
pub mod metrics;
pub mod splits;
pub mod superquadric;

pub use error::{Error, ErrorClass, Result};
pub use superquadric::{Point3, Pose, ScaleParams, ShapeParams, Superquadric, EPS_MAX, EPS_MIN};
