//! Parametric whole-body model toolkit.
//!
//! Modules, bottom-up:
//! - [`rotations`]: 6D / Euler / axis-angle / matrix conversions.
//! - [`body_model`]: shaping, joint regression, kinematics, skinning, gradients.
//! - [`camera`]: weak-perspective projection.
//! - [`moderator`]: confidence-gated fusion of body and part features.
//! - [`losses`] and [`prior`]: every training loss and prior as a pure function.
//! - [`fitter`]: staged fitting of parameters and cameras to keypoints.
//! - [`metrics`]: alignment, MPJPE, V2V, point-to-surface, F-score.
//! - [`io`]: OBJ, versioned JSON artifacts, image containers.
//! - [`cli`]: the `bodyfit` command line.
//! - [`gradcheck`]: finite-difference verification suites.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod body_model;
pub mod camera;
pub mod cli;
pub mod error;
pub mod fitter;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod moderator;
pub mod optim;
pub mod prior;
pub mod rotations;

pub use error::{Error, ErrorClass, Result};
