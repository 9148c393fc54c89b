//! Decoding heads, multitask losses, training schedule and evaluation
//! metrics for joint 2D/3D human pose and body/head orientation estimation.
//!
//! Module map:
//!
//! * [`orientation`]: spherical angles, normalization, circular distance, mirroring
//! * [`skeleton`]: skeleton definitions, pose containers, normalization, flip, joint mapping
//! * [`decode`]: softargmax and sigmoid-depth decoders with analytic gradients
//! * [`gradcheck`]: finite-difference verification of those gradients
//! * [`losses`]: task losses, sample selection, uncertainty-weighted total
//! * [`optim`], [`schedule`], [`lr_finder`], [`demo`]: training kit
//! * [`metrics`]: MPJPE, flip test, orientation accuracy/MAE, dataset statistics
//! * [`records`]: line-delimited sample records

pub mod decode;
pub mod demo;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod lr_finder;
pub mod metrics;
pub mod optim;
pub mod orientation;
pub mod real;
pub mod records;
pub mod schedule;
pub mod skeleton;

pub use error::{Error, ErrorCategory, Result};
