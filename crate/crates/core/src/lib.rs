//! Annotation-free 3D semantic segmentation from 2D open-vocabulary teachers.
//!
//! The crate covers the desk-scale pipeline end to end: projecting LiDAR
//! points into calibrated cameras to obtain pseudo-labels, the tri-modal
//! contrastive objective with analytic gradients and a toy projection head,
//! the non-parametric flat-interaction label propagation network, synthetic
//! scenes with exact ground truth, and mIoU evaluation.

pub mod afi;
pub mod classdict;
pub mod correspondence;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod labels;
pub mod math;
pub mod pipeline;
pub mod projection;
pub mod render;
pub mod spatial;
pub mod synth;
pub mod tmp;

pub use error::{Error, Result};
pub use labels::{ClassId, LabelField, UNLABELED};
