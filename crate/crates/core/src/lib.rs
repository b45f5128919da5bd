//! Assertion-guided multi-view late fusion for LiDAR semantic segmentation.
//!
//! Two view-specific scorers (for example a range-view and a bird's-eye-view
//! network) each emit per-point class scores. Points where the two score
//! vectors disagree, measured by cosine similarity, are re-labelled by a small
//! point head that looks at both score vectors of the point and of its
//! nearest neighbors. All other points take the argmax of the geometric mean
//! of the two score vectors.
//!
//! The crate also carries the supporting pieces needed to exercise that
//! pipeline: file formats, synthetic scenes and scorers, range-view and polar
//! BEV projections, a small f64 neural toolkit with gradient checking, and
//! IoU metrics.

pub mod assertion;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod neighborhood;
pub mod nn;
pub mod pointhead;
pub mod projection;

pub use error::{Error, Result};
