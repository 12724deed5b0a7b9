//! Epipolar-constrained two-view depth and ego-motion geometry.
//!
//! The crate covers the full chain used to supervise depth and pose with
//! photometric consistency weighted by an essential-matrix residual:
//!
//! * [`geometry`]: intrinsics, poses, normalized coordinates, `E = [t]x R`
//! * [`fivepoint`]: minimal five-point solver, RANSAC, cheirality decomposition
//! * [`warp`]: depth-based inverse warping, bilinear sampling, Jacobians
//! * [`losses`]: photometric, epipolar-weighted, SSIM, smoothness, depth
//!   consistency and the multi-scale total with analytic gradients
//! * [`metrics`]: depth error/accuracy protocol, ATE and ATDE
//! * [`synthetic`]: ray-cast ground-truth scenes
//! * [`refine`]: direct gradient-descent refinement of depth and pose
//! * [`io`]: file formats

pub mod error;
pub mod fivepoint;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod raster;
pub mod warp;

pub use error::{Error, Result};
pub mod refine;
pub mod synthetic;
