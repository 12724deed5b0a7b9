//! Five-point relative pose: minimal solver, RANSAC wrapper, and
//! decomposition of the essential matrix with cheirality voting.

mod decompose;
mod minimal;
mod ransac;

pub use decompose::{
    decompose_essential, decompose_normalized, pose_candidates, triangulate, Triangulated,
};
pub use minimal::{
    solve_essential_minimal, MinimalSolution, CANDIDATE_RESIDUAL_TOL, MAX_CANDIDATES,
};
pub use ransac::{ransac_essential, ransac_essential_normalized, RansacConfig, RansacResult};
