//! The raked P-Brownian bridge G^(N) on a finite cell space.
//!
//! Every function in scope is a linear functional of the cell indicators,
//! so G^(N) is fully described by the covariance matrix of
//! (G^(N)(1_c))_c and the raking recursion becomes the exact linear map
//! Σ ← L Σ Lᵀ.

mod covariance;
mod sampling;
mod two_by_two;

pub use covariance::{CovarianceModel, StabilizedVariance, PSD_TOL};
pub use sampling::sample_bridge;
pub use two_by_two::{AppendixB, Moments, TwoByTwoLayout, TwoByTwoSpec};
