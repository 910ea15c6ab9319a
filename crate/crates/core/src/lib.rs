//! Raking-ratio calibration with exact and learned auxiliary information.
//!
//! The crate reweights samples so that their block totals match known or
//! estimated partition margins, propagates the exact limiting covariance of
//! the raked empirical process over a finite cell space, evaluates raked
//! Z and chi-square tests, splits a sampling budget between primary and
//! auxiliary observations, and runs the Monte Carlo experiments that check
//! all of the above.
//!
//! Exact-arithmetic code is generic over [`Scalar`]; the `*64` aliases below
//! fix it to `f64` and [`Rational`] gives exact results.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod auxinfo;
pub mod budget;
pub mod config;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod model;
pub mod raking;
pub mod rng;
pub mod scalar;
pub mod stattests;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Arbitrary-precision rational scalar.
pub type Rational = num_rational::BigRational;

pub type CellSpace64 = model::CellSpace<f64>;
pub type PartitionSequence64 = model::PartitionSequence<f64>;
pub type FunctionOnCells64 = model::FunctionOnCells<f64>;
pub type WeightedSample64 = model::WeightedSample<f64>;
pub type RakedMeasure64 = raking::RakedMeasure<f64>;
pub type AuxSource64 = auxinfo::AuxSource<f64>;
pub type CovarianceModel64 = gaussian::CovarianceModel<f64>;
pub type TwoByTwoSpec64 = gaussian::TwoByTwoSpec<f64>;
