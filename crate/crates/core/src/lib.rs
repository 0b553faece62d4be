//! Linear Fisher market equilibria, market abstraction by clustering, lifts
//! back to the original market, and certified loss bounds.
//!
//! The guide in `book/` walks through each part; its code blocks are
//! compiled and run as doc-tests of this crate.

// `!(x > 0.0)` is used on purpose so NaN lands on the failing side; index
// loops mirror the formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod abstraction;
pub mod bounds;
pub mod error;
pub mod experiments;
pub mod instances;
pub mod lift;
pub mod lp;
pub mod market;
pub mod matrix;
pub mod metrics;
pub mod solver;

pub use error::{Error, Result};
pub use market::{Allocation, EquilibriumSolution, Market, PriceVector};
pub use matrix::Matrix;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/markets.md")]
    mod markets {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/abstraction.md")]
    mod abstraction {}
    #[doc = include_str!("../../../book/src/lifting.md")]
    mod lifting {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
