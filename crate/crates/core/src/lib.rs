//! SAR-constrained spectral-efficiency maximization for multiuser MIMO
//! uplinks assisted by a reconfigurable intelligent surface (RIS) and
//! received by a dynamic metasurface antenna (DMA).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too. Per-user
// loops index several parallel vectors at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod linalg;
pub mod model;
pub mod covariance;
pub mod de;
pub mod ris;
pub mod dma;
pub mod ao;
pub mod bench;

pub use error::{Error, Result};
