//! Numerical laboratory for weighted restriction estimates on the
//! paraboloid in R³.

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod io;
pub mod numerics;
pub mod oscint;
pub mod partition;
pub mod wavepackets;
pub mod weights;

pub use error::{LabError, Result};
