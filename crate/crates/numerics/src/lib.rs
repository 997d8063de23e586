//! Minimal dense-array numerics for the planner.
//!
//! Everything is 64-bit floating point and at most two-dimensional. Learnable
//! computations are recorded on a [`Tape`] and differentiated in reverse mode;
//! parameters are updated with [`Adam`].

mod adam;
mod array;
mod error;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use array::Array;
pub use error::{NumericsError, Result};
pub use tape::{wrap_angle, Fault, Tape, Var};
