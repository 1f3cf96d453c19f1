pub mod boundary;
pub mod cli;
pub mod dnmap;
pub mod enclosure;
pub mod error;
pub mod geometry;
pub mod io;
pub mod monotonicity;
pub mod par;
pub mod psolver;
pub mod sparse;
pub mod wolff;

pub use error::{Error, ErrorKind, Result};
