//! Training-free image editing on rectified-flow models.
//!
//! `editor` runs the inversion-free edit loop; `adaptation` refines the
//! target velocity under an object mask before each Euler step.

pub mod adaptation;
pub mod backend;
pub mod cli;
pub mod editor;
pub mod error;
pub mod field;
pub mod io;
pub mod mask;
pub mod oracle;
pub mod schedule;
pub mod selftest;

pub use cli::run_command;
pub use error::{Error, Result};
