//! Stationary discs attached to the unit sphere under small almost complex
//! deformations, with partial-index diagnostics and the induced Riemann map
//! onto the indicatrix.

pub mod disc_solver;
pub mod error;
pub mod fibration;
mod fft;
pub mod io;
pub mod linalg;
pub mod loop_algebra;
pub mod parallel;
pub mod poly;
pub mod riemann_hilbert;
pub mod riemann_map;
pub mod structures;

pub use error::{Error, Result};
