//! Epigraphically constrained TV-regularized reconstruction of Stokes
//! parameter maps from dual-beam polarimetric image cubes.
//!
//! The pieces, bottom up:
//! - [`tensor`]: channel stacks, data cubes, and a deterministic RNG stream
//! - [`linops`]: discrete gradient, PSF convolution, the polarimetric
//!   measurement operator, and power-iteration norm estimates
//! - [`proxops`]: soft thresholding, conjugate proxes, and the per-pixel
//!   second-order-cone projection
//! - [`objectives`]: weighted fidelity term, TV and smoothed TV values and
//!   gradients, feasibility reporting
//! - [`solvers`]: the primal-dual scheme with fixed steps (PD), with
//!   backtracking (PDwB), and the forward-backward baseline (FBwB)
//! - [`simkit`]: synthetic Stokes phantoms, modulation schedules, PSFs, and
//!   noisy cube synthesis
//! - [`io`]: flat binary stacks with JSON sidecars, cube directories,
//!   telemetry CSV
//! - [`cli`]: the `simulate` / `reconstruct` / `evaluate` / `curves`
//!   command set behind the thin binary

pub mod cli;
pub mod error;
mod fft;
pub mod io;
pub mod linops;
pub mod objectives;
pub mod proxops;
pub mod simkit;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use linops::{DualStack, GradientField, MeasureOp};
pub use objectives::{RegVariant, RegularizerConfig};
pub use solvers::{fbwb_solve, pd_solve, pdwb_solve, SolveOutput, SolverConfig};
pub use tensor::{ChannelStack, DataCube, DataFrame, RngStream};
