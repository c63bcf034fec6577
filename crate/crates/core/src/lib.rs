//! Pulse-level simulation of atomic-frequency-comb (AFC) optical memories
//! with on-demand spin-wave storage.
//!
//! The crate is organised around five pieces:
//!
//! - [`comb`]: comb structure, optical-depth profile with its causal
//!   dispersion phase, finesse and multimode capacity.
//! - [`pulse`]: sech pi-pulses and Allen–Eberly chirped pulses, adiabaticity
//!   criteria and the analytic pulse-design formulas.
//! - [`bloch`]: exact (numeric) and analytic two-level propagators and
//!   per-detuning transfer profiles.
//! - [`memory`]: the end-to-end storage protocol and its figures of merit.
//! - [`scenario`]: scenario files, canned scenarios and the command
//!   implementations behind the `afcsim` binary.
//!
//! All frequencies are angular (rad/s) and all times are in seconds.

pub mod bloch;
pub mod comb;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod memory;
pub mod pulse;
pub mod scenario;

pub use error::{Error, Result};

pub use num_complex::Complex64 as C64;
