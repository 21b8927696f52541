//! Desk-scale digital twin of camera-resolved Hong-Ou-Mandel interference.
//!
//! The crate is organised the way the data flows:
//!
//! - [`hom`] closed-form two-photon interference at a balanced splitter
//! - [`sim`] Monte-Carlo gated exposures of an intensified camera
//! - [`frame_proc`] flash segmentation, centroiding and two-photon preselection
//! - [`analysis`] port tallies, HOM-dip fitting and coincidence imaging
//! - [`cli`] run configuration, on-disk formats and the subcommands
//!
//! Every stochastic stage draws from a per-gate random stream derived from
//! `(master_seed, gate_index)` (see [`rng`]), so results never depend on how
//! work is scheduled across threads.

pub mod analysis;
pub mod cli;
mod error;
pub mod fit;
pub mod frame;
pub mod frame_proc;
pub mod hom;
pub mod rng;
pub mod sim;

pub use error::{Error, FitError, Result};
pub use frame::Frame;
