//! Simulation and numerical verification of multivariate non-linear Hawkes
//! processes with excitation and inhibition on Erdős–Rényi graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`network`] samples the random graph and synaptic signs and computes
//!   weight statistics.
//! - [`kernels`] holds the interaction kernel φ and transfer function h.
//! - [`simulator`] simulates the finite-N process (thinning and time-change
//!   backends) and extracts compensated martingale paths.
//! - [`volterra`] solves the deterministic mean-field convolution equation.
//! - [`fluctuations`] integrates the limiting fluctuation system.
//! - [`analysis`] runs the statistical verification experiments and produces
//!   [`report::ExperimentReport`]s.
//! - [`config`] and [`cli`] tie everything into reproducible runs.

pub mod analysis;
pub mod cli;
pub mod config;
mod error;
pub mod fluctuations;
pub mod grid;
pub mod kernels;
pub mod network;
pub mod output;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod volterra;

pub use error::{Error, Result};
