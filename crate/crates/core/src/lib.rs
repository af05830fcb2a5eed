//! Simulation and verification toolkit for noise-assisted feedback
//! stabilization of QND measurement eigenstates.
//!
//! Modules, bottom-up:
//! - [`quantum`]: density matrices, spectral machinery, superoperators.
//! - [`dynamics`]: open-loop, noise-assisted closed-loop and Markovian steps.
//! - [`filters`]: actuation Laplacian, full observer, reduced and population filters.
//! - [`lyapunov`]: Lyapunov functions, weight systems, generator, certificates.
//! - [`spin`]: spin-J model family and the simulation preset.
//! - [`ensemble`]: seeded Monte Carlo campaigns and rate fitting.
//! - [`config`] and [`report`]: campaign configuration and CSV artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod filters;
pub mod lyapunov;
pub mod quantum;
pub mod report;
pub mod rng;
pub mod spin;

pub use error::{Error, Result};
