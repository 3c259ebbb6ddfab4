//! Simulation and Bayesian inference for inhomogeneous Thomas cluster
//! point processes and the generalized Thomas process with
//! generalized-Poisson cluster sizes.
//!
//! The crate is organized bottom-up:
//! - [`geometry`]: windows as finite unions of rectangles, dilation,
//!   quadrature grids;
//! - [`covariates`]: piecewise-constant raster covariates (ESRI ASCII
//!   grid I/O) and log-linear design helpers;
//! - [`model`]: parameter types, the generalized Poisson distribution,
//!   Gaussian dispersal kernels, and exact simulators;
//! - [`firstorder`]: Poisson maximum likelihood for the first-order
//!   intensity (estimation step one);
//! - [`mcmc`]: the birth-death-move MCMC over latent cluster centers
//!   and the cluster-size/spread coefficients (estimation step two);
//! - [`gtp`]: the connection-based sampler for the homogeneous
//!   generalized Thomas process;
//! - [`reporting`]: posterior summaries, diagnostics and SVG/CSV plot
//!   emission.
//!
//! Runs are deterministic: every random stream is derived from a single
//! seed via [`rng::derive_rng`], and the parallel reduction in [`par`]
//! reproduces the sequential result bit for bit.

pub mod config;
pub mod covariates;
pub mod error;
pub mod firstorder;
pub mod geometry;
pub mod gtp;
pub mod mcmc;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod reporting;
pub mod rng;

pub use error::{Error, Result};
