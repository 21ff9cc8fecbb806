//! A numerical laboratory for homogenization of discrete parabolic equations
//! in divergence form with space-time random coefficients.
//!
//! The crate simulates the random lattice equation
//! `u(x,t+1) - u(x,t) = -div(a(x,t) grad u(x,t))` (and its continuous-time
//! analogue), estimates the averaged Green's function by Monte Carlo over
//! environments, computes the effective (homogenized) coefficient matrix
//! through a Fourier-space corrector pipeline, and quantitatively checks the
//! convergence rates and Green's-function envelopes that homogenization
//! theory predicts.
//!
//! Module map:
//!
//! - [`lattice`]: periodic lattice geometry and the discrete vector calculus.
//! - [`kernel`]: constant-coefficient reference heat kernels and envelopes.
//! - [`env`]: random-environment samplers (i.i.d. fields, Langevin field theory).
//! - [`solver`]: time evolution of the random equation and Green's-function MC.
//! - [`corrector`]: twisted derivatives, the resolvent convolution operator,
//!   Neumann iteration, and the effective matrix `q(xi, eta)`.
//! - [`reference`]: closed-form and spectral references for the homogenized
//!   problem.
//! - [`bounds`]: decay-envelope fitting and rate/bound verification.
//! - [`experiments`]: reproducible experiment orchestration behind the CLI.
//!
//! Every sampler draws through a counter-based generator keyed on
//! `(seed, stream, cell, draw)`, so results are bitwise reproducible for any
//! worker count. See `README.md` for the CLI and the runnable examples.

pub mod bounds;
pub mod corrector;
pub mod env;
pub mod error;
pub mod experiments;
pub mod fourier;
pub mod kernel;
pub mod lattice;
pub mod reference;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
