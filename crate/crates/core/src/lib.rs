//! Desk-scale numerics for stochastic optimal control driven by fractional
//! Brownian motion (Hurst index `H` in `[1/2, 1)`).
//!
//! The pipeline: joint Brownian/fBm driver generation through the Volterra
//! kernel ([`fbm`]), fractional calculus and Young integration ([`frac`]),
//! the fractional operator toolbox with numerical Malliavin derivatives
//! ([`fbm_ops`]), pathwise SDE / variational solvers ([`dynamics`]),
//! adjoint and backward-equation machinery ([`adjoint`]), and
//! maximum-principle residuals with a gradient-descent control optimizer
//! ([`max_principle`]). Ensemble orchestration and least-squares conditional
//! expectations live in [`mc`]; seeded batch experiments in [`cli`].

pub mod error;
pub mod grid;
pub mod kernels;
pub mod frac;
pub mod fbm;
pub mod mc;
pub mod fbm_ops;
pub mod dynamics;
pub mod systems;
pub mod adjoint;
pub mod max_principle;
pub mod cli;

pub use error::{FracmaxError, Result};
