//! Null controllability of coupled one-dimensional parabolic systems with a
//! rapidly oscillating periodic diffusion coefficient, and convergence of the
//! controls to those of the harmonic-mean homogenized system.
//!
//! The crate is organised bottom-up:
//!
//! * [`coeff`]: periodic coefficients, harmonic means, and the Liouville
//!   change-of-variables chain.
//! * [`kalman`]: Kalman rank tests and reduction of `(A, B)` to cascade form.
//! * [`spectral`]: eigenpairs of the oscillating operator and of the coupled
//!   operator, low-frequency spaces, gap and observation-mass diagnostics.
//! * [`pde`]: Crank–Nicolson solvers for the controlled system and its adjoint.
//! * [`control`]: low-frequency moment control, free decay, penalized HUM and
//!   the three-stage composite control.
//! * [`carleman`]: exponent bookkeeping and weights of the Carleman argument.
//! * [`homog`]: the homogenized system and ε-sweeps.

pub mod carleman;
pub mod coeff;
pub mod control;
pub mod error;
pub mod grid;
pub mod homog;
pub mod kalman;
pub mod pde;
pub mod quadrature;
pub mod spectral;
pub mod system;
pub mod tridiag;

pub use error::{Error, Result};
pub use grid::{Grid, Interval, State};
