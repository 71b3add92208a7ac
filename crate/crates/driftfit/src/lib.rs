//! Parameter estimation for overdamped Langevin dynamics in a periodic
//! potential, observed through a noisy nonlinear sensor.
//!
//! The crate provides two estimators for the drift coefficients and the
//! diffusion constant of the hidden process:
//!
//! * an augmented-state sequential importance resampling particle filter
//!   ([`pf`]), which tracks the state together with the unknown parameters,
//! * a Baum–Welch variant ([`mbw`]) that discretizes the state space onto a
//!   periodic grid, ties the transition probabilities to a low-order Fourier
//!   series, and replaces the usual closed-form M-step with a Newton solve
//!   of the reestimation equations.
//!
//! Supporting modules: [`sde`] simulates the ground-truth process, [`hmm`]
//! holds the discrete machinery (quantizer, forward–backward, the mapping
//! between transition probabilities and drift/diffusion), and [`kalman`] is
//! a small exact filter used as a cross-check oracle for the particle
//! filter on linear-Gaussian problems.

pub mod error;
pub mod hmm;
pub mod io;
pub mod kalman;
pub mod mbw;
pub mod numeric;
pub mod pf;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};
