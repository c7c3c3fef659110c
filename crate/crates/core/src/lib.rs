//! Variational sequential Monte Carlo for state-space models.
//!
//! This crate implements particle filtering with learned, reparameterized
//! proposal kernels and stochastic-gradient parameter estimation, in two
//! modes:
//!
//! - **batch** (`learn::vsmc_fit`): repeated sweeps over a fixed data record,
//!   one gradient step per sweep, targeting the SMC evidence lower bound;
//! - **online** (`learn::ovsmc_run`): one gradient step per incoming
//!   observation, distributing the same gradient over time so that model
//!   parameters and the proposal adapt on the fly with memory that stays
//!   constant in the stream length.
//!
//! Two concrete models are provided ([`model::LinearGaussianModel`] and
//! [`model::StochVolModel`]) together with an exact Kalman oracle
//! ([`kalman`]) for the linear Gaussian case, a minimal dense network with
//! manual backpropagation ([`nn`]) powering the learned Gaussian proposal,
//! and finite-difference utilities for gradient verification ([`grad`]).
//!
//! All randomness flows through [`rng::RngState`] (a counter-based ChaCha
//! stream); every run is bit-reproducible given its seed.

pub mod error;
pub mod grad;
pub mod kalman;
pub mod learn;
pub mod model;
pub mod nn;
pub mod proposal;
pub mod rng;
pub mod series;
pub mod smc;

pub use error::{Error, Result};
