//! Optimal estimation of momentum kicks on a feedback-controlled
//! multimode resonator.
//!
//! The pipeline: build a continuous-time stochastic model of the resonator
//! modes and detection disturbances ([`model`]), discretize it exactly
//! ([`lti`]), synthesize an LQG regulator ([`control`]), simulate noisy
//! traces with kicks ([`sim`]), and reconstruct each kick from a Kalman
//! filter pass before it and an RTS smoother pass after it ([`kick`]).

pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod estimation;
pub mod io;
pub mod kick;
pub mod linalg;
pub mod lti;
pub mod model;
pub mod riccati;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
