//! Epidemic model calibration and neural forecasting toolkit.
//!
//! The pipeline runs in stages: ingest reported case data, calibrate an
//! uncertainty-aware social-SIAR compartmental model against it, generate
//! dense synthetic trajectories from the calibrated model, train two kinds
//! of forecasters (a physics-informed network and a nonlinear autoregressive
//! network), and evaluate their short/long-term predictions.

pub mod calibration;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod integrator;
pub mod models;
pub mod nar;
pub mod neural;
pub mod optim;
pub mod pinn;
pub mod pipeline;
pub mod quadrature;
pub mod synthgen;

pub use error::{Error, Result};
