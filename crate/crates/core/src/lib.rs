//! Simulator and Monte Carlo harness for the periodic stochastic thin-film
//! equation with quadratic mobility and Stratonovich gradient noise.

pub mod banded;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod model;
pub mod montecarlo;
pub mod noise;
pub mod output;
pub mod stepper;

pub use error::{Result, StfeError};
pub use grid::{Field, Grid};
pub use model::ModelParams;
pub use noise::{NoiseOperator, NoiseSpec};
pub use stepper::{Problem, RunOptions, Scheme, StepperConfig};
