//! Sensing-assisted channel estimation for distributed MIMO.
//!
//! The core is generic over the scalar type (`f32` or `f64`) through
//! [`Real`]. The aliases at the bottom fix it to `f64`.

pub mod channel;
pub mod comm;
pub mod config;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod sensing;

pub use config::{parse_config, parse_config_str, Estimator, SimConfig};
pub use engine::{run_simulation, run_sweep, SimulationResult, Summary, SweepParam};
pub use error::{Result, SimError};
pub use scalar::Real;

pub type Point = scene::Point2D<f64>;
pub type Target = scene::TargetState<f64>;
pub type Matrix = linalg::CMatrix<f64>;
pub type Channel = channel::NetworkChannel<f64>;
pub type Path = channel::PathDescriptor<f64>;
pub type Track = sensing::TrackState<f64>;
