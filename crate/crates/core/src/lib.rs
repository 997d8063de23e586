//! Scenario model, composite-camera geometry, the planner network, training
//! and closed-loop evaluation.

pub mod checkpoint;
pub mod composite;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod objective;
pub mod planner;
pub mod scenario;
pub mod sim;
pub mod trainer;
pub mod trajectory;

pub use error::{CoreError, Result};
