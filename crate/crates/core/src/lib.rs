//! Benchmarking toolkit for two-motor cable-driven tendon driver units.

pub mod analysis;
pub mod calibrate;
pub mod cli;
pub mod codec;
pub mod config;
pub mod hal;
pub mod orchestrator;
pub mod output;
pub mod plant;
pub mod scalar;

pub use scalar::Scalar;

pub type Plant = plant::Plant<f64>;
pub type PlantParams = plant::PlantParams<f64>;
pub type PlantState = plant::PlantState<f64>;
pub type MotorParams = plant::MotorParams<f64>;
pub type SimDrive = hal::SimDrive<f64>;
pub type LinearFit = analysis::LinearFit<f64>;
pub type BodePoint = analysis::BodePoint<f64>;
pub type SoundLevel = analysis::SoundLevel<f64>;
