//! Quantum end-to-end learning on a pulse-controlled qubit chain.
//!
//! A classifier is the controlled time evolution of a small qubit chain:
//! inputs are mapped by a bounded perceptron to encoding pulses, trainable
//! inference pulses follow, and class probabilities are read out by
//! projective σ_z measurement on the first qubits.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod grad;
pub mod matrix;
pub mod model;
pub mod noise;
pub mod optim;
pub mod qsim;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use matrix::RealMatrix;
pub use qsim::{ControlSchedule, HamiltonianSpec, QuantumState};
