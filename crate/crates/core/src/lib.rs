//! Simulator, trainer and stress-test harness for quantum neuron Born machines.

pub mod cli;
pub mod distribution;
pub mod error;
pub mod model;
pub mod neuron;
pub mod seeding;
pub mod statevector;
pub mod stress;
pub mod target;
pub mod training;

pub use distribution::{Distribution, Histogram};
pub use error::{QnbmError, Result};
