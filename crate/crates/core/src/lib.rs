//! Simulation lab for the peer elicitation game.
//!
//! A generator answers binary tasks, discriminators report on the
//! correctness of each answer, and every discriminator is paid by the
//! determinant mechanism from its co-reports with every peer. All agents
//! learn by entropic mirror ascent on score-function estimates of their
//! utilities.

pub mod analysis;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod learning;
pub mod mechanism;
pub mod oracle;
pub mod rng;
pub mod types;
pub mod world;

pub use error::{PegError, Result};
