//! Terrain-preference local planning learned from demonstrations.
//!
//! A simulated unicycle vehicle carries a synthetic segmentation camera. Each
//! candidate trajectory of a fixed preference set is scored by how much of it
//! crosses each terrain class and how far it ends from the reference path; a
//! small classifier learns from demonstrations which trajectory a driver would
//! pick given those scores.

pub mod camera;
pub mod error;
pub mod kinematics;
pub mod learner;
pub mod planner;
pub mod scenarios;
pub mod sim;
pub mod utility;
pub mod world;

pub use error::{Error, Result};
