//! Kinematic peg-in-hole insertion simulator and benchmark.
//!
//! The pipeline: [`world`] holds the scene and contact model, [`observation`]
//! renders gripper-locked height rasters, [`predictor`] regresses the pose of
//! the goal relative to the gripper, [`controller`] turns predictions into
//! waypoints, [`collector`] produces labeled datasets and [`harness`] runs
//! evaluation campaigns.

pub mod collector;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod observation;
pub mod predictor;
pub mod seed;
pub mod world;

pub use error::{Error, Result};
