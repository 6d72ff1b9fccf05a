//! Render-and-compare refinement of rigid object poses.
//!
//! A pose hypothesis is rendered into a zoomed patch around the object, an
//! error critic compares it with the same patch of the observed image, and
//! the pose is updated by finite-difference gradient descent on the critic's
//! output.

pub mod camera;
pub mod cli;
pub mod critic;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod proposals;
pub mod rasterizer;

pub use error::{Error, Result};
