//! Reinforcement-learning workbench for standard-plane localization in 3D
//! volumes using the tangent-point plane parameterization.
//!
//! Module map:
//! - [`geom`]: tangent points, planes, sampling frames and plane metrics
//! - [`volume`]: phantom volumes, trilinear sampling, reslicing, heatmaps
//! - [`imaging`]: NCC, SSIM and image utilities
//! - [`env`]: the plane-search environment and its reward
//! - [`agent`]: dueling double DQN with prioritized replay and the
//!   similarity-regression head
//! - [`imitation`]: oracle demonstrations and behavior-cloning pretraining
//! - [`cli`]: configuration, dataset/run persistence and the subcommands

pub mod agent;
pub mod cli;
mod binio;
pub mod error;
pub mod env;
pub mod geom;
pub mod imaging;
pub mod imitation;
pub mod volume;

pub use error::{Error, Result};
