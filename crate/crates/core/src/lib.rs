pub mod config;
pub mod error;
pub mod eversion;
pub mod kinematics;
pub mod mech;
pub mod network;
pub mod scenario;
pub mod scene;
pub mod sim;
pub mod spray;

pub use error::{Error, Result};
