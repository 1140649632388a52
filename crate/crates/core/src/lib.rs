//! Shape-conditioned linker design engine.

pub mod aligner;
pub mod chem;
pub mod data;
pub mod error;
pub mod geom;
pub mod nn;
pub mod rl;
pub mod scoring;
pub mod surface;

pub use error::{Error, Result};
pub use geom::{Mat3, PointCloud, RigidTransform, Vec3};
