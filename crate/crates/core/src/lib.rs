pub mod error;
pub mod geometry;
pub mod imls;
pub mod isosurface;
pub mod metrics;
pub mod mlp;
pub mod sampler;
pub mod spatial;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::Point3;
