pub mod camera;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod raster;
pub mod sh;

pub use error::{Error, Result};
pub mod envmap;
pub mod shade;
pub mod loss;
pub mod render;
pub mod gradcheck;
pub mod dataset;
pub mod io;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod trainer;
pub mod scenegen;
