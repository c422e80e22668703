//! File formats: PFM, sRGB PNG, dataset directories and checkpoints.

pub mod checkpoint;
pub mod pfm;
pub mod png;
pub mod transforms;
