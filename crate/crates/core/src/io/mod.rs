//! File formats: model binaries, PFM/PNG images, environment maps, OLAT
//! manifests and the synthetic dataset generator.

pub mod envmap;
pub mod model;
pub mod pfm;
pub mod png;
pub mod manifest;
pub mod synthetic;
