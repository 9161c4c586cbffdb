//! Relightable 3D Gaussian splats whose appearance is stored as spherical
//! harmonics (SH) transfer functions plus a bidirectional SH (BSH) scattering
//! matrix per primitive.
//!
//! Every numeric type is generic over [`real::Real`] (`f32` or `f64`); the
//! aliases below name the two concrete precisions.

pub mod bench;
pub mod bsh;
pub mod error;
pub mod image;
pub mod io;
pub mod math;
pub mod optimizer;
pub mod raster;
pub mod real;
pub mod relight;
pub mod scene;
pub mod sh;

pub use error::{Error, Result};
pub use real::Real;

pub type Direction32 = sh::Direction<f32>;
pub type Direction64 = sh::Direction<f64>;
pub type ShVector32 = sh::ShVector<f32>;
pub type ShVector64 = sh::ShVector<f64>;
pub type BshMatrix32 = bsh::BshMatrix<f32>;
pub type BshMatrix64 = bsh::BshMatrix<f64>;
pub type Primitive32 = scene::Primitive<f32>;
pub type Primitive64 = scene::Primitive<f64>;
pub type Scene32 = scene::Scene<f32>;
pub type Scene64 = scene::Scene<f64>;
pub type LightSource32 = scene::LightSource<f32>;
pub type LightSource64 = scene::LightSource<f64>;
pub type Camera32 = raster::Camera<f32>;
pub type Camera64 = raster::Camera<f64>;
pub type HdrImage32 = image::HdrImage<f32>;
pub type HdrImage64 = image::HdrImage<f64>;
