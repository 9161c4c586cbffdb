//! Stage timing for the render path.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{project_scene, rasterize, Camera, DEFAULT_TILE_SIZE};
use crate::real::Real;
use crate::relight::{relight_scene, ComponentMask};
use crate::scene::{LightSource, Scene};

/// Best-of-`repetitions` wall time per stage, in milliseconds.
#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub primitives: usize,
    pub lights: usize,
    pub repetitions: usize,
    pub width: usize,
    pub height: usize,
    pub relight_ms: f64,
    pub project_ms: f64,
    pub rasterize_ms: f64,
    pub total_ms: f64,
    pub relight_us_per_primitive: f64,
    pub parameters: u64,
    pub memory_bytes: u64,
}

pub fn bench_render<T: Real>(
    scene: &Scene<T>,
    lights: &[LightSource<T>],
    cam: &Camera<T>,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::invalid("bench needs at least one repetition"));
    }
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    let (mut relight_ms, mut project_ms, mut rasterize_ms) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for _ in 0..repetitions {
        let t = Instant::now();
        let colors = relight_scene(scene, lights, ComponentMask::FULL)?;
        relight_ms = relight_ms.min(ms(t));
        let t = Instant::now();
        let projected = project_scene(scene, &colors, cam);
        project_ms = project_ms.min(ms(t));
        let t = Instant::now();
        let _ = rasterize(&projected, cam, DEFAULT_TILE_SIZE);
        rasterize_ms = rasterize_ms.min(ms(t));
    }
    Ok(BenchReport {
        primitives: scene.len(),
        lights: lights.len(),
        repetitions,
        width: cam.width,
        height: cam.height,
        relight_ms,
        project_ms,
        rasterize_ms,
        total_ms: relight_ms + project_ms + rasterize_ms,
        relight_us_per_primitive: if scene.is_empty() { 0.0 } else { relight_ms * 1e3 / scene.len() as f64 },
        parameters: scene.parameter_count(),
        memory_bytes: scene.memory_bytes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::random_subject;
    use crate::sh::Direction;

    #[test]
    fn report_accounts_for_model_size() {
        let scene: Scene<f32> = random_subject(50, 1).cast();
        let light = LightSource::directional(Direction::from_array([0.0, 1.0, 0.0]).unwrap(), [1.0; 3]).unwrap();
        let cam = Camera::look_at([0.0, 1.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 16, 16).unwrap();
        let r = bench_render(&scene, &[light], &cam, 2).unwrap();
        assert_eq!(r.primitives, 50);
        assert_eq!(r.memory_bytes, 50 * 4356);
        assert_eq!(r.parameters, 50 * 1089);
        assert!(r.relight_ms >= 0.0 && r.total_ms >= r.relight_ms);
        assert!(bench_render(&scene, &[], &cam, 0).is_err());
    }
}
