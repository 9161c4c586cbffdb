//! Equirectangular (latitude-longitude) environment maps.
//!
//! Row 0 is the `+z` pole and the last row the `-z` pole; columns sweep the
//! longitude `atan2(y, x)` from `-pi` (left edge) to `pi` (right edge).

use std::path::Path;

use crate::error::Result;
use crate::image::HdrImage;
use crate::real::Real;
use crate::sh::Direction;

/// Bilinear radiance lookup. Wraps in longitude, clamps in latitude.
pub fn env_lookup<T: Real>(env: &HdrImage<T>, dir: &Direction<T>) -> [T; 3] {
    let (w, h) = (env.width, env.height);
    let pi = std::f64::consts::PI;
    let z = dir.z().as_f64().clamp(-1.0, 1.0);
    let theta = z.acos();
    let phi = dir.y().as_f64().atan2(dir.x().as_f64());
    let u = (phi + pi) / (2.0 * pi) * w as f64 - 0.5;
    let v = theta / pi * h as f64 - 0.5;

    let x0 = u.floor();
    let y0 = v.floor();
    let tx = T::lit(u - x0);
    let ty = T::lit(v - y0);
    let wrap = |x: i64| x.rem_euclid(w as i64) as usize;
    let clampy = |y: i64| y.clamp(0, h as i64 - 1) as usize;
    let (xa, xb) = (wrap(x0 as i64), wrap(x0 as i64 + 1));
    let (ya, yb) = (clampy(y0 as i64), clampy(y0 as i64 + 1));

    let p00 = env.pixel(xa, ya);
    let p10 = env.pixel(xb, ya);
    let p01 = env.pixel(xa, yb);
    let p11 = env.pixel(xb, yb);
    let one = T::one();
    std::array::from_fn(|c| {
        let top = p00[c] * (one - tx) + p10[c] * tx;
        let bottom = p01[c] * (one - tx) + p11[c] * tx;
        top * (one - ty) + bottom * ty
    })
}

/// Loads an equirectangular PFM.
pub fn load_env_map<T: Real>(path: impl AsRef<Path>) -> Result<HdrImage<T>> {
    Ok(super::pfm::read_pfm(path)?.cast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sample_env_directions;
    use crate::sh::SphereSampler;

    #[test]
    fn constant_map_is_constant() {
        let env = HdrImage::filled(32, 16, [0.25f64, 2.0, 7.5]);
        let mut s = SphereSampler::new(1);
        for _ in 0..200 {
            let d = s.sample::<f64>();
            let v = env_lookup(&env, &d);
            for c in 0..3 {
                assert!((v[c] - env.pixel(0, 0)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pole_reads_top_row() {
        let mut env = HdrImage::<f64>::new(8, 4);
        for x in 0..8 {
            env.set_pixel(x, 0, [1.0, 2.0, 3.0]);
        }
        let up = Direction::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(env_lookup(&env, &up), [1.0, 2.0, 3.0]);
        let down = Direction::new(0.0, 0.0, -1.0).unwrap();
        assert_eq!(env_lookup(&env, &down), [0.0; 3]);
    }

    #[test]
    fn fibonacci_energy_of_constant_map() {
        let v = 1.7f64;
        let env = HdrImage::filled(64, 32, [v; 3]);
        let n = 256;
        let total: f64 = sample_env_directions::<f64>(n)
            .iter()
            .map(|d| env_lookup(&env, d)[0] * 4.0 * std::f64::consts::PI / n as f64)
            .sum();
        assert!((total - 4.0 * std::f64::consts::PI * v).abs() < 1e-6);
    }

    #[test]
    fn longitude_wraps_without_seam() {
        let mut env = HdrImage::<f64>::new(4, 2);
        for y in 0..2 {
            env.set_pixel(0, y, [1.0; 3]);
            env.set_pixel(3, y, [3.0; 3]);
        }
        // phi = pi sits exactly on the left/right edge: halfway between column 3 and column 0.
        let d = Direction::new(-1.0, 0.0, 0.0).unwrap();
        assert!((env_lookup(&env, &d)[0] - 2.0).abs() < 1e-12);
    }
}
