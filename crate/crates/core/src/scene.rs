//! Gaussian primitives, light sources, and their conversion into the
//! per-primitive (direction, radiance) samples that relighting sums over.

use std::ops::Range;
use std::sync::Arc;

use crate::bsh::{BshMatrix, Rgb, BSH_PACKED};
use crate::error::{Error, Result};
use crate::image::HdrImage;
use crate::io::envmap::env_lookup;
use crate::math::{self, Mat3, Vec3};
use crate::real::{sigmoid, Real};
use crate::sh::{Direction, ShVector, SH_COUNT};

/// Scalars stored per primitive.
pub const PARAMS_PER_PRIMITIVE: usize = 3 + 4 + 3 + 1 + 3 + SH_COUNT + 3 * SH_COUNT + 3 * BSH_PACKED;

/// Bytes per primitive at 32-bit precision.
pub const BYTES_PER_PRIMITIVE: usize = PARAMS_PER_PRIMITIVE * 4;

/// Flat parameter layout of a primitive, in serialization order.
pub mod layout {
    use std::ops::Range;

    pub const POSITION: Range<usize> = 0..3;
    pub const ROTATION: Range<usize> = 3..7;
    pub const LOG_SCALE: Range<usize> = 7..10;
    pub const OPACITY: usize = 10;
    pub const ALBEDO: Range<usize> = 11..14;
    pub const T_DIR: Range<usize> = 14..39;
    pub const T_IND: Range<usize> = 39..114;
    pub const S: Range<usize> = 114..1089;

    /// Parameters from here on are optimized; earlier ones are geometry
    /// that stays frozen at its initialization.
    pub const TRAINABLE_START: usize = OPACITY;
}

/// Number of optimized scalars per primitive.
pub const TRAINABLE_PER_PRIMITIVE: usize = PARAMS_PER_PRIMITIVE - layout::TRAINABLE_START;

/// Name of the field that owns flat parameter `index`.
pub fn field_name(index: usize) -> &'static str {
    match index {
        i if layout::POSITION.contains(&i) => "position",
        i if layout::ROTATION.contains(&i) => "rotation",
        i if layout::LOG_SCALE.contains(&i) => "log_scale",
        layout::OPACITY => "opacity_logit",
        i if layout::ALBEDO.contains(&i) => "albedo_logit",
        i if layout::T_DIR.contains(&i) => "t_dir",
        i if layout::T_IND.contains(&i) => "t_ind",
        i if layout::S.contains(&i) => "s",
        _ => "out_of_range",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive<T> {
    pub position: Vec3<T>,
    /// Unit quaternion (w, x, y, z).
    pub rotation: [T; 4],
    pub log_scale: Vec3<T>,
    pub opacity_logit: T,
    pub albedo_logit: Rgb<T>,
    pub t_dir: ShVector<T>,
    pub t_ind: [ShVector<T>; 3],
    pub s: BshMatrix<T>,
}

impl<T: Real> Default for Primitive<T> {
    fn default() -> Self {
        Primitive {
            position: [T::zero(); 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            log_scale: [T::zero(); 3],
            opacity_logit: T::zero(),
            albedo_logit: [T::zero(); 3],
            t_dir: ShVector::zeros(),
            t_ind: [ShVector::zeros(); 3],
            s: BshMatrix::zeros(),
        }
    }
}

impl<T: Real> Primitive<T> {
    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn albedo(&self) -> Rgb<T> {
        self.albedo_logit.map(sigmoid)
    }

    pub fn scales(&self) -> Vec3<T> {
        self.log_scale.map(|v| v.exp())
    }

    /// `R diag(scale)^2 R^T`.
    pub fn covariance(&self) -> Mat3<T> {
        let r = math::quat_to_mat(self.rotation);
        let s = self.scales();
        let mut out = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = T::zero();
                for k in 0..3 {
                    acc += r[i][k] * s[k] * s[k] * r[j][k];
                }
                out[i][j] = acc;
            }
        }
        out
    }

    /// Writes all 1,089 scalars in layout order.
    pub fn write_params(&self, out: &mut [T]) {
        assert_eq!(out.len(), PARAMS_PER_PRIMITIVE);
        out[layout::POSITION].copy_from_slice(&self.position);
        out[layout::ROTATION].copy_from_slice(&self.rotation);
        out[layout::LOG_SCALE].copy_from_slice(&self.log_scale);
        out[layout::OPACITY] = self.opacity_logit;
        out[layout::ALBEDO].copy_from_slice(&self.albedo_logit);
        out[layout::T_DIR].copy_from_slice(&self.t_dir.0);
        for ch in 0..3 {
            let start = layout::T_IND.start + ch * SH_COUNT;
            out[start..start + SH_COUNT].copy_from_slice(&self.t_ind[ch].0);
            let start = layout::S.start + ch * BSH_PACKED;
            out[start..start + BSH_PACKED].copy_from_slice(&self.s.coeffs[ch]);
        }
    }

    pub fn from_params(p: &[T]) -> Self {
        assert_eq!(p.len(), PARAMS_PER_PRIMITIVE);
        let mut prim = Primitive::default();
        prim.set_range(0, p);
        prim
    }

    pub fn params(&self) -> Vec<T> {
        let mut v = vec![T::zero(); PARAMS_PER_PRIMITIVE];
        self.write_params(&mut v);
        v
    }

    /// Reads scalar `index` of the flat layout.
    pub fn param(&self, index: usize) -> T {
        match index {
            i if layout::POSITION.contains(&i) => self.position[i],
            i if layout::ROTATION.contains(&i) => self.rotation[i - 3],
            i if layout::LOG_SCALE.contains(&i) => self.log_scale[i - 7],
            layout::OPACITY => self.opacity_logit,
            i if layout::ALBEDO.contains(&i) => self.albedo_logit[i - 11],
            i if layout::T_DIR.contains(&i) => self.t_dir.0[i - 14],
            i if layout::T_IND.contains(&i) => {
                let k = i - layout::T_IND.start;
                self.t_ind[k / SH_COUNT].0[k % SH_COUNT]
            }
            i if layout::S.contains(&i) => {
                let k = i - layout::S.start;
                self.s.coeffs[k / BSH_PACKED][k % BSH_PACKED]
            }
            _ => panic!("parameter index {index} out of range"),
        }
    }

    /// Overwrites scalar `index` of the flat layout.
    pub fn set_param(&mut self, index: usize, v: T) {
        match index {
            i if layout::POSITION.contains(&i) => self.position[i] = v,
            i if layout::ROTATION.contains(&i) => self.rotation[i - 3] = v,
            i if layout::LOG_SCALE.contains(&i) => self.log_scale[i - 7] = v,
            layout::OPACITY => self.opacity_logit = v,
            i if layout::ALBEDO.contains(&i) => self.albedo_logit[i - 11] = v,
            i if layout::T_DIR.contains(&i) => self.t_dir.0[i - 14] = v,
            i if layout::T_IND.contains(&i) => {
                let k = i - layout::T_IND.start;
                self.t_ind[k / SH_COUNT].0[k % SH_COUNT] = v;
            }
            i if layout::S.contains(&i) => {
                let k = i - layout::S.start;
                self.s.coeffs[k / BSH_PACKED][k % BSH_PACKED] = v;
            }
            _ => panic!("parameter index {index} out of range"),
        }
    }

    /// Overwrites the contiguous run of parameters starting at `start`.
    pub fn set_range(&mut self, start: usize, values: &[T]) {
        let r: Range<usize> = start..start + values.len();
        assert!(r.end <= PARAMS_PER_PRIMITIVE);
        let p = |i: usize| values[i - start];
        for i in r {
            self.set_param(i, p(i));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Primitive<U> {
        let p: Vec<U> = self.params().iter().map(|v| U::lit(v.as_f64())).collect();
        Primitive::from_params(&p)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene<T> {
    pub primitives: Vec<Primitive<T>>,
}

impl<T: Real> Scene<T> {
    pub fn new(primitives: Vec<Primitive<T>>) -> Self {
        Scene { primitives }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn parameter_count(&self) -> u64 {
        self.primitives.len() as u64 * PARAMS_PER_PRIMITIVE as u64
    }

    /// Memory footprint of the parameters at 32-bit precision.
    pub fn memory_bytes(&self) -> u64 {
        self.primitives.len() as u64 * BYTES_PER_PRIMITIVE as u64
    }

    pub fn cast<U: Real>(&self) -> Scene<U> {
        Scene { primitives: self.primitives.iter().map(Primitive::cast).collect() }
    }
}

/// A light sample as seen from one primitive: `wi` points from the primitive
/// toward the light.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightSample<T> {
    pub wi: Direction<T>,
    pub radiance: Rgb<T>,
}

#[derive(Clone, Debug)]
pub enum LightSource<T> {
    Directional { dir: Direction<T>, radiance: Rgb<T> },
    Point { position: Vec3<T>, intensity: Rgb<T> },
    Environment { map: Arc<HdrImage<T>>, sample_count: usize },
}

/// Default number of environment samples.
pub const DEFAULT_ENV_SAMPLES: usize = 128;

impl<T: Real> LightSource<T> {
    pub fn directional(dir: Direction<T>, radiance: Rgb<T>) -> Result<Self> {
        check_non_negative(&radiance)?;
        Ok(LightSource::Directional { dir, radiance })
    }

    pub fn point(position: Vec3<T>, intensity: Rgb<T>) -> Result<Self> {
        check_non_negative(&intensity)?;
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite point light position"));
        }
        Ok(LightSource::Point { position, intensity })
    }

    pub fn environment(map: Arc<HdrImage<T>>, sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::invalid("environment light needs at least one sample"));
        }
        if map.width == 0 || map.height == 0 {
            return Err(Error::invalid("empty environment map"));
        }
        if map.data.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::invalid("environment map has negative or non-finite pixels"));
        }
        Ok(LightSource::Environment { map, sample_count })
    }
}

fn check_non_negative<T: Real>(rgb: &Rgb<T>) -> Result<()> {
    if rgb.iter().all(|v| v.is_finite() && *v >= T::zero()) {
        Ok(())
    } else {
        Err(Error::invalid("light radiance must be finite and non-negative"))
    }
}

/// A light with any primitive-independent work done up front; environment
/// maps become a fixed list of weighted directional samples.
#[derive(Clone, Debug)]
pub enum PreparedLight<T> {
    Distant(Vec<LightSample<T>>),
    Point { position: Vec3<T>, intensity: Rgb<T> },
}

impl<T: Real> PreparedLight<T> {
    pub fn new(light: &LightSource<T>) -> Self {
        match light {
            LightSource::Directional { dir, radiance } => {
                PreparedLight::Distant(vec![LightSample { wi: *dir, radiance: *radiance }])
            }
            LightSource::Point { position, intensity } => {
                PreparedLight::Point { position: *position, intensity: *intensity }
            }
            LightSource::Environment { map, sample_count } => {
                let weight = T::lit(4.0) * T::PI() / T::lit(*sample_count as f64);
                let samples = sample_env_directions::<T>(*sample_count)
                    .into_iter()
                    .map(|wi| LightSample { wi, radiance: env_lookup(map, &wi).map(|v| v * weight) })
                    .collect();
                PreparedLight::Distant(samples)
            }
        }
    }

    /// Appends the samples this light contributes at primitive center `mu`.
    pub fn samples_at(&self, mu: Vec3<T>, out: &mut Vec<LightSample<T>>) -> Result<()> {
        match self {
            PreparedLight::Distant(s) => out.extend_from_slice(s),
            PreparedLight::Point { position, intensity } => {
                let d = math::sub(*position, mu);
                let dist2 = math::dot(d, d);
                if !(dist2 > T::zero()) {
                    return Err(Error::DegenerateGeometry(
                        "point light coincides with a primitive center".into(),
                    ));
                }
                let wi = Direction::from_array(d)?;
                out.push(LightSample { wi, radiance: intensity.map(|v| v / dist2) });
            }
        }
        Ok(())
    }
}

/// Converts one light into the samples seen from position `mu`.
pub fn light_samples<T: Real>(light: &LightSource<T>, mu: Vec3<T>) -> Result<Vec<LightSample<T>>> {
    let mut out = Vec::new();
    PreparedLight::new(light).samples_at(mu, &mut out)?;
    Ok(out)
}

/// Deterministic Fibonacci-sphere directions, identical for equal `n`.
pub fn sample_env_directions<T: Real>(n: usize) -> Vec<Direction<T>> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            Direction::new(T::lit(r * phi.cos()), T::lit(r * phi.sin()), T::lit(z))
                .expect("fibonacci point is unit length")
        })
        .collect()
}
