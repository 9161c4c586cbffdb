//! Real spherical harmonics up to degree 4 (25 basis functions).
//!
//! Ordering is band-major, `l = 0..=4`, `m = -l..=l`, so the flat index of
//! `(l, m)` is `l * l + l + m`. The basis is orthonormal over the unit sphere
//! and carries no Condon-Shortley phase: every `m > 0` function is a positive
//! multiple of a cosine-type polynomial in `x`, every `m < 0` one of a
//! sine-type polynomial in `y`. The polar axis is `+z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::real::Real;

/// Number of basis functions (degree <= 4).
pub const SH_COUNT: usize = 25;

/// A unit 3-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction<T> {
    v: [T; 3],
}

impl<T: Real> Direction<T> {
    /// Normalizes `(x, y, z)`. Fails on non-finite or zero-length input.
    pub fn new(x: T, y: T, z: T) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::invalid(format!("non-finite direction ({x}, {y}, {z})")));
        }
        let n = (x * x + y * y + z * z).sqrt();
        if n <= T::zero() || !n.is_finite() {
            return Err(Error::invalid("zero-length direction"));
        }
        Ok(Direction { v: [x / n, y / n, z / n] })
    }

    pub fn from_array(v: [T; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    /// Wraps components that the caller guarantees are already unit length.
    pub(crate) fn from_unit_unchecked(v: [T; 3]) -> Self {
        Direction { v }
    }

    #[inline]
    pub fn x(&self) -> T {
        self.v[0]
    }

    #[inline]
    pub fn y(&self) -> T {
        self.v[1]
    }

    #[inline]
    pub fn z(&self) -> T {
        self.v[2]
    }

    #[inline]
    pub fn as_array(&self) -> [T; 3] {
        self.v
    }

    pub fn neg(&self) -> Self {
        Direction { v: [-self.v[0], -self.v[1], -self.v[2]] }
    }

    pub fn cast<U: Real>(&self) -> Direction<U> {
        let v = self.v.map(|c| U::lit(c.as_f64()));
        Direction::new(v[0], v[1], v[2]).expect("unit direction stays finite")
    }
}

/// Coefficients of a scalar function on the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShVector<T>(pub [T; SH_COUNT]);

impl<T: Real> Default for ShVector<T> {
    fn default() -> Self {
        ShVector([T::zero(); SH_COUNT])
    }
}

impl<T: Real> ShVector<T> {
    pub fn zeros() -> Self {
        Self::default()
    }

    /// Expansion of the constant function `value`.
    pub fn constant(value: T) -> Self {
        let mut c = Self::zeros();
        c.0[0] = value * dc_weight();
        c
    }

    pub fn unit(k: usize) -> Self {
        let mut c = Self::zeros();
        c.0[k] = T::one();
        c
    }

    pub fn coeffs(&self) -> &[T; SH_COUNT] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: T, other: &ShVector<T>) {
        for (x, &y) in self.0.iter_mut().zip(other.0.iter()) {
            *x += a * y;
        }
    }

    pub fn eval(&self, dir: &Direction<T>) -> T {
        eval_sh_function(self, dir)
    }
}

/// `2 * sqrt(pi)`: the coefficient of the constant basis that reconstructs
/// the constant function 1.
#[inline]
pub fn dc_weight<T: Real>() -> T {
    T::lit(2.0) * T::PI().sqrt()
}

/// Evaluates the 25 basis functions at `dir`.
pub fn eval_sh_basis<T: Real>(dir: &Direction<T>) -> [T; SH_COUNT] {
    let (x, y, z) = (dir.x(), dir.y(), dir.z());
    let c = |v: f64| T::lit(v);
    let pi = std::f64::consts::PI;

    let k00 = c(0.5 * (1.0 / pi).sqrt());
    let k1 = c((3.0 / (4.0 * pi)).sqrt());
    let k2a = c(0.5 * (15.0 / pi).sqrt());
    let k20 = c(0.25 * (5.0 / pi).sqrt());
    let k22 = c(0.25 * (15.0 / pi).sqrt());
    let k33 = c(0.25 * (35.0 / (2.0 * pi)).sqrt());
    let k32 = c(0.5 * (105.0 / pi).sqrt());
    let k31 = c(0.25 * (21.0 / (2.0 * pi)).sqrt());
    let k30 = c(0.25 * (7.0 / pi).sqrt());
    let k32b = c(0.25 * (105.0 / pi).sqrt());
    let k44 = c(0.75 * (35.0 / pi).sqrt());
    let k43 = c(0.75 * (35.0 / (2.0 * pi)).sqrt());
    let k42 = c(0.75 * (5.0 / pi).sqrt());
    let k41 = c(0.75 * (5.0 / (2.0 * pi)).sqrt());
    let k40 = c(3.0 / 16.0 * (1.0 / pi).sqrt());
    let k42b = c(0.375 * (5.0 / pi).sqrt());
    let k44b = c(3.0 / 16.0 * (35.0 / pi).sqrt());

    let (xx, yy, zz) = (x * x, y * y, z * z);
    let one = T::one();
    let three = c(3.0);

    [
        k00,
        k1 * y,
        k1 * z,
        k1 * x,
        k2a * x * y,
        k2a * y * z,
        k20 * (three * zz - one),
        k2a * x * z,
        k22 * (xx - yy),
        k33 * y * (three * xx - yy),
        k32 * x * y * z,
        k31 * y * (c(5.0) * zz - one),
        k30 * z * (c(5.0) * zz - three),
        k31 * x * (c(5.0) * zz - one),
        k32b * z * (xx - yy),
        k33 * x * (xx - three * yy),
        k44 * x * y * (xx - yy),
        k43 * y * z * (three * xx - yy),
        k42 * x * y * (c(7.0) * zz - one),
        k41 * y * z * (c(7.0) * zz - three),
        k40 * (c(35.0) * zz * zz - c(30.0) * zz + three),
        k41 * x * z * (c(7.0) * zz - three),
        k42b * (xx - yy) * (c(7.0) * zz - one),
        k43 * x * z * (xx - three * yy),
        k44b * (xx * xx - c(6.0) * xx * yy + yy * yy),
    ]
}

/// Reconstructs `sum_i c_i y_i(dir)`.
pub fn eval_sh_function<T: Real>(c: &ShVector<T>, dir: &Direction<T>) -> T {
    dot_basis(c, &eval_sh_basis(dir))
}

#[inline]
pub(crate) fn dot_basis<T: Real>(c: &ShVector<T>, basis: &[T; SH_COUNT]) -> T {
    let mut acc = T::zero();
    for k in 0..SH_COUNT {
        acc += c.0[k] * basis[k];
    }
    acc
}

/// Closed-form integral over the sphere; only the constant band survives.
pub fn integrate_over_sphere<T: Real>(c: &ShVector<T>) -> T {
    dc_weight::<T>() * c.0[0]
}

/// Deterministic stream of uniformly distributed unit directions, drawn as
/// normalized standard-normal triples.
pub struct SphereSampler {
    rng: ChaCha8Rng,
}

impl SphereSampler {
    pub fn new(seed: u64) -> Self {
        SphereSampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        SphereSampler { rng }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn sample<T: Real>(&mut self) -> Direction<T> {
        loop {
            let x: f64 = StandardNormal.sample(&mut self.rng);
            let y: f64 = StandardNormal.sample(&mut self.rng);
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let n = (x * x + y * y + z * z).sqrt();
            if n > 1e-12 {
                return Direction::from_unit_unchecked([
                    T::lit(x / n),
                    T::lit(y / n),
                    T::lit(z / n),
                ]);
            }
        }
    }
}

/// Jittered stratified uniform directions: the sphere is cut into `n`
/// equal-area cells (bands of equal `z` extent times equal longitude sectors)
/// and one uniform sample is drawn inside each cell. Every cell has solid
/// angle `4 pi / n`, so equal-weight quadrature over the set is unbiased.
pub fn stratified_sphere_samples<T: Real>(n: usize, seed: u64) -> Vec<Direction<T>> {
    if n == 0 {
        return Vec::new();
    }
    let target = ((n as f64) / 2.0).sqrt().floor().max(1.0) as usize;
    let bands = (1..=target).rev().find(|d| n % d == 0).unwrap_or(1);
    let sectors = n / bands;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band_h = 2.0 / bands as f64;
    let sector_w = std::f64::consts::TAU / sectors as f64;
    let mut out = Vec::with_capacity(n);
    for b in 0..bands {
        for s in 0..sectors {
            let u: f64 = rand::Rng::random(&mut rng);
            let v: f64 = rand::Rng::random(&mut rng);
            let z = 1.0 - (b as f64 + u) * band_h;
            let phi = (s as f64 + v) * sector_w;
            let r = (1.0 - z * z).max(0.0).sqrt();
            out.push(Direction::from_unit_unchecked([
                T::lit(r * phi.cos()),
                T::lit(r * phi.sin()),
                T::lit(z),
            ]));
        }
    }
    out
}

/// Monte Carlo projection `c_i = (4 pi / n) sum_k f(w_k) y_i(w_k)` over
/// seeded, stratified uniform directions.
pub fn project_function<T: Real, F>(f: F, n_samples: usize, seed: u64) -> Result<ShVector<T>>
where
    F: Fn(&Direction<T>) -> T,
{
    if n_samples == 0 {
        return Err(Error::invalid("project_function needs at least one sample"));
    }
    let mut acc = [0.0f64; SH_COUNT];
    for w in stratified_sphere_samples::<T>(n_samples, seed) {
        let fv = f(&w).as_f64();
        let basis = eval_sh_basis(&w);
        for (a, b) in acc.iter_mut().zip(basis.iter()) {
            *a += fv * b.as_f64();
        }
    }
    let weight = 4.0 * std::f64::consts::PI / n_samples as f64;
    Ok(ShVector(acc.map(|a| T::lit(a * weight))))
}
