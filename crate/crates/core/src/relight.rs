//! Per-primitive relighting: turns intrinsic components plus light samples
//! into view-dependent SH color coefficients for the rasterizer.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rayon::prelude::*;

use crate::bsh::partial_eval_packed;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{LightSample, LightSource, PreparedLight, Primitive, Scene};
use crate::sh::{dc_weight, dot_basis, eval_sh_basis, eval_sh_function, Direction, ShVector, SH_COUNT};

/// SH coefficients of a primitive's outgoing radiance, one vector per channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelitColor<T> {
    pub sh: [ShVector<T>; 3],
}

impl<T: Real> Default for RelitColor<T> {
    fn default() -> Self {
        RelitColor { sh: [ShVector::zeros(); 3] }
    }
}

impl<T: Real> RelitColor<T> {
    pub fn eval(&self, wo: &Direction<T>) -> [T; 3] {
        let basis = eval_sh_basis(wo);
        self.sh.map(|c| dot_basis(&c, &basis))
    }

    pub fn is_finite(&self) -> bool {
        self.sh.iter().all(ShVector::is_finite)
    }
}

/// Selects which additive terms of the radiance sum are rendered.
///
/// The full radiance is `T_dir (rho + s) L + T_ind L`. The three independent
/// terms are diffuse (`T_dir rho L`), directional (`T_dir s L`) and indirect
/// (`T_ind L`); "direct" is the union of the first two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ComponentMask {
    diffuse: bool,
    directional: bool,
    indirect: bool,
}

impl ComponentMask {
    pub const FULL: ComponentMask = ComponentMask { diffuse: true, directional: true, indirect: true };
    pub const DIFFUSE: ComponentMask = ComponentMask { diffuse: true, directional: false, indirect: false };
    pub const DIRECTIONAL: ComponentMask = ComponentMask { diffuse: false, directional: true, indirect: false };
    pub const DIRECT: ComponentMask = ComponentMask { diffuse: true, directional: true, indirect: false };
    pub const INDIRECT: ComponentMask = ComponentMask { diffuse: false, directional: false, indirect: true };

    pub fn new(diffuse: bool, directional: bool, indirect: bool) -> Result<Self> {
        if !(diffuse || directional || indirect) {
            return Err(Error::invalid("component mask must enable at least one component"));
        }
        Ok(ComponentMask { diffuse, directional, indirect })
    }

    pub fn diffuse(&self) -> bool {
        self.diffuse
    }

    pub fn directional(&self) -> bool {
        self.directional
    }

    pub fn indirect(&self) -> bool {
        self.indirect
    }

    /// Parses `full`, `direct`, or a `+`/`,` separated list of `diffuse`,
    /// `directional`, `indirect`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = ComponentMask { diffuse: false, directional: false, indirect: false };
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "full" | "all" => mask = ComponentMask::FULL,
                "direct" => {
                    mask.diffuse = true;
                    mask.directional = true;
                }
                "diffuse" => mask.diffuse = true,
                "directional" => mask.directional = true,
                "indirect" => mask.indirect = true,
                other => return Err(Error::invalid(format!("unknown component {other:?}"))),
            }
        }
        ComponentMask::new(mask.diffuse, mask.directional, mask.indirect)
    }

    pub fn name(&self) -> String {
        match (self.diffuse, self.directional, self.indirect) {
            (true, true, true) => "full".into(),
            (true, true, false) => "direct".into(),
            _ => {
                let mut parts = Vec::new();
                if self.diffuse {
                    parts.push("diffuse");
                }
                if self.directional {
                    parts.push("directional");
                }
                if self.indirect {
                    parts.push("indirect");
                }
                parts.join("+")
            }
        }
    }
}

impl Default for ComponentMask {
    fn default() -> Self {
        ComponentMask::FULL
    }
}

/// Clamps at zero; at exactly zero the value (and its gradient) passes.
#[inline]
pub(crate) fn relu_pass<T: Real>(v: T) -> (T, bool) {
    if v >= T::zero() {
        (v, true)
    } else {
        (T::zero(), false)
    }
}

/// Radiance SH for one primitive lit by `samples`.
pub fn relight_primitive<T: Real>(
    prim: &Primitive<T>,
    samples: &[LightSample<T>],
    mask: ComponentMask,
) -> RelitColor<T> {
    relight_with_mask(prim, samples, mask)
}

pub(crate) fn relight_with_mask<T: Real>(
    prim: &Primitive<T>,
    samples: &[LightSample<T>],
    mask: ComponentMask,
) -> RelitColor<T> {
    let albedo = prim.albedo();
    let w = dc_weight::<T>();
    let mut dc = [T::zero(); 3];
    // Light-weighted incoming basis per channel; partial evaluation is linear
    // in the basis vector, so one pass over the packed matrix suffices.
    let mut weighted = [[T::zero(); SH_COUNT]; 3];
    let mut any_directional = false;

    for sample in samples {
        let basis = eval_sh_basis(&sample.wi);
        let (a, _) = relu_pass(dot_basis(&prim.t_dir, &basis));
        for ch in 0..3 {
            let l = sample.radiance[ch];
            if l == T::zero() {
                continue;
            }
            let mut scalar = T::zero();
            if mask.diffuse {
                scalar += a * albedo[ch];
            }
            if mask.indirect {
                let (b, _) = relu_pass(dot_basis(&prim.t_ind[ch], &basis));
                scalar += b;
            }
            dc[ch] += scalar * l;
            if mask.directional && a != T::zero() {
                let al = a * l;
                for (acc, &y) in weighted[ch].iter_mut().zip(basis.iter()) {
                    *acc += al * y;
                }
                any_directional = true;
            }
        }
    }

    let mut out = RelitColor::default();
    if any_directional {
        for ch in 0..3 {
            out.sh[ch] = partial_eval_channel_of(prim, ch, &weighted[ch]);
        }
    }
    for ch in 0..3 {
        out.sh[ch].0[0] += w * dc[ch];
    }
    out
}

#[inline]
fn partial_eval_channel_of<T: Real>(prim: &Primitive<T>, ch: usize, basis: &[T; SH_COUNT]) -> ShVector<T> {
    partial_eval_packed(&prim.s.coeffs[ch], basis)
}

/// Relights every primitive under `lights`.
pub fn relight_scene<T: Real>(
    scene: &Scene<T>,
    lights: &[LightSource<T>],
    mask: ComponentMask,
) -> Result<Vec<RelitColor<T>>> {
    let prepared: Vec<PreparedLight<T>> = lights.iter().map(PreparedLight::new).collect();
    relight_prepared(scene, &prepared, mask)
}

pub(crate) fn relight_prepared<T: Real>(
    scene: &Scene<T>,
    prepared: &[PreparedLight<T>],
    mask: ComponentMask,
) -> Result<Vec<RelitColor<T>>> {
    scene
        .primitives
        .par_iter()
        .map_init(Vec::new, |samples, prim| {
            samples.clear();
            for light in prepared {
                light.samples_at(prim.position, samples)?;
            }
            Ok(relight_with_mask(prim, samples, mask))
        })
        .collect()
}

/// Fingerprint of a lighting state (lights plus component mask).
pub fn lighting_fingerprint<T: Real>(lights: &[LightSource<T>], mask: ComponentMask) -> u64 {
    let mut h = DefaultHasher::new();
    mask.hash(&mut h);
    lights.len().hash(&mut h);
    let bits = |v: T, h: &mut DefaultHasher| v.as_f64().to_bits().hash(h);
    for light in lights {
        match light {
            LightSource::Directional { dir, radiance } => {
                0u8.hash(&mut h);
                dir.as_array().iter().chain(radiance.iter()).for_each(|&v| bits(v, &mut h));
            }
            LightSource::Point { position, intensity } => {
                1u8.hash(&mut h);
                position.iter().chain(intensity.iter()).for_each(|&v| bits(v, &mut h));
            }
            LightSource::Environment { map, sample_count } => {
                2u8.hash(&mut h);
                sample_count.hash(&mut h);
                (map.width, map.height).hash(&mut h);
                map.data.iter().for_each(|&v| bits(v, &mut h));
            }
        }
    }
    h.finish()
}

/// Memoizes the relit colors of one scene snapshot, keyed by the lighting
/// fingerprint. A cache must only ever be used with a single scene.
pub struct RelightCache<T> {
    entry: Mutex<Option<(u64, Arc<Vec<RelitColor<T>>>)>>,
    evaluations: AtomicU64,
}

impl<T: Real> Default for RelightCache<T> {
    fn default() -> Self {
        RelightCache { entry: Mutex::new(None), evaluations: AtomicU64::new(0) }
    }
}

impl<T: Real> RelightCache<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of times relighting was actually computed.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn relight(
        &self,
        scene: &Scene<T>,
        lights: &[LightSource<T>],
        mask: ComponentMask,
    ) -> Result<Arc<Vec<RelitColor<T>>>> {
        let key = lighting_fingerprint(lights, mask);
        // Holding the lock while computing serializes writers, so concurrent
        // requests for the same state do the work once.
        let mut entry = self.entry.lock();
        if let Some((k, colors)) = entry.as_ref() {
            if *k == key {
                return Ok(colors.clone());
            }
        }
        let colors = Arc::new(relight_scene(scene, lights, mask)?);
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        *entry = Some((key, colors.clone()));
        Ok(colors)
    }
}

/// Pointwise evaluation of the radiance sum at `wo`, without SH folding.
/// Used as an independent check on [`relight_primitive`].
pub fn radiance_direct<T: Real>(
    prim: &Primitive<T>,
    samples: &[LightSample<T>],
    mask: ComponentMask,
    wo: &Direction<T>,
) -> [T; 3] {
    let albedo = prim.albedo();
    let mut out = [T::zero(); 3];
    for sample in samples {
        let a = eval_sh_function(&prim.t_dir, &sample.wi).max(T::zero());
        let s = prim.s.eval(&sample.wi, wo);
        for ch in 0..3 {
            let b = eval_sh_function(&prim.t_ind[ch], &sample.wi).max(T::zero());
            let mut v = T::zero();
            if mask.diffuse {
                v += a * albedo[ch];
            }
            if mask.directional {
                v += a * s[ch];
            }
            if mask.indirect {
                v += b;
            }
            out[ch] += v * sample.radiance[ch];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsh::BSH_PACKED;
    use crate::sh::SphereSampler;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_prim(rng: &mut ChaCha8Rng) -> Primitive<f64> {
        let mut p = Primitive::default();
        p.albedo_logit = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        p.t_dir = ShVector(std::array::from_fn(|_| rng.random_range(-0.5..0.5)));
        p.t_dir.0[0] = 2.0;
        for ch in 0..3 {
            p.t_ind[ch] = ShVector(std::array::from_fn(|_| rng.random_range(-0.5..0.5)));
            for k in 0..BSH_PACKED {
                p.s.coeffs[ch][k] = rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    fn random_samples(rng: &mut ChaCha8Rng, smp: &mut SphereSampler, n: usize) -> Vec<LightSample<f64>> {
        (0..n)
            .map(|_| LightSample { wi: smp.sample(), radiance: std::array::from_fn(|_| rng.random_range(0.0..3.0)) })
            .collect()
    }

    #[test]
    fn zero_radiance_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_prim(&mut rng);
        let d = Direction::new(0.0, 1.0, 0.0).unwrap();
        let out = relight_primitive(&p, &[LightSample { wi: d, radiance: [0.0; 3] }], ComponentMask::FULL);
        assert_eq!(out, RelitColor::default());
        assert_eq!(relight_primitive(&p, &[], ComponentMask::FULL), RelitColor::default());
    }

    #[test]
    fn doubling_radiance_doubles_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut smp = SphereSampler::new(3);
        let p = random_prim(&mut rng);
        let one = random_samples(&mut rng, &mut smp, 1);
        let two: Vec<_> = one.iter().map(|s| LightSample { wi: s.wi, radiance: s.radiance.map(|v| v * 2.0) }).collect();
        let a = relight_primitive(&p, &one, ComponentMask::FULL);
        let b = relight_primitive(&p, &two, ComponentMask::FULL);
        for ch in 0..3 {
            for k in 0..SH_COUNT {
                assert_eq!(b.sh[ch].0[k], 2.0 * a.sh[ch].0[k]);
            }
        }
    }

    #[test]
    fn lights_are_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut smp = SphereSampler::new(5);
        for _ in 0..20 {
            let p = random_prim(&mut rng);
            let a = random_samples(&mut rng, &mut smp, 2);
            let b = random_samples(&mut rng, &mut smp, 3);
            let both: Vec<_> = a.iter().chain(b.iter()).copied().collect();
            let (ra, rb, rab) = (
                relight_primitive(&p, &a, ComponentMask::FULL),
                relight_primitive(&p, &b, ComponentMask::FULL),
                relight_primitive(&p, &both, ComponentMask::FULL),
            );
            for ch in 0..3 {
                for k in 0..SH_COUNT {
                    let sum = ra.sh[ch].0[k] + rb.sh[ch].0[k];
                    assert!((rab.sh[ch].0[k] - sum).abs() <= 1e-9 * sum.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn diffuse_only_reduces_to_albedo() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = random_prim(&mut rng);
        p.t_dir = ShVector::constant(1.0);
        let d = Direction::new(0.3, -0.2, 0.9).unwrap();
        let out = relight_primitive(&p, &[LightSample { wi: d, radiance: [1.0; 3] }], ComponentMask::DIFFUSE);
        let mut smp = SphereSampler::new(7);
        let rho = p.albedo();
        for _ in 0..20 {
            let wo = smp.sample();
            let c = out.eval(&wo);
            for ch in 0..3 {
                assert!((c[ch] - rho[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sh_folding_matches_pointwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut smp = SphereSampler::new(9);
        for mask in [ComponentMask::FULL, ComponentMask::DIFFUSE, ComponentMask::DIRECTIONAL, ComponentMask::INDIRECT] {
            let p = random_prim(&mut rng);
            let samples = random_samples(&mut rng, &mut smp, 4);
            let out = relight_primitive(&p, &samples, mask);
            for _ in 0..10 {
                let wo = smp.sample();
                let got = out.eval(&wo);
                let want = radiance_direct(&p, &samples, mask, &wo);
                for ch in 0..3 {
                    assert!((got[ch] - want[ch]).abs() < 1e-9 * want[ch].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn components_superpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut smp = SphereSampler::new(11);
        let p = random_prim(&mut rng);
        let samples = random_samples(&mut rng, &mut smp, 3);
        let full = relight_primitive(&p, &samples, ComponentMask::FULL);
        let parts = [ComponentMask::DIFFUSE, ComponentMask::DIRECTIONAL, ComponentMask::INDIRECT]
            .map(|m| relight_primitive(&p, &samples, m));
        let direct = relight_primitive(&p, &samples, ComponentMask::DIRECT);
        for ch in 0..3 {
            for k in 0..SH_COUNT {
                let sum: f64 = parts.iter().map(|r| r.sh[ch].0[k]).sum();
                assert!((full.sh[ch].0[k] - sum).abs() < 1e-12);
                let d = parts[0].sh[ch].0[k] + parts[1].sh[ch].0[k];
                assert!((direct.sh[ch].0[k] - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_parsing() {
        assert_eq!(ComponentMask::parse("full").unwrap(), ComponentMask::FULL);
        assert_eq!(ComponentMask::parse("direct").unwrap(), ComponentMask::DIRECT);
        assert_eq!(ComponentMask::parse("diffuse+indirect").unwrap(), ComponentMask::new(true, false, true).unwrap());
        assert!(ComponentMask::parse("").is_err());
        assert!(ComponentMask::parse("specular").is_err());
        assert!(ComponentMask::new(false, false, false).is_err());
        for m in [ComponentMask::FULL, ComponentMask::DIRECT, ComponentMask::INDIRECT, ComponentMask::DIRECTIONAL] {
            assert_eq!(ComponentMask::parse(&m.name()).unwrap(), m);
        }
    }

    #[test]
    fn cache_reuses_identical_lighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let scene = Scene::new((0..4).map(|_| random_prim(&mut rng)).collect());
        let d = Direction::new(0.0, 0.0, 1.0).unwrap();
        let lights = vec![LightSource::directional(d, [1.0; 3]).unwrap()];
        let cache = RelightCache::new();
        let a = cache.relight(&scene, &lights, ComponentMask::FULL).unwrap();
        let b = cache.relight(&scene, &lights, ComponentMask::FULL).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.evaluations(), 1);
        cache.relight(&scene, &lights, ComponentMask::DIFFUSE).unwrap();
        assert_eq!(cache.evaluations(), 2);
        let empty = cache.relight(&scene, &[], ComponentMask::FULL).unwrap();
        assert!(empty.iter().all(|c| *c == RelitColor::default()));
    }
}
