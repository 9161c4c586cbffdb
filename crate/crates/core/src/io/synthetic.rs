//! Synthetic OLAT datasets rendered from a known subject.
//!
//! World space is right-handed with +y up. Lights and cameras sit on the upper
//! hemisphere around the origin using a Fibonacci spiral; cameras look at the
//! origin.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::bsh::sym_index;
use crate::error::{Error, Result};
use crate::io::manifest::{
    write_manifest, CameraEntry, FrameEntry, LightEntry, LightKind, OlatManifest, Partition, ALL_ON,
};
use crate::io::pfm::write_pfm;
use crate::math::{self, Vec3};
use crate::raster::{render, Camera};
use crate::real::{logit, Real};
use crate::relight::ComponentMask;
use crate::scene::{layout, LightSource, Primitive, Scene};
use crate::sh::ShVector;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_lights: usize,
    pub n_cams: usize,
    /// Extra lights never used for training; each is rendered from every camera.
    pub n_holdout_lights: usize,
    pub width: usize,
    pub height: usize,
    pub light_radius: f64,
    pub light_intensity: f64,
    pub camera_radius: f64,
    pub fov_y_deg: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_lights: 16,
            n_cams: 8,
            n_holdout_lights: 4,
            width: 64,
            height: 64,
            light_radius: 4.0,
            light_intensity: 16.0,
            camera_radius: 4.0,
            fov_y_deg: 40.0,
        }
    }
}

/// Unit directions on the upper hemisphere (y >= 0.1). `phase` rotates the
/// spiral so that two sets with different phases never share a point.
pub fn hemisphere_points(n: usize, phase: f64) -> Vec<Vec3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let y = 0.1 + 0.9 * (1.0 - (k as f64 + 0.5) / n as f64);
            let r = (1.0 - y * y).sqrt();
            let phi = k as f64 * golden + phase;
            [r * phi.cos(), y, r * phi.sin()]
        })
        .collect()
}

const HOLDOUT_PHASE: f64 = 1.0;

pub fn synthetic_cameras(cfg: &SyntheticConfig) -> Result<Vec<Camera<f64>>> {
    hemisphere_points(cfg.n_cams, 0.0)
        .into_iter()
        .map(|d| {
            Camera::look_at(
                math::scale(d, cfg.camera_radius),
                [0.0; 3],
                [0.0, 1.0, 0.0],
                cfg.fov_y_deg,
                cfg.width,
                cfg.height,
            )
        })
        .collect()
}

fn light_entries(n: usize, phase: f64, prefix: &str, cfg: &SyntheticConfig) -> Vec<LightEntry> {
    hemisphere_points(n, phase)
        .into_iter()
        .enumerate()
        .map(|(k, d)| LightEntry {
            id: format!("{prefix}{k}"),
            kind: LightKind::Point {
                position: math::scale(d, cfg.light_radius),
                intensity: [cfg.light_intensity; 3],
            },
        })
        .collect()
}

/// Renders every training (light, camera) pair, one all-on frame per camera,
/// and every holdout light from every camera. Frames are written as PFM under
/// `out_dir/frames` and the manifest as `out_dir/manifest.json`.
pub fn make_synthetic_dataset(
    gt: &Scene<f64>,
    cfg: &SyntheticConfig,
    out_dir: impl AsRef<Path>,
) -> Result<OlatManifest> {
    let out_dir = out_dir.as_ref();
    if cfg.n_lights == 0 || cfg.n_cams == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one light and one camera"));
    }
    let frames_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let cams = synthetic_cameras(cfg)?;
    let train = light_entries(cfg.n_lights, 0.0, "L", cfg);
    let holdout = light_entries(cfg.n_holdout_lights, HOLDOUT_PHASE, "H", cfg);
    let sources = |entries: &[LightEntry]| -> Result<Vec<LightSource<f64>>> {
        entries.iter().map(|e| e.light()).collect()
    };
    let train_src = sources(&train)?;
    let holdout_src = sources(&holdout)?;

    let mut frames = Vec::new();
    let mut emit = |name: String, cam: usize, light: String, partition: Partition, lights: &[LightSource<f64>]| -> Result<()> {
        let img = render(gt, lights, &cams[cam], ComponentMask::FULL)?;
        let rel = format!("frames/{name}.pfm");
        write_pfm(&img.cast::<f32>(), out_dir.join(&rel))?;
        frames.push(FrameEntry { image: rel, camera: format!("cam{cam}"), light, partition });
        Ok(())
    };
    for (l, entry) in train.iter().enumerate() {
        for c in 0..cams.len() {
            emit(format!("train_{}_cam{c}", entry.id), c, entry.id.clone(), Partition::Train, &train_src[l..=l])?;
        }
    }
    for c in 0..cams.len() {
        emit(format!("allon_cam{c}"), c, ALL_ON.into(), Partition::AllOn, &train_src)?;
    }
    for (l, entry) in holdout.iter().enumerate() {
        for c in 0..cams.len() {
            emit(format!("holdout_{}_cam{c}", entry.id), c, entry.id.clone(), Partition::Holdout, &holdout_src[l..=l])?;
        }
    }
    let manifest = OlatManifest {
        name: "synthetic".into(),
        cameras: cams.iter().enumerate().map(|(c, cam)| CameraEntry::from_camera(format!("cam{c}"), cam)).collect(),
        lights: train.into_iter().chain(holdout).collect(),
        frames,
    };
    write_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// A random subject inside a ball of radius 0.7: positive, energy-conserving
/// appearance with a lobe-shaped transfer per primitive.
pub fn random_subject(n: usize, seed: u64) -> Scene<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..n)
        .map(|_| {
            let mut p = Primitive::<f64>::default();
            let pos = loop {
                let v: Vec3<f64> = std::array::from_fn(|_| uniform(&mut rng, -1.0, 1.0));
                if math::dot(v, v) <= 1.0 {
                    break math::scale(v, 0.7);
                }
            };
            p.position = pos;
            let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            p.rotation = math::normalize_quat(q);
            p.log_scale = std::array::from_fn(|_| uniform(&mut rng, 0.12, 0.25).ln());
            p.opacity_logit = logit(uniform(&mut rng, 0.3, 0.6));
            p.albedo_logit = std::array::from_fn(|_| logit(uniform(&mut rng, 0.2, 0.8)));
            let mut t_dir = ShVector::constant(uniform(&mut rng, 0.6, 1.0));
            for k in 1..4 {
                t_dir.0[k] = uniform(&mut rng, -0.1, 0.1);
            }
            p.t_dir = t_dir;
            p.t_ind = std::array::from_fn(|_| ShVector::constant(uniform(&mut rng, 0.05, 0.15)));
            let g = uniform(&mut rng, 0.0, 0.5);
            for ch in 0..3 {
                let k = uniform(&mut rng, 0.3, 0.9);
                for l in 0..5usize {
                    for i in l * l..(l + 1) * (l + 1) {
                        p.s.coeffs[ch][sym_index(i, i).expect("in range")] = k * g.powi(l as i32);
                    }
                }
            }
            p
        })
        .collect();
    Scene::new(prims)
}

/// Adds independent Gaussian noise of standard deviation `sigma` to every
/// appearance parameter (albedo, transfer and BSH coefficients). Geometry and
/// opacity are left untouched.
pub fn perturb_appearance<T: Real>(scene: &Scene<T>, sigma: f64, seed: u64) -> Result<Scene<T>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    for p in &mut out.primitives {
        for i in layout::ALBEDO.start..crate::scene::PARAMS_PER_PRIMITIVE {
            let v = p.param(i) + T::lit(normal.sample(&mut rng));
            p.set_param(i, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::manifest::OlatDataset;

    fn tiny() -> SyntheticConfig {
        SyntheticConfig { n_lights: 2, n_cams: 2, n_holdout_lights: 0, width: 8, height: 8, ..Default::default() }
    }

    #[test]
    fn two_by_two_counts() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_synthetic_dataset(&random_subject(5, 1), &tiny(), dir.path()).unwrap();
        let count = |p| m.frames.iter().filter(|f| f.partition == p).count();
        assert_eq!(count(Partition::Train), 4);
        assert_eq!(count(Partition::AllOn), 2);
        assert_eq!(count(Partition::Holdout), 0);
        let ds = OlatDataset::<f64>::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(ds.frames.len(), 6);
    }

    #[test]
    fn holdout_lights_are_disjoint() {
        let train = hemisphere_points(16, 0.0);
        let hold = hemisphere_points(4, HOLDOUT_PHASE);
        for h in &hold {
            for t in &train {
                assert!(math::norm(math::sub(*h, *t)) > 1e-3);
            }
        }
        assert!(train.iter().chain(&hold).all(|p| p[1] > 0.0));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = SyntheticConfig { n_holdout_lights: 1, ..tiny() };
        let ma = make_synthetic_dataset(&random_subject(5, 3), &cfg, a.path()).unwrap();
        let mb = make_synthetic_dataset(&random_subject(5, 3), &cfg, b.path()).unwrap();
        assert_eq!(ma, mb);
        for f in &ma.frames {
            let x = std::fs::read(a.path().join(&f.image)).unwrap();
            let y = std::fs::read(b.path().join(&f.image)).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn subject_is_visible_and_positive() {
        let gt = random_subject(50, 7);
        let cfg = SyntheticConfig { width: 16, height: 16, ..Default::default() };
        let cam = &synthetic_cameras(&cfg).unwrap()[0];
        let light = LightEntry {
            id: "x".into(),
            kind: LightKind::Point { position: [0.0, 4.0, 0.0], intensity: [16.0; 3] },
        }
        .light()
        .unwrap();
        let img = render(&gt, &[light], cam, ComponentMask::FULL).unwrap();
        let max = img.data.iter().cloned().fold(0.0, f64::max);
        assert!(max > 0.05, "subject too dark: {max}");
    }

    #[test]
    fn perturbation_leaves_geometry() {
        let gt = random_subject(3, 2);
        let p = perturb_appearance(&gt, 0.1, 9).unwrap();
        for (a, b) in gt.primitives.iter().zip(&p.primitives) {
            for i in 0..layout::ALBEDO.start {
                assert_eq!(a.param(i), b.param(i));
            }
            assert_ne!(a.s, b.s);
        }
    }
}
