use super::*;
use crate::image::HdrImage;
use crate::io::manifest::Frame;
use crate::raster::Camera;
use crate::real::logit;
use crate::scene::{LightSource, Primitive, PARAMS_PER_PRIMITIVE};
use crate::sh::ShVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_scene(n: usize, seed: u64) -> Scene<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let prims = (0..n)
        .map(|_| {
            let mut p = Primitive::<f64>::default();
            p.position = [u(-0.3, 0.3), u(-0.3, 0.3), u(-0.3, 0.3)];
            p.rotation = crate::math::normalize_quat([u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)]);
            p.log_scale = [u(0.6, 0.9).ln(), u(0.6, 0.9).ln(), u(0.6, 0.9).ln()];
            p.opacity_logit = logit(u(0.35, 0.6));
            p.albedo_logit = [u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)];
            p.t_dir = ShVector::constant(u(0.6, 1.0));
            for k in 1..crate::sh::SH_COUNT {
                p.t_dir.0[k] = u(-0.05, 0.05);
            }
            for ch in 0..3 {
                p.t_ind[ch] = ShVector::constant(u(-0.3, 0.3));
                for k in 1..crate::sh::SH_COUNT {
                    p.t_ind[ch].0[k] = u(-0.05, 0.05);
                }
                for k in 0..crate::bsh::BSH_PACKED {
                    p.s.coeffs[ch][k] = u(-0.1, 0.1);
                }
                p.s.set(ch, 0, 0, u(0.5, 3.0));
            }
            p
        })
        .collect();
    Scene::new(prims)
}

fn small_frame(seed: u64) -> Frame<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = Camera::look_at([0.3, 0.4, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 8, 8).unwrap();
    let data = (0..8 * 8 * 3).map(|_| 0.2 + 1.3 * rng.random::<f64>()).collect();
    Frame {
        camera,
        camera_id: "cam0".into(),
        lights: vec![LightSource::point([1.0, 3.0, 2.0], [12.0, 10.0, 8.0]).unwrap()],
        light_id: "L0".into(),
        partition: Partition::Train,
        image: HdrImage::from_data(8, 8, data).unwrap(),
    }
}

fn fd_config() -> TrainingConfig {
    TrainingConfig { iterations: 10, seed: 5, lambda_dssim: 0.2, lambda_s: 0.5, lambda_plus: 1.0, ..Default::default() }
}

#[test]
fn finite_difference_sweep() {
    let scene = small_scene(3, 1);
    let frame = small_frame(2);
    let config = fd_config();
    let step = 9;
    assert!(config.t_ind_active(step));
    let (loss, grads) = backward(&scene, &[&frame], &config, step).unwrap();
    assert!(loss.l_s > 0.0 && loss.l_plus > 0.0 && loss.dssim > 0.0);
    let h = 1e-4;
    let mut worst = (0.0f64, 0usize, 0usize);
    for i in 0..scene.len() {
        for idx in layout::TRAINABLE_START..PARAMS_PER_PRIMITIVE {
            let eval = |delta: f64| {
                let mut s = scene.clone();
                let v = s.primitives[i].param(idx);
                s.primitives[i].set_param(idx, v + delta);
                backward(&s, &[&frame], &config, step).unwrap().0.total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grads.get(i, idx);
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, i, idx);
            }
        }
    }
    assert!(worst.0 < 1e-4, "worst relative error {:.3e} at primitive {} param {}", worst.0, worst.1, worst.2);
}

#[test]
fn inactive_indirect_has_zero_gradient() {
    let scene = small_scene(3, 1);
    let frame = small_frame(2);
    let config = fd_config();
    assert!(!config.t_ind_active(0));
    let (_, grads) = backward(&scene, &[&frame], &config, 0).unwrap();
    for i in 0..3 {
        for idx in layout::T_IND {
            assert_eq!(grads.get(i, idx), 0.0);
        }
    }
}

fn tiny_dataset() -> OlatDataset<f64> {
    let mut frames = vec![small_frame(2), small_frame(3)];
    let mut hold = small_frame(4);
    hold.partition = Partition::Holdout;
    frames.push(hold);
    frames[1].lights = vec![LightSource::point([-2.0, 3.0, 1.0], [10.0; 3]).unwrap()];
    OlatDataset { name: "tiny".into(), frames }
}

#[test]
fn zero_iterations_returns_init() {
    let init = small_scene(2, 3);
    let config = TrainingConfig { iterations: 0, ..Default::default() };
    let out = train(&tiny_dataset(), &init, &config, |_, _| {}).unwrap();
    assert_eq!(out.scene, init);
    assert!(out.metrics.is_empty());
}

#[test]
fn empty_dataset_is_rejected() {
    let mut ds = tiny_dataset();
    ds.frames.retain(|f| f.partition != Partition::Train);
    let err = train(&ds, &small_scene(2, 3), &TrainingConfig::default(), |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)));
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let mut ds = tiny_dataset();
    for f in &mut ds.frames {
        f.image.data[0] = f64::NAN;
    }
    let config = TrainingConfig { iterations: 3, ..Default::default() };
    match train(&ds, &small_scene(2, 3), &config, |_, _| {}) {
        Err(Error::NonFiniteLoss { step, .. }) => assert_eq!(step, 0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn fixed_seed_is_deterministic() {
    let config = TrainingConfig { iterations: 12, eval_interval: 5, seed: 17, ..Default::default() };
    let run = || train(&tiny_dataset(), &small_scene(3, 3), &config, |_, _| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.scene, b.scene);
    let strip = |m: &[StepMetrics]| {
        m.iter().map(|r| StepMetrics { wall_ms: 0.0, ..r.clone() }).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.metrics), strip(&b.metrics));
    assert!(a.metrics[4].holdout_psnr.is_some());
    assert!(a.metrics[5].holdout_psnr.is_none());
    assert!(a.metrics[11].holdout_psnr.is_some());
}

#[test]
fn late_activation_keeps_indirect_frozen() {
    let config = TrainingConfig { iterations: 10, t_ind_activation_fraction: 0.3, ..Default::default() };
    let init = small_scene(3, 3);
    let mut changed_at = None;
    train(&tiny_dataset(), &init, &config, |m, scene| {
        let same = scene.primitives.iter().zip(&init.primitives).all(|(a, b)| a.t_ind == b.t_ind);
        if !same && changed_at.is_none() {
            changed_at = Some(m.step);
        }
        if m.step < 7 {
            assert!(same, "indirect transfer moved at step {}", m.step);
        }
    })
    .unwrap();
    assert_eq!(changed_at, Some(7));
}

#[test]
fn config_validation() {
    assert!(TrainingConfig::default().validate().is_ok());
    assert!(TrainingConfig { lambda_s: -1.0, ..Default::default() }.validate().is_err());
    assert!(TrainingConfig { t_ind_activation_fraction: 1.5, ..Default::default() }.validate().is_err());
    assert!(TrainingConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    let c = TrainingConfig { iterations: 100, t_ind_activation_fraction: 0.3, ..Default::default() };
    assert!(!c.t_ind_active(69));
    assert!(c.t_ind_active(70));
}

#[test]
fn training_reduces_loss() {
    let config = TrainingConfig { iterations: 60, learning_rate: 0.01, ..Default::default() };
    let out = train(&tiny_dataset(), &small_scene(3, 3), &config, |_, _| {}).unwrap();
    let head: f64 = out.metrics[..10].iter().map(|m| m.l1).sum();
    let tail: f64 = out.metrics[50..].iter().map(|m| m.l1).sum();
    assert!(tail < head, "{tail} !< {head}");
}
