//! Fitting appearance parameters to OLAT images.
//!
//! The objective is `L_rec + lambda_s * L_s + lambda_plus * L_plus` where
//! `L_rec` compares tone-mapped renderings with the references (L1 plus
//! D-SSIM), `L_s` penalizes transfer functions that reflect more energy than
//! they receive, and `L_plus` penalizes negative transfer values. Geometry is
//! frozen; opacity, albedo, both transfer functions and the BSH coefficients
//! are optimized with Adam. The indirect transfer joins late in training.

mod backward;
pub mod loss;

use std::time::Instant;

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backward::GradientSet;
pub use loss::{loss_plus, loss_rec, loss_rec_with_grad, loss_s, psnr, ssim, tone_map, tone_map_image, tone_map_ldr, RecLoss};

use crate::error::{Error, Result};
use crate::io::manifest::{Frame, OlatDataset, Partition};
use crate::raster::{render, DEFAULT_TILE_SIZE};
use crate::real::Real;
use crate::relight::ComponentMask;
use crate::scene::{layout, Scene, TRAINABLE_PER_PRIMITIVE};
use crate::sh::{eval_sh_basis, SphereSampler};
use backward::{frame_backward, FrameProbe};
use loss::{energy_penalty, grad_slot, negativity_penalty};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub lambda_dssim: f64,
    pub lambda_s: f64,
    pub lambda_plus: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Fraction of the run, counted from the end, during which the indirect
    /// transfer is rendered and optimized.
    pub t_ind_activation_fraction: f64,
    pub seed: u64,
    /// Training images per step.
    pub batch_size: usize,
    /// Held-out PSNR is measured every this many steps and at the last step; 0 disables.
    pub eval_interval: usize,
    pub tile_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda_dssim: 0.2,
            lambda_s: 0.01,
            lambda_plus: 1.0,
            learning_rate: 0.002,
            iterations: 2000,
            t_ind_activation_fraction: 0.3,
            seed: 0,
            batch_size: 4,
            eval_interval: 500,
            tile_size: DEFAULT_TILE_SIZE,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dssim", self.lambda_dssim),
            ("lambda_s", self.lambda_s),
            ("lambda_plus", self.lambda_plus),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.t_ind_activation_fraction) {
            return Err(Error::invalid("t_ind_activation_fraction must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.tile_size == 0 {
            return Err(Error::invalid("tile_size must be at least 1"));
        }
        Ok(())
    }

    /// Whether the indirect transfer is rendered and optimized at `step`.
    pub fn t_ind_active(&self, step: usize) -> bool {
        step as f64 >= (1.0 - self.t_ind_activation_fraction) * self.iterations as f64
    }

    pub fn mask_at(&self, step: usize) -> ComponentMask {
        if self.t_ind_active(step) {
            ComponentMask::FULL
        } else {
            ComponentMask::DIRECT
        }
    }
}

/// Loss terms of one step, each unweighted, plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T> {
    pub l1: T,
    pub dssim: T,
    pub l_s: T,
    pub l_plus: T,
    pub total: T,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub l_s: f64,
    pub l_plus: f64,
    pub holdout_psnr: Option<f64>,
    pub wall_ms: f64,
}

/// Random streams for `step`, independent of how many steps ran before:
/// stream 0 picks the batch, stream 1 the regularizer directions.
fn step_sampler(seed: u64, step: usize, stream: u64) -> SphereSampler {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * step as u64 + stream);
    SphereSampler::from_rng(rng)
}

/// Loss and exact gradient for one step over `frames`. The random regularizer
/// pairs, one per primitive, are drawn from the stream for `(config.seed, step)`.
pub fn backward<T: Real>(
    scene: &Scene<T>,
    frames: &[&Frame<T>],
    config: &TrainingConfig,
    step: usize,
) -> Result<(LossBreakdown<T>, GradientSet<T>)> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset("no frames in batch".into()));
    }
    let mask = config.mask_at(step);
    let n = scene.len();
    let mut grads = GradientSet::zeros(n);
    let scale = T::lit(1.0 / frames.len() as f64);
    let mut l1 = T::zero();
    let mut dssim = T::zero();
    let mut probes: Vec<FrameProbe<T>> = Vec::with_capacity(frames.len());
    for frame in frames {
        let (rec, probe) = frame_backward(
            scene,
            &frame.lights,
            &frame.camera,
            &frame.image,
            mask,
            T::lit(config.lambda_dssim),
            scale,
            config.tile_size,
            &mut grads,
        )?;
        l1 += rec.l1 * scale;
        dssim += rec.dssim * scale;
        probes.push(probe);
    }

    let (mut l_s, mut l_plus) = (T::zero(), T::zero());
    if n > 0 {
        let inv_n = T::lit(1.0 / n as f64);
        let s_scale = T::lit(config.lambda_s) * inv_n;
        let p_scale = T::lit(config.lambda_plus) * inv_n;
        // An independent random pair per primitive.
        let mut sampler = step_sampler(config.seed, step, 1);
        let pairs: Vec<_> = (0..n)
            .map(|_| {
                let wi = sampler.sample::<T>();
                let wo = sampler.sample::<T>();
                (eval_sh_basis(&wi), eval_sh_basis(&wo))
            })
            .collect();
        let per_prim: Vec<(T, T)> = grads
            .chunks_mut()
            .zip(scene.primitives.par_iter())
            .zip(pairs.par_iter())
            .enumerate()
            .map(|(i, ((out, prim), (rand_wi, rand_wo)))| {
                let mut ls = energy_penalty(prim, rand_wi, s_scale, Some(&mut *out));
                let mut lp = negativity_penalty(prim, rand_wi, rand_wo, p_scale, Some(&mut *out));
                for probe in &probes {
                    if let Some(wi) = &probe.wi[i] {
                        let b = eval_sh_basis(wi);
                        ls += energy_penalty(prim, &b, s_scale, Some(&mut *out));
                        if let Some(view) = &probe.view[i] {
                            let v = eval_sh_basis(view);
                            lp += negativity_penalty(prim, &b, &v, p_scale, Some(&mut *out));
                        }
                    }
                }
                (ls, lp)
            })
            .collect();
        for (ls, lp) in per_prim {
            l_s += ls;
            l_plus += lp;
        }
        l_s *= inv_n;
        l_plus *= inv_n;
    }
    if !config.t_ind_active(step) {
        grads.zero_field(layout::T_IND);
    }
    let total = l1
        + T::lit(config.lambda_dssim) * dssim
        + T::lit(config.lambda_s) * l_s
        + T::lit(config.lambda_plus) * l_plus;
    let loss = LossBreakdown { l1, dssim, l_s, l_plus, total };
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("l1={l1} dssim={dssim} l_s={l_s} l_plus={l_plus}"),
        });
    }
    grads.check_finite()?;
    Ok((loss, grads))
}

/// Adam with separate step counters for the always-on parameters and for the
/// late-activated indirect transfer.
struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    steps_main: i32,
    steps_ind: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Real> Adam<T> {
    fn new(primitives: usize) -> Self {
        let len = primitives * TRAINABLE_PER_PRIMITIVE;
        Adam { m: vec![T::zero(); len], v: vec![T::zero(); len], steps_main: 0, steps_ind: 0 }
    }

    fn step(&mut self, scene: &mut Scene<T>, grads: &GradientSet<T>, lr: f64, t_ind_active: bool) {
        self.steps_main += 1;
        if t_ind_active {
            self.steps_ind += 1;
        }
        let corr = |t: i32| {
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            (T::lit(lr / c1), T::lit(c2))
        };
        let main = corr(self.steps_main);
        let ind = corr(self.steps_ind.max(1));
        let ind_range = grad_slot(layout::T_IND.start)..grad_slot(layout::T_IND.end);
        let (b1, b2, eps) = (T::lit(BETA1), T::lit(BETA2), T::lit(ADAM_EPS));
        scene
            .primitives
            .par_iter_mut()
            .zip(self.m.par_chunks_mut(TRAINABLE_PER_PRIMITIVE))
            .zip(self.v.par_chunks_mut(TRAINABLE_PER_PRIMITIVE))
            .zip(grads.as_slice().par_chunks(TRAINABLE_PER_PRIMITIVE))
            .for_each(|(((prim, m), v), g)| {
                for k in 0..TRAINABLE_PER_PRIMITIVE {
                    let is_ind = ind_range.contains(&k);
                    if is_ind && !t_ind_active {
                        continue;
                    }
                    let (step_size, c2) = if is_ind { ind } else { main };
                    m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                    v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                    let update = step_size * m[k] / ((v[k] / c2).sqrt() + eps);
                    let idx = k + layout::TRAINABLE_START;
                    prim.set_param(idx, prim.param(idx) - update);
                }
            });
    }
}

/// Fitted scene and the per-step log.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub scene: Scene<T>,
    pub metrics: Vec<StepMetrics>,
}

/// Mean PSNR of the current scene over the holdout partition, or `None`
/// when the dataset has no holdout frames.
pub fn holdout_psnr<T: Real>(scene: &Scene<T>, dataset: &OlatDataset<T>, mask: ComponentMask) -> Result<Option<f64>> {
    let frames: Vec<&Frame<T>> = dataset.partition(Partition::Holdout).collect();
    if frames.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for f in &frames {
        let img = render(scene, &f.lights, &f.camera, mask)?;
        sum += psnr(&img, &f.image)?;
    }
    Ok(Some(sum / frames.len() as f64))
}

/// Runs `config.iterations` Adam steps from `init` on the training partition.
/// `on_step` observes every metrics record together with the updated scene.
pub fn train<T: Real>(
    dataset: &OlatDataset<T>,
    init: &Scene<T>,
    config: &TrainingConfig,
    mut on_step: impl FnMut(&StepMetrics, &Scene<T>),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let train_frames: Vec<&Frame<T>> = dataset.partition(Partition::Train).collect();
    if train_frames.is_empty() {
        return Err(Error::EmptyDataset(format!("dataset {:?} has no training frames", dataset.name)));
    }
    let mut scene = init.clone();
    let mut metrics = Vec::with_capacity(config.iterations);
    let mut adam = Adam::new(scene.len());
    let batch = config.batch_size.min(train_frames.len());
    for step in 0..config.iterations {
        let start = Instant::now();
        let mut sampler = step_sampler(config.seed, step, 0);
        let picks = sample(sampler.rng_mut(), train_frames.len(), batch);
        let frames: Vec<&Frame<T>> = picks.iter().map(|i| train_frames[i]).collect();
        let (loss, grads) = backward(&scene, &frames, config, step)?;
        let active = config.t_ind_active(step);
        adam.step(&mut scene, &grads, config.learning_rate, active);
        let last = step + 1 == config.iterations;
        let eval_now = last || (config.eval_interval > 0 && (step + 1) % config.eval_interval == 0);
        let holdout = if eval_now { holdout_psnr(&scene, dataset, config.mask_at(step))? } else { None };
        let record = StepMetrics {
            step,
            total: loss.total.as_f64(),
            l1: loss.l1.as_f64(),
            dssim: loss.dssim.as_f64(),
            l_s: loss.l_s.as_f64(),
            l_plus: loss.l_plus.as_f64(),
            holdout_psnr: holdout,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_step(&record, &scene);
        metrics.push(record);
    }
    Ok(TrainOutcome { scene, metrics })
}

#[cfg(test)]
mod tests;
