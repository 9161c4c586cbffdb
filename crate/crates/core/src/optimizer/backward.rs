//! Reverse-mode gradients through compositing, view-dependent evaluation and
//! relighting.

use rayon::prelude::*;

use crate::bsh::{partial_eval_packed, BSH_PACKED};
use crate::error::{Error, Result};
use crate::image::HdrImage;
use crate::optimizer::loss::{grad_slot, loss_rec_with_grad, RecLoss};
use crate::raster::{bin_tiles, composite_pixel, composite_tiles, prepare_splats, project_scene, Camera, Contribution};
use crate::real::Real;
use crate::relight::{relight_with_mask, relu_pass, ComponentMask};
use crate::scene::{field_name, layout, LightSample, LightSource, PreparedLight, Primitive, Scene, TRAINABLE_PER_PRIMITIVE};
use crate::sh::{dc_weight, dot_basis, eval_sh_basis, Direction, SH_COUNT};

/// Partial derivatives of the loss with respect to every trainable scalar,
/// laid out per primitive in parameter order starting at the opacity logit.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    values: Vec<T>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros(primitives: usize) -> Self {
        GradientSet { values: vec![T::zero(); primitives * TRAINABLE_PER_PRIMITIVE] }
    }

    pub fn primitives(&self) -> usize {
        self.values.len() / TRAINABLE_PER_PRIMITIVE
    }

    pub fn primitive(&self, i: usize) -> &[T] {
        &self.values[i * TRAINABLE_PER_PRIMITIVE..(i + 1) * TRAINABLE_PER_PRIMITIVE]
    }

    pub fn primitive_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.values[i * TRAINABLE_PER_PRIMITIVE..(i + 1) * TRAINABLE_PER_PRIMITIVE]
    }

    /// Derivative with respect to flat parameter `param_index` of primitive `i`;
    /// frozen parameters report zero.
    pub fn get(&self, i: usize, param_index: usize) -> T {
        if param_index < layout::TRAINABLE_START {
            T::zero()
        } else {
            self.primitive(i)[grad_slot(param_index)]
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn chunks_mut(&mut self) -> rayon::slice::ChunksMut<'_, T> {
        self.values.par_chunks_mut(TRAINABLE_PER_PRIMITIVE)
    }

    pub(crate) fn zero_field(&mut self, range: std::ops::Range<usize>) {
        for chunk in self.values.chunks_mut(TRAINABLE_PER_PRIMITIVE) {
            for v in &mut chunk[grad_slot(range.start)..grad_slot(range.end)] {
                *v = T::zero();
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFiniteGradient {
                primitive: k / TRAINABLE_PER_PRIMITIVE,
                field: field_name(k % TRAINABLE_PER_PRIMITIVE + layout::TRAINABLE_START),
            }),
        }
    }
}

/// Per-primitive quantities of one rendered frame that the regularizers reuse.
pub(crate) struct FrameProbe<T> {
    /// Direction toward the first light sample, per primitive.
    pub wi: Vec<Option<Direction<T>>>,
    /// Camera-to-primitive direction, per primitive.
    pub view: Vec<Option<Direction<T>>>,
}

/// Renders one frame, adds `scale` times the gradient of its reconstruction
/// loss into `grads` and returns the unscaled loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn frame_backward<T: Real>(
    scene: &Scene<T>,
    lights: &[LightSource<T>],
    cam: &Camera<T>,
    reference: &HdrImage<T>,
    mask: ComponentMask,
    lambda_dssim: T,
    scale: T,
    tile_size: usize,
    grads: &mut GradientSet<T>,
) -> Result<(RecLoss<T>, FrameProbe<T>)> {
    let prepared: Vec<PreparedLight<T>> = lights.iter().map(PreparedLight::new).collect();
    let samples: Vec<Vec<LightSample<T>>> = scene
        .primitives
        .par_iter()
        .map(|p| {
            let mut out = Vec::new();
            for l in &prepared {
                l.samples_at(p.position, &mut out)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let colors: Vec<_> = scene
        .primitives
        .par_iter()
        .zip(samples.par_iter())
        .map(|(p, s)| relight_with_mask(p, s, mask))
        .collect();
    let projected = project_scene(scene, &colors, cam);
    let (splats, _) = prepare_splats(&projected);
    let bins = bin_tiles(&splats, cam.width, cam.height, tile_size);
    let image = composite_tiles(&splats, &bins, cam.width, cam.height);
    let (loss, mut d_image) = loss_rec_with_grad(&image, reference, lambda_dssim)?;
    for v in &mut d_image.data {
        *v *= scale;
    }

    // Per tile: d/d(rgb) and d/d(opacity) for every slot of the tile list.
    let ts = bins.tile_size;
    let (width, height) = (cam.width, cam.height);
    let tile_grads: Vec<Vec<[T; 4]>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let list = &bins.lists[t];
            let mut buf = vec![[T::zero(); 4]; list.len()];
            if list.is_empty() {
                return buf;
            }
            let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
            let mut contribs: Vec<Contribution<T>> = Vec::new();
            for py in ty * ts..((ty + 1) * ts).min(height) {
                for px in tx * ts..((tx + 1) * ts).min(width) {
                    let g = d_image.pixel(px, py);
                    if g.iter().all(|&v| v == T::zero()) {
                        continue;
                    }
                    contribs.clear();
                    composite_pixel(px, py, list, &splats, |c| contribs.push(c));
                    let mut behind = [T::zero(); 3];
                    for c in contribs.iter().rev() {
                        let s = &splats[list[c.slot] as usize];
                        let w = c.transmittance * c.alpha;
                        let keep = T::one() - c.alpha;
                        let mut d_alpha = T::zero();
                        for ch in 0..3 {
                            buf[c.slot][ch] += g[ch] * w;
                            d_alpha += g[ch] * (c.transmittance * s.rgb[ch] - behind[ch] / keep);
                            behind[ch] += w * s.rgb[ch];
                        }
                        if !c.clipped {
                            buf[c.slot][3] += d_alpha * c.gauss;
                        }
                    }
                }
            }
            buf
        })
        .collect();

    let mut splat_grads = vec![[T::zero(); 4]; splats.len()];
    for (list, buf) in bins.lists.iter().zip(&tile_grads) {
        for (&id, g) in list.iter().zip(buf) {
            for k in 0..4 {
                splat_grads[id as usize][k] += g[k];
            }
        }
    }

    let n = scene.len();
    let mut color_grads: Vec<Option<[[T; SH_COUNT]; 3]>> = vec![None; n];
    let mut opacity_grads = vec![T::zero(); n];
    let mut probe = FrameProbe { wi: vec![None; n], view: vec![None; n] };
    for g in &projected {
        probe.view[g.index] = Some(g.view_dir);
    }
    for (i, s) in samples.iter().enumerate() {
        probe.wi[i] = s.first().map(|x| x.wi);
    }
    for (s, g) in splats.iter().zip(&splat_grads) {
        let proj = &projected[s.source];
        let basis = eval_sh_basis(&proj.view_dir);
        let mut out = [[T::zero(); SH_COUNT]; 3];
        for ch in 0..3 {
            if s.pass[ch] && g[ch] != T::zero() {
                for (o, &y) in out[ch].iter_mut().zip(basis.iter()) {
                    *o = g[ch] * y;
                }
            }
        }
        color_grads[proj.index] = Some(out);
        opacity_grads[proj.index] = g[3] * s.opacity * (T::one() - s.opacity);
    }

    grads
        .chunks_mut()
        .zip(scene.primitives.par_iter())
        .zip(color_grads.par_iter())
        .zip(samples.par_iter())
        .zip(opacity_grads.par_iter())
        .for_each(|((((out, prim), cg), samp), &og)| {
            out[0] += og;
            if let Some(cg) = cg {
                relight_backward(prim, samp, mask, cg, out);
            }
        });
    Ok((loss, probe))
}

/// Chain rule from the relit radiance SH coefficients back to albedo, the
/// transfer functions and the BSH coefficients.
pub(crate) fn relight_backward<T: Real>(
    prim: &Primitive<T>,
    samples: &[LightSample<T>],
    mask: ComponentMask,
    g: &[[T; SH_COUNT]; 3],
    out: &mut [T],
) {
    let albedo = prim.albedo();
    let w = dc_weight::<T>();
    // (s_c g_c) per channel: the transfer matrix applied to the coefficient gradient.
    let mg: Option<[_; 3]> = mask
        .directional()
        .then(|| std::array::from_fn(|ch| partial_eval_packed(&prim.s.coeffs[ch], &g[ch])));
    let mut weighted = [[T::zero(); SH_COUNT]; 3];
    let mut d_albedo = [T::zero(); 3];
    let t_dir = grad_slot(layout::T_DIR.start);
    let t_ind = grad_slot(layout::T_IND.start);

    for sample in samples {
        let basis = eval_sh_basis(&sample.wi);
        let (a, a_pass) = relu_pass(dot_basis(&prim.t_dir, &basis));
        let mut d_a = T::zero();
        for ch in 0..3 {
            let l = sample.radiance[ch];
            if l == T::zero() {
                continue;
            }
            let g0 = g[ch][0];
            if mask.diffuse() {
                d_a += w * albedo[ch] * l * g0;
                d_albedo[ch] += w * a * l * g0;
            }
            if mask.indirect() {
                let (_, b_pass) = relu_pass(dot_basis(&prim.t_ind[ch], &basis));
                if b_pass {
                    let d = w * l * g0;
                    for (k, &y) in basis.iter().enumerate() {
                        out[t_ind + ch * SH_COUNT + k] += d * y;
                    }
                }
            }
            if let Some(mg) = &mg {
                d_a += l * dot_basis(&mg[ch], &basis);
                let al = a * l;
                for (acc, &y) in weighted[ch].iter_mut().zip(basis.iter()) {
                    *acc += al * y;
                }
            }
        }
        if a_pass {
            for (k, &y) in basis.iter().enumerate() {
                out[t_dir + k] += d_a * y;
            }
        }
    }

    let alb = grad_slot(layout::ALBEDO.start);
    for ch in 0..3 {
        out[alb + ch] += d_albedo[ch] * albedo[ch] * (T::one() - albedo[ch]);
    }
    if mg.is_some() {
        let s0 = grad_slot(layout::S.start);
        for ch in 0..3 {
            let (a, gc) = (&weighted[ch], &g[ch]);
            let base = s0 + ch * BSH_PACKED;
            let mut k = 0;
            for i in 0..SH_COUNT {
                out[base + k] += a[i] * gc[i];
                k += 1;
                for j in (i + 1)..SH_COUNT {
                    out[base + k] += a[i] * gc[j] + a[j] * gc[i];
                    k += 1;
                }
            }
        }
    }
}
