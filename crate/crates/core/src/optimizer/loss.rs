//! Tone mapping, the image reconstruction loss and the two appearance
//! regularizers, each with analytic gradients.

use crate::bsh::{energy_integral_with_basis, eval_full_with_basis, sym_index};
use crate::error::{Error, Result};
use crate::image::{HdrImage, LdrImage};
use crate::real::Real;
use crate::scene::{layout, Primitive, Scene};
use crate::sh::{dc_weight, dot_basis, eval_sh_basis, Direction, SH_COUNT};

const GAMMA: f64 = 2.2;
/// Floor for the tone-map derivative argument; the curve has infinite slope at 0.
const TONE_DERIVATIVE_FLOOR: f64 = 1e-8;

/// `x -> (x / (1 + x))^(1/2.2)`; negative inputs map to 0.
pub fn tone_map<T: Real>(x: T) -> T {
    // Written as a comparison so NaN propagates.
    let x = if x < T::zero() { T::zero() } else { x };
    (x / (T::one() + x)).powf(T::lit(1.0 / GAMMA))
}

pub fn tone_map_derivative<T: Real>(x: T) -> T {
    let x = x.max(T::lit(TONE_DERIVATIVE_FLOOR));
    let r = x / (T::one() + x);
    let inv = T::lit(1.0 / GAMMA);
    inv * r.powf(inv - T::one()) / ((T::one() + x) * (T::one() + x))
}

pub fn tone_map_image<T: Real>(img: &HdrImage<T>) -> HdrImage<T> {
    img.map(tone_map)
}

pub fn tone_map_ldr<T: Real>(img: &HdrImage<T>) -> LdrImage {
    tone_map_image(img).to_ldr()
}

/// PSNR in dB between tone-mapped images (peak 1).
pub fn psnr<T: Real>(render: &HdrImage<T>, reference: &HdrImage<T>) -> Result<f64> {
    render.same_size(reference)?;
    let n = render.data.len().max(1) as f64;
    let mse: f64 = render
        .data
        .iter()
        .zip(&reference.data)
        .map(|(&a, &b)| {
            let d = tone_map(a).as_f64() - tone_map(b).as_f64();
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Unweighted reconstruction terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RecLoss<T> {
    pub l1: T,
    /// `(1 - SSIM) / 2`.
    pub dssim: T,
}

impl<T: Real> RecLoss<T> {
    pub fn weighted(&self, lambda_dssim: T) -> T {
        self.l1 + lambda_dssim * self.dssim
    }
}

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn window<T: Real>() -> [T; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let raw: [f64; WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - half;
        (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
    });
    let sum: f64 = raw.iter().sum();
    raw.map(|v| T::lit(v / sum))
}

/// Separable Gaussian filter with zero padding. The kernel is symmetric, so
/// this operator is its own adjoint.
fn blur<T: Real>(plane: &[T], width: usize, height: usize, w: &[T; WINDOW]) -> Vec<T> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![T::zero(); plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = T::zero();
            for (k, &wk) in w.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += wk * plane[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![T::zero(); plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = T::zero();
            for (k, &wk) in w.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += wk * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Sum of the SSIM map of one channel and, optionally, its gradient with
/// respect to `x`.
fn ssim_channel<T: Real>(
    x: &[T],
    y: &[T],
    width: usize,
    height: usize,
    want_grad: bool,
) -> (T, Option<Vec<T>>) {
    let w = window::<T>();
    let c1 = T::lit(SSIM_C1);
    let c2 = T::lit(SSIM_C2);
    let two = T::lit(2.0);
    let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
    let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
    let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
    let mx = blur(x, width, height, &w);
    let my = blur(y, width, height, &w);
    let exx = blur(&xx, width, height, &w);
    let eyy = blur(&yy, width, height, &w);
    let exy = blur(&xy, width, height, &w);

    let n = x.len();
    let mut sum = T::zero();
    let (mut g_m, mut g_xx, mut g_xy) = if want_grad {
        (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for q in 0..n {
        let (a, b) = (mx[q], my[q]);
        let a1 = two * a * b + c1;
        let a2 = two * (exy[q] - a * b) + c2;
        let b1 = a * a + b * b + c1;
        let b2 = (exx[q] - a * a) + (eyy[q] - b * b) + c2;
        let den = b1 * b2;
        let s = a1 * a2 / den;
        sum += s;
        if want_grad {
            g_m[q] = two * b * (a2 - a1) / den - two * a * s / b1 + two * a * s / b2;
            g_xx[q] = -s / b2;
            g_xy[q] = two * a1 / den;
        }
    }
    if !want_grad {
        return (sum, None);
    }
    let bm = blur(&g_m, width, height, &w);
    let bxx = blur(&g_xx, width, height, &w);
    let bxy = blur(&g_xy, width, height, &w);
    let grad = (0..n).map(|p| bm[p] + two * x[p] * bxx[p] + y[p] * bxy[p]).collect();
    (sum, Some(grad))
}

fn channel_plane<T: Real>(img: &HdrImage<T>, c: usize) -> Vec<T> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over pixels and channels, 11x11 Gaussian window, sigma 1.5.
pub fn ssim<T: Real>(x: &HdrImage<T>, y: &HdrImage<T>) -> Result<T> {
    x.same_size(y)?;
    let mut total = T::zero();
    for c in 0..3 {
        total += ssim_channel(&channel_plane(x, c), &channel_plane(y, c), x.width, x.height, false).0;
    }
    Ok(total / T::lit(x.data.len().max(1) as f64))
}

/// Reconstruction loss between a rendering and a reference, both in linear
/// radiance; the comparison happens after tone mapping.
pub fn loss_rec<T: Real>(render: &HdrImage<T>, reference: &HdrImage<T>) -> Result<RecLoss<T>> {
    loss_rec_impl(render, reference, None)
}

/// As [`loss_rec`], also returning the gradient of `l1 + lambda_dssim * dssim`
/// with respect to every linear-radiance value of `render`.
pub fn loss_rec_with_grad<T: Real>(
    render: &HdrImage<T>,
    reference: &HdrImage<T>,
    lambda_dssim: T,
) -> Result<(RecLoss<T>, HdrImage<T>)> {
    let mut grad = HdrImage::new(render.width, render.height);
    let loss = loss_rec_impl(render, reference, Some((lambda_dssim, &mut grad)))?;
    Ok((loss, grad))
}

fn loss_rec_impl<T: Real>(
    render: &HdrImage<T>,
    reference: &HdrImage<T>,
    grad: Option<(T, &mut HdrImage<T>)>,
) -> Result<RecLoss<T>> {
    render.same_size(reference)?;
    if render.data.is_empty() {
        return Err(Error::invalid("reconstruction loss on an empty image"));
    }
    let x = tone_map_image(render);
    let y = tone_map_image(reference);
    let n = T::lit(x.data.len() as f64);
    let l1 = x.data.iter().zip(&y.data).map(|(&a, &b)| (a - b).abs()).sum::<T>() / n;
    let want = grad.is_some();
    let mut ssim_sum = T::zero();
    let mut ssim_grads = Vec::new();
    for c in 0..3 {
        let (s, g) = ssim_channel(&channel_plane(&x, c), &channel_plane(&y, c), x.width, x.height, want);
        ssim_sum += s;
        ssim_grads.push(g);
    }
    let dssim = (T::one() - ssim_sum / n) * T::lit(0.5);
    if let Some((lambda, out)) = grad {
        let dssim_scale = -lambda * T::lit(0.5) / n;
        for (k, g) in out.data.iter_mut().enumerate() {
            let diff = x.data[k] - y.data[k];
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            let ssim_g = ssim_grads[k % 3].as_ref().expect("requested")[k / 3];
            let d_tone = sign / n + dssim_scale * ssim_g;
            *g = d_tone * tone_map_derivative(render.data[k]);
        }
    }
    Ok(RecLoss { l1, dssim })
}

/// Gradient accumulator for one primitive, indexed from the first trainable parameter.
pub(crate) type PrimGrad<'a, T> = &'a mut [T];

#[inline]
pub(crate) fn grad_slot(param_index: usize) -> usize {
    param_index - layout::TRAINABLE_START
}

/// Energy penalty of one primitive at one incoming direction, mean over
/// channels of `max(e - 1, 0)^2`. Adds `scale * d/dparam` to `grad`.
pub(crate) fn energy_penalty<T: Real>(
    prim: &Primitive<T>,
    basis: &[T; SH_COUNT],
    scale: T,
    grad: Option<PrimGrad<'_, T>>,
) -> T {
    let e = energy_integral_with_basis(&prim.s, basis);
    let third = T::lit(1.0 / 3.0);
    let mut value = T::zero();
    let w = dc_weight::<T>();
    let mut grad = grad;
    for (ch, &ech) in e.iter().enumerate() {
        let excess = ech - T::one();
        if excess > T::zero() {
            value += excess * excess * third;
            if let Some(g) = grad.as_deref_mut() {
                // e = 2 sqrt(pi) * sum_i c(0, i) y_i and row 0 occupies packed slots 0..25.
                let d = scale * T::lit(2.0) * excess * third * w;
                let base = grad_slot(layout::S.start) + ch * crate::bsh::BSH_PACKED;
                for (i, &y) in basis.iter().enumerate() {
                    g[base + i] += d * y;
                }
            }
        }
    }
    value
}

/// Squared negative parts of `T_dir(wi)`, `T_ind(wi)` and `s(wi, wo)`.
pub(crate) fn negativity_penalty<T: Real>(
    prim: &Primitive<T>,
    wi: &[T; SH_COUNT],
    wo: &[T; SH_COUNT],
    scale: T,
    grad: Option<PrimGrad<'_, T>>,
) -> T {
    let two = T::lit(2.0);
    let mut grad = grad;
    let mut value = T::zero();
    let td = dot_basis(&prim.t_dir, wi);
    if td < T::zero() {
        value += td * td;
        if let Some(g) = grad.as_deref_mut() {
            let base = grad_slot(layout::T_DIR.start);
            for (k, &y) in wi.iter().enumerate() {
                g[base + k] += scale * two * td * y;
            }
        }
    }
    for ch in 0..3 {
        let ti = dot_basis(&prim.t_ind[ch], wi);
        if ti < T::zero() {
            value += ti * ti;
            if let Some(g) = grad.as_deref_mut() {
                let base = grad_slot(layout::T_IND.start) + ch * SH_COUNT;
                for (k, &y) in wi.iter().enumerate() {
                    g[base + k] += scale * two * ti * y;
                }
            }
        }
    }
    let s = eval_full_with_basis(&prim.s, wi, wo);
    for (ch, &sv) in s.iter().enumerate() {
        if sv < T::zero() {
            value += sv * sv;
            if let Some(g) = grad.as_deref_mut() {
                let d = scale * two * sv;
                let base = grad_slot(layout::S.start) + ch * crate::bsh::BSH_PACKED;
                let mut k = 0;
                for i in 0..SH_COUNT {
                    g[base + k] += d * wi[i] * wo[i];
                    k += 1;
                    for j in (i + 1)..SH_COUNT {
                        g[base + k] += d * (wi[i] * wo[j] + wi[j] * wo[i]);
                        k += 1;
                    }
                }
                debug_assert_eq!(k, sym_index(SH_COUNT - 1, SH_COUNT - 1).unwrap() + 1);
            }
        }
    }
    value
}

/// Energy-conservation penalty: for each primitive and each `wi`, the mean
/// over channels of `max(E(wi) - 1, 0)^2` where `E` is the outgoing integral
/// of the transfer; averaged over primitives and summed over `wi_list`.
pub fn loss_s<T: Real>(scene: &Scene<T>, wi_list: &[Direction<T>]) -> T {
    if scene.is_empty() {
        return T::zero();
    }
    let bases: Vec<_> = wi_list.iter().map(eval_sh_basis).collect();
    let total: T = scene
        .primitives
        .iter()
        .map(|p| bases.iter().map(|b| energy_penalty(p, b, T::zero(), None)).sum::<T>())
        .sum();
    total / T::lit(scene.len() as f64)
}

/// Non-negativity penalty at one `(wi, wo)` pair, averaged over primitives.
pub fn loss_plus<T: Real>(scene: &Scene<T>, wi: &Direction<T>, wo: &Direction<T>) -> T {
    if scene.is_empty() {
        return T::zero();
    }
    let a = eval_sh_basis(wi);
    let b = eval_sh_basis(wo);
    let total: T = scene
        .primitives
        .iter()
        .map(|p| negativity_penalty(p, &a, &b, T::zero(), None))
        .sum();
    total / T::lit(scene.len() as f64)
}
