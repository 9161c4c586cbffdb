//! Bidirectional spherical harmonics with symmetric coefficients.
//!
//! A scattering function `s(wi, wo) = sum_ij c_ij y_i(wi) y_j(wo)` with
//! `c_ij = c_ji` is stored as the packed upper triangle (row-major over
//! `i <= j`) of the 25x25 coefficient matrix, one triangle per color channel.
//! Because `c_ij` and `c_ji` share a single stored scalar, every stored matrix
//! is reciprocal by construction.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sh::{dc_weight, eval_sh_basis, Direction, ShVector, SH_COUNT};

/// Stored scalars per channel: 25 * 26 / 2.
pub const BSH_PACKED: usize = SH_COUNT * (SH_COUNT + 1) / 2;

pub type Rgb<T> = [T; 3];

/// Packed storage index of the unordered basis pair `{i, j}` (0-based).
pub fn sym_index(i: usize, j: usize) -> Result<usize> {
    if i >= SH_COUNT || j >= SH_COUNT {
        return Err(Error::invalid(format!(
            "basis index pair ({i}, {j}) outside 0..{SH_COUNT}"
        )));
    }
    Ok(packed_index(i.min(j), i.max(j)))
}

#[inline(always)]
fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    i * SH_COUNT - i * (i + 1) / 2 + j
}

#[derive(Clone, Debug, PartialEq)]
pub struct BshMatrix<T> {
    pub coeffs: [[T; BSH_PACKED]; 3],
}

impl<T: Real> Default for BshMatrix<T> {
    fn default() -> Self {
        BshMatrix { coeffs: [[T::zero(); BSH_PACKED]; 3] }
    }
}

impl<T: Real> BshMatrix<T> {
    pub fn zeros() -> Self {
        Self::default()
    }

    /// Coefficient `c_ij` of channel `ch`.
    pub fn get(&self, ch: usize, i: usize, j: usize) -> T {
        self.coeffs[ch][packed_index(i.min(j), i.max(j))]
    }

    /// Sets `c_ij = c_ji = v` for channel `ch`.
    pub fn set(&mut self, ch: usize, i: usize, j: usize, v: T) {
        self.coeffs[ch][packed_index(i.min(j), i.max(j))] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().flatten().all(|c| c.is_finite())
    }

    pub fn eval(&self, wi: &Direction<T>, wo: &Direction<T>) -> Rgb<T> {
        eval_full(self, wi, wo)
    }
}

/// Full two-direction evaluation per channel.
pub fn eval_full<T: Real>(s: &BshMatrix<T>, wi: &Direction<T>, wo: &Direction<T>) -> Rgb<T> {
    let a = eval_sh_basis(wi);
    let b = eval_sh_basis(wo);
    eval_full_with_basis(s, &a, &b)
}

pub(crate) fn eval_full_with_basis<T: Real>(
    s: &BshMatrix<T>,
    a: &[T; SH_COUNT],
    b: &[T; SH_COUNT],
) -> Rgb<T> {
    let mut out = [T::zero(); 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let c = &s.coeffs[ch];
        let mut acc = T::zero();
        let mut k = 0;
        for i in 0..SH_COUNT {
            acc += c[k] * (a[i] * b[i]);
            k += 1;
            for j in (i + 1)..SH_COUNT {
                acc += c[k] * (a[i] * b[j] + a[j] * b[i]);
                k += 1;
            }
        }
        *o = acc;
    }
    out
}

/// Partial evaluation at the incoming direction: per channel, the SH
/// coefficients `c_j = sum_i c_ij y_i(wi)` of `wo -> s(wi, wo)`.
pub fn partial_eval<T: Real>(s: &BshMatrix<T>, wi: &Direction<T>) -> [ShVector<T>; 3] {
    partial_eval_with_basis(s, &eval_sh_basis(wi))
}

#[inline]
pub(crate) fn partial_eval_with_basis<T: Real>(
    s: &BshMatrix<T>,
    a: &[T; SH_COUNT],
) -> [ShVector<T>; 3] {
    let mut out = [ShVector::zeros(); 3];
    for (ch, o) in out.iter_mut().enumerate() {
        partial_eval_channel(&s.coeffs[ch], a, &mut o.0);
    }
    out
}

/// Partial evaluation of one packed channel against an arbitrary basis vector.
#[inline]
pub(crate) fn partial_eval_packed<T: Real>(c: &[T; BSH_PACKED], a: &[T; SH_COUNT]) -> ShVector<T> {
    let mut out = ShVector::zeros();
    partial_eval_channel(c, a, &mut out.0);
    out
}

#[inline]
fn partial_eval_channel<T: Real>(c: &[T; BSH_PACKED], a: &[T; SH_COUNT], out: &mut [T; SH_COUNT]) {
    let mut k = 0;
    for i in 0..SH_COUNT {
        let ai = a[i];
        out[i] += c[k] * ai;
        k += 1;
        for j in (i + 1)..SH_COUNT {
            let cij = c[k];
            out[j] += cij * ai;
            out[i] += cij * a[j];
            k += 1;
        }
    }
}

/// Analytic `∫ s(wi, wo) dwo` per channel.
pub fn energy_integral<T: Real>(s: &BshMatrix<T>, wi: &Direction<T>) -> Rgb<T> {
    energy_integral_with_basis(s, &eval_sh_basis(wi))
}

/// Only the constant band of `s_wi` integrates to a non-zero value, so this
/// needs just the first row `c_{0,i}` of each channel.
pub(crate) fn energy_integral_with_basis<T: Real>(s: &BshMatrix<T>, a: &[T; SH_COUNT]) -> Rgb<T> {
    let w = dc_weight::<T>();
    let mut out = [T::zero(); 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let row = &s.coeffs[ch][..SH_COUNT];
        let mut acc = T::zero();
        for i in 0..SH_COUNT {
            acc += row[i] * a[i];
        }
        *o = w * acc;
    }
    out
}
