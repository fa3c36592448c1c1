//! Channel-softmax soft masks and their complements.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Per-pixel, per-channel weights strictly inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask<T>(Tensor3<T>);

impl<T: Scalar> Mask<T> {
    pub fn new(t: Tensor3<T>) -> Result<Self> {
        if let Some(pos) = t.data().iter().position(|&v| !(v > T::zero() && v < T::one())) {
            return Err(Error::InvalidTensor(format!(
                "mask element {pos} = {} is outside (0, 1)",
                t.data()[pos]
            )));
        }
        Ok(Mask(t))
    }

    /// A mask with every element equal to `v`.
    pub fn uniform(height: usize, width: usize, channels: usize, v: T) -> Result<Self> {
        Self::new(Tensor3::filled(height, width, channels, v)?)
    }

    pub fn as_tensor(&self) -> &Tensor3<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3<T> {
        self.0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }
}

/// Softmax across channels at every pixel, with max subtraction. Results are
/// nudged into `(0, 1)` when they saturate at the precision of `T`.
pub fn softmax_mask<T: Scalar>(logits: &Tensor3<T>) -> Result<Mask<T>> {
    let (h, w, c) = logits.shape();
    if c < 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax mask needs at least 2 channels, got {c}"
        )));
    }
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    let mut out = Vec::with_capacity(logits.len());
    for px in logits.data().chunks_exact(c) {
        let max = px.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = px.iter().map(|&z| (z - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.iter().map(|&e| (e / total).max(lo).min(hi)));
    }
    Mask::new(Tensor3::new(h, w, c, out)?)
}

/// Gradient of `Σ upstream ⊙ softmax(z)` with respect to `z`:
/// `s ⊙ (g − Σ_c s_c g_c)` per pixel.
pub fn softmax_backward<T: Scalar>(mask: &Mask<T>, upstream: &Tensor3<T>) -> Result<Tensor3<T>> {
    let s = mask.as_tensor();
    s.ensure_same_shape(upstream)?;
    let (h, w, c) = s.shape();
    let mut out = Vec::with_capacity(s.len());
    for (sp, gp) in s.data().chunks_exact(c).zip(upstream.data().chunks_exact(c)) {
        let dot: T = sp.iter().zip(gp).map(|(&a, &b)| a * b).sum();
        out.extend(sp.iter().zip(gp).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor3::new(h, w, c, out)
}

/// `1 − m`, elementwise.
pub fn complement_mask<T: Scalar>(m: &Mask<T>) -> Mask<T> {
    let t = m.as_tensor();
    let (h, w, c) = t.shape();
    Mask(Tensor3::from_raw(
        h,
        w,
        c,
        t.data().iter().map(|&v| T::one() - v).collect(),
    ))
}
