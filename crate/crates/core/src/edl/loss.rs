//! Pixel, feature-space and relativistic adversarial losses, and their two
//! compositions: the fixed-weight baseline and the exclusionary-mask objective.
//!
//! Every loss returns its value together with analytic gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

use super::features::FeatureExtractor;
use super::mask::{complement_mask, Mask};

/// Floor applied to the arguments of the adversarial logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Tensor3<T>,
}

/// Mean absolute deviation. The subgradient uses `sign(0) = 0`.
pub fn pixel_loss<T: Scalar>(sr: &Tensor3<T>, hr: &Tensor3<T>) -> Result<LossGrad<T>> {
    sr.ensure_same_shape(hr)?;
    let n = T::of(sr.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(sr.len());
    for (&a, &b) in sr.data().iter().zip(hr.data()) {
        let d = a - b;
        total += d.abs();
        let sign = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        grad.push(sign / n);
    }
    let (h, w, c) = sr.shape();
    Ok(LossGrad {
        value: total / n,
        grad: Tensor3::new(h, w, c, grad)?,
    })
}

/// Mean absolute deviation between feature maps of `sr` and `hr`.
pub fn perceptual_loss<T: Scalar>(
    sr: &Tensor3<T>,
    hr: &Tensor3<T>,
    f: &dyn FeatureExtractor<T>,
) -> Result<LossGrad<T>> {
    sr.ensure_same_shape(hr)?;
    let feat = pixel_loss(&f.forward(sr)?, &f.forward(hr)?)?;
    Ok(LossGrad {
        value: feat.value,
        grad: f.backward(sr, &feat.grad)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialLoss<T> {
    pub value: T,
    pub grad_sr: Vec<T>,
    pub grad_hr: Vec<T>,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `−ln(max(p, floor))` and its derivative with respect to `p`'s logit, given
/// `p = σ(x)` and `dp/dx = p(1 − p)`: returns `(value, d value / dx)`.
#[inline]
fn neg_log_sigmoid<T: Scalar>(x: T) -> (T, T) {
    let p = sigmoid(x);
    let floor = T::of(LOG_FLOOR);
    if p < floor {
        (-floor.ln(), T::zero())
    } else {
        (-p.ln(), -(T::one() - p))
    }
}

/// Relativistic average loss over discriminator scores of generated (`d_sr`)
/// and real (`d_hr`) samples:
///
/// `(1/N) Σᵢ [ −ln(1 − σ(d_hr[i] − mean(d_sr))) − ln σ(d_sr[i] − mean(d_hr)) ]`
pub fn adversarial_loss<T: Scalar>(d_sr: &[T], d_hr: &[T]) -> Result<AdversarialLoss<T>> {
    if d_sr.is_empty() || d_hr.is_empty() {
        return Err(Error::InvalidArgument("adversarial loss needs at least one score".into()));
    }
    if d_sr.len() != d_hr.len() {
        return Err(Error::InvalidArgument(format!(
            "score lists differ in length: {} vs {}",
            d_sr.len(),
            d_hr.len()
        )));
    }
    if d_sr.iter().chain(d_hr).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discriminator score".into()));
    }
    let n = T::of(d_sr.len() as f64);
    let mean_sr = d_sr.iter().copied().sum::<T>() / n;
    let mean_hr = d_hr.iter().copied().sum::<T>() / n;

    let mut value = T::zero();
    // d/d(real_i − mean_sr) and d/d(fake_i − mean_hr) of the per-sample terms.
    let mut d_real = Vec::with_capacity(d_hr.len());
    let mut d_fake = Vec::with_capacity(d_sr.len());
    for (&s, &h) in d_sr.iter().zip(d_hr) {
        // 1 − σ(a) = σ(−a)
        let (v_real, g_real) = neg_log_sigmoid(-(h - mean_sr));
        let (v_fake, g_fake) = neg_log_sigmoid(s - mean_hr);
        value += v_real + v_fake;
        d_real.push(-g_real);
        d_fake.push(g_fake);
    }
    let sum_real: T = d_real.iter().copied().sum();
    let sum_fake: T = d_fake.iter().copied().sum();
    let n2 = n * n;
    let grad_hr = d_real.iter().map(|&g| g / n - sum_fake / n2).collect();
    let grad_sr = d_fake.iter().map(|&g| g / n - sum_real / n2).collect();
    Ok(AdversarialLoss {
        value: value / n,
        grad_sr,
        grad_hr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(alpha: T, beta: T, gamma: T) -> Result<Self> {
        let all = [alpha, beta, gamma];
        if all.iter().any(|w| !w.is_finite() || *w < T::zero()) || all.iter().all(|w| *w == T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative with at least one positive, got ({alpha}, {beta}, {gamma})"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineLoss<T> {
    pub total: T,
    pub adversarial: T,
    pub perceptual: T,
    pub pixel: T,
    pub grad_sr: Tensor3<T>,
    pub grad_d_sr: Vec<T>,
    pub grad_d_hr: Vec<T>,
}

/// `α·L_adv + β·L_per + γ·L_pix` on a single output image.
pub fn weighted_baseline_loss<T: Scalar>(
    sr: &Tensor3<T>,
    hr: &Tensor3<T>,
    weights: &LossWeights<T>,
    f: &dyn FeatureExtractor<T>,
    d_sr: &[T],
    d_hr: &[T],
) -> Result<BaselineLoss<T>> {
    let adv = adversarial_loss(d_sr, d_hr)?;
    let per = perceptual_loss(sr, hr, f)?;
    let pix = pixel_loss(sr, hr)?;
    let LossWeights { alpha, beta, gamma } = *weights;
    Ok(BaselineLoss {
        total: alpha * adv.value + beta * per.value + gamma * pix.value,
        adversarial: adv.value,
        perceptual: per.value,
        pixel: pix.value,
        grad_sr: per.grad.zip_map(&pix.grad, |p, q| beta * p + gamma * q)?,
        grad_d_sr: adv.grad_sr.iter().map(|&g| alpha * g).collect(),
        grad_d_hr: adv.grad_hr.iter().map(|&g| alpha * g).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeLoss<T> {
    pub total: T,
    pub adversarial: AdversarialLoss<T>,
    pub perceptual: T,
    pub pixel: T,
    /// `M_α ⊙ i_x`, the sample the caller's discriminator scores as generated.
    pub masked_x: Tensor3<T>,
    /// `M_β ⊙ i_y`.
    pub masked_y: Tensor3<T>,
    /// Gradients of the perceptual and pixel terms. The adversarial term reaches
    /// `i_x` only through the caller's discriminator; chain `adversarial.grad_sr`
    /// through it and multiply by `M_α` to add that path.
    pub grad_x: Tensor3<T>,
    pub grad_y: Tensor3<T>,
    pub grad_mask: Tensor3<T>,
}

/// Exclusionary dual-branch objective:
///
/// `L_adv(M_α⊙i_x) + L_per(M_α⊙i_x + M_β⊙i_y, hr) + L_pix(M_β⊙i_y, hr)`, with `M_β = 1 − M_α`.
pub fn edl_composite_loss<T: Scalar>(
    i_x: &Tensor3<T>,
    i_y: &Tensor3<T>,
    m_alpha: &Mask<T>,
    hr: &Tensor3<T>,
    f: &dyn FeatureExtractor<T>,
    d_sr: &[T],
    d_hr: &[T],
) -> Result<CompositeLoss<T>> {
    i_x.ensure_same_shape(i_y)?;
    i_x.ensure_same_shape(hr)?;
    let ma = m_alpha.as_tensor();
    i_x.ensure_same_shape(ma)?;
    let m_beta = complement_mask(m_alpha);
    let mb = m_beta.as_tensor();

    let masked_x = ma.hadamard(i_x)?;
    let masked_y = mb.hadamard(i_y)?;
    let combined = masked_x.add(&masked_y)?;

    let adversarial = adversarial_loss(d_sr, d_hr)?;
    let per = perceptual_loss(&combined, hr, f)?;
    let pix = pixel_loss(&masked_y, hr)?;

    let grad_x = ma.hadamard(&per.grad)?;
    let grad_y = mb.hadamard(&per.grad.add(&pix.grad)?)?;
    let (h, w, c) = i_x.shape();
    let grad_mask = Tensor3::new(
        h,
        w,
        c,
        (0..i_x.len())
            .map(|k| {
                let (x, y) = (i_x.data()[k], i_y.data()[k]);
                (x - y) * per.grad.data()[k] - y * pix.grad.data()[k]
            })
            .collect(),
    )?;

    Ok(CompositeLoss {
        total: adversarial.value + per.value + pix.value,
        perceptual: per.value,
        pixel: pix.value,
        adversarial,
        masked_x,
        masked_y,
        grad_x,
        grad_y,
        grad_mask,
    })
}
