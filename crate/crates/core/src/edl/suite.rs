//! Seeded gradient-verification suite over every loss and the softmax mask.
//!
//! Instances are drawn so that no absolute-deviation term sits within
//! [`KINK_MARGIN`] of its non-differentiable point; a central difference with
//! step [`SUITE_EPSILON`] then never straddles a kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

use super::features::{ConvFeatureExtractor, FeatureExtractor, IdentityExtractor};
use super::gradcheck::{grad_check, GradCheckReport};
use super::loss::{
    adversarial_loss, edl_composite_loss, perceptual_loss, pixel_loss, weighted_baseline_loss,
    LossWeights,
};
use super::mask::{softmax_backward, softmax_mask, Mask};

pub const SUITE_EPSILON: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 5e-4;
pub const SUITE_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 20;

const H: usize = 6;
const W: usize = 6;
const C: usize = 3;
const MAX_DRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Pixel,
    PerceptualIdentity,
    PerceptualConv,
    Adversarial,
    SoftmaxMask,
    Composite,
    Baseline,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Pixel,
        LossKind::PerceptualIdentity,
        LossKind::PerceptualConv,
        LossKind::Adversarial,
        LossKind::SoftmaxMask,
        LossKind::Composite,
        LossKind::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Pixel => "pixel",
            LossKind::PerceptualIdentity => "perceptual/identity",
            LossKind::PerceptualConv => "perceptual/conv",
            LossKind::Adversarial => "adversarial",
            LossKind::SoftmaxMask => "softmax-mask",
            LossKind::Composite => "composite",
            LossKind::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KindReport {
    pub kind: LossKind,
    pub instances: usize,
    pub max_rel_err: f64,
    pub worst_instance: u64,
}

impl KindReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < SUITE_TOLERANCE
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor3<f64> {
    Tensor3::from_fn(H, W, C, |_, _, _| rng.gen_range(lo..hi)).expect("finite")
}

fn tensor_from(values: &[f64]) -> Result<Tensor3<f64>> {
    Tensor3::new(H, W, C, values.to_vec())
}

fn min_abs_diff(a: &Tensor3<f64>, b: &Tensor3<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(f64::INFINITY, f64::min)
}

fn scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// `hr` offset from `sr` by 0.05 to 0.35 in every element, either direction.
fn offset_pair(rng: &mut ChaCha8Rng) -> (Tensor3<f64>, Tensor3<f64>) {
    let sr = uniform_tensor(rng, 0.0, 1.0);
    let hr = Tensor3::from_fn(H, W, C, |y, x, c| {
        let mag = rng.gen_range(0.05..0.35);
        let v = sr.get(y, x, c);
        if rng.gen_bool(0.5) {
            v + mag
        } else {
            v - mag
        }
    })
    .expect("finite");
    (sr, hr)
}

fn draw_until<T>(rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<T>) -> Result<T> {
    for _ in 0..MAX_DRAWS {
        if let Some(v) = draw(rng) {
            return Ok(v);
        }
    }
    Err(Error::InvalidArgument("could not draw a kink-free instance".into()))
}

fn check_instance(kind: LossKind, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = SUITE_EPSILON;
    match kind {
        LossKind::Pixel | LossKind::PerceptualIdentity => {
            let (sr, hr) = offset_pair(&mut rng);
            let analytic = if kind == LossKind::Pixel {
                pixel_loss(&sr, &hr)?.grad
            } else {
                perceptual_loss(&sr, &hr, &IdentityExtractor)?.grad
            };
            let f = |p: &[f64]| -> Result<f64> {
                let t = tensor_from(p)?;
                Ok(if kind == LossKind::Pixel {
                    pixel_loss(&t, &hr)?.value
                } else {
                    perceptual_loss(&t, &hr, &IdentityExtractor)?.value
                })
            };
            grad_check(f, sr.data(), analytic.data(), eps, seed)
        }
        LossKind::PerceptualConv => {
            let extractor = ConvFeatureExtractor::<f64>::new(C, seed);
            let (sr, hr) = draw_until(&mut rng, |rng| {
                let sr = uniform_tensor(rng, 0.0, 1.0);
                let hr = uniform_tensor(rng, 0.0, 1.0);
                let gap = min_abs_diff(&extractor.forward(&sr).ok()?, &extractor.forward(&hr).ok()?);
                (gap > KINK_MARGIN).then_some((sr, hr))
            })?;
            let analytic = perceptual_loss(&sr, &hr, &extractor)?.grad;
            let f = |p: &[f64]| Ok(perceptual_loss(&tensor_from(p)?, &hr, &extractor)?.value);
            grad_check(f, sr.data(), analytic.data(), eps, seed)
        }
        LossKind::Adversarial => {
            let n = rng.gen_range(1..=16);
            let (d_sr, d_hr) = (scores(&mut rng, n), scores(&mut rng, n));
            let l = adversarial_loss(&d_sr, &d_hr)?;
            let x = concat(&[&d_sr, &d_hr]);
            let analytic = concat(&[&l.grad_sr, &l.grad_hr]);
            let f = |p: &[f64]| Ok(adversarial_loss(&p[..n], &p[n..])?.value);
            grad_check(f, &x, &analytic, eps, seed)
        }
        LossKind::SoftmaxMask => {
            let z = uniform_tensor(&mut rng, -3.0, 3.0);
            let upstream = uniform_tensor(&mut rng, -1.0, 1.0);
            let mask = softmax_mask(&z)?;
            let analytic = softmax_backward(&mask, &upstream)?;
            let f = |p: &[f64]| -> Result<f64> {
                let m = softmax_mask(&tensor_from(p)?)?;
                Ok(m.as_tensor().data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
            };
            grad_check(f, z.data(), analytic.data(), eps, seed)
        }
        LossKind::Composite => {
            let extractor = ConvFeatureExtractor::<f64>::new(C, seed);
            let n = rng.gen_range(1..=8);
            let (i_x, i_y, mask, hr) = draw_until(&mut rng, |rng| {
                let i_x = uniform_tensor(rng, 0.0, 1.0);
                let i_y = uniform_tensor(rng, 0.0, 1.0);
                let hr = uniform_tensor(rng, 0.0, 1.0);
                let mask = softmax_mask(&uniform_tensor(rng, -1.5, 1.5)).ok()?;
                let ma = mask.as_tensor();
                let masked_y = ma.zip_map(&i_y, |m, y| (1.0 - m) * y).ok()?;
                let combined = ma.hadamard(&i_x).ok()?.add(&masked_y).ok()?;
                let feat_gap = min_abs_diff(&extractor.forward(&combined).ok()?, &extractor.forward(&hr).ok()?);
                let pix_gap = min_abs_diff(&masked_y, &hr);
                (feat_gap > KINK_MARGIN && pix_gap > KINK_MARGIN).then_some((i_x, i_y, mask, hr))
            })?;
            let (d_sr, d_hr) = (scores(&mut rng, n), scores(&mut rng, n));
            let l = edl_composite_loss(&i_x, &i_y, &mask, &hr, &extractor, &d_sr, &d_hr)?;
            let x = concat(&[i_x.data(), i_y.data(), mask.as_tensor().data(), &d_sr, &d_hr]);
            let analytic = concat(&[
                l.grad_x.data(),
                l.grad_y.data(),
                l.grad_mask.data(),
                &l.adversarial.grad_sr,
                &l.adversarial.grad_hr,
            ]);
            let k = H * W * C;
            let f = |p: &[f64]| -> Result<f64> {
                let m = Mask::new(tensor_from(&p[2 * k..3 * k])?)?;
                Ok(edl_composite_loss(
                    &tensor_from(&p[..k])?,
                    &tensor_from(&p[k..2 * k])?,
                    &m,
                    &hr,
                    &extractor,
                    &p[3 * k..3 * k + n],
                    &p[3 * k + n..],
                )?
                .total)
            };
            grad_check(f, &x, &analytic, eps, seed)
        }
        LossKind::Baseline => {
            let extractor = ConvFeatureExtractor::<f64>::new(C, seed);
            let n = rng.gen_range(1..=8);
            let (sr, hr) = draw_until(&mut rng, |rng| {
                let (sr, hr) = offset_pair(rng);
                let gap = min_abs_diff(&extractor.forward(&sr).ok()?, &extractor.forward(&hr).ok()?);
                (gap > KINK_MARGIN).then_some((sr, hr))
            })?;
            let weights = LossWeights::new(
                rng.gen_range(0.1..2.0),
                rng.gen_range(0.1..2.0),
                rng.gen_range(0.1..2.0),
            )?;
            let (d_sr, d_hr) = (scores(&mut rng, n), scores(&mut rng, n));
            let l = weighted_baseline_loss(&sr, &hr, &weights, &extractor, &d_sr, &d_hr)?;
            let x = concat(&[sr.data(), &d_sr, &d_hr]);
            let analytic = concat(&[l.grad_sr.data(), &l.grad_d_sr, &l.grad_d_hr]);
            let k = H * W * C;
            let f = |p: &[f64]| -> Result<f64> {
                Ok(weighted_baseline_loss(
                    &tensor_from(&p[..k])?,
                    &hr,
                    &weights,
                    &extractor,
                    &p[k..k + n],
                    &p[k + n..],
                )?
                .total)
            };
            grad_check(f, &x, &analytic, eps, seed)
        }
    }
}

/// Runs `instances` seeded gradient checks for `kind`. Instance `i` uses seed
/// `base_seed + i`.
pub fn check_kind(kind: LossKind, base_seed: u64, instances: usize) -> Result<KindReport> {
    let mut report = KindReport {
        kind,
        instances,
        max_rel_err: 0.0,
        worst_instance: base_seed,
    };
    for i in 0..instances as u64 {
        let seed = base_seed.wrapping_add(i);
        let r = check_instance(kind, seed)?;
        if r.max_rel_err > report.max_rel_err {
            report.max_rel_err = r.max_rel_err;
            report.worst_instance = seed;
        }
    }
    Ok(report)
}

pub fn run_gradient_suite(base_seed: u64, instances: usize) -> Result<Vec<KindReport>> {
    LossKind::ALL
        .iter()
        .map(|&k| check_kind(k, base_seed, instances))
        .collect()
}
