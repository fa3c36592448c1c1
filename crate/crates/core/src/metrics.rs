//! PSNR and SSIM with peak 1.0.
//!
//! PSNR uses the mean squared error over every channel. SSIM is computed on
//! Rec.601 luma with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03,
//! averaged over all window positions fully inside the image.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::image::{to_luma, Image};
use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> T {
    let sum: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    sum / T::of(a.len() as f64)
}

/// `10·log10(1/mse)`; `+∞` when the images are identical.
pub fn psnr_from_mse<T: Scalar>(mse: T) -> T {
    if mse == T::zero() {
        T::infinity()
    } else {
        -T::of(10.0) * mse.log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let wide = |img: &Image| img.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    Ok(psnr_from_mse(mse(&wide(a), &wide(b))))
}

/// Normalized 1-D Gaussian taps of length [`SSIM_WINDOW`].
pub fn gaussian_window<T: Scalar>() -> Vec<T> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|&v| T::of(v / total)).collect()
}

/// Separable valid-mode filtering of a single-channel plane.
fn filter_valid<T: Scalar>(plane: &[T], h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![T::zero(); h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM between two single-channel planes with the given dimensions.
pub fn ssim_plane<T: Scalar>(a: &[T], b: &[T], h: usize, w: usize) -> Result<T> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_window::<T>();
    let prod = |p: &[T], q: &[T]| p.iter().zip(q).map(|(&x, &y)| x * y).collect::<Vec<T>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&prod(a, a), h, w, &taps);
    let e_bb = filter_valid(&prod(b, b), h, w, &taps);
    let e_ab = filter_valid(&prod(a, b), h, w, &taps);

    let c1 = T::of((SSIM_K1 * 1.0).powi(2));
    let c2 = T::of((SSIM_K2 * 1.0).powi(2));
    let two = T::of(2.0);
    let mut total = T::zero();
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((two * ma * mb + c1) * (two * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / T::of(mu_a.len() as f64))
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let wide = |img: &Image| to_luma(img).data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    ssim_plane(&wide(a), &wide(b), a.height(), a.width())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    /// `f64::INFINITY` for identical inputs.
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn evaluate(a: &Image, b: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

impl MetricReport {
    /// `{"id": ..., "psnr_db": <number or "inf">, "ssim": ...}`
    pub fn to_json(&self, id: &str) -> Value {
        let psnr = if self.psnr_db.is_infinite() {
            json!("inf")
        } else {
            json!(self.psnr_db)
        };
        json!({ "id": id, "psnr_db": psnr, "ssim": self.ssim })
    }
}

/// First line of a metrics report: records how each metric is computed.
pub fn report_header() -> Value {
    json!({
        "report": "metrics",
        "version": 1,
        "psnr": "mean squared error over all channels, peak 1.0",
        "ssim": format!(
            "luma (Rec.601), {SSIM_WINDOW}x{SSIM_WINDOW} gaussian sigma {SSIM_SIGMA}, K1 {SSIM_K1}, K2 {SSIM_K2}, peak 1.0, valid windows"
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(4, 4, 3, 0.2).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, 3, 0.3).unwrap();
        // mse ≈ 0.01 (up to f32 representation of 0.2 and 0.3)
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr_from_mse(0.01f64), 20.0);
        assert!(psnr(&a, &Image::filled(4, 4, 1, 0.2).unwrap()).is_err());
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window::<f64>();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(w[i], w[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn ssim_identity_and_negative() {
        let a = Image::from_fn(16, 13, 3, |y, x, c| ((y * 13 + x + c) % 9) as f32 / 8.0).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let neg = Image::from_tensor(a.as_tensor().map(|v| 1.0 - v).unwrap()).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(10, 20, 1, 0.5).unwrap();
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn json_records() {
        let r = MetricReport { psnr_db: f64::INFINITY, ssim: 1.0 };
        assert_eq!(r.to_json("x").to_string(), r#"{"id":"x","psnr_db":"inf","ssim":1.0}"#);
        let r = MetricReport { psnr_db: 20.5, ssim: 0.5 };
        assert_eq!(r.to_json("y")["psnr_db"], json!(20.5));
    }
}
