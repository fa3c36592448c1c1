//! Anti-aliased bicubic resampling and the two-level HR/LR degradation.
//!
//! Kernel: Catmull-Rom cubic convolution (`a = -0.5`). When shrinking, the kernel is
//! stretched by the scale ratio so it acts as a low-pass filter, and tap weights are
//! renormalized to sum to one. Sample centers follow `src = (dst + 0.5)·ratio − 0.5`;
//! reads outside the image clamp to the border.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Cubic convolution coefficient.
pub const CUBIC_A: f64 = -0.5;

/// Integer downscale ratio, `k ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScaleFactor(u32);

impl ScaleFactor {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("scale factor must be at least 1".into()));
        }
        Ok(Self(k))
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }
}

/// Cubic convolution kernel evaluated at distance `x`.
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Nonzero taps for one output sample along one axis.
#[derive(Clone, Debug)]
struct Taps<T> {
    /// Unclamped source indices, ascending.
    index: Vec<isize>,
    weight: Vec<T>,
}

/// Sums `f(0) .. f(len-1)` pairing the first and last terms, so a reversed
/// sequence yields a bitwise-identical result.
#[inline]
fn mirrored_sum<T: Scalar>(len: usize, f: impl Fn(usize) -> T) -> T {
    let mut acc = T::zero();
    for k in 0..len / 2 {
        acc += f(k) + f(len - 1 - k);
    }
    if len % 2 == 1 {
        acc += f(len / 2);
    }
    acc
}

fn axis_taps<T: Scalar>(src_len: usize, dst_len: usize) -> Vec<Taps<T>> {
    let (n, m) = (src_len as i64, dst_len as i64);
    let ratio = src_len as f64 / dst_len as f64;
    let support = ratio.max(1.0);
    let radius = 2.0 * support;
    (0..m)
        .map(|i| {
            // Offsets are (m(2j+1) − n(2i+1)) / 2m; the integer numerator keeps
            // mirrored outputs exactly antisymmetric.
            let center = ((2 * i + 1) * n - m) as f64 / (2 * m) as f64;
            let lo = (center - radius).floor() as i64 - 1;
            let hi = (center + radius).ceil() as i64 + 1;
            let mut index = Vec::new();
            let mut raw = Vec::new();
            for j in lo..=hi {
                let num = m * (2 * j + 1) - n * (2 * i + 1);
                let dist = num as f64 / (2 * m) as f64;
                let w = cubic_kernel(dist / support);
                if w != 0.0 {
                    index.push(j as isize);
                    raw.push(w);
                }
            }
            let total = mirrored_sum(raw.len(), |k| raw[k]);
            Taps {
                index,
                weight: raw.iter().map(|&w| T::of(w / total)).collect(),
            }
        })
        .collect()
}

#[inline]
fn clamp_index(j: isize, len: usize) -> usize {
    j.clamp(0, len as isize - 1) as usize
}

/// Resamples any tensor to `target_h × target_w`. No output range clamping.
pub fn bicubic_resize_tensor<T: Scalar>(
    src: &Tensor3<T>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor3<T>> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be at least 1x1, got {target_h}x{target_w}"
        )));
    }
    let (h, w, c) = src.shape();
    let data = src.data();

    let col_taps = axis_taps::<T>(w, target_w);
    let mut horiz = vec![T::zero(); h * target_w * c];
    for y in 0..h {
        let row = &data[y * w * c..(y + 1) * w * c];
        for (x, taps) in col_taps.iter().enumerate() {
            for ch in 0..c {
                horiz[(y * target_w + x) * c + ch] = mirrored_sum(taps.index.len(), |k| {
                    taps.weight[k] * row[clamp_index(taps.index[k], w) * c + ch]
                });
            }
        }
    }

    let row_taps = axis_taps::<T>(h, target_h);
    let stride = target_w * c;
    let mut out = vec![T::zero(); target_h * stride];
    for (y, taps) in row_taps.iter().enumerate() {
        for i in 0..stride {
            out[y * stride + i] = mirrored_sum(taps.index.len(), |k| {
                taps.weight[k] * horiz[clamp_index(taps.index[k], h) * stride + i]
            });
        }
    }
    Tensor3::new(target_h, target_w, c, out)
}

/// Bicubic resize of an image. Accumulates in `f64` and clamps the result to `[0, 1]`.
pub fn bicubic_resize(img: &Image, target_h: usize, target_w: usize) -> Result<Image> {
    let wide: Tensor3<f64> = img.as_tensor().cast();
    let resized = bicubic_resize_tensor(&wide, target_h, target_w)?;
    let narrow = resized.map(|v| v.clamp(0.0, 1.0))?.cast::<f32>();
    Image::from_tensor(narrow)
}

/// Produces `(hr, lr)`: `hr` is `src` shrunk by `k`, `lr` is `hr` shrunk by `k` again.
pub fn degrade_pair(src: &Image, k: ScaleFactor) -> Result<(Image, Image)> {
    let k = k.get() as usize;
    let (hr_h, hr_w) = (src.height() / k, src.width() / k);
    if hr_h == 0 || hr_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is too small for scale {k}",
            src.height(),
            src.width()
        )));
    }
    let hr = bicubic_resize(src, hr_h, hr_w)?;
    let (lr_h, lr_w) = (hr.height() / k, hr.width() / k);
    if lr_h == 0 || lr_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is too small for two levels of scale {k}",
            src.height(),
            src.width()
        )));
    }
    let lr = bicubic_resize(&hr, lr_h, lr_w)?;
    Ok((hr, lr))
}
