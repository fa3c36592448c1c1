//! Non-overlapping grid patches and their luma statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_luma, Image};

pub const DEFAULT_PATCH_SIZE: usize = 64;

/// An `s × s` window cut from a source image at a multiple of `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub pixels: Image,
    pub source_id: String,
    /// `(row, col)` of the top-left pixel in the source image.
    pub origin: (usize, usize),
}

/// Population variance (`sigma`) and mean of a patch's luma.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchStats {
    pub sigma: f64,
    pub mean: f64,
}

/// Origins of every full `s × s` tile, row-major.
pub fn grid_origins(height: usize, width: usize, s: usize) -> impl Iterator<Item = (usize, usize)> {
    let (rows, cols) = (height / s, width / s);
    (0..rows).flat_map(move |r| (0..cols).map(move |c| (r * s, c * s)))
}

fn check_patch_size(s: usize) -> Result<()> {
    if s < 2 {
        return Err(Error::InvalidArgument(format!("patch size must be at least 2, got {s}")));
    }
    Ok(())
}

/// Tiles `img` at stride `s`; partial tiles at the right and bottom are dropped.
pub fn extract_patch_grid(img: &Image, s: usize, source_id: &str) -> Result<Vec<Patch>> {
    check_patch_size(s)?;
    grid_origins(img.height(), img.width(), s)
        .map(|(row, col)| {
            Ok(Patch {
                pixels: img.crop(row, col, s, s)?,
                source_id: source_id.to_owned(),
                origin: (row, col),
            })
        })
        .collect()
}

/// Luma statistics via Welford's single-pass update.
pub fn luma_stats(luma: &[f32]) -> PatchStats {
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for (i, &v) in luma.iter().enumerate() {
        let v = v as f64;
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let n = luma.len().max(1) as f64;
    PatchStats {
        sigma: (m2 / n).max(0.0),
        mean: mean.clamp(0.0, 1.0),
    }
}

pub fn patch_stats(p: &Patch) -> PatchStats {
    image_window_stats(&p.pixels)
}

/// Statistics of a whole image treated as one patch.
pub fn image_window_stats(img: &Image) -> PatchStats {
    luma_stats(to_luma(img).data())
}

/// Statistics for every grid patch of `img`, in row-major origin order, without
/// materializing the patches.
pub fn grid_stats(img: &Image, s: usize) -> Result<Vec<((usize, usize), PatchStats)>> {
    check_patch_size(s)?;
    let luma = to_luma(img);
    let w = luma.width();
    let data = luma.data();
    let mut buf = Vec::with_capacity(s * s);
    Ok(grid_origins(img.height(), img.width(), s)
        .map(|(row, col)| {
            buf.clear();
            for y in row..row + s {
                buf.extend_from_slice(&data[y * w + col..y * w + col + s]);
            }
            ((row, col), luma_stats(&buf))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_pass(values: &[f32]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (var, mean)
    }

    #[test]
    fn grid_counts_and_origins() {
        let img = Image::filled(128, 128, 1, 0.5).unwrap();
        let origins: Vec<_> = extract_patch_grid(&img, 64, "a").unwrap().iter().map(|p| p.origin).collect();
        assert_eq!(origins, vec![(0, 0), (0, 64), (64, 0), (64, 64)]);

        let img = Image::filled(100, 100, 1, 0.5).unwrap();
        let patches = extract_patch_grid(&img, 64, "a").unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].origin, (0, 0));

        let img = Image::filled(256, 192, 3, 0.5).unwrap();
        let got: Vec<_> = extract_patch_grid(&img, 64, "a").unwrap().iter().map(|p| p.origin).collect();
        let mut expect = Vec::new();
        let mut r = 0;
        while r + 64 <= 256 {
            let mut c = 0;
            while c + 64 <= 192 {
                expect.push((r, c));
                c += 64;
            }
            r += 64;
        }
        assert_eq!(got.len(), 12);
        assert_eq!(got, expect);
    }

    #[test]
    fn oversized_window_is_empty_and_tiny_window_errors() {
        let img = Image::filled(10, 12, 1, 0.5).unwrap();
        assert!(extract_patch_grid(&img, 16, "a").unwrap().is_empty());
        assert!(extract_patch_grid(&img, 1, "a").is_err());
        assert!(grid_stats(&img, 0).is_err());
    }

    #[test]
    fn patch_pixels_match_source() {
        let img = Image::from_fn(8, 8, 3, |y, x, c| ((y * 8 + x) * 3 + c) as f32 / 191.0).unwrap();
        for p in extract_patch_grid(&img, 4, "src").unwrap() {
            assert_eq!(p.pixels.shape(), (4, 4, 3));
            assert_eq!(p.source_id, "src");
            for y in 0..4 {
                for x in 0..4 {
                    for c in 0..3 {
                        assert_eq!(p.pixels.get(y, x, c), img.get(p.origin.0 + y, p.origin.1 + x, c));
                    }
                }
            }
        }
    }

    #[test]
    fn closed_form_stats() {
        let flat = Image::filled(4, 4, 1, 0.7).unwrap();
        let s = image_window_stats(&flat);
        assert!(s.sigma.abs() < 1e-12);
        assert!((s.mean - 0.7).abs() < 1e-7);

        let half = Image::from_fn(4, 4, 1, |y, _, _| if y < 2 { 0.0 } else { 1.0 }).unwrap();
        let s = image_window_stats(&half);
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert!((s.sigma - 0.25).abs() < 1e-12);
    }

    #[test]
    fn welford_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let img = Image::from_fn(16, 16, 3, |_, _, _| rng.gen::<f32>()).unwrap();
            let s = image_window_stats(&img);
            let (var, mean) = two_pass(to_luma(&img).data());
            assert!((s.sigma - var).abs() < 1e-12);
            assert!((s.mean - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_stats_agree_with_materialized_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = Image::from_fn(20, 27, 3, |_, _, _| rng.gen::<f32>()).unwrap();
        let fast = grid_stats(&img, 6).unwrap();
        let slow = extract_patch_grid(&img, 6, "x").unwrap();
        assert_eq!(fast.len(), slow.len());
        for ((origin, st), p) in fast.iter().zip(&slow) {
            assert_eq!(*origin, p.origin);
            assert_eq!(*st, patch_stats(p));
        }
    }

    #[test]
    fn permutation_and_affine_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let values: Vec<f32> = (0..64).map(|_| rng.gen()).collect();
        let base = luma_stats(&values);

        let mut shuffled = values.clone();
        shuffled.shuffle(&mut rng);
        let s = luma_stats(&shuffled);
        assert!((s.sigma - base.sigma).abs() < 1e-12);
        assert!((s.mean - base.mean).abs() < 1e-12);

        let c = 0.37f32;
        let scaled: Vec<f32> = values.iter().map(|v| v * c).collect();
        let s = luma_stats(&scaled);
        assert!((s.mean - base.mean * c as f64).abs() < 1e-7);
        assert!((s.sigma - base.sigma * (c as f64).powi(2)).abs() < 1e-7);
    }
}
