use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srdistill::metrics::{evaluate, psnr, report_header, ssim};
use srdistill::synth::textured_image;
use srdistill::{to_luma, Image};

fn noisy_copy(img: &Image, amp: f32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = img.shape();
    Image::new(
        h,
        w,
        c,
        img.data().iter().map(|&v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0)).collect(),
    )
    .unwrap()
}

fn mse_oracle(a: &Image, b: &Image) -> f64 {
    let mut total = 0.0f64;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                let d = a.get(y, x, c) as f64 - b.get(y, x, c) as f64;
                total += d * d;
            }
        }
    }
    total / (a.height() * a.width() * a.channels()) as f64
}

/// Direct 2-D Gaussian window at every valid position, statistics computed
/// from the weighted samples without separable filtering.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (la, lb) = (to_luma(a), to_luma(b));
    let n = 11usize;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wgt = g[i] * g[j] / norm;
                    ma += wgt * la.get(y0 + i, x0 + j, 0) as f64;
                    mb += wgt * lb.get(y0 + i, x0 + j, 0) as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wgt = g[i] * g[j] / norm;
                    let da = la.get(y0 + i, x0 + j, 0) as f64 - ma;
                    let db = lb.get(y0 + i, x0 + j, 0) as f64 - mb;
                    va += wgt * da * da;
                    vb += wgt * db * db;
                    cov += wgt * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn psnr_matches_elementwise_oracle() {
    for seed in 0..20 {
        let a = textured_image(17, 23, 3, seed).unwrap();
        let b = noisy_copy(&a, 0.1, seed + 100);
        let expect = -10.0 * mse_oracle(&a, &b).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }
}

#[test]
fn planted_mse_gives_twenty_db() {
    // Half the samples off by 0.1 and half off by 0.1 in the other direction: MSE 0.01.
    let a = Image::filled(16, 16, 3, 0.5).unwrap();
    let b = Image::from_fn(16, 16, 3, |y, x, _| if (y + x) % 2 == 0 { 0.6 } else { 0.4 }).unwrap();
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 0.01);
}

#[test]
fn identical_images_are_perfect() {
    let a = textured_image(20, 20, 3, 1).unwrap();
    let r = evaluate(&a, &a).unwrap();
    assert_eq!(r.psnr_db, f64::INFINITY);
    assert!((r.ssim - 1.0).abs() < 1e-9);
    assert_eq!(r.to_json("x")["psnr_db"], "inf");
    assert!(report_header()["psnr"].is_string());
}

#[test]
fn ssim_matches_sliding_window_oracle() {
    for seed in 0..8 {
        let c = if seed % 2 == 0 { 3 } else { 1 };
        let a = textured_image(24, 19, c, seed).unwrap();
        let b = noisy_copy(&a, 0.2, seed + 7);
        let got = ssim(&a, &b).unwrap();
        let expect = ssim_oracle(&a, &b);
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }
}

#[test]
fn negative_image_is_not_identical() {
    let a = textured_image(16, 16, 1, 3).unwrap();
    let neg = Image::from_fn(16, 16, 1, |y, x, c| 1.0 - a.get(y, x, c)).unwrap();
    assert!(ssim(&a, &neg).unwrap() < 1.0);
}

#[test]
fn undersized_and_mismatched_inputs_are_rejected() {
    let small = Image::filled(10, 30, 1, 0.5).unwrap();
    assert!(ssim(&small, &small).is_err());
    let other = Image::filled(30, 10, 1, 0.5).unwrap();
    assert!(psnr(&small, &other).is_err());
}

proptest! {
    #[test]
    fn metrics_are_symmetric_and_bounded(seed in any::<u64>(), amp in 0.01f32..0.5) {
        let a = textured_image(16, 16, 3, seed).unwrap();
        let b = noisy_copy(&a, amp, seed ^ 0xabc);
        prop_assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-9);
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&s1));
    }

    #[test]
    fn larger_error_lowers_psnr(seed in any::<u64>(), c in 1.05f32..3.0) {
        let base = Image::filled(12, 12, 3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err: Vec<f32> = (0..base.data().len()).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let with = |k: f32| Image::new(12, 12, 3, err.iter().map(|e| 0.5 + k * e).collect()).unwrap();
        prop_assert!(psnr(&base, &with(c)).unwrap() < psnr(&base, &with(1.0)).unwrap());
    }
}
