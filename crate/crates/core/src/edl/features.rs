//! Differentiable feature maps for the feature-space loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Deterministic map `Tensor3 → Tensor3` with a vector-Jacobian product.
pub trait FeatureExtractor<T: Scalar>: Sync {
    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>>;

    /// `Jᵀ·upstream`, where `J` is the Jacobian of [`forward`](Self::forward) at `x`.
    fn backward(&self, x: &Tensor3<T>, upstream: &Tensor3<T>) -> Result<Tensor3<T>>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        Ok(x.clone())
    }

    fn backward(&self, x: &Tensor3<T>, upstream: &Tensor3<T>) -> Result<Tensor3<T>> {
        x.ensure_same_shape(upstream)?;
        Ok(upstream.clone())
    }
}

/// 3×3 same-size convolution with zero padding, followed by `tanh`.
#[derive(Clone, Debug)]
struct ConvLayer<T> {
    in_c: usize,
    out_c: usize,
    /// `[out][in][ky][kx]`
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn random(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (3.0 / (9 * in_c) as f64).sqrt() * 1.5;
        let weights = (0..out_c * in_c * 9)
            .map(|_| T::of(rng.gen_range(-bound..bound)))
            .collect();
        let bias = (0..out_c).map(|_| T::of(rng.gen_range(-0.1..0.1))).collect();
        Self {
            in_c,
            out_c,
            weights,
            bias,
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * self.in_c + i) * 3 + ky) * 3 + kx]
    }

    /// Neighbour of `(y, x)` at kernel tap `(ky, kx)`, if inside the image.
    #[inline]
    fn tap(y: usize, x: usize, ky: usize, kx: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let (sy, sx) = ((y + ky).checked_sub(1)?, (x + kx).checked_sub(1)?);
        (sy < h && sx < w).then_some((sy, sx))
    }

    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let (h, w, c) = x.shape();
        if c != self.in_c {
            return Err(Error::InvalidArgument(format!(
                "feature extractor expects {} channels, got {c}",
                self.in_c
            )));
        }
        Tensor3::from_fn(h, w, self.out_c, |y, xx, o| {
            let mut acc = self.bias[o];
            for ky in 0..3 {
                for kx in 0..3 {
                    if let Some((sy, sx)) = Self::tap(y, xx, ky, kx, h, w) {
                        for i in 0..self.in_c {
                            acc += self.w(o, i, ky, kx) * x.get(sy, sx, i);
                        }
                    }
                }
            }
            acc.tanh()
        })
    }

    /// Gradient with respect to the layer input, given the layer output `y`.
    fn backward(&self, x: &Tensor3<T>, y: &Tensor3<T>, upstream: &Tensor3<T>) -> Result<Tensor3<T>> {
        y.ensure_same_shape(upstream)?;
        let (h, w, _) = x.shape();
        let dz: Vec<T> = y
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&v, &g)| g * (T::one() - v * v))
            .collect();
        let mut dx = vec![T::zero(); x.len()];
        for yy in 0..h {
            for xx in 0..w {
                for o in 0..self.out_c {
                    let g = dz[(yy * w + xx) * self.out_c + o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            if let Some((sy, sx)) = Self::tap(yy, xx, ky, kx, h, w) {
                                for i in 0..self.in_c {
                                    dx[(sy * w + sx) * self.in_c + i] += self.w(o, i, ky, kx) * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor3::new(h, w, self.in_c, dx)
    }
}

/// Fixed-seed two-layer convolution stack with `tanh` activations. A
/// deterministic, smooth stand-in for a pretrained feature network.
#[derive(Clone, Debug)]
pub struct ConvFeatureExtractor<T> {
    layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> ConvFeatureExtractor<T> {
    pub const HIDDEN: usize = 6;
    pub const OUTPUT: usize = 4;

    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: vec![
                ConvLayer::random(in_channels, Self::HIDDEN, &mut rng),
                ConvLayer::random(Self::HIDDEN, Self::OUTPUT, &mut rng),
            ],
        }
    }

    fn activations(&self, x: &Tensor3<T>) -> Result<Vec<Tensor3<T>>> {
        let mut acts = vec![x.clone()];
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"))?;
            acts.push(next);
        }
        Ok(acts)
    }
}

impl<T: Scalar> FeatureExtractor<T> for ConvFeatureExtractor<T> {
    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        Ok(self.activations(x)?.pop().expect("non-empty"))
    }

    fn backward(&self, x: &Tensor3<T>, upstream: &Tensor3<T>) -> Result<Tensor3<T>> {
        let acts = self.activations(x)?;
        let mut g = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&acts[k], &acts[k + 1], &g)?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_weights() {
        let x = Tensor3::<f64>::from_fn(4, 5, 3, |y, x, c| (y + 2 * x + c) as f64 * 0.05).unwrap();
        let a = ConvFeatureExtractor::<f64>::new(3, 7).forward(&x).unwrap();
        let b = ConvFeatureExtractor::<f64>::new(3, 7).forward(&x).unwrap();
        let c = ConvFeatureExtractor::<f64>::new(3, 8).forward(&x).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.shape(), (4, 5, 4));
    }

    #[test]
    fn channel_mismatch() {
        let f = ConvFeatureExtractor::<f32>::new(3, 0);
        assert!(f.forward(&Tensor3::zeros(3, 3, 1).unwrap()).is_err());
    }

    #[test]
    fn backward_matches_directional_difference() {
        let f = ConvFeatureExtractor::<f64>::new(2, 3);
        let x = Tensor3::<f64>::from_fn(5, 4, 2, |y, xx, c| ((y * 7 + xx * 3 + c) % 5) as f64 * 0.2 - 0.4).unwrap();
        let v = Tensor3::<f64>::from_fn(5, 4, 2, |y, xx, c| ((y + xx + c) % 3) as f64 - 1.0).unwrap();
        let u = Tensor3::<f64>::from_fn(5, 4, 4, |y, xx, c| ((y * xx + c) % 4) as f64 * 0.3 - 0.5).unwrap();
        // <u, J v> by central differences vs <Jᵀ u, v>
        let eps = 1e-6;
        let fp = f.forward(&x.zip_map(&v, |a, b| a + eps * b).unwrap()).unwrap();
        let fm = f.forward(&x.zip_map(&v, |a, b| a - eps * b).unwrap()).unwrap();
        let numeric: f64 = fp.data().iter().zip(fm.data()).zip(u.data())
            .map(|((p, m), w)| w * (p - m) / (2.0 * eps))
            .sum();
        let jt = f.backward(&x, &u).unwrap();
        let analytic: f64 = jt.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
        assert!((numeric - analytic).abs() < 1e-7 * analytic.abs().max(1.0));
    }
}
