//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Minimum number of coordinates probed per check (or all, if fewer exist).
pub const MIN_COORDS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` at `x` on a seeded
/// subsample of at least [`MIN_COORDS`] coordinates.
pub fn grad_check(
    loss: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    if x.len() != analytic.len() || x.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "point has {} coordinates, gradient has {}",
            x.len(),
            analytic.len()
        )));
    }
    let coords: Vec<usize> = if x.len() <= MIN_COORDS {
        (0..x.len()).collect()
    } else {
        let mut v = sample(&mut ChaCha8Rng::seed_from_u64(seed), x.len(), MIN_COORDS).into_vec();
        v.sort_unstable();
        v
    };

    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: coords[0],
        checked: coords.len(),
    };
    for &i in &coords {
        probe[i] = x[i] + epsilon;
        let up = loss(&probe)?;
        probe[i] = x[i] - epsilon;
        let down = loss(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {i}")));
        }
        let err = relative_error(analytic[i], (up - down) / (2.0 * epsilon));
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
