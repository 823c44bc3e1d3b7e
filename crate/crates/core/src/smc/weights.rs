//! Importance-weight arithmetic: ESS, adaptive tempering, reweighting and
//! residual resampling. All weight updates are done in log space.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;
const KAPPA_TOL: f64 = 1e-6;

/// Effective sample size `1 / sum w_j^2` of normalized weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Normalization(total));
    }
    Ok(1.0 / weights.iter().map(|w| w * w).sum::<f64>())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized `w_j exp(delta * log_like_j)`.
pub fn reweight_weights(weights: &[f64], log_likes: &[f64], delta: f64) -> Result<Vec<f64>> {
    if weights.len() != log_likes.len() {
        return Err(Error::Shape {
            expected: weights.len(),
            actual: log_likes.len(),
        });
    }
    if delta == 0.0 {
        return Ok(weights.to_vec());
    }
    let logw: Vec<f64> = weights
        .iter()
        .zip(log_likes)
        .map(|(w, ll)| {
            if *w > 0.0 {
                w.ln() + delta * ll
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let norm = log_sum_exp(&logw);
    if !norm.is_finite() {
        return Err(Error::Numeric("all importance weights vanished".into()));
    }
    let mut out: Vec<f64> = logw.iter().map(|l| (l - norm).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

fn relative_ess(weights: &[f64], log_likes: &[f64], delta: f64, base: f64) -> f64 {
    match reweight_weights(weights, log_likes, delta) {
        Ok(w) => 1.0 / w.iter().map(|v| v * v).sum::<f64>() / base,
        Err(_) => 0.0,
    }
}

/// Next tempering exponent: the largest `kappa' <= 1` whose relative ESS
/// drop stays at about `eta`, found by bisection.
pub fn next_kappa(current_kappa: f64, log_likes: &[f64], weights: &[f64], eta: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&current_kappa));
    let base = 1.0 / weights.iter().map(|v| v * v).sum::<f64>();
    let target = |kappa: f64| relative_ess(weights, log_likes, kappa - current_kappa, base);
    if target(1.0) >= eta {
        return 1.0;
    }
    let mut lo = current_kappa;
    let mut hi = 1.0;
    while hi - lo > KAPPA_TOL {
        let mid = 0.5 * (lo + hi);
        if target(mid) >= eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let next = 0.5 * (lo + hi);
    if next > current_kappa {
        next
    } else {
        hi
    }
}

/// Residual resampling: `floor(J w_j)` deterministic copies of each index,
/// the remainder drawn multinomially from the residual weights.
pub fn residual_resample_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let j = weights.len();
    let mut out = Vec::with_capacity(j);
    let mut residual = Vec::with_capacity(j);
    for (i, w) in weights.iter().enumerate() {
        let expected = w * j as f64;
        let copies = expected.floor() as usize;
        out.extend(std::iter::repeat_n(i, copies));
        residual.push(expected - copies as f64);
    }
    let remaining = j - out.len().min(j);
    out.truncate(j);
    if remaining > 0 {
        match WeightedIndex::new(&residual) {
            Ok(dist) => out.extend((0..remaining).map(|_| dist.sample(rng))),
            // Residuals can only vanish through rounding; fall back to the weights.
            Err(_) => {
                let dist = WeightedIndex::new(weights).expect("normalized weights");
                out.extend((0..remaining).map(|_| dist.sample(rng)));
            }
        }
    }
    out
}
