//! Peak locations from local maxima of sampled log-intensities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LgcpFit;
use crate::spectrum::WavenumberGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakPosterior {
    pub location_samples: Vec<Vec<f64>>,
    pub count_samples: Vec<usize>,
}

impl PeakPosterior {
    pub fn len(&self) -> usize {
        self.count_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count_samples.is_empty()
    }

    /// Most frequent peak count (smallest on ties).
    pub fn modal_count(&self) -> usize {
        let max = self.count_samples.iter().copied().max().unwrap_or(0);
        let mut hist = vec![0usize; max + 1];
        for &n in &self.count_samples {
            hist[n] += 1;
        }
        hist.iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(n, _)| n)
            .unwrap_or(0)
    }

    pub fn all_locations(&self) -> impl Iterator<Item = f64> + '_ {
        self.location_samples.iter().flatten().copied()
    }
}

/// Strict interior local maxima `b[k-1] < b[k] > b[k+1]`, refined to the
/// vertex of the parabola through the three points.
pub fn local_maxima(b: &[f64], grid: &WavenumberGrid) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..b.len().saturating_sub(1) {
        let (l, c, r) = (b[k - 1], b[k], b[k + 1]);
        if l < c && c > r {
            let curv = l - 2.0 * c + r;
            let delta = 0.5 * (l - r) / curv;
            out.push(grid.start() + (k as f64 + delta) * grid.h());
        }
    }
    out
}

/// Draws `n_samples` log-intensities from the Laplace posterior of `fit`
/// and records their local maxima. Draw `j` uses its own RNG stream.
pub fn sample_peak_posterior(fit: &LgcpFit, n_samples: usize, seed: u64) -> PeakPosterior {
    let k = fit.b_map.len();
    let grid = fit.grid();
    let locations: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map_init(
            || (vec![0.0; k], vec![0.0; k]),
            |(eps, b), j| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(j as u64);
                fit.draw_into(&mut rng, eps, b);
                local_maxima(b, grid)
            },
        )
        .collect();
    let count_samples = locations.iter().map(Vec::len).collect();
    PeakPosterior {
        location_samples: locations,
        count_samples,
    }
}
