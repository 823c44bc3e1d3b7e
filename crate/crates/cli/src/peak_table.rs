//! Peak summaries derived from the sampled peak-location posterior.

use linenarrow::lgcp::PeakPosterior;
use linenarrow::smc::SmcPosterior;
use linenarrow::spectrum::WavenumberGrid;
use serde::{Deserialize, Serialize};

/// Equal-width histogram of all sampled peak locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationHistogram {
    pub start: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    /// Number of posterior draws the locations came from.
    pub draws: usize,
}

impl LocationHistogram {
    /// Bins covering the grid cells `[nu_1 - h/2, nu_K + h/2]`.
    pub fn new(peaks: &PeakPosterior, grid: &WavenumberGrid, width: f64) -> Self {
        let start = grid.start() - 0.5 * grid.h();
        let n = (grid.span() / width).ceil().max(1.0) as usize;
        let mut counts = vec![0u64; n];
        for x in peaks.all_locations() {
            let b = ((x - start) / width).floor();
            if b >= 0.0 {
                counts[(b as usize).min(n - 1)] += 1;
            }
        }
        Self {
            start,
            width,
            counts,
            draws: peaks.len(),
        }
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.start + (bin as f64 + 0.5) * self.width
    }

    pub fn bin_of(&self, x: f64) -> usize {
        (((x - self.start) / self.width).floor().max(0.0) as usize).min(self.counts.len() - 1)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of all locations falling in each bin.
    pub fn mass(&self, bin: usize) -> f64 {
        self.counts[bin] as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub mode: f64,
    pub lower95: f64,
    pub upper95: f64,
    /// Share of all sampled locations attributed to this peak.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl ParamSummary {
    pub fn from_posterior(post: &SmcPosterior, f: impl Fn(&linenarrow::smc::Particle) -> f64 + Copy) -> Self {
        Self {
            mean: post.mean(f),
            median: post.quantile(f, 0.5),
            lower95: post.quantile(f, 0.025),
            upper95: post.quantile(f, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    pub peaks: Vec<PeakRow>,
    pub modal_n: usize,
    /// `(N, probability)` for every sampled peak count.
    pub n_posterior: Vec<(usize, f64)>,
    pub gamma: ParamSummary,
    pub sigma: Option<ParamSummary>,
    pub m: ParamSummary,
}

/// Posterior probability of each sampled peak count.
pub fn count_distribution(peaks: &PeakPosterior) -> Vec<(usize, f64)> {
    let max = peaks.count_samples.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; max + 1];
    for &n in &peaks.count_samples {
        hist[n] += 1;
    }
    let total = peaks.len().max(1) as f64;
    hist.into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(n, c)| (n, c as f64 / total))
        .collect()
}

/// Picks the `modal_n` tallest histogram modes as peaks. Each peak owns the
/// basin between the lowest bins separating it from its neighbours; its
/// interval is the central 95% of the locations in that basin.
pub fn peak_rows(peaks: &PeakPosterior, hist: &LocationHistogram, modal_n: usize) -> Vec<PeakRow> {
    let c = &hist.counts;
    let n = c.len();
    let mut modes: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i == 0 { 0 } else { c[i - 1] };
            let right = if i + 1 == n { 0 } else { c[i + 1] };
            c[i] > 0 && c[i] >= left && c[i] > right
        })
        .collect();
    modes.sort_by(|a, b| c[*b].cmp(&c[*a]).then(a.cmp(b)));
    modes.truncate(modal_n);
    modes.sort_unstable();
    if modes.is_empty() {
        return Vec::new();
    }

    // Basin edges in bin units: [edges[i], edges[i + 1]) belongs to mode i.
    let mut edges = vec![0usize];
    for w in modes.windows(2) {
        let split = (w[0] + 1..=w[1]).min_by_key(|&j| (c[j], j)).unwrap_or(w[1]);
        edges.push(split);
    }
    edges.push(n);

    let mut basins: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
    for x in peaks.all_locations() {
        let b = hist.bin_of(x);
        let i = edges.partition_point(|&e| e <= b) - 1;
        basins[i.min(modes.len() - 1)].push(x);
    }
    let total = hist.total().max(1) as f64;
    modes
        .iter()
        .zip(basins.iter_mut())
        .map(|(&m, xs)| {
            xs.sort_by(f64::total_cmp);
            let mode = hist.center(m);
            let q = |p: f64| xs[((xs.len() - 1) as f64 * p).round() as usize];
            PeakRow {
                mode,
                lower95: q(0.025).min(mode),
                upper95: q(0.975).max(mode),
                mass: xs.len() as f64 / total,
            }
        })
        .collect()
}

pub fn build(peaks: &PeakPosterior, hist: &LocationHistogram, post: &SmcPosterior) -> PeakTable {
    let modal_n = peaks.modal_count();
    PeakTable {
        peaks: peak_rows(peaks, hist, modal_n),
        modal_n,
        n_posterior: count_distribution(peaks),
        gamma: ParamSummary::from_posterior(post, |p| p.params.gamma()),
        sigma: post
            .particles
            .first()
            .and_then(|p| p.params.sigma())
            .map(|_| ParamSummary::from_posterior(post, |p| p.params.sigma().unwrap_or(f64::NAN))),
        m: ParamSummary::from_posterior(post, |p| p.m as f64),
    }
}
