//! Simulation-based calibration of the peak-count posterior.
//!
//! Each replicate draws a log-intensity `b*` from the GP prior, places a
//! line at every local maximum, simulates noisy data and runs the whole
//! pipeline. The rank of the true count among the posterior count draws
//! should be uniform when the pipeline is calibrated.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};
use crate::lgcp::{
    fit_map, jittered_cholesky, local_maxima, marginalize_counts, sample_peak_posterior, se_correlation, FitOptions,
    GpHyperParams, LogSigmaPrior,
};
use crate::smc::{run_smc, PriorSpec, SmcConfig, UniformPrior};
use crate::spectrum::{
    add_noise, synthesize, KernelFamily, LineShapeParams, NoiseModel, PeakSet, Spectrum, WavenumberGrid,
};

/// Redraws allowed when a GP draw has no interior maximum.
pub const MAX_REDRAWS: usize = 100;

/// `log sigma_lambda` draws are clamped to this magnitude so `b*` stays finite.
const LOG_SIGMA_CLAMP: f64 = 50.0;

/// Where the truth's GP scale comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GpScale {
    /// `log sigma_lambda` drawn per replicate from a Student-t prior.
    Prior(LogSigmaPrior),
    /// Fixed `sigma_lambda` (may be zero, giving a flat draw).
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub replicates: usize,
    pub grid: WavenumberGrid,
    pub priors: PriorSpec,
    pub amplitude: UniformPrior,
    pub gp_scale: GpScale,
    /// GP length scale as a fraction of the grid span.
    pub length_fraction: f64,
    pub noise_sd: f64,
    pub smc: SmcConfig,
    pub fit: FitOptions,
    pub log_sigma_prior: LogSigmaPrior,
    pub c_scale: Option<f64>,
    pub peak_samples: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl SbcConfig {
    /// Defaults: 100 replicates, Lorentz lines, amplitudes `U(0.5, 2)`,
    /// length scale `0.025` of the span, `sigma_eps = 0.025`, 1000
    /// particles, 20000 peak draws and 20 rank bins.
    pub fn new(grid: WavenumberGrid, seed: u64) -> Self {
        let noise_sd = 0.025;
        Self {
            replicates: 100,
            grid,
            priors: PriorSpec::standard(KernelFamily::Lorentz),
            amplitude: UniformPrior { lo: 0.5, hi: 2.0 },
            gp_scale: GpScale::Prior(LogSigmaPrior::lorentz_default()),
            length_fraction: 0.025,
            noise_sd,
            smc: SmcConfig::new(noise_sd, seed),
            fit: FitOptions::default(),
            log_sigma_prior: LogSigmaPrior::lorentz_default(),
            c_scale: None,
            peak_samples: 20_000,
            n_bins: 20,
            seed,
        }
    }

    pub fn length_scale(&self) -> f64 {
        self.length_fraction * self.grid.span()
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        let mut smc = self.smc.clone();
        smc.noise_sd = self.noise_sd;
        smc.validate()?;
        UniformPrior::new(self.amplitude.lo, self.amplitude.hi)?;
        if !(self.amplitude.lo > 0.0) {
            return Err(Error::Domain("amplitude prior must be positive".into()));
        }
        if !(self.length_fraction > 0.0 && self.length_fraction.is_finite()) {
            return Err(Error::Domain("length fraction must be positive".into()));
        }
        if let GpScale::Fixed(s) = self.gp_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("fixed GP scale must be nonnegative, got {s}")));
            }
        }
        NoiseModel::new(self.noise_sd)?;
        if self.peak_samples == 0 || self.n_bins == 0 {
            return Err(Error::Domain("peak samples and bins must be positive".into()));
        }
        if self.priors.m.hi >= self.grid.len() {
            return Err(Error::Truncation {
                m: self.priors.m.hi,
                k: self.grid.len(),
            });
        }
        Ok(())
    }
}

/// Ground truth of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcTruth {
    pub log_sigma_lambda: f64,
    pub b_star: Vec<f64>,
    pub locations: Vec<f64>,
    pub n_star: usize,
    pub amplitudes: Vec<f64>,
    pub params: LineShapeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReplicate {
    pub index: usize,
    pub truth: SbcTruth,
    pub data: Spectrum,
    pub posterior_counts: Vec<usize>,
    pub rank: usize,
}

impl SbcReplicate {
    pub fn posterior_mean(&self) -> f64 {
        self.posterior_counts.iter().sum::<usize>() as f64 / self.posterior_counts.len() as f64
    }

    /// Central 95% interval of the posterior count draws.
    pub fn interval95(&self) -> (usize, usize) {
        let mut sorted = self.posterior_counts.clone();
        sorted.sort_unstable();
        (order_statistic(&sorted, 0.025), order_statistic(&sorted, 0.975))
    }
}

fn order_statistic(sorted: &[usize], q: f64) -> usize {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Draws truths and data for replicates; holds the GP factor so repeated
/// draws skip the Cholesky.
pub struct ReplicateGenerator {
    config: SbcConfig,
    factor: DMatrix<f64>,
}

impl ReplicateGenerator {
    pub fn new(config: &SbcConfig) -> Result<Self> {
        config.validate()?;
        let r = se_correlation(&config.grid, config.length_scale());
        let (factor, _) = jittered_cholesky(&r, 1.0)?;
        Ok(Self {
            config: config.clone(),
            factor,
        })
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Truth and noisy data for replicate `index`. Draws without any
    /// interior maximum are redrawn up to [`MAX_REDRAWS`] times.
    pub fn draw(&self, index: usize) -> Result<(SbcTruth, Spectrum)> {
        let mut rng = self.rng(index);
        self.draw_with(&mut rng)
    }

    fn draw_with(&self, rng: &mut ChaCha8Rng) -> Result<(SbcTruth, Spectrum)> {
        let cfg = &self.config;
        let k = cfg.grid.len();
        for attempt in 0..=MAX_REDRAWS {
            let (log_sigma, sigma) = match cfg.gp_scale {
                GpScale::Prior(p) => {
                    let t: f64 = rng.sample(StudentT::new(p.dof).expect("dof validated"));
                    let s = (p.mean + p.variance.sqrt() * t).clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP);
                    (s, s.exp())
                }
                GpScale::Fixed(s) => (s.ln(), s),
            };
            let eps = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let b_star: Vec<f64> = (&self.factor * eps).iter().map(|v| sigma * v).collect();
            let locations = local_maxima(&b_star, &cfg.grid);
            let (params, _) = cfg.priors.sample(rng);
            let amplitudes: Vec<f64> = locations.iter().map(|_| cfg.amplitude.sample(rng)).collect();
            let noise_seed: u64 = rng.random();
            if locations.is_empty() {
                log::info!("GP draw {attempt} has no interior maximum; redrawing");
                continue;
            }
            let peaks = PeakSet::new(locations.clone(), amplitudes.clone())?;
            let clean = synthesize(&cfg.grid, &peaks, &params)?;
            let data = add_noise(&clean, &NoiseModel::new(cfg.noise_sd)?, noise_seed);
            let truth = SbcTruth {
                log_sigma_lambda: log_sigma,
                b_star,
                n_star: locations.len(),
                locations,
                amplitudes,
                params,
            };
            return Ok((truth, data));
        }
        Err(Error::Degenerate(format!(
            "no GP draw with an interior maximum after {MAX_REDRAWS} redraws"
        )))
    }

    /// Draws replicate `index` and runs the full pipeline on it.
    pub fn run(&self, index: usize) -> Result<SbcReplicate> {
        let cfg = &self.config;
        let mut rng = self.rng(index);
        let (truth, data) = self.draw_with(&mut rng)?;
        let mut smc = cfg.smc.clone();
        smc.noise_sd = cfg.noise_sd;
        smc.rng_seed = rng.random();
        let posterior = run_smc(&data, &cfg.priors, &smc)?;
        let counts = marginalize_counts(&posterior, &data, cfg.c_scale)?;
        let hypers = GpHyperParams::new(0.0, cfg.length_scale())?;
        let fit = fit_map(&counts, &cfg.grid, &hypers, &cfg.log_sigma_prior, &cfg.fit)?;
        if !fit.converged {
            log::warn!("replicate {index}: LGCP fit stopped at |grad| = {:e}", fit.grad_norm);
        }
        let peaks = sample_peak_posterior(&fit, cfg.peak_samples, rng.random());
        let rank = rank_statistic(truth.n_star, &peaks.count_samples);
        Ok(SbcReplicate {
            index,
            truth,
            data,
            posterior_counts: peaks.count_samples,
            rank,
        })
    }
}

/// Draws truth and data for replicate `index` of `config`.
pub fn draw_replicate(config: &SbcConfig, index: usize) -> Result<(SbcTruth, Spectrum)> {
    ReplicateGenerator::new(config)?.draw(index)
}

/// Outcome of a calibration run: successful replicates plus the failures
/// that were excluded.
#[derive(Debug, Clone)]
pub struct SbcRun {
    pub replicates: Vec<SbcReplicate>,
    pub failures: Vec<(usize, Error)>,
}

/// Runs all replicates in order. Pipeline failures are logged and
/// collected rather than aborting the run.
pub fn run_sbc(config: &SbcConfig) -> Result<SbcRun> {
    let generator = ReplicateGenerator::new(config)?;
    let mut replicates = Vec::with_capacity(config.replicates);
    let mut failures = Vec::new();
    for s in 0..config.replicates {
        match generator.run(s) {
            Ok(rep) => {
                log::info!(
                    "replicate {s}: N* = {}, rank = {} / {}",
                    rep.truth.n_star,
                    rep.rank,
                    rep.posterior_counts.len()
                );
                replicates.push(rep);
            }
            Err(e) => {
                log::warn!("replicate {s} failed and is excluded: {e}");
                failures.push((s, e));
            }
        }
    }
    Ok(SbcRun { replicates, failures })
}

/// Number of posterior draws strictly below the true value.
pub fn rank_statistic(n_true: usize, posterior_counts: &[usize]) -> usize {
    posterior_counts.iter().filter(|&&n| n < n_true).count()
}

/// Minimum replicate count accepted by [`sbc_report`].
pub const MIN_REPLICATES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub ranks: Vec<usize>,
    /// Posterior draws per replicate; ranks lie in `0..=draws`.
    pub draws: usize,
    pub bin_counts: Vec<usize>,
    pub expected_per_bin: f64,
    /// Pointwise 99% binomial band for a bin count.
    pub band_lower: u64,
    pub band_upper: u64,
    pub chi_square: f64,
    pub uniformity_pvalue: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage95: f64,
}

/// Bins ranks in `0..=draws` into `n_bins` equal-width bins over
/// `[0, draws]`; the top rank joins the last bin.
pub fn rank_histogram(ranks: &[usize], draws: usize, n_bins: usize) -> Vec<usize> {
    let mut bins = vec![0; n_bins];
    for &r in ranks {
        let b = if draws == 0 {
            0
        } else {
            ((r as u128 * n_bins as u128) / draws as u128) as usize
        };
        bins[b.min(n_bins - 1)] += 1;
    }
    bins
}

/// Pearson chi-square statistic against equal bin probabilities and its
/// upper-tail p-value.
pub fn chi_square_uniformity(bins: &[usize]) -> (f64, f64) {
    let total: usize = bins.iter().sum();
    let expected = total as f64 / bins.len() as f64;
    let stat: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = if bins.len() < 2 {
        1.0
    } else {
        ChiSquared::new((bins.len() - 1) as f64).expect("positive dof").sf(stat)
    };
    (stat, p)
}

/// Builds a report from per-replicate ranks and count summaries.
pub fn sbc_report(replicates: &[SbcReplicate], n_bins: usize) -> Result<SbcReport> {
    if replicates.len() < MIN_REPLICATES {
        return Err(Error::InsufficientReplicates {
            needed: MIN_REPLICATES,
            got: replicates.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::Domain("need at least one bin".into()));
    }
    let draws = replicates[0].posterior_counts.len();
    if let Some(r) = replicates.iter().find(|r| r.posterior_counts.len() != draws) {
        return Err(Error::Shape {
            expected: draws,
            actual: r.posterior_counts.len(),
        });
    }
    let ranks: Vec<usize> = replicates.iter().map(|r| r.rank).collect();
    let errors: Vec<f64> = replicates
        .iter()
        .map(|r| r.posterior_mean() - r.truth.n_star as f64)
        .collect();
    let s = replicates.len() as f64;
    let bias = errors.iter().sum::<f64>() / s;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / s).sqrt();
    let covered = replicates
        .iter()
        .filter(|r| {
            let (lo, hi) = r.interval95();
            (lo..=hi).contains(&r.truth.n_star)
        })
        .count();
    let mut report = report_from_ranks(ranks, draws, n_bins)?;
    report.bias = bias;
    report.rmse = rmse;
    report.coverage95 = covered as f64 / s;
    Ok(report)
}

/// Rank histogram, uniformity test and band for bare ranks. Bias, RMSE
/// and coverage are left as NaN.
pub fn report_from_ranks(ranks: Vec<usize>, draws: usize, n_bins: usize) -> Result<SbcReport> {
    if ranks.len() < MIN_REPLICATES {
        return Err(Error::InsufficientReplicates {
            needed: MIN_REPLICATES,
            got: ranks.len(),
        });
    }
    if let Some(r) = ranks.iter().find(|&&r| r > draws) {
        return Err(Error::Domain(format!("rank {r} exceeds draw count {draws}")));
    }
    let bin_counts = rank_histogram(&ranks, draws, n_bins);
    let (chi_square, uniformity_pvalue) = chi_square_uniformity(&bin_counts);
    let binom = Binomial::new(1.0 / n_bins as f64, ranks.len() as u64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(SbcReport {
        expected_per_bin: ranks.len() as f64 / n_bins as f64,
        band_lower: binom.inverse_cdf(0.005),
        band_upper: binom.inverse_cdf(0.995),
        ranks,
        draws,
        bin_counts,
        chi_square,
        uniformity_pvalue,
        bias: f64::NAN,
        rmse: f64::NAN,
        coverage95: f64::NAN,
    })
}
