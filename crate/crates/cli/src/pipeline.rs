//! Full narrowing run: ingest, SMC, counts, LGCP fit, peak posterior, and
//! the artifacts of each stage.

use linenarrow::lgcp::{
    fit_map, marginalize_counts, sample_peak_posterior, CountVector, FitOptions, GpHyperParams, LgcpFit, PeakPosterior,
};
use linenarrow::smc::{run_smc, SmcPosterior};
use linenarrow::spectrum::{estimate_noise_sd, KernelFamily, Spectrum};
use serde::Serialize;

use crate::config::{NoiseSetting, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, IngestReport};
use crate::output::{fmt_f64, write_csv, write_json, write_text, ArtifactDir};
use crate::peak_table::{self, LocationHistogram, PeakTable};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    pub noise_estimated: bool,
    /// Burg order used for truncation length `M`.
    pub ar_order: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smc_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_sigma_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lgcp_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lgcp_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub software: &'static str,
    pub version: &'static str,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub config: RunConfig,
    pub metadata: RunMetadata,
    pub artifacts: Vec<String>,
}

/// Stage name for the failure manifest.
pub fn stage_of(err: &CliError) -> &'static str {
    match err {
        CliError::Config(_) => "config",
        CliError::Ingest { .. } | CliError::IngestLine { .. } => "ingest",
        CliError::Pipeline { stage, .. } => stage,
        CliError::Output { .. } => "write",
    }
}

fn stage<T>(name: &'static str, r: linenarrow::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Pipeline { stage: name, source })
}

/// Everything the pipeline produced, for callers that want more than files.
pub struct RunOutput {
    pub spectrum: Spectrum,
    pub posterior: SmcPosterior,
    pub counts: CountVector,
    pub fit: LgcpFit,
    pub peaks: PeakPosterior,
    pub histogram: LocationHistogram,
    pub table: PeakTable,
}

/// Runs the pipeline on `config.input`, writing artifacts into
/// `config.output`. On failure the artifacts written so far are kept and
/// the manifest names the failing stage.
pub fn run_pipeline(config: &RunConfig) -> CliResult<RunOutput> {
    let mut dir = ArtifactDir::create(&config.output)?;
    let mut meta = RunMetadata {
        ar_order: "M - 1",
        ..Default::default()
    };
    let result = stages(config, &mut dir, &mut meta);
    let (status, failed_stage, error) = match &result {
        Ok(_) => ("ok", None, None),
        Err(e) => ("failed", Some(stage_of(e)), Some(e.to_string())),
    };
    let manifest_path = dir.file(MANIFEST);
    let manifest = Manifest {
        software: "linenarrow",
        version: env!("CARGO_PKG_VERSION"),
        status,
        failed_stage,
        error,
        seed: config.seed,
        config: config.clone(),
        metadata: meta,
        artifacts: dir.written().to_vec(),
    };
    write_json(&manifest_path, &manifest)?;
    result
}

fn stages(config: &RunConfig, dir: &mut ArtifactDir, meta: &mut RunMetadata) -> CliResult<RunOutput> {
    write_text(&dir.file("config.toml"), &config.to_toml())?;
    let input = config
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("no input spectrum given".into()))?;
    let ingested = ingest(input)?;
    meta.ingest = Some(ingested.report.clone());
    let spectrum = ingested.spectrum;
    let grid = spectrum.grid().clone();

    let noise_sd = match config.noise_sd {
        NoiseSetting::Value(v) => v,
        NoiseSetting::Keyword(_) => {
            meta.noise_estimated = true;
            stage("noise", estimate_noise_sd(&spectrum))?.sigma_eps()
        }
    };
    meta.noise_sd = Some(noise_sd);
    let smc_config = config.smc(noise_sd)?;
    let posterior = stage("smc", run_smc(&spectrum, &config.priors(), &smc_config))?;
    meta.smc_steps = Some(posterior.kappa_schedule.len() - 1);
    write_particles(dir, &posterior, config.family)?;
    write_trace(dir, &posterior)?;

    let counts = stage("counts", marginalize_counts(&posterior, &spectrum, config.c_scale))?;
    meta.c_scale = Some(counts.c_scale);
    write_csv(
        &dir.file("counts.csv"),
        &["nu", "x_bar", "z"],
        grid.nu()
            .iter()
            .zip(&counts.x_bar)
            .zip(&counts.z)
            .map(|((nu, x), z)| [fmt_f64(*nu), fmt_f64(*x), z.to_string()]),
    )?;

    let length_scale = config.length_scale.unwrap_or(5.0 * grid.h());
    meta.length_scale = Some(length_scale);
    let hypers = stage("lgcp", GpHyperParams::new(0.0, length_scale))?;
    let fit = stage(
        "lgcp",
        fit_map(
            &counts,
            &grid,
            &hypers,
            &config.log_sigma_prior()?,
            &FitOptions::default(),
        ),
    )?;
    meta.log_sigma_lambda = Some(fit.hypers.log_sigma_lambda);
    meta.lgcp_converged = Some(fit.converged);
    meta.lgcp_grad_norm = Some(fit.grad_norm);
    let summary = fit.summary();
    write_csv(
        &dir.file("lgcp_fit.csv"),
        &["nu", "b_map", "intensity", "b_lower90", "b_upper90"],
        (0..grid.len()).map(|k| {
            [
                fmt_f64(summary.nu[k]),
                fmt_f64(summary.b_map[k]),
                fmt_f64(summary.intensity[k]),
                fmt_f64(summary.b_lower90[k]),
                fmt_f64(summary.b_upper90[k]),
            ]
        }),
    )?;
    if !fit.converged {
        return Err(CliError::Pipeline {
            stage: "lgcp",
            source: linenarrow::Error::Numeric(format!("MAP fit did not converge (|grad| = {:e})", fit.grad_norm)),
        });
    }

    let peaks = sample_peak_posterior(&fit, config.peak_samples, config.seed);
    let width = config.histogram_bin_width.unwrap_or(grid.h());
    let histogram = LocationHistogram::new(&peaks, &grid, width);
    write_csv(
        &dir.file("peak_histogram.csv"),
        &["center", "count", "mass"],
        (0..histogram.counts.len()).map(|b| {
            [
                fmt_f64(histogram.center(b)),
                histogram.counts[b].to_string(),
                fmt_f64(histogram.mass(b)),
            ]
        }),
    )?;
    let table = peak_table::build(&peaks, &histogram, &posterior);
    write_peak_table(dir, &table)?;
    Ok(RunOutput {
        spectrum,
        posterior,
        counts,
        fit,
        peaks,
        histogram,
        table,
    })
}

fn write_particles(dir: &mut ArtifactDir, post: &SmcPosterior, family: KernelFamily) -> CliResult<()> {
    let voigt = family == KernelFamily::Voigt;
    let header: &[&str] = if voigt {
        &["gamma", "sigma", "m", "weight", "log_like"]
    } else {
        &["gamma", "m", "weight", "log_like"]
    };
    write_csv(
        &dir.file("particles.csv"),
        header,
        post.particles.iter().map(|p| {
            let mut row = vec![fmt_f64(p.params.gamma())];
            if voigt {
                row.push(fmt_f64(p.params.sigma().unwrap_or(f64::NAN)));
            }
            row.extend([p.m.to_string(), fmt_f64(p.weight), fmt_f64(p.log_like)]);
            row
        }),
    )
}

fn write_trace(dir: &mut ArtifactDir, post: &SmcPosterior) -> CliResult<()> {
    write_csv(
        &dir.file("smc_trace.csv"),
        &["t", "kappa", "ess", "resampled", "mean_acceptance", "proposal_scale"],
        post.trace.iter().map(|r| {
            [
                r.t.to_string(),
                fmt_f64(r.kappa),
                fmt_f64(r.ess),
                r.resampled.to_string(),
                fmt_f64(r.mean_acceptance),
                fmt_f64(r.c),
            ]
        }),
    )
}

fn write_peak_table(dir: &mut ArtifactDir, table: &PeakTable) -> CliResult<()> {
    write_csv(
        &dir.file("peak_table.csv"),
        &["mode", "lower95", "upper95", "mass"],
        table
            .peaks
            .iter()
            .map(|p| [fmt_f64(p.mode), fmt_f64(p.lower95), fmt_f64(p.upper95), fmt_f64(p.mass)]),
    )?;
    write_csv(
        &dir.file("n_posterior.csv"),
        &["n", "probability"],
        table.n_posterior.iter().map(|(n, p)| [n.to_string(), fmt_f64(*p)]),
    )?;
    write_json(&dir.file("peak_table.json"), table)
}

/// Human-readable ingestion summary printed by `ingest-check`.
pub fn describe(spectrum: &Spectrum, report: &IngestReport) -> String {
    let g = spectrum.grid();
    let mut s = format!(
        "points: {}\ngrid: start {} h {} len {}\nreversed: {}\nresampled: {}\nmax spacing deviation: {:.3e}\n",
        report.points,
        g.start(),
        g.h(),
        g.len(),
        report.reversed,
        report.resampled,
        report.max_spacing_deviation
    );
    s.push_str(&format!("largest admissible M: {}\n", g.len() - 1));
    s
}
