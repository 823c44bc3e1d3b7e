//! Spectrum ingestion from two-column text and RRUFF files.

use std::path::Path;

use linenarrow::spectrum::{Spectrum, WavenumberGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::fmt_f64;

/// Relative spacing deviation above which the input is resampled.
pub const SPACING_RTOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub points: usize,
    pub reversed: bool,
    pub resampled: bool,
    /// Largest relative deviation of a native step from the median step.
    pub max_spacing_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub spectrum: Spectrum,
    pub report: IngestReport,
}

/// Reads `(wavenumber, intensity)` pairs separated by commas or whitespace.
/// Lines starting with `##` and blank lines are skipped. Descending files
/// are reversed; uneven spacing is linearly resampled onto the median step.
pub fn ingest(path: &Path) -> CliResult<Ingested> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Ingest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse(&text).map_err(|(line, message)| match line {
        Some(line) => CliError::IngestLine {
            path: path.to_path_buf(),
            line,
            message,
        },
        None => CliError::Ingest {
            path: path.to_path_buf(),
            message,
        },
    })
}

type ParseError = (Option<usize>, String);

fn parse(text: &str) -> Result<Ingested, ParseError> {
    let mut nu = Vec::new();
    let mut y = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("##") {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err((Some(line_no), format!("expected 2 columns, found {}", fields.len())));
        }
        let mut vals = [0.0; 2];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| (Some(line_no), format!("cannot parse '{f}' as a finite number")))?;
        }
        nu.push(vals[0]);
        y.push(vals[1]);
        lines.push(line_no);
    }
    if nu.len() < WavenumberGrid::MIN_LEN {
        return Err((
            None,
            format!(
                "need at least {} data points, found {}",
                WavenumberGrid::MIN_LEN,
                nu.len()
            ),
        ));
    }
    let reversed = nu[1] < nu[0];
    if reversed {
        nu.reverse();
        y.reverse();
        lines.reverse();
    }
    if let Some(k) = nu.windows(2).position(|w| w[1] <= w[0]) {
        return Err((Some(lines[k + 1]), "wavenumbers are not strictly monotone".into()));
    }

    let mut steps: Vec<f64> = nu.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let median = steps[steps.len() / 2];
    let deviation = steps.iter().map(|s| (s - median).abs() / median).fold(0.0, f64::max);
    let k = nu.len();
    let (grid, intensity, resampled) = if deviation > SPACING_RTOL {
        let start = nu[0];
        let len = ((nu[k - 1] - start) / median + 1e-9).floor() as usize + 1;
        let grid = WavenumberGrid::new(start, median, len).map_err(|e| (None, e.to_string()))?;
        let intensity = grid.nu().iter().map(|&x| interpolate(&nu, &y, x)).collect();
        (grid, intensity, true)
    } else {
        let h = (nu[k - 1] - nu[0]) / (k - 1) as f64;
        (
            WavenumberGrid::new(nu[0], h, k).map_err(|e| (None, e.to_string()))?,
            y,
            false,
        )
    };
    if resampled {
        log::info!(
            "spacing varies by {:.3}% > {:.1}%; resampled {} points onto {} nodes with h = {median}",
            100.0 * deviation,
            100.0 * SPACING_RTOL,
            k,
            grid.len()
        );
    }
    let spectrum = Spectrum::new(grid, intensity).map_err(|e| (None, e.to_string()))?;
    Ok(Ingested {
        spectrum,
        report: IngestReport {
            points: k,
            reversed,
            resampled,
            max_spacing_deviation: deviation,
        },
    })
}

/// Piecewise-linear interpolation on increasing nodes; `x` inside the range.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    ys[i - 1] + t * (ys[i] - ys[i - 1])
}

/// Writes a spectrum as comma-separated two-column text.
pub fn write_spectrum(path: &Path, spectrum: &Spectrum) -> CliResult<()> {
    let mut out = String::with_capacity(48 * spectrum.len());
    for (x, v) in spectrum.grid().nu().iter().zip(spectrum.intensity()) {
        out.push_str(&fmt_f64(*x));
        out.push(',');
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}
