//! Squared-exponential GP prior pieces.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, StudentsT};

use crate::error::{Error, Result};
use crate::spectrum::WavenumberGrid;

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperParams {
    pub log_sigma_lambda: f64,
    /// Length scale in wavenumber units; fixed during fitting.
    pub length_scale: f64,
}

impl GpHyperParams {
    pub fn new(log_sigma_lambda: f64, length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::Domain(format!(
                "length scale must be positive, got {length_scale}"
            )));
        }
        if !log_sigma_lambda.is_finite() {
            return Err(Error::Domain("log sigma_lambda must be finite".into()));
        }
        Ok(Self {
            log_sigma_lambda,
            length_scale,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma_lambda.exp()
    }
}

/// Student-t prior `t(mean, variance, dof)` on `log sigma_lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSigmaPrior {
    pub mean: f64,
    pub variance: f64,
    pub dof: f64,
}

impl LogSigmaPrior {
    pub fn new(mean: f64, variance: f64, dof: f64) -> Result<Self> {
        StudentsT::new(mean, variance.sqrt(), dof).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(Self { mean, variance, dof })
    }

    /// `t(0, 100^2, 10)`, the default for Lorentz line shapes.
    pub fn lorentz_default() -> Self {
        Self {
            mean: 0.0,
            variance: 1e4,
            dof: 10.0,
        }
    }

    /// `t(0.01, 100^2, 10)`, the default for Voigt line shapes.
    pub fn voigt_default() -> Self {
        Self {
            mean: 0.01,
            variance: 1e4,
            dof: 10.0,
        }
    }

    pub fn ln_pdf(&self, log_sigma: f64) -> f64 {
        StudentsT::new(self.mean, self.variance.sqrt(), self.dof)
            .expect("validated on construction")
            .ln_pdf(log_sigma)
    }
}

/// Unit-variance squared-exponential correlation matrix on the grid nodes.
pub fn se_correlation(grid: &WavenumberGrid, length_scale: f64) -> DMatrix<f64> {
    let k = grid.len();
    let h = grid.h();
    // Entries depend only on |i - j|.
    let row: Vec<f64> = (0..k)
        .map(|d| {
            let r = d as f64 * h / length_scale;
            (-0.5 * r * r).exp()
        })
        .collect();
    DMatrix::from_fn(k, k, |i, j| row[i.abs_diff(j)])
}

/// Covariance `sigma_lambda^2 R` of the latent log-intensity.
pub fn se_covariance(grid: &WavenumberGrid, hypers: &GpHyperParams) -> DMatrix<f64> {
    se_correlation(grid, hypers.length_scale) * hypers.sigma().powi(2)
}

/// Lower Cholesky factor of `m + jitter * scale * I`, escalating the jitter
/// tenfold from 1e-10 up to 1e-6. Returns the factor and the jitter used.
pub fn jittered_cholesky(m: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter * scale;
        }
        if let Some(ch) = a.cholesky() {
            let l = ch.unpack();
            if (0..l.nrows()).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Ok((l, jitter));
            }
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning(JITTER_MAX))
}
