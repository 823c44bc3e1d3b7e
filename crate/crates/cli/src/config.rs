//! Run configuration.
//!
//! A flat TOML document; every key may be overridden by an `LN_<KEY>`
//! environment variable, and both by `--set key=value` or dedicated flags.

use std::path::{Path, PathBuf};

use linenarrow::lgcp::{FitOptions, LogSigmaPrior};
use linenarrow::sbc::{GpScale, SbcConfig};
use linenarrow::smc::{DiscreteUniform, PriorSpec, ScaledTruncatedNormal, SmcConfig, UniformPrior};
use linenarrow::spectrum::{KernelFamily, WavenumberGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "LN_";

/// Every recognised key, in schema order.
pub const KEYS: &[&str] = &[
    "input",
    "output",
    "family",
    "gamma_lo",
    "gamma_hi",
    "sigma_mean_mult",
    "sigma_sd_mult",
    "m_lo",
    "m_hi",
    "particles",
    "j_min_fraction",
    "eta",
    "n_mcmc",
    "target_accept",
    "seed",
    "noise_sd",
    "length_scale",
    "c_scale",
    "log_sigma_mean",
    "log_sigma_variance",
    "log_sigma_dof",
    "peak_samples",
    "histogram_bin_width",
    "threads",
    "grid_start",
    "grid_h",
    "grid_len",
    "replicates",
    "amplitude_lo",
    "amplitude_hi",
    "length_fraction",
    "n_bins",
    "sbc_noise_sd",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKeyword {
    Estimate,
}

/// `noise_sd = 0.025` or `noise_sd = "estimate"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSetting {
    Value(f64),
    Keyword(NoiseKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Spectrum to narrow (two-column text or RRUFF).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub family: KernelFamily,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    /// Voigt only: `sigma | gamma ~ N+(mean_mult gamma, (sd_mult gamma)^2)`.
    pub sigma_mean_mult: f64,
    pub sigma_sd_mult: f64,
    pub m_lo: usize,
    pub m_hi: usize,
    pub particles: usize,
    pub j_min_fraction: f64,
    pub eta: f64,
    pub n_mcmc: usize,
    pub target_accept: f64,
    pub seed: u64,
    pub noise_sd: NoiseSetting,
    /// GP length scale in cm^-1; defaults to five grid spacings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_scale: Option<f64>,
    /// Count scale `C`; defaults to `50 / max x_bar`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_sigma_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_sigma_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_sigma_dof: Option<f64>,
    pub peak_samples: usize,
    /// Location histogram bin width; defaults to the grid spacing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_bin_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub grid_start: f64,
    pub grid_h: f64,
    pub grid_len: usize,
    pub replicates: usize,
    pub amplitude_lo: f64,
    pub amplitude_hi: f64,
    pub length_fraction: f64,
    pub n_bins: usize,
    pub sbc_noise_sd: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: PathBuf::from("linenarrow-out"),
            family: KernelFamily::Lorentz,
            gamma_lo: 1.0,
            gamma_hi: 30.0,
            sigma_mean_mult: 0.5,
            sigma_sd_mult: 0.05,
            m_lo: 10,
            m_hi: 80,
            particles: 1000,
            j_min_fraction: 0.5,
            eta: 0.9,
            n_mcmc: 5,
            target_accept: 0.30,
            seed: 0,
            noise_sd: NoiseSetting::Keyword(NoiseKeyword::Estimate),
            length_scale: None,
            c_scale: None,
            log_sigma_mean: None,
            log_sigma_variance: None,
            log_sigma_dof: None,
            peak_samples: 20_000,
            histogram_bin_width: None,
            threads: None,
            grid_start: 0.0,
            grid_h: 1.0,
            grid_len: 512,
            replicates: 100,
            amplitude_lo: 0.5,
            amplitude_hi: 2.0,
            length_fraction: 0.025,
            n_bins: 20,
            sbc_noise_sd: 0.025,
        }
    }
}

/// Interprets a bare override string as a TOML scalar: integer, float,
/// boolean, otherwise string.
fn scalar(raw: &str) -> toml::Value {
    let raw = raw.trim();
    if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(raw.to_string())
    }
}

/// Builds the configuration from an optional file, environment variables
/// and explicit `key=value` overrides, in increasing precedence.
pub fn load(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[(String, String)],
) -> CliResult<RunConfig> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
        .collect();
    env.sort();
    for (key, value) in env {
        if KEYS.contains(&key.as_str()) {
            table.insert(key, scalar(&value));
        } else {
            log::warn!(
                "ignoring unknown environment variable {ENV_PREFIX}{}",
                key.to_ascii_uppercase()
            );
        }
    }
    for (key, value) in overrides {
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown key '{key}'")));
        }
        table.insert(key.clone(), scalar(value));
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    Ok((k.trim().to_string(), v.to_string()))
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(!self.output.as_os_str().is_empty(), || "output path is empty".into())?;
        if let Some(p) = &self.input {
            check(!p.as_os_str().is_empty(), || "input path is empty".into())?;
        }
        check(0.0 < self.gamma_lo && self.gamma_lo <= self.gamma_hi, || {
            format!(
                "need 0 < gamma_lo <= gamma_hi, got {} and {}",
                self.gamma_lo, self.gamma_hi
            )
        })?;
        check(2 <= self.m_lo && self.m_lo <= self.m_hi, || {
            format!("need 2 <= m_lo <= m_hi, got {} and {}", self.m_lo, self.m_hi)
        })?;
        check(self.sigma_mean_mult >= 0.0 && self.sigma_sd_mult > 0.0, || {
            "sigma multipliers must be nonnegative mean and positive sd".into()
        })?;
        check(self.particles >= 2, || "need at least 2 particles".into())?;
        check(0.0 < self.j_min_fraction && self.j_min_fraction <= 1.0, || {
            "j_min_fraction must lie in (0, 1]".into()
        })?;
        if let NoiseSetting::Value(v) = self.noise_sd {
            check(v > 0.0 && v.is_finite(), || {
                format!("noise_sd must be positive, got {v}")
            })?;
        }
        for (name, v) in [
            ("length_scale", self.length_scale),
            ("c_scale", self.c_scale),
            ("histogram_bin_width", self.histogram_bin_width),
        ] {
            if let Some(v) = v {
                check(v > 0.0 && v.is_finite(), || format!("{name} must be positive, got {v}"))?;
            }
        }
        check(self.peak_samples >= 1, || "peak_samples must be positive".into())?;
        check(self.threads != Some(0), || "threads must be positive".into())?;
        check(
            0.0 < self.amplitude_lo && self.amplitude_lo <= self.amplitude_hi,
            || "need 0 < amplitude_lo <= amplitude_hi".into(),
        )?;
        check(self.n_bins >= 1, || "n_bins must be positive".into())?;
        check(self.sbc_noise_sd > 0.0, || "sbc_noise_sd must be positive".into())?;
        self.priors().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.log_sigma_prior()?;
        Ok(())
    }

    pub fn priors(&self) -> PriorSpec {
        PriorSpec {
            family: self.family,
            gamma: UniformPrior {
                lo: self.gamma_lo,
                hi: self.gamma_hi,
            },
            sigma_given_gamma: match self.family {
                KernelFamily::Lorentz => None,
                KernelFamily::Voigt => Some(ScaledTruncatedNormal {
                    mean_mult: self.sigma_mean_mult,
                    sd_mult: self.sigma_sd_mult,
                }),
            },
            m: DiscreteUniform {
                lo: self.m_lo,
                hi: self.m_hi,
            },
        }
    }

    pub fn smc(&self, noise_sd: f64) -> CliResult<SmcConfig> {
        let mut smc = SmcConfig::new(noise_sd, self.seed);
        smc.j_particles = self.particles;
        smc.j_min = ((self.particles as f64 * self.j_min_fraction).round() as usize).max(1);
        smc.eta = self.eta;
        smc.n_mcmc = self.n_mcmc;
        smc.target_accept = self.target_accept;
        smc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(smc)
    }

    pub fn log_sigma_prior(&self) -> CliResult<LogSigmaPrior> {
        let base = match self.family {
            KernelFamily::Lorentz => LogSigmaPrior::lorentz_default(),
            KernelFamily::Voigt => LogSigmaPrior::voigt_default(),
        };
        LogSigmaPrior::new(
            self.log_sigma_mean.unwrap_or(base.mean),
            self.log_sigma_variance.unwrap_or(base.variance),
            self.log_sigma_dof.unwrap_or(base.dof),
        )
        .map_err(|e| CliError::Config(format!("log sigma prior: {e}")))
    }

    pub fn synth_grid(&self) -> CliResult<WavenumberGrid> {
        WavenumberGrid::new(self.grid_start, self.grid_h, self.grid_len).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn sbc(&self) -> CliResult<SbcConfig> {
        let mut sbc = SbcConfig::new(self.synth_grid()?, self.seed);
        sbc.replicates = self.replicates;
        sbc.priors = self.priors();
        sbc.amplitude = UniformPrior {
            lo: self.amplitude_lo,
            hi: self.amplitude_hi,
        };
        sbc.gp_scale = GpScale::Prior(self.log_sigma_prior()?);
        sbc.length_fraction = self.length_fraction;
        sbc.noise_sd = self.sbc_noise_sd;
        sbc.smc = self.smc(self.sbc_noise_sd)?;
        sbc.fit = FitOptions::default();
        sbc.log_sigma_prior = self.log_sigma_prior()?;
        sbc.c_scale = self.c_scale;
        sbc.peak_samples = self.peak_samples;
        sbc.n_bins = self.n_bins;
        sbc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(sbc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
