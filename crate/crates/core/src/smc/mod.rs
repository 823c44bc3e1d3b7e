//! Adaptive-tempering sequential Monte Carlo over line-shape parameters and
//! the truncation length.
//!
//! Particles move from the prior (`kappa = 0`) to the quasi-posterior
//! (`kappa = 1`). Each step picks the next exponent so that the relative ESS
//! drops by about `eta`, reweights, resamples when the ESS falls below
//! `j_min`, and rejuvenates with random-walk MH.

mod mutate;
mod prior;
mod weights;

pub use mutate::{empirical_covariance, mh_mutate, proposal_factor, ProposalScale};
pub use prior::{DiscreteUniform, PriorSpec, ScaledTruncatedNormal, UniformPrior};
pub use weights::{ess, next_kappa, residual_resample_indices, reweight_weights};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{LineNarrowedSpectrum, Lomep};
use crate::spectrum::{LineShapeParams, Spectrum};

const INIT_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub j_particles: usize,
    pub j_min: usize,
    pub eta: f64,
    pub n_mcmc: usize,
    pub target_accept: f64,
    pub noise_sd: f64,
    pub rng_seed: u64,
}

impl SmcConfig {
    /// 1000 particles, resampling below 500, `eta = 0.9`, five MH sweeps
    /// per step at a target acceptance of 0.30.
    pub fn new(noise_sd: f64, rng_seed: u64) -> Self {
        Self {
            j_particles: 1000,
            j_min: 500,
            eta: 0.9,
            n_mcmc: 5,
            target_accept: 0.30,
            noise_sd,
            rng_seed,
        }
    }

    pub fn with_particles(mut self, j: usize) -> Self {
        self.j_particles = j;
        self.j_min = j / 2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.j_particles < 2 || self.j_min >= self.j_particles {
            return Err(Error::Domain(format!(
                "need 2 <= j_min + 1 <= j_particles, got j_min = {}, j_particles = {}",
                self.j_min, self.j_particles
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Domain(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.n_mcmc == 0 {
            return Err(Error::Domain("n_mcmc must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Domain("target acceptance must lie in (0, 1)".into()));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Domain(format!(
                "noise sd must be positive, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub params: LineShapeParams,
    pub m: usize,
    pub x_ln: LineNarrowedSpectrum,
    pub g: Spectrum,
    pub log_like: f64,
    pub weight: f64,
}

/// Per-iteration diagnostic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcTraceRecord {
    pub t: usize,
    pub kappa: f64,
    pub ess: f64,
    pub resampled: bool,
    pub mean_acceptance: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct SmcPosterior {
    pub particles: Vec<Particle>,
    pub kappa_schedule: Vec<f64>,
    pub acceptance_history: Vec<f64>,
    pub trace: Vec<SmcTraceRecord>,
}

impl SmcPosterior {
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Weighted mean of a particle statistic.
    pub fn mean(&self, f: impl Fn(&Particle) -> f64) -> f64 {
        self.particles.iter().map(|p| p.weight * f(p)).sum()
    }

    /// Weighted quantile of a particle statistic (inverse empirical CDF).
    pub fn quantile(&self, f: impl Fn(&Particle) -> f64, q: f64) -> f64 {
        let mut v: Vec<(f64, f64)> = self.particles.iter().map(|p| (f(p), p.weight)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        for (x, w) in &v {
            acc += w;
            if acc >= q {
                return *x;
            }
        }
        v.last().map(|p| p.0).unwrap_or(f64::NAN)
    }
}

/// `sum_k log N(y_k; g_k, sigma_eps^2)`.
pub fn quasi_log_likelihood(y: &Spectrum, g: &Spectrum, sigma_eps: f64) -> Result<f64> {
    quasi_log_likelihood_slice(y.intensity(), g.intensity(), sigma_eps)
}

pub(crate) fn quasi_log_likelihood_slice(y: &[f64], g: &[f64], sigma_eps: f64) -> Result<f64> {
    if y.len() != g.len() {
        return Err(Error::Shape {
            expected: y.len(),
            actual: g.len(),
        });
    }
    if !(sigma_eps > 0.0) {
        return Err(Error::Domain(format!("noise sd must be positive, got {sigma_eps}")));
    }
    let rss: f64 = y.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
    let var = sigma_eps * sigma_eps;
    Ok(-0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI * var).ln() - rss / (2.0 * var))
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for one particle at one (iteration, sweep).
pub(crate) fn particle_rng(seed: u64, iteration: u64, sweep: u64, particle: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mix(mix(mix(iteration) ^ sweep) ^ particle));
    rng
}

/// Reweights the ensemble in place from `old_kappa` to `new_kappa`.
pub fn reweight(particles: &mut [Particle], old_kappa: f64, new_kappa: f64) -> Result<()> {
    let w: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let ll: Vec<f64> = particles.iter().map(|p| p.log_like).collect();
    let new = reweight_weights(&w, &ll, new_kappa - old_kappa)?;
    for (p, w) in particles.iter_mut().zip(new) {
        p.weight = w;
    }
    Ok(())
}

/// Residual resampling; the returned particles all carry weight `1/J`.
pub fn residual_resample(particles: &[Particle], rng: &mut ChaCha8Rng) -> Vec<Particle> {
    let w: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let uniform = 1.0 / particles.len() as f64;
    residual_resample_indices(&w, rng)
        .into_iter()
        .map(|i| Particle {
            weight: uniform,
            ..particles[i].clone()
        })
        .collect()
}

fn initialize(y: &Spectrum, lomep: &Lomep, priors: &PriorSpec, config: &SmcConfig) -> Result<Vec<Particle>> {
    let j = config.j_particles;
    let weight = 1.0 / j as f64;
    (0..j)
        .into_par_iter()
        .map(|idx| {
            let mut rng = particle_rng(config.rng_seed, 0, 0, idx as u64);
            let mut last = None;
            for _ in 0..INIT_RETRIES {
                let (params, m) = priors.sample(&mut rng);
                match mutate::evaluate_particle(lomep, y, params, m, config.noise_sd, weight) {
                    Ok(p) => return Ok(p),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect()
}

/// Runs the sampler until `kappa = 1`.
pub fn run_smc(y: &Spectrum, priors: &PriorSpec, config: &SmcConfig) -> Result<SmcPosterior> {
    config.validate()?;
    priors.validate()?;
    if priors.m.hi >= y.len() {
        return Err(Error::Truncation {
            m: priors.m.hi,
            k: y.len(),
        });
    }
    let lomep = Lomep::new(y);
    let mut particles = initialize(y, &lomep, priors, config)?;
    let mut kappa = 0.0;
    let mut schedule = vec![0.0];
    let mut acceptance = Vec::new();
    let mut trace = Vec::new();
    let mut scale = ProposalScale::new(priors.dim(), config.target_accept);
    let mut t = 0usize;
    while kappa < 1.0 {
        t += 1;
        let w: Vec<f64> = particles.iter().map(|p| p.weight).collect();
        let ll: Vec<f64> = particles.iter().map(|p| p.log_like).collect();
        let next = next_kappa(kappa, &ll, &w, config.eta);
        reweight(&mut particles, kappa, next)?;
        kappa = next;
        let w: Vec<f64> = particles.iter().map(|p| p.weight).collect();
        let ess_now = ess(&w)?;
        let resampled = ess_now < config.j_min as f64;
        if resampled {
            let mut rng = particle_rng(config.rng_seed, t as u64, 0, u64::MAX);
            particles = residual_resample(&particles, &mut rng);
        }
        let adapt = kappa < 1.0;
        let rates = mh_mutate(
            &mut particles,
            kappa,
            priors,
            config,
            &lomep,
            y,
            &mut scale,
            t as u64,
            adapt,
        );
        let mean_acc = rates.iter().sum::<f64>() / rates.len() as f64;
        log::debug!("smc t={t} kappa={kappa:.6} ess={ess_now:.1} resampled={resampled} acc={mean_acc:.3}");
        schedule.push(kappa);
        acceptance.push(mean_acc);
        trace.push(SmcTraceRecord {
            t,
            kappa,
            ess: ess_now,
            resampled,
            mean_acceptance: mean_acc,
            c: scale.c,
        });
    }
    Ok(SmcPosterior {
        particles,
        kappa_schedule: schedule,
        acceptance_history: acceptance,
        trace,
    })
}
