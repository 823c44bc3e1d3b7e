//! Metropolis-Hastings rejuvenation of the particle ensemble.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{particle_rng, Particle, PriorSpec, SmcConfig};
use crate::error::Result;
use crate::fourier::Lomep;
use crate::spectrum::{LineShapeParams, Spectrum};

const RIDGE: f64 = 1e-8;
const ADAPT_RATE: f64 = 0.05;

/// Random-walk scale `c` and its adaptation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalScale {
    pub c: f64,
    pub target_accept: f64,
}

impl ProposalScale {
    pub fn new(dim: usize, target_accept: f64) -> Self {
        Self {
            c: 2.38 * 2.38 / dim as f64,
            target_accept,
        }
    }

    pub fn adapt(&mut self, acceptance: f64) {
        self.c *= (ADAPT_RATE * (acceptance - self.target_accept)).exp();
    }
}

fn state_vector(p: &Particle) -> Vec<f64> {
    let mut v = p.params.to_vector();
    v.push(p.m as f64);
    v
}

/// Weighted empirical covariance of `(theta, M)`.
pub fn empirical_covariance(particles: &[Particle]) -> DMatrix<f64> {
    let dim = state_vector(&particles[0]).len();
    let states: Vec<Vec<f64>> = particles.iter().map(state_vector).collect();
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let mut mean = vec![0.0; dim];
    for (s, p) in states.iter().zip(particles) {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += p.weight / total * v;
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (s, p) in states.iter().zip(particles) {
        let w = p.weight / total;
        for a in 0..dim {
            for b in 0..dim {
                cov[(a, b)] += w * (s[a] - mean[a]) * (s[b] - mean[b]);
            }
        }
    }
    cov
}

/// Lower Cholesky factor of `cov`; a singular matrix falls back to its
/// diagonal plus a small ridge.
pub fn proposal_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        let l = ch.l();
        if l.iter().all(|v| v.is_finite()) && (0..l.nrows()).all(|i| l[(i, i)] > 0.0) {
            return l;
        }
    }
    let diag = DVector::from_iterator(
        cov.nrows(),
        (0..cov.nrows()).map(|i| (cov[(i, i)].max(0.0) + RIDGE).sqrt()),
    );
    DMatrix::from_diagonal(&diag)
}

pub(crate) fn evaluate_particle(
    lomep: &Lomep,
    y: &Spectrum,
    params: LineShapeParams,
    m: usize,
    noise_sd: f64,
    weight: f64,
) -> Result<Particle> {
    let out = lomep.evaluate(&params, m)?;
    let log_like = super::quasi_log_likelihood_slice(y.intensity(), &out.g, noise_sd)?;
    if !log_like.is_finite() {
        return Err(crate::Error::Numeric("non-finite log-likelihood".into()));
    }
    let x_ln = lomep.line_narrowed(&out.xi_lp)?;
    Ok(Particle {
        params,
        m,
        x_ln,
        g: Spectrum::new(lomep.grid().clone(), out.g)?,
        log_like,
        weight,
    })
}

struct Proposal {
    theta: Vec<f64>,
    m: i64,
}

fn propose<R: Rng>(p: &Particle, factor: &DMatrix<f64>, scale: f64, rng: &mut R) -> Proposal {
    let dim = factor.nrows();
    let e = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)));
    let step = factor * e * scale;
    let mut theta = p.params.to_vector();
    for (t, s) in theta.iter_mut().zip(step.iter()) {
        *t += s;
    }
    let m_tilde = p.m as f64 + step[dim - 1];
    let m = m_tilde.round() as i64 + rng.random_range(-1..=1);
    Proposal { theta, m }
}

/// One MH update of a single particle at tempering exponent `kappa`.
/// Returns whether the proposal was accepted.
#[allow(clippy::too_many_arguments)]
fn mh_step<R: Rng>(
    particle: &mut Particle,
    kappa: f64,
    priors: &PriorSpec,
    lomep: &Lomep,
    y: &Spectrum,
    noise_sd: f64,
    factor: &DMatrix<f64>,
    scale: f64,
    rng: &mut R,
) -> bool {
    let prop = propose(particle, factor, scale, rng);
    let lp_new = priors.log_density(&prop.theta, prop.m);
    if !lp_new.is_finite() {
        return false;
    }
    let Ok(params) = LineShapeParams::from_vector(priors.family, &prop.theta) else {
        return false;
    };
    let m = prop.m as usize;
    let lp_old = priors.log_density(&particle.params.to_vector(), particle.m as i64);
    let u: f64 = rng.random();
    let Ok(out) = lomep.evaluate(&params, m) else {
        return false;
    };
    let Ok(ll_new) = super::quasi_log_likelihood_slice(y.intensity(), &out.g, noise_sd) else {
        return false;
    };
    if !ll_new.is_finite() {
        return false;
    }
    let log_alpha = kappa * (ll_new - particle.log_like) + lp_new - lp_old;
    if u.ln() >= log_alpha {
        return false;
    }
    let Ok(x_ln) = lomep.line_narrowed(&out.xi_lp) else {
        return false;
    };
    let Ok(g) = Spectrum::new(lomep.grid().clone(), out.g) else {
        return false;
    };
    particle.params = params;
    particle.m = m;
    particle.x_ln = x_ln;
    particle.g = g;
    particle.log_like = ll_new;
    true
}

/// Runs `config.n_mcmc` sweeps of random-walk MH over every particle,
/// targeting the tempered posterior at `kappa`. Returns the acceptance rate
/// of each sweep. When `adapt` is set, `scale.c` is updated after each sweep.
#[allow(clippy::too_many_arguments)]
pub fn mh_mutate(
    particles: &mut [Particle],
    kappa: f64,
    priors: &PriorSpec,
    config: &SmcConfig,
    lomep: &Lomep,
    y: &Spectrum,
    scale: &mut ProposalScale,
    iteration: u64,
    adapt: bool,
) -> Vec<f64> {
    let factor = proposal_factor(&empirical_covariance(particles));
    let mut rates = Vec::with_capacity(config.n_mcmc);
    for sweep in 0..config.n_mcmc {
        let sqrt_c = scale.c.sqrt();
        let accepted: usize = particles
            .par_iter_mut()
            .enumerate()
            .map(|(j, p)| {
                let mut rng = particle_rng(config.rng_seed, iteration, sweep as u64 + 1, j as u64);
                mh_step(p, kappa, priors, lomep, y, config.noise_sd, &factor, sqrt_c, &mut rng) as usize
            })
            .sum();
        let rate = accepted as f64 / particles.len() as f64;
        rates.push(rate);
        if adapt {
            scale.adapt(rate);
        }
    }
    rates
}
