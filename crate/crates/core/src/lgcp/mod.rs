//! Log-Gaussian Cox process smoothing of line-narrowed spectra.
//!
//! The SMC ensemble of line-narrowed spectra is marginalized into pseudo
//! counts, a Poisson model with a squared-exponential GP prior on the
//! log-intensity is fitted, and local maxima of Laplace-posterior draws
//! give the posterior over peak locations and counts.
//!
//! `sigma_lambda` is chosen by maximizing the Laplace-approximate marginal
//! likelihood plus its log prior; the latent field is then the conditional
//! mode. Both are found in whitened coordinates `b = sigma L u` with
//! `L L^T = R` the jittered correlation matrix.

mod gp;
mod peaks;

pub use gp::{jittered_cholesky, se_correlation, se_covariance, GpHyperParams, LogSigmaPrior};
pub use peaks::{local_maxima, sample_peak_posterior, PeakPosterior};

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason};
use argmin::solver::brent::BrentOpt;
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::smc::SmcPosterior;
use crate::spectrum::{Spectrum, WavenumberGrid};

/// Pseudo counts `z_k = floor(C x_bar_k + 1/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountVector {
    pub z: Vec<u64>,
    pub c_scale: f64,
    /// Marginal line-narrowed spectrum the counts were rounded from.
    pub x_bar: Vec<f64>,
}

impl CountVector {
    pub fn from_counts(z: Vec<u64>) -> Self {
        let x_bar = z.iter().map(|&v| v as f64).collect();
        Self { z, c_scale: 1.0, x_bar }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.z.iter().sum()
    }
}

/// Weighted average of positive-part, unit-mass-normalized spectra, scaled
/// to `y_area`. `c_scale = None` picks `C = 50 / max x_bar`.
pub fn marginalize_lines<'a>(
    lines: impl IntoIterator<Item = (&'a [f64], f64)>,
    len: usize,
    y_area: f64,
    c_scale: Option<f64>,
) -> Result<CountVector> {
    let mut x_bar = vec![0.0; len];
    let mut used_weight = 0.0;
    let mut total_weight = 0.0;
    let mut skipped = 0usize;
    for (x, w) in lines {
        if x.len() != len {
            return Err(Error::Shape {
                expected: len,
                actual: x.len(),
            });
        }
        total_weight += w;
        let mass: f64 = x.iter().filter(|v| **v >= 0.0).sum();
        if !(mass > 0.0) {
            skipped += 1;
            continue;
        }
        used_weight += w;
        for (acc, v) in x_bar.iter_mut().zip(x) {
            if *v >= 0.0 {
                *acc += w * v / mass;
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} particle(s) with no positive mass skipped in marginalization");
    }
    if !(total_weight > 0.0) || !(used_weight > 0.0) {
        return Err(Error::Degenerate("no particle has positive line-narrowed mass".into()));
    }
    for v in &mut x_bar {
        *v *= y_area / total_weight;
    }
    let max = x_bar.iter().copied().fold(0.0, f64::max);
    let c = match c_scale {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(Error::Domain(format!("count scale must be positive, got {c}"))),
        None if max > 0.0 => 50.0 / max,
        None => return Err(Error::Degenerate("marginal spectrum has no positive entry".into())),
    };
    let z = x_bar.iter().map(|v| (c * v + 0.5).floor().max(0.0) as u64).collect();
    Ok(CountVector { z, c_scale: c, x_bar })
}

/// Marginalizes the SMC ensemble over `(theta, M)` into pseudo counts.
pub fn marginalize_counts(posterior: &SmcPosterior, y: &Spectrum, c_scale: Option<f64>) -> Result<CountVector> {
    if posterior.particles.is_empty() {
        return Err(Error::Degenerate("empty particle ensemble".into()));
    }
    let y_area: f64 = y.intensity().iter().sum();
    marginalize_lines(
        posterior.particles.iter().map(|p| (p.x_ln.x_ln.as_slice(), p.weight)),
        y.len(),
        y_area,
        c_scale,
    )
}

fn poisson_term(z: &[f64], b: &[f64]) -> f64 {
    z.iter().zip(b).map(|(z, b)| z * b - b.exp() - ln_gamma(z + 1.0)).sum()
}

/// Log joint density of `(b, psi)` given counts, with its gradient in `b`.
/// `prior = None` drops the hyperprior term.
pub fn lgcp_log_posterior(
    b: &[f64],
    z: &CountVector,
    hypers: &GpHyperParams,
    grid: &WavenumberGrid,
    prior: Option<&LogSigmaPrior>,
) -> Result<(f64, Vec<f64>)> {
    let k = grid.len();
    if b.len() != k || z.len() != k {
        return Err(Error::Shape {
            expected: k,
            actual: if b.len() != k { b.len() } else { z.len() },
        });
    }
    let sigma2 = hypers.sigma().powi(2);
    let cov = se_covariance(grid, hypers);
    let (l, _) = jittered_cholesky(&cov, sigma2)?;
    let bv = DVector::from_column_slice(b);
    let alpha = l
        .transpose()
        .solve_upper_triangular(&l.solve_lower_triangular(&bv).expect("nonsingular"))
        .expect("nonsingular");
    let log_det: f64 = 2.0 * (0..k).map(|i| l[(i, i)].ln()).sum::<f64>();
    let zf: Vec<f64> = z.z.iter().map(|&v| v as f64).collect();
    let mut value = poisson_term(&zf, b)
        - 0.5 * bv.dot(&alpha)
        - 0.5 * log_det
        - 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln();
    if let Some(p) = prior {
        value += p.ln_pdf(hypers.log_sigma_lambda);
    }
    let grad = (0..k).map(|i| zf[i] - b[i].exp() - alpha[i]).collect();
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub memory: usize,
    pub grad_tol: f64,
    pub max_iters: u64,
    /// Search interval for `log sigma_lambda`.
    pub log_sigma_bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-6,
            max_iters: 2000,
            log_sigma_bounds: (-4.0, 4.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LgcpFit {
    pub b_map: Vec<f64>,
    pub laplace_cov: DMatrix<f64>,
    pub hypers: GpHyperParams,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: u64,
    /// Laplace approximation of `log p(z | sigma_lambda)`.
    pub log_evidence: f64,
    grid: WavenumberGrid,
    factor: DMatrix<f64>,
}

/// Serializable view of a fit with a pointwise 90% band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgcpSummary {
    pub nu: Vec<f64>,
    pub b_map: Vec<f64>,
    pub intensity: Vec<f64>,
    pub b_lower90: Vec<f64>,
    pub b_upper90: Vec<f64>,
    pub hypers: GpHyperParams,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: u64,
    pub log_evidence: f64,
}

const Z90: f64 = 1.6448536269514722;

impl LgcpFit {
    /// Builds a fit from a mode and covariance, factorizing the covariance.
    pub fn from_parts(
        grid: WavenumberGrid,
        b_map: Vec<f64>,
        laplace_cov: DMatrix<f64>,
        hypers: GpHyperParams,
    ) -> Result<Self> {
        if b_map.len() != grid.len() || laplace_cov.nrows() != grid.len() || laplace_cov.ncols() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                actual: b_map.len(),
            });
        }
        let scale = laplace_cov.diagonal().max().max(f64::MIN_POSITIVE);
        let (factor, _) = jittered_cholesky(&laplace_cov, scale)?;
        Ok(Self {
            b_map,
            laplace_cov,
            hypers,
            converged: true,
            grad_norm: 0.0,
            iterations: 0,
            log_evidence: f64::NAN,
            grid,
            factor,
        })
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    /// Lower-triangular factor used to draw from the Laplace posterior.
    pub fn sample_factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Writes one draw from `N(b_map, laplace_cov)` into `out`, using `eps`
    /// as scratch for the standard normal vector.
    pub fn draw_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, eps: &mut [f64], out: &mut [f64]) {
        for e in eps.iter_mut() {
            *e = rand_distr::StandardNormal.sample(rng);
        }
        out.copy_from_slice(&self.b_map);
        // Lower-triangular factor: row i only touches eps[..=i].
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, e) in eps[..=i].iter().enumerate() {
                acc += self.factor[(i, c)] * e;
            }
            *o += acc;
        }
    }

    pub fn summary(&self) -> LgcpSummary {
        let sd: Vec<f64> = (0..self.b_map.len())
            .map(|i| self.laplace_cov[(i, i)].max(0.0).sqrt())
            .collect();
        LgcpSummary {
            nu: self.grid.nu().to_vec(),
            b_map: self.b_map.clone(),
            intensity: self.b_map.iter().map(|b| b.exp()).collect(),
            b_lower90: self.b_map.iter().zip(&sd).map(|(b, s)| b - Z90 * s).collect(),
            b_upper90: self.b_map.iter().zip(&sd).map(|(b, s)| b + Z90 * s).collect(),
            hypers: self.hypers,
            converged: self.converged,
            grad_norm: self.grad_norm,
            iterations: self.iterations,
            log_evidence: self.log_evidence,
        }
    }
}

// Beyond this log-intensity `exp` continues as its second-order Taylor
// polynomial, keeping line searches finite; optima lie far below it.
const EXP_CAP: f64 = 50.0;

fn soft_exp(b: f64) -> (f64, f64, f64) {
    if b <= EXP_CAP {
        let e = b.exp();
        (e, e, e)
    } else {
        let e = EXP_CAP.exp();
        let d = b - EXP_CAP;
        (e * (1.0 + d + 0.5 * d * d), e * (1.0 + d), e)
    }
}

/// Negative conditional log posterior of the whitened latent field.
struct Whitened<'a> {
    l: &'a DMatrix<f64>,
    sigma: f64,
    z: &'a [f64],
}

impl Whitened<'_> {
    fn latent(&self, u: &[f64]) -> DVector<f64> {
        self.l * DVector::from_column_slice(u) * self.sigma
    }

    fn value(&self, u: &[f64]) -> f64 {
        let b = self.latent(u);
        let ll: f64 = self.z.iter().zip(b.iter()).map(|(z, b)| z * b - soft_exp(*b).0).sum();
        let uu: f64 = u.iter().map(|v| v * v).sum();
        -ll + 0.5 * uu
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        let b = self.latent(u);
        let r = DVector::from_iterator(b.len(), self.z.iter().zip(b.iter()).map(|(z, b)| z - soft_exp(*b).1));
        let g = self.l.tr_mul(&r) * self.sigma;
        u.iter().zip(g.iter()).map(|(u, g)| u - g).collect()
    }

    /// Cholesky factor of the Hessian `I + sigma^2 L^T W L`.
    fn hessian_factor(&self, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        let k = b.len();
        let mut wl = self.l.clone() * self.sigma;
        for (i, mut row) in wl.row_iter_mut().enumerate() {
            row *= soft_exp(b[i]).2.sqrt();
        }
        let mut a = wl.tr_mul(&wl);
        for i in 0..k {
            a[(i, i)] += 1.0;
        }
        Ok(a.cholesky().ok_or(Error::Conditioning(0.0))?.unpack())
    }
}

impl CostFunction for Whitened<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(u))
    }
}

impl Gradient for Whitened<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.grad(u))
    }
}

struct LatentMode {
    u: Vec<f64>,
    b: Vec<f64>,
    grad_norm: f64,
    iterations: u64,
    converged: bool,
    log_evidence: f64,
    /// Cholesky factor of `I + sigma^2 L^T W L`.
    a_factor: DMatrix<f64>,
}

const NEWTON_POLISH_STEPS: usize = 20;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

fn solve_latent(
    l: &DMatrix<f64>,
    sigma: f64,
    z: &[f64],
    warm: Option<&[f64]>,
    options: &FitOptions,
) -> Result<LatentMode> {
    let k = z.len();
    let problem = Whitened { l, sigma, z };
    let init = warm.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; k]);
    let linesearch = MoreThuenteLineSearch::new();
    let solver = LBFGS::new(linesearch, options.memory)
        .with_tolerance_grad(options.grad_tol)
        .map_err(|e| Error::Numeric(e.to_string()))?
        .with_tolerance_cost(0.0)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let result = Executor::new(problem, solver)
        .configure(|s| s.param(init.clone()).max_iters(options.max_iters))
        .timer(false)
        .run();
    let problem = Whitened { l, sigma, z };
    let (mut u, iterations) = match result {
        Ok(res) => {
            let state = res.state();
            if !matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged)) {
                log::debug!("L-BFGS ended with {:?}", state.get_termination_reason());
            }
            let u = state.get_param().or(state.get_best_param()).cloned().unwrap_or(init);
            (u, state.get_iter())
        }
        Err(e) => {
            log::debug!("L-BFGS failed: {e}");
            (init, 0)
        }
    };
    // Line searches stall near machine precision on the cost; finish with
    // damped Newton steps on the same objective.
    let mut grad = problem.grad(&u);
    let mut grad_norm = norm(&grad);
    let mut steps = 0;
    while grad_norm > options.grad_tol && steps < NEWTON_POLISH_STEPS {
        steps += 1;
        let p = problem.hessian_factor(&problem.latent(&u))?;
        let g = DVector::from_column_slice(&grad);
        let dir = p
            .solve_lower_triangular(&g)
            .and_then(|y| p.transpose().solve_upper_triangular(&y))
            .ok_or(Error::Conditioning(0.0))?;
        let f0 = problem.value(&u);
        let step = |t: f64| -> Vec<f64> { u.iter().zip(dir.iter()).map(|(a, d)| a - t * d).collect() };
        // Near the optimum cost differences drop below rounding, so a
        // shrinking gradient also counts as progress.
        let mut t = 1.0;
        let (next, next_grad, next_norm) = loop {
            let next = step(t);
            let next_grad = problem.grad(&next);
            let next_norm = norm(&next_grad);
            if next_norm < grad_norm || problem.value(&next) < f0 || t < 1e-8 {
                break (next, next_grad, next_norm);
            }
            t *= 0.5;
        };
        if next_norm >= grad_norm && problem.value(&next) >= f0 {
            break;
        }
        u = next;
        grad = next_grad;
        grad_norm = next_norm;
    }
    let converged = grad_norm <= options.grad_tol;
    if !converged {
        log::warn!("latent solve stopped at |grad| = {grad_norm:e}");
    }
    let b = problem.latent(&u);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite latent mode".into()));
    }
    let a_factor = problem.hessian_factor(&b)?;
    let log_det_a: f64 = 2.0 * (0..k).map(|i| a_factor[(i, i)].ln()).sum::<f64>();
    let bs: Vec<f64> = b.iter().copied().collect();
    let uu: f64 = u.iter().map(|v| v * v).sum();
    let log_evidence = poisson_term(z, &bs) - 0.5 * uu - 0.5 * log_det_a;
    Ok(LatentMode {
        u,
        b: bs,
        grad_norm,
        iterations: iterations + steps as u64,
        converged,
        log_evidence,
        a_factor,
    })
}

fn laplace_covariance(l: &DMatrix<f64>, sigma: f64, a_factor: &DMatrix<f64>) -> DMatrix<f64> {
    // sigma^2 L A^{-1} L^T = X^T X with X = sigma P^{-1} L^T
    let x = a_factor
        .solve_lower_triangular(&(l.transpose() * sigma))
        .expect("nonsingular factor");
    let cov = x.tr_mul(&x);
    (&cov + cov.transpose()) * 0.5
}

fn counts_f64(z: &CountVector) -> Vec<f64> {
    z.z.iter().map(|&v| v as f64).collect()
}

/// Conditional mode and Laplace covariance of `b` at fixed hyperparameters.
pub fn fit_latent(
    z: &CountVector,
    grid: &WavenumberGrid,
    hypers: &GpHyperParams,
    options: &FitOptions,
) -> Result<LgcpFit> {
    if z.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            actual: z.len(),
        });
    }
    let (l, _) = jittered_cholesky(&se_correlation(grid, hypers.length_scale), 1.0)?;
    let zf = counts_f64(z);
    let sigma = hypers.sigma();
    let mode = solve_latent(&l, sigma, &zf, None, options)?;
    finish(grid, *hypers, &l, sigma, mode)
}

fn finish(
    grid: &WavenumberGrid,
    hypers: GpHyperParams,
    l: &DMatrix<f64>,
    sigma: f64,
    mode: LatentMode,
) -> Result<LgcpFit> {
    let cov = laplace_covariance(l, sigma, &mode.a_factor);
    let mut fit = LgcpFit::from_parts(grid.clone(), mode.b, cov, hypers)?;
    fit.converged = mode.converged;
    fit.grad_norm = mode.grad_norm;
    fit.iterations = mode.iterations;
    fit.log_evidence = mode.log_evidence;
    Ok(fit)
}

struct Evidence<'a> {
    l: &'a DMatrix<f64>,
    z: &'a [f64],
    prior: &'a LogSigmaPrior,
    options: &'a FitOptions,
    warm: RefCell<Option<(f64, Vec<f64>)>>,
}

impl CostFunction for Evidence<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, s: &f64) -> std::result::Result<f64, argmin::core::Error> {
        let sigma = s.exp();
        let warm = self
            .warm
            .borrow()
            .as_ref()
            .map(|(prev, u)| u.iter().map(|v| v * prev / sigma).collect::<Vec<f64>>());
        let mode = solve_latent(self.l, sigma, self.z, warm.as_deref(), self.options)
            .map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        let value = mode.log_evidence + self.prior.ln_pdf(*s);
        *self.warm.borrow_mut() = Some((sigma, mode.u));
        Ok(-value)
    }
}

/// Fits `log sigma_lambda` by maximizing the Laplace marginal likelihood
/// times its prior (Brent search on `options.log_sigma_bounds`), then the
/// latent mode and Laplace covariance at that value.
pub fn fit_map(
    z: &CountVector,
    grid: &WavenumberGrid,
    hypers_init: &GpHyperParams,
    prior: &LogSigmaPrior,
    options: &FitOptions,
) -> Result<LgcpFit> {
    if z.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            actual: z.len(),
        });
    }
    let (lo, hi) = options.log_sigma_bounds;
    if !(lo < hi) {
        return Err(Error::Domain("log sigma bounds must be increasing".into()));
    }
    let (l, _) = jittered_cholesky(&se_correlation(grid, hypers_init.length_scale), 1.0)?;
    let zf = counts_f64(z);
    let init = hypers_init.log_sigma_lambda.clamp(lo, hi);
    let warm_mode = solve_latent(&l, init.exp(), &zf, None, options)?;
    let problem = Evidence {
        l: &l,
        z: &zf,
        prior,
        options,
        warm: RefCell::new(Some((init.exp(), warm_mode.u))),
    };
    let result = Executor::new(problem, BrentOpt::new(lo, hi).set_tolerance(1e-8, 1e-4))
        .configure(|s| s.max_iters(100))
        .timer(false)
        .run()
        .map_err(|e| Error::Numeric(format!("hyperparameter search failed: {e}")))?;
    let s_best = *result
        .state()
        .get_best_param()
        .ok_or_else(|| Error::Numeric("hyperparameter search returned nothing".into()))?;
    let warm = result.problem.problem.as_ref().and_then(|p| p.warm.borrow().clone());
    let sigma = s_best.exp();
    let warm_u = warm.map(|(prev, u)| u.iter().map(|v| v * prev / sigma).collect::<Vec<f64>>());
    let mode = solve_latent(&l, sigma, &zf, warm_u.as_deref(), options)?;
    if (s_best - lo).abs() < 1e-3 || (hi - s_best).abs() < 1e-3 {
        log::warn!("log sigma_lambda = {s_best:.4} sits on the search bound [{lo}, {hi}]");
    }
    let hypers = GpHyperParams::new(s_best, hypers_init.length_scale)?;
    finish(grid, hypers, &l, sigma, mode)
}
