//! Spectral domain types, line-shape kernels and the forward generative model.
//!
//! Observations follow `y_k = sum_n a_n K(nu_k - l_n; theta) + eps_k` where
//! `K` is an area-normalized Lorentz or Voigt profile and `eps_k` is white
//! Gaussian noise.

use std::f64::consts::{PI, SQRT_2};

use errorfunctions::ComplexErrorFunctions;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EQUIDISTANT_RTOL: f64 = 1e-9;

/// Equidistant wavenumber axis in cm^-1.
///
/// Stored as `(start, h, len)`; the node vector is materialized once so
/// that callers can borrow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavenumberGrid {
    start: f64,
    h: f64,
    nu: Vec<f64>,
}

impl WavenumberGrid {
    pub const MIN_LEN: usize = 4;

    pub fn new(start: f64, h: f64, len: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("grid spacing must be positive, got {h}")));
        }
        if !start.is_finite() {
            return Err(Error::Domain("grid start must be finite".into()));
        }
        if len < Self::MIN_LEN {
            return Err(Error::Domain(format!(
                "grid needs at least {} points, got {len}",
                Self::MIN_LEN
            )));
        }
        let nu = (0..len).map(|k| start + k as f64 * h).collect();
        Ok(Self { start, h, nu })
    }

    /// Validates an explicit node vector and converts it to a grid.
    pub fn from_nodes(nodes: &[f64]) -> Result<Self> {
        if nodes.len() < Self::MIN_LEN {
            return Err(Error::Domain(format!(
                "grid needs at least {} points, got {}",
                Self::MIN_LEN,
                nodes.len()
            )));
        }
        let h = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
        if !(h > 0.0) {
            return Err(Error::Domain("grid nodes must be strictly increasing".into()));
        }
        for (k, w) in nodes.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - h).abs() > EQUIDISTANT_RTOL * h.max(w[1].abs()) {
                return Err(Error::Domain(format!(
                    "grid not equidistant at node {k}: step {step} vs mean spacing {h}"
                )));
            }
        }
        Self::new(nodes[0], h, nodes.len())
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.nu[self.nu.len() - 1]
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Total width `K h` of the partition cells covering the grid.
    pub fn span(&self) -> f64 {
        self.h * self.len() as f64
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.start && x <= self.end()
    }

    /// Index of the node nearest to `x`, clamped into the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let pos = ((x - self.start) / self.h).round();
        pos.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

/// Observed or synthesized intensities on a wavenumber grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    grid: WavenumberGrid,
    intensity: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: WavenumberGrid, intensity: Vec<f64>) -> Result<Self> {
        if intensity.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                actual: intensity.len(),
            });
        }
        if let Some(k) = intensity.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("intensity[{k}] is not finite")));
        }
        Ok(Self { grid, intensity })
    }

    pub fn zeros(grid: WavenumberGrid) -> Self {
        let intensity = vec![0.0; grid.len()];
        Self { grid, intensity }
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn len(&self) -> usize {
        self.intensity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensity.is_empty()
    }

    /// Plain sum of intensities (the `y_area` normalizer).
    pub fn area(&self) -> f64 {
        self.intensity.iter().sum()
    }

    pub fn into_parts(self) -> (WavenumberGrid, Vec<f64>) {
        (self.grid, self.intensity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Lorentz,
    Voigt,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::Lorentz => f.write_str("lorentz"),
            KernelFamily::Voigt => f.write_str("voigt"),
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lorentz" | "lorentzian" => Ok(KernelFamily::Lorentz),
            "voigt" => Ok(KernelFamily::Voigt),
            other => Err(Error::Domain(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Line-shape parameters: Lorentz HWHM `gamma` plus Gaussian `sigma` for Voigt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineShapeParams {
    gamma: f64,
    sigma: Option<f64>,
}

impl LineShapeParams {
    pub fn lorentz(gamma: f64) -> Result<Self> {
        check_positive("gamma", gamma)?;
        Ok(Self { gamma, sigma: None })
    }

    pub fn voigt(gamma: f64, sigma: f64) -> Result<Self> {
        check_positive("gamma", gamma)?;
        check_positive("sigma", sigma)?;
        Ok(Self {
            gamma,
            sigma: Some(sigma),
        })
    }

    /// Builds parameters from a flat vector `(gamma[, sigma])`.
    pub fn from_vector(family: KernelFamily, theta: &[f64]) -> Result<Self> {
        match (family, theta) {
            (KernelFamily::Lorentz, [g]) => Self::lorentz(*g),
            (KernelFamily::Voigt, [g, s]) => Self::voigt(*g, *s),
            _ => Err(Error::Shape {
                expected: family.dim(),
                actual: theta.len(),
            }),
        }
    }

    pub fn family(&self) -> KernelFamily {
        if self.sigma.is_some() {
            KernelFamily::Voigt
        } else {
            KernelFamily::Lorentz
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn to_vector(&self) -> Vec<f64> {
        match self.sigma {
            Some(s) => vec![self.gamma, s],
            None => vec![self.gamma],
        }
    }

    /// Kernel value at offset `nu_offset` from the line center.
    pub fn eval(&self, nu_offset: f64) -> f64 {
        match self.sigma {
            None => lorentz_unchecked(nu_offset, self.gamma),
            Some(s) => voigt_unchecked(nu_offset, self.gamma, s),
        }
    }
}

impl KernelFamily {
    /// Number of line-shape parameters.
    pub fn dim(&self) -> usize {
        match self {
            KernelFamily::Lorentz => 1,
            KernelFamily::Voigt => 2,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Area-normalized Lorentzian with half-width at half-maximum `gamma`.
pub fn lorentz_eval(nu_offset: f64, gamma: f64) -> Result<f64> {
    check_positive("gamma", gamma)?;
    Ok(lorentz_unchecked(nu_offset, gamma))
}

#[inline]
fn lorentz_unchecked(nu: f64, gamma: f64) -> f64 {
    gamma / (PI * (nu * nu + gamma * gamma))
}

/// Voigt profile, the convolution of a Lorentzian (HWHM `gamma`) with a
/// zero-mean Gaussian of standard deviation `sigma`.
///
/// Evaluated as `Re w(z) / (sigma sqrt(2 pi))` with `z = (nu + i gamma) / (sigma sqrt 2)`.
pub fn voigt_eval(nu_offset: f64, gamma: f64, sigma: f64) -> Result<f64> {
    check_positive("gamma", gamma)?;
    check_positive("sigma", sigma)?;
    Ok(voigt_unchecked(nu_offset, gamma, sigma))
}

#[inline]
fn voigt_unchecked(nu: f64, gamma: f64, sigma: f64) -> f64 {
    let scale = sigma * SQRT_2;
    let z = Complex64::new(nu / scale, gamma / scale);
    z.w().re / (sigma * (2.0 * PI).sqrt())
}

/// Peak locations (cm^-1) and positive amplitudes of the underlying delta comb.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    locations: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl PeakSet {
    pub fn new(locations: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self> {
        if locations.len() != amplitudes.len() {
            return Err(Error::Shape {
                expected: locations.len(),
                actual: amplitudes.len(),
            });
        }
        if locations.iter().any(|l| !l.is_finite()) {
            return Err(Error::Domain("peak locations must be finite".into()));
        }
        if locations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("peak locations must be strictly increasing".into()));
        }
        if let Some(a) = amplitudes.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Domain(format!("amplitudes must be positive, got {a}")));
        }
        Ok(Self { locations, amplitudes })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
}

/// Known standard deviation of the additive Gaussian measurement error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma_eps: f64,
}

impl NoiseModel {
    pub fn new(sigma_eps: f64) -> Result<Self> {
        check_positive("sigma_eps", sigma_eps)?;
        Ok(Self { sigma_eps })
    }

    pub fn sigma_eps(&self) -> f64 {
        self.sigma_eps
    }
}

/// Evaluates `sum_n a_n K(nu_k - l_n)` directly at every grid node.
pub fn synthesize(grid: &WavenumberGrid, peaks: &PeakSet, params: &LineShapeParams) -> Result<Spectrum> {
    if let Some(l) = peaks.locations().iter().find(|l| !grid.contains(**l)) {
        return Err(Error::Domain(format!(
            "peak location {l} outside grid span [{}, {}]",
            grid.start(),
            grid.end()
        )));
    }
    let intensity = grid
        .nu()
        .iter()
        .map(|&nu| {
            peaks
                .locations()
                .iter()
                .zip(peaks.amplitudes())
                .map(|(&l, &a)| a * params.eval(nu - l))
                .sum()
        })
        .collect();
    Spectrum::new(grid.clone(), intensity)
}

/// Adds i.i.d. `N(0, sigma_eps^2)` noise, deterministic in `seed`.
pub fn add_noise(spec: &Spectrum, noise: &NoiseModel, seed: u64) -> Spectrum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intensity = spec
        .intensity()
        .iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + noise.sigma_eps() * e
        })
        .collect();
    Spectrum {
        grid: spec.grid().clone(),
        intensity,
    }
}

/// Robust noise-level estimate for real data: scaled median absolute
/// successive difference, `1.4826 * median|y_{k+1} - y_k| / sqrt 2`.
pub fn estimate_noise_sd(spec: &Spectrum) -> Result<NoiseModel> {
    let mut diffs: Vec<f64> = spec.intensity().windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    diffs.sort_by(f64::total_cmp);
    let n = diffs.len();
    let median = if n % 2 == 1 {
        diffs[n / 2]
    } else {
        0.5 * (diffs[n / 2 - 1] + diffs[n / 2])
    };
    let sd = 1.4826 * median / SQRT_2;
    if sd > 0.0 {
        NoiseModel::new(sd)
    } else {
        Err(Error::Degenerate(
            "successive differences vanish; cannot estimate noise".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            acc += f(lo + i as f64 * step);
        }
        acc * step
    }

    #[test]
    fn lorentz_peak_and_half_maximum() {
        assert!((lorentz_eval(0.0, 1.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        for g in [0.3, 1.0, 7.5] {
            let peak = lorentz_eval(0.0, g).unwrap();
            let half = lorentz_eval(g, g).unwrap();
            assert!((half - 1.0 / (2.0 * PI * g)).abs() < 1e-15);
            assert!((half - 0.5 * peak).abs() < 1e-15);
        }
    }

    #[test]
    fn lorentz_integrates_to_one() {
        let area = trapezoid(|x| lorentz_eval(x, 5.0).unwrap(), -500.0, 500.0, 0.1);
        assert!((area - 1.0).abs() < 0.01, "area = {area}");
    }

    #[test]
    fn kernels_reject_bad_parameters() {
        assert!(matches!(lorentz_eval(0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(lorentz_eval(0.0, -1.0), Err(Error::Domain(_))));
        assert!(voigt_eval(0.0, 1.0, 0.0).is_err());
        assert!(voigt_eval(0.0, -1.0, 1.0).is_err());
        assert!(LineShapeParams::voigt(1.0, f64::NAN).is_err());
    }

    #[test]
    fn voigt_degenerates_to_lorentz() {
        let g = 2.0;
        for nu in [-10.0, -1.0, 0.0, 0.5, 3.0, 40.0] {
            let v = voigt_eval(nu, g, 1e-4 * g).unwrap();
            let l = lorentz_eval(nu, g).unwrap();
            assert!((v - l).abs() < 1e-6, "nu={nu}: {v} vs {l}");
        }
    }

    #[test]
    fn voigt_degenerates_to_gaussian_peak() {
        let v = voigt_eval(0.0, 1e-9, 1.0).unwrap();
        assert!((v - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn voigt_matches_quadrature_convolution() {
        // V(0; 1, 1) = int L(t; 1) G(-t; 1) dt. Substituting t = tan(u)
        // removes the heavy Lorentz tail: L(t) dt = du / pi on (-pi/2, pi/2).
        let n = 200_000;
        let du = PI / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let u = -PI / 2.0 + (i as f64 + 0.5) * du;
            let t = u.tan();
            acc += (-0.5 * t * t).exp() / (2.0 * PI).sqrt() / PI;
        }
        let oracle = acc * du;
        let v = voigt_eval(0.0, 1.0, 1.0).unwrap();
        assert!(((v - oracle) / oracle).abs() < 1e-6, "{v} vs {oracle}");
    }

    #[test]
    fn grid_from_nodes_validates_spacing() {
        let g = WavenumberGrid::from_nodes(&[100.0, 101.0, 102.0, 103.0]).unwrap();
        assert_eq!(g.len(), 4);
        assert!((g.h() - 1.0).abs() < 1e-12);
        assert!(WavenumberGrid::from_nodes(&[0.0, 1.0, 2.5, 3.0]).is_err());
        assert!(WavenumberGrid::from_nodes(&[0.0, 1.0, 2.0]).is_err());
        assert!(WavenumberGrid::new(0.0, 0.0, 8).is_err());
    }

    #[test]
    fn spectrum_rejects_non_finite_and_mismatched() {
        let g = WavenumberGrid::new(0.0, 1.0, 4).unwrap();
        assert!(Spectrum::new(g.clone(), vec![0.0; 3]).is_err());
        assert!(Spectrum::new(g, vec![0.0, f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn peak_set_invariants() {
        assert!(PeakSet::new(vec![2.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(PeakSet::new(vec![1.0], vec![0.0]).is_err());
        assert!(PeakSet::new(vec![1.0], vec![]).is_err());
        assert!(PeakSet::new(vec![1.0, 2.0], vec![1.0, 3.0]).is_ok());
    }

    #[test]
    fn synthesize_empty_and_single_peak() {
        let grid = WavenumberGrid::new(0.0, 1.0, 64).unwrap();
        let p = LineShapeParams::lorentz(3.0).unwrap();
        let empty = synthesize(&grid, &PeakSet::empty(), &p).unwrap();
        assert!(empty.intensity().iter().all(|&v| v == 0.0));

        let l = 31.3;
        let single = synthesize(&grid, &PeakSet::new(vec![l], vec![1.0]).unwrap(), &p).unwrap();
        for (nu, v) in grid.nu().iter().zip(single.intensity()) {
            assert_eq!(*v, lorentz_eval(nu - l, 3.0).unwrap());
        }
        let argmax = single
            .intensity()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, grid.nearest_index(l));
    }

    #[test]
    fn synthesize_rejects_out_of_span_peaks() {
        let grid = WavenumberGrid::new(0.0, 1.0, 16).unwrap();
        let p = LineShapeParams::lorentz(1.0).unwrap();
        let peaks = PeakSet::new(vec![20.0], vec![1.0]).unwrap();
        assert!(matches!(synthesize(&grid, &peaks, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn synthesize_is_sum_of_single_peaks() {
        let grid = WavenumberGrid::new(100.0, 1.0, 200).unwrap();
        let p = LineShapeParams::voigt(4.0, 2.0).unwrap();
        let locs = [150.0, 171.5, 190.0];
        let amps = [1.0, 0.6, 1.4];
        let all = synthesize(&grid, &PeakSet::new(locs.to_vec(), amps.to_vec()).unwrap(), &p).unwrap();
        let mut sum = vec![0.0; grid.len()];
        for (l, a) in locs.iter().zip(amps) {
            let s = synthesize(&grid, &PeakSet::new(vec![*l], vec![a]).unwrap(), &p).unwrap();
            for (acc, v) in sum.iter_mut().zip(s.intensity()) {
                *acc += v;
            }
        }
        for (a, b) in all.intensity().iter().zip(&sum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn add_noise_is_deterministic_and_scaled() {
        let grid = WavenumberGrid::new(0.0, 1.0, 100_000).unwrap();
        let clean = Spectrum::zeros(grid);
        let noise = NoiseModel::new(0.025).unwrap();
        let a = add_noise(&clean, &noise, 42);
        let b = add_noise(&clean, &noise, 42);
        assert_eq!(a, b);
        let n = a.len() as f64;
        let mean = a.intensity().iter().sum::<f64>() / n;
        let var = a.intensity().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.025f64.powi(2) - 1.0).abs() < 0.03, "var = {var}");

        let tiny = add_noise(&a, &NoiseModel::new(1e-12).unwrap(), 7);
        for (x, y) in tiny.intensity().iter().zip(a.intensity()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(NoiseModel::new(0.0).is_err());
    }

    #[test]
    fn noise_estimate_recovers_sd() {
        let grid = WavenumberGrid::new(0.0, 1.0, 20_000).unwrap();
        let noisy = add_noise(&Spectrum::zeros(grid), &NoiseModel::new(0.05).unwrap(), 3);
        let est = estimate_noise_sd(&noisy).unwrap().sigma_eps();
        assert!((est / 0.05 - 1.0).abs() < 0.05, "estimate {est}");
    }
}
