//! Prior distributions over line-shape parameters and the truncation length.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::spectrum::{KernelFamily, LineShapeParams};

/// Continuous uniform on `[lo, hi]`; `lo == hi` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub lo: f64,
    pub hi: f64,
}

impl UniformPrior {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Domain(format!("uniform prior needs lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if self.is_point() {
            if x == self.lo {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else if x >= self.lo && x <= self.hi {
            -(self.hi - self.lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_point() {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// `sigma | gamma ~ N+(mean_mult * gamma, (sd_mult * gamma)^2)`, truncated to `sigma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledTruncatedNormal {
    pub mean_mult: f64,
    pub sd_mult: f64,
}

impl ScaledTruncatedNormal {
    pub fn new(mean_mult: f64, sd_mult: f64) -> Result<Self> {
        if !(mean_mult > 0.0 && sd_mult > 0.0) {
            return Err(Error::Domain("truncated-normal multipliers must be positive".into()));
        }
        Ok(Self { mean_mult, sd_mult })
    }

    pub fn log_density(&self, sigma: f64, gamma: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let mean = self.mean_mult * gamma;
        let sd = self.sd_mult * gamma;
        let z = (sigma - mean) / sd;
        // P(N(mean, sd^2) > 0) = erfc(-mean / (sd sqrt 2)) / 2
        let mass = 0.5 * erfc(-mean / (sd * std::f64::consts::SQRT_2));
        -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - mass.ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, gamma: f64, rng: &mut R) -> f64 {
        let mean = self.mean_mult * gamma;
        let sd = self.sd_mult * gamma;
        loop {
            let e: f64 = StandardNormal.sample(rng);
            let s = mean + sd * e;
            if s > 0.0 {
                return s;
            }
        }
    }
}

/// Discrete uniform on the integers `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteUniform {
    pub lo: usize,
    pub hi: usize,
}

impl DiscreteUniform {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Domain(format!(
                "discrete prior needs lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn log_density(&self, m: i64) -> f64 {
        if m >= self.lo as i64 && m <= self.hi as i64 {
            -((self.hi - self.lo + 1) as f64).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.lo..=self.hi)
    }
}

/// Joint prior `pi0(theta) pi0(M)` for one kernel family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: KernelFamily,
    pub gamma: UniformPrior,
    pub sigma_given_gamma: Option<ScaledTruncatedNormal>,
    pub m: DiscreteUniform,
}

impl PriorSpec {
    /// Default priors: `gamma ~ U(1, 30)`, `sigma | gamma ~ N+(0.5 gamma, (0.05 gamma)^2)`
    /// for Voigt, and `M ~ U{10, ..., 80}`.
    pub fn standard(family: KernelFamily) -> Self {
        Self {
            family,
            gamma: UniformPrior { lo: 1.0, hi: 30.0 },
            sigma_given_gamma: match family {
                KernelFamily::Lorentz => None,
                KernelFamily::Voigt => Some(ScaledTruncatedNormal {
                    mean_mult: 0.5,
                    sd_mult: 0.05,
                }),
            },
            m: DiscreteUniform { lo: 10, hi: 80 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        UniformPrior::new(self.gamma.lo, self.gamma.hi)?;
        if !(self.gamma.lo > 0.0) {
            return Err(Error::Domain("gamma prior must be supported on (0, inf)".into()));
        }
        DiscreteUniform::new(self.m.lo, self.m.hi)?;
        if self.m.lo < 2 {
            return Err(Error::Domain("truncation length prior must start at 2 or above".into()));
        }
        match (self.family, &self.sigma_given_gamma) {
            (KernelFamily::Lorentz, None) => Ok(()),
            (KernelFamily::Voigt, Some(s)) => ScaledTruncatedNormal::new(s.mean_mult, s.sd_mult).map(|_| ()),
            (KernelFamily::Lorentz, Some(_)) => Err(Error::Domain("Lorentz prior takes no sigma".into())),
            (KernelFamily::Voigt, None) => Err(Error::Domain("Voigt prior needs sigma | gamma".into())),
        }
    }

    /// Dimension of the random-walk state `(theta, M)`.
    pub fn dim(&self) -> usize {
        self.family.dim() + 1
    }

    /// Log prior density of `(theta, m)`; `-inf` outside the support.
    pub fn log_density(&self, theta: &[f64], m: i64) -> f64 {
        let gamma = theta[0];
        let mut lp = self.gamma.log_density(gamma) + self.m.log_density(m);
        if let (Some(s), Some(&sigma)) = (&self.sigma_given_gamma, theta.get(1)) {
            lp += s.log_density(sigma, gamma);
        }
        lp
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (LineShapeParams, usize) {
        let gamma = self.gamma.sample(rng);
        let params = match &self.sigma_given_gamma {
            None => LineShapeParams::lorentz(gamma),
            Some(s) => LineShapeParams::voigt(gamma, s.sample(gamma, rng)),
        }
        .expect("prior support is positive");
        (params, self.m.sample(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_support() {
        let p = UniformPrior::new(1.0, 30.0).unwrap();
        assert_eq!(p.log_density(0.999), f64::NEG_INFINITY);
        assert_eq!(p.log_density(30.5), f64::NEG_INFINITY);
        assert!((p.log_density(10.0) + 29f64.ln()).abs() < 1e-15);
        let pt = UniformPrior::point(5.0);
        assert_eq!(pt.log_density(5.0), 0.0);
        assert_eq!(pt.log_density(5.0 + 1e-12), f64::NEG_INFINITY);
        assert!(UniformPrior::new(2.0, 1.0).is_err());
    }

    #[test]
    fn truncated_normal_normalizes() {
        let p = ScaledTruncatedNormal::new(0.5, 0.8).unwrap();
        let gamma = 2.0;
        let step = 1e-3;
        let area: f64 = (1..20_000)
            .map(|i| p.log_density(i as f64 * step, gamma).exp() * step)
            .sum();
        assert!((area - 1.0).abs() < 1e-3, "area {area}");
        assert_eq!(p.log_density(-0.1, gamma), f64::NEG_INFINITY);
    }

    #[test]
    fn standard_priors_sample_inside_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for fam in [KernelFamily::Lorentz, KernelFamily::Voigt] {
            let prior = PriorSpec::standard(fam);
            prior.validate().unwrap();
            for _ in 0..1000 {
                let (p, m) = prior.sample(&mut rng);
                assert!(prior.log_density(&p.to_vector(), m as i64).is_finite());
                assert!((10..=80).contains(&m));
                assert_eq!(p.family(), fam);
            }
        }
    }
}
