//! Fourier self-deconvolution with Burg linear prediction.
//!
//! The observed spectrum is mirrored into the even sequence
//! `[y_1 .. y_K, y_K .. y_1]` of length `2K`, whose DFT is real up to a known
//! half-sample phase. After removing that phase, the first `K` coefficients
//! are divided by the DFT of the whole-sample-symmetric sampled kernel. For a
//! delta comb the quotient is `2 sum_n a_n cos(pi k (p_n + 1/2) / K)` where
//! `p_n` is the fractional grid index of line `n`.
//!
//! All frequencies are expressed in DFT index units, so the prediction
//! recursion uses unit spacing; [`FsdSignal::d_omega`] carries the physical
//! spacing `1 / (2 K h)` for reporting only.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{LineShapeParams, Spectrum, WavenumberGrid};

/// Smallest kernel transform magnitude accepted as a divisor.
pub const KERNEL_UNDERFLOW: f64 = 1e-300;

/// Real Fourier-domain samples of the self-deconvolved spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsdSignal {
    pub xi: Vec<f64>,
    pub d_omega: f64,
}

impl FsdSignal {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Forward prediction coefficients `r_1..r_p` with `x[n] = sum_i r_i x[n-i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub r: Vec<f64>,
    /// Lattice reflection coefficients, one per stage.
    pub reflection: Vec<f64>,
}

impl ImpulseResponse {
    pub fn order(&self) -> usize {
        self.r.len()
    }
}

/// Inverse transform of the extrapolated FSD signal; approximates the delta comb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineNarrowedSpectrum {
    pub x_ln: Vec<f64>,
}

/// Cached FFT plans for even-extension transforms of a `K`-point signal.
#[derive(Clone)]
pub struct EvenTransform {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex64>,
}

impl std::fmt::Debug for EvenTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvenTransform").field("len", &self.len).finish()
    }
}

impl EvenTransform {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let n = 2 * len;
        let twiddle = (0..len)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / n as f64))
            .collect();
        Self {
            len,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            twiddle,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// First `K` phase-corrected DFT coefficients of `[y, reverse(y)]`,
    /// i.e. `C[k] = 2 sum_n y_n cos(pi k (n + 1/2) / K)`.
    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len())?;
        let k = self.len;
        let mut buf: Vec<Complex64> = Vec::with_capacity(2 * k);
        buf.extend(y.iter().map(|&v| Complex64::new(v, 0.0)));
        buf.extend(y.iter().rev().map(|&v| Complex64::new(v, 0.0)));
        self.forward.process(&mut buf);
        Ok(buf[..k].iter().zip(&self.twiddle).map(|(s, t)| (s * t).re).collect())
    }

    /// Inverse of [`EvenTransform::forward`], returning the first `K` samples.
    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check_len(c.len())?;
        let k = self.len;
        let n = 2 * k;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(c[0], 0.0);
        for j in 1..k {
            let s = c[j] * self.twiddle[j].conj();
            buf[j] = s;
            buf[n - j] = s.conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf[..k].iter().map(|s| s.re * scale).collect())
    }

    /// Real DFT of the whole-sample-symmetric sampled kernel, first `K` bins.
    pub fn kernel(&self, params: &LineShapeParams, h: f64) -> Vec<f64> {
        let k = self.len;
        let n = 2 * k;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(params.eval(0.0), 0.0);
        for j in 1..=k {
            let v = params.eval(j as f64 * h);
            buf[j] = Complex64::new(v, 0.0);
            if j < k {
                buf[n - j] = Complex64::new(v, 0.0);
            }
        }
        self.forward.process(&mut buf);
        buf[..k].iter().map(|s| s.re).collect()
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got == self.len {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: self.len,
                actual: got,
            })
        }
    }
}

fn check_kernel(h_k: &[f64]) -> Result<()> {
    match h_k.iter().position(|v| !(v.abs() >= KERNEL_UNDERFLOW)) {
        Some(index) => Err(Error::KernelUnderflow {
            index,
            magnitude: h_k[index].abs(),
        }),
        None => Ok(()),
    }
}

fn d_omega(grid: &WavenumberGrid) -> f64 {
    1.0 / (2.0 * grid.len() as f64 * grid.h())
}

/// Fourier self-deconvolution of `spec` by the kernel described by `params`.
pub fn fsd(spec: &Spectrum, params: &LineShapeParams) -> Result<FsdSignal> {
    let tf = EvenTransform::new(spec.len());
    let c = tf.forward(spec.intensity())?;
    let h_k = tf.kernel(params, spec.grid().h());
    check_kernel(&h_k)?;
    Ok(FsdSignal {
        xi: c.iter().zip(&h_k).map(|(c, h)| c / h).collect(),
        d_omega: d_omega(spec.grid()),
    })
}

/// Burg lattice estimate of an order-`order` forward predictor.
pub fn burg_impulse_response(xi_head: &[f64], order: usize) -> Result<ImpulseResponse> {
    let n = xi_head.len();
    if order < 2 || order >= n {
        return Err(Error::Order { order, samples: n });
    }
    let energy: f64 = xi_head.iter().map(|v| v * v).sum();
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::Degenerate(
            "Burg recursion needs a finite, non-zero input".into(),
        ));
    }

    let mut f = xi_head.to_vec();
    let mut b = xi_head.to_vec();
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);

    for m in 0..order {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in m + 1..n {
            num += f[i] * b[i - 1];
            den += f[i] * f[i] + b[i - 1] * b[i - 1];
        }
        let mut k = if den > 0.0 { 2.0 * num / den } else { 0.0 };
        // |k| <= 1 holds exactly by Cauchy-Schwarz; rounding may touch it.
        if k.abs() >= 1.0 {
            k = k.signum() * (1.0 - f64::EPSILON);
        }
        debug_assert!(k.abs() < 1.0);
        reflection.push(-k);

        prev[..m].copy_from_slice(&a[..m]);
        a[m] = k;
        for i in 0..m {
            a[i] = prev[i] - k * prev[m - 1 - i];
        }

        for i in (m + 1..n).rev() {
            let fi = f[i];
            let bi = b[i - 1];
            f[i] = fi - k * bi;
            b[i] = bi - k * fi;
        }
    }

    Ok(ImpulseResponse { r: a, reflection })
}

/// Extends the first `m` samples of `xi` to `k_total` by recursive one-step
/// prediction; predicted samples feed later predictions.
pub fn linear_predict(xi: &FsdSignal, r: &ImpulseResponse, m: usize, k_total: usize) -> Result<FsdSignal> {
    if m > k_total {
        return Err(Error::Truncation { m, k: k_total });
    }
    if xi.len() < m {
        return Err(Error::Shape {
            expected: m,
            actual: xi.len(),
        });
    }
    if r.order() > m && m < k_total {
        return Err(Error::Order {
            order: r.order(),
            samples: m,
        });
    }
    let mut out = Vec::with_capacity(k_total);
    out.extend_from_slice(&xi.xi[..m]);
    extrapolate(&mut out, &r.r, k_total);
    Ok(FsdSignal {
        xi: out,
        d_omega: xi.d_omega,
    })
}

fn extrapolate(out: &mut Vec<f64>, r: &[f64], k_total: usize) {
    while out.len() < k_total {
        let k = out.len();
        let v = r.iter().enumerate().map(|(i, ri)| ri * out[k - 1 - i]).sum();
        out.push(v);
    }
}

/// Smooth forward approximation `g = F^-1{ xi_LP * F{K} }` on `grid`.
pub fn reconstruct_g(xi_lp: &FsdSignal, params: &LineShapeParams, grid: &WavenumberGrid) -> Result<Spectrum> {
    if xi_lp.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            actual: xi_lp.len(),
        });
    }
    let tf = EvenTransform::new(grid.len());
    let h_k = tf.kernel(params, grid.h());
    let prod: Vec<f64> = xi_lp.xi.iter().zip(&h_k).map(|(x, h)| x * h).collect();
    let g = tf.inverse(&prod)?;
    Spectrum::new(grid.clone(), g).map_err(|e| Error::Numeric(format!("reconstruction produced invalid values: {e}")))
}

/// Line-narrowed spectrum `x_LN = F^-1{ xi_LP }` on the original grid.
pub fn line_narrowed(xi_lp: &FsdSignal) -> LineNarrowedSpectrum {
    let tf = EvenTransform::new(xi_lp.len());
    LineNarrowedSpectrum {
        x_ln: tf.inverse(&xi_lp.xi).expect("transform sized from input"),
    }
}

/// Output of one LOMEP pass for fixed `(theta, M)`.
#[derive(Debug, Clone)]
pub struct LomepOutput {
    pub xi_lp: Vec<f64>,
    pub g: Vec<f64>,
    pub kernel: Vec<f64>,
}

/// Reusable LOMEP pipeline bound to one observed spectrum.
///
/// Caches the FFT plans and the transformed data so that each evaluation
/// costs one kernel FFT, one Burg fit, one extrapolation and one inverse FFT.
/// Safe to share between threads.
#[derive(Debug, Clone)]
pub struct Lomep {
    grid: WavenumberGrid,
    transform: EvenTransform,
    data_transform: Vec<f64>,
}

impl Lomep {
    pub fn new(spec: &Spectrum) -> Self {
        let transform = EvenTransform::new(spec.len());
        let data_transform = transform.forward(spec.intensity()).expect("transform sized from input");
        Self {
            grid: spec.grid().clone(),
            transform,
            data_transform,
        }
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    /// Prediction order used for truncation length `m` (the maximal
    /// well-posed order, `m - 1`).
    pub fn order_for(m: usize) -> usize {
        m.saturating_sub(1)
    }

    /// Deconvolves, truncates to `m` coefficients, predicts back to `K` and
    /// reconstructs `g`.
    pub fn evaluate(&self, params: &LineShapeParams, m: usize) -> Result<LomepOutput> {
        let k_total = self.grid.len();
        if m >= k_total {
            return Err(Error::Truncation { m, k: k_total });
        }
        let kernel = self.transform.kernel(params, self.grid.h());
        check_kernel(&kernel[..m])?;
        let head: Vec<f64> = self.data_transform[..m]
            .iter()
            .zip(&kernel)
            .map(|(c, h)| c / h)
            .collect();
        let ir = burg_impulse_response(&head, Self::order_for(m))?;
        let mut xi_lp = head;
        extrapolate(&mut xi_lp, &ir.r, k_total);
        let prod: Vec<f64> = xi_lp.iter().zip(&kernel).map(|(x, h)| x * h).collect();
        let g = self.transform.inverse(&prod)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite reconstruction".into()));
        }
        Ok(LomepOutput { xi_lp, g, kernel })
    }

    pub fn line_narrowed(&self, xi_lp: &[f64]) -> Result<LineNarrowedSpectrum> {
        Ok(LineNarrowedSpectrum {
            x_ln: self.transform.inverse(xi_lp)?,
        })
    }
}
