//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Environment switches:
//! - `LINENARROW_FULL_SCALE=1` runs calibration at full scale (hours).
//! - `LINENARROW_ANORTHITE_DATA` and `LINENARROW_ANORTHITE_PEAKS` point at a
//!   RRUFF anorthite spectrum and a file of reference peak locations.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use linenarrow::fourier::{burg_impulse_response, fsd, linear_predict, reconstruct_g, FsdSignal, Lomep};
use linenarrow::lgcp::{
    fit_latent, jittered_cholesky, lgcp_log_posterior, se_covariance, CountVector, FitOptions, GpHyperParams,
    LogSigmaPrior,
};
use linenarrow::sbc::{rank_statistic, run_sbc, sbc_report, SbcConfig, SbcReport};
use linenarrow::smc::{ess, residual_resample_indices};
use linenarrow::spectrum::{
    add_noise, lorentz_eval, synthesize, voigt_eval, LineShapeParams, NoiseModel, PeakSet, Spectrum, WavenumberGrid,
};
use linenarrow_cli::config::{NoiseSetting, RunConfig};
use linenarrow_cli::ingest::write_spectrum;
use linenarrow_cli::pipeline::run_pipeline;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    id: &'static str,
    title: &'static str,
    verdict: Verdict,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        title,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn full_scale() -> bool {
    std::env::var("LINENARROW_FULL_SCALE").is_ok_and(|v| v == "1")
}

fn sbc_run(s: usize, j: usize, k: usize, seed: u64) -> (SbcReport, usize, Duration) {
    let mut config = SbcConfig::new(WavenumberGrid::new(0.0, 1.0, k).unwrap(), seed);
    config.replicates = s;
    config.smc = config.smc.with_particles(j);
    let t0 = Instant::now();
    let run = run_sbc(&config).expect("valid calibration config");
    let report = sbc_report(&run.replicates, 20).expect("enough replicates");
    (report, run.failures.len(), t0.elapsed())
}

fn sbc_detail(r: &SbcReport, failures: usize, elapsed: Duration) -> String {
    format!(
        "p = {:.4} (chi2 {:.1}), bins {:?}, bias {:.2}, rmse {:.2}, coverage95 {:.2}, {} failed replicates, {:.0} s",
        r.uniformity_pvalue,
        r.chi_square,
        r.bin_counts,
        r.bias,
        r.rmse,
        r.coverage95,
        failures,
        elapsed.as_secs_f64()
    )
}

fn calibration() -> (Outcome, Outcome) {
    let title1 = "SBC rank uniformity, chi-square p > 0.01 over 20 bins";
    let title2 = "SBC summary: bias in [-0.6, 0.4], RMSE <= 2.5, coverage95 in [0.90, 1.0]";
    if full_scale() {
        let (r, failures, elapsed) = sbc_run(100, 1000, 512, 2024);
        let detail = sbc_detail(&r, failures, elapsed);
        let c1 = outcome(
            "1",
            title1,
            r.uniformity_pvalue > 0.01,
            format!("S=100 J=1000: {detail}"),
        );
        let ok2 = (-0.6..=0.4).contains(&r.bias) && r.rmse <= 2.5 && (0.90..=1.0).contains(&r.coverage95);
        let c2 = outcome("2", title2, ok2, format!("S=100 J=1000: {detail}"));
        return (c1, c2);
    }
    let (r, failures, elapsed) = sbc_run(30, 300, 256, 2024);
    let ok = r.uniformity_pvalue > 0.01 && elapsed < Duration::from_secs(30 * 60);
    let c1 = outcome(
        "1",
        title1,
        ok,
        format!(
            "reduced gate S=30 J=300 K=256, limit 1800 s: {}",
            sbc_detail(&r, failures, elapsed)
        ),
    );
    let c2 = Outcome {
        id: "2",
        title: title2,
        verdict: Verdict::Skip,
        detail: format!(
            "needs LINENARROW_FULL_SCALE=1 (S=100); reduced gate gave bias {:.2}, rmse {:.2}, coverage95 {:.2}",
            r.bias, r.rmse, r.coverage95
        ),
    };
    (c1, c2)
}

fn three_peaks(work: &Path) -> Outcome {
    let title = "3-peak synthetic: support, >= 80% mass within 3h, gamma 95% interval, modal N = 3, < 5 min";
    let h = 1.0;
    let truth = [600.0, 630.0, 700.0];
    let gamma = 5.0;
    let grid = WavenumberGrid::new(400.0, h, 512).unwrap();
    let peaks = PeakSet::new(truth.to_vec(), vec![20.0, 15.0, 25.0]).unwrap();
    let clean = synthesize(&grid, &peaks, &LineShapeParams::lorentz(gamma).unwrap()).unwrap();
    let y = add_noise(&clean, &NoiseModel::new(0.025).unwrap(), 7);
    let input = work.join("three_peaks.csv");
    write_spectrum(&input, &y).unwrap();

    let config = RunConfig {
        input: Some(input),
        output: work.join("three_peaks_out"),
        noise_sd: NoiseSetting::Value(0.025),
        length_scale: Some(0.025 * grid.span()),
        seed: 11,
        ..RunConfig::default()
    };
    let t0 = Instant::now();
    let out = match run_pipeline(&config) {
        Ok(out) => out,
        Err(e) => return outcome("3", title, false, format!("pipeline failed: {e}")),
    };
    let elapsed = t0.elapsed();
    let hist = &out.histogram;
    let in_support = truth.iter().all(|&t| hist.counts[hist.bin_of(t)] > 0);
    let total = out.peaks.all_locations().count().max(1) as f64;
    let near = out
        .peaks
        .all_locations()
        .filter(|x| truth.iter().any(|t| (x - t).abs() <= 3.0 * h))
        .count() as f64
        / total;
    let g = &out.table.gamma;
    let covers = g.lower95 <= gamma && gamma <= g.upper95;
    let modal = out.table.modal_n;
    let fast = elapsed < Duration::from_secs(300);
    outcome(
        "3",
        title,
        in_support && near >= 0.8 && covers && modal == 3 && fast,
        format!(
            "support {in_support}, mass within 3h {near:.3}, gamma [{:.3}, {:.3}] covers 5: {covers}, modal N {modal}, {:.0} s",
            g.lower95,
            g.upper95,
            elapsed.as_secs_f64()
        ),
    )
}

fn anorthite(work: &Path) -> Outcome {
    let title = "anorthite: >= 18 of 25 reference locations matched within 8 cm^-1";
    let data = std::env::var_os("LINENARROW_ANORTHITE_DATA").map(PathBuf::from);
    let refs = std::env::var_os("LINENARROW_ANORTHITE_PEAKS").map(PathBuf::from);
    let (Some(data), Some(refs)) = (data.filter(|p| p.exists()), refs.filter(|p| p.exists())) else {
        eprintln!("warning: anorthite spectrum or reference locations not available; criterion 4 skipped");
        return Outcome {
            id: "4",
            title,
            verdict: Verdict::Skip,
            detail: "set LINENARROW_ANORTHITE_DATA and LINENARROW_ANORTHITE_PEAKS to run".into(),
        };
    };
    let reference: Vec<f64> = std::fs::read_to_string(&refs)
        .unwrap()
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter_map(|s| s.parse().ok())
        .collect();
    let config = RunConfig {
        input: Some(data),
        output: work.join("anorthite_out"),
        seed: 3,
        ..RunConfig::default()
    };
    match run_pipeline(&config) {
        Ok(out) => {
            let matched = reference
                .iter()
                .filter(|l| out.table.peaks.iter().any(|p| (p.mode - **l).abs() <= 8.0))
                .count();
            outcome(
                "4",
                title,
                matched >= 18,
                format!(
                    "{matched} of {} matched, modal N {}",
                    reference.len(),
                    out.table.modal_n
                ),
            )
        }
        Err(e) => outcome("4", title, false, format!("pipeline failed: {e}")),
    }
}

/// Sub-check result: name, pass, measured value.
type Sub = (&'static str, bool, String);

fn kernel_checks(rng: &mut ChaCha8Rng) -> Vec<Sub> {
    let mut sym = 0.0f64;
    let mut norm = 0.0f64;
    for _ in 0..100 {
        let gamma = rng.random_range(0.5..30.0);
        let sigma = rng.random_range(0.05..1.0) * gamma;
        for p in [
            LineShapeParams::lorentz(gamma).unwrap(),
            LineShapeParams::voigt(gamma, sigma).unwrap(),
        ] {
            for i in 0..50 {
                let x = i as f64 * gamma * 0.37;
                sym = sym.max((p.eval(x) - p.eval(-x)).abs() / p.eval(0.0));
            }
            let n = 8000;
            let step = 400.0 * gamma / n as f64;
            let vals: Vec<f64> = (0..=n).map(|i| p.eval(-200.0 * gamma + i as f64 * step)).collect();
            let integral = step * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n]));
            norm = norm.max((integral - 1.0).abs());
        }
    }
    let mut degen = 0.0f64;
    for gamma in [0.5, 3.0, 20.0] {
        let peak = lorentz_eval(0.0, gamma).unwrap();
        for i in 0..400 {
            let x = -50.0 * gamma + i as f64 * 0.25 * gamma;
            let d = (voigt_eval(x, gamma, 1e-4 * gamma).unwrap() - lorentz_eval(x, gamma).unwrap()).abs();
            degen = degen.max(d / peak);
        }
    }
    vec![
        ("kernel symmetry", sym == 0.0, format!("max rel asymmetry {sym:.1e}")),
        (
            "kernel normalization 1%",
            norm <= 0.01,
            format!("max |integral - 1| {norm:.2e}"),
        ),
        (
            "voigt degeneracy 1e-5",
            degen <= 1e-5,
            format!("max rel gap {degen:.1e}"),
        ),
    ]
}

fn fourier_checks(rng: &mut ChaCha8Rng) -> Vec<Sub> {
    let grid = WavenumberGrid::new(100.0, 0.5, 512).unwrap();
    let peaks = PeakSet::new(vec![150.0, 180.0, 260.0], vec![3.0, 1.0, 2.0]).unwrap();
    let mut round = 0.0f64;
    for params in [
        LineShapeParams::lorentz(2.0).unwrap(),
        LineShapeParams::voigt(1.5, 1.0).unwrap(),
    ] {
        let y = add_noise(
            &synthesize(&grid, &peaks, &params).unwrap(),
            &NoiseModel::new(0.01).unwrap(),
            1,
        );
        let xi = fsd(&y, &params).unwrap();
        let ir = burg_impulse_response(&xi.xi[..40], 39).unwrap();
        let same = linear_predict(&xi, &ir, grid.len(), grid.len()).unwrap();
        let g = reconstruct_g(&same, &params, &grid).unwrap();
        let scale = y.intensity().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in g.intensity().iter().zip(y.intensity()) {
            round = round.max((a - b).abs() / scale);
        }
    }

    let mut ar = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=8usize);
        let m = 4 * n + rng.random_range(0..8usize);
        let freqs: Vec<f64> = (0..n)
            .map(|i| (i as f64 + rng.random_range(0.2..0.8)) * 0.45 / n as f64)
            .collect();
        let amps: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let total = m + 64;
        let x: Vec<f64> = (0..total)
            .map(|k| {
                freqs
                    .iter()
                    .zip(&amps)
                    .map(|(f, a)| a * (2.0 * std::f64::consts::PI * f * k as f64).cos())
                    .sum()
            })
            .collect();
        let ir = burg_impulse_response(&x[..m], m - 1).unwrap();
        let signal = FsdSignal {
            xi: x.clone(),
            d_omega: 1.0,
        };
        let pred = linear_predict(&signal, &ir, m, total).unwrap();
        let scale = x.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for k in m..total {
            ar = ar.max((pred.xi[k] - x[k]).abs() / scale);
        }
    }
    vec![
        (
            "FSD round trip 1e-8",
            round <= 1e-8,
            format!("max rel error {round:.1e}"),
        ),
        ("AR exactness 1e-5", ar < 1e-5, format!("max rel tail error {ar:.2e}")),
    ]
}

fn smc_checks(rng: &mut ChaCha8Rng) -> Vec<Sub> {
    let mut ess_ok = true;
    for _ in 0..1000 {
        let j = rng.random_range(1..200usize);
        let raw: Vec<f64> = (0..j).map(|_| rng.random::<f64>().powi(8)).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let e = ess(&w).unwrap();
        ess_ok &= (1.0 - 1e-9..=j as f64 + 1e-9).contains(&e);
    }
    let j = 200;
    let stat: Vec<f64> = (0..j).map(|_| rng.random_range(1.0..30.0)).collect();
    let raw: Vec<f64> = (0..j).map(|_| rng.random::<f64>().powi(3)).collect();
    let s: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let target: f64 = stat.iter().zip(&w).map(|(a, b)| a * b).sum();
    let reps = 10_000;
    let mean: f64 = (0..reps)
        .map(|_| {
            let idx = residual_resample_indices(&w, rng);
            idx.iter().map(|&i| stat[i]).sum::<f64>() / idx.len() as f64
        })
        .sum::<f64>()
        / reps as f64;
    let rel = (mean - target).abs() / target;
    vec![
        ("ESS within [1, J]", ess_ok, "1000 random weight vectors".into()),
        ("resampling unbiased 1%", rel <= 0.01, format!("rel gap {rel:.1e}")),
    ]
}

fn lgcp_checks(rng: &mut ChaCha8Rng) -> Vec<Sub> {
    let mut fd = 0.0f64;
    for _ in 0..5 {
        let k = rng.random_range(8..=64usize);
        let grid = WavenumberGrid::new(0.0, 1.0, k).unwrap();
        let hypers = GpHyperParams::new(rng.random_range(-0.5..1.0), rng.random_range(1.5..4.0)).unwrap();
        let z = CountVector::from_counts((0..k).map(|_| rng.random_range(0..20u64)).collect());
        // Latent fields drawn from the GP itself; white noise under a smooth
        // kernel has densities near -1e10 and swamps central differences.
        let (l, _) = jittered_cholesky(&se_covariance(&grid, &hypers), hypers.sigma().powi(2)).unwrap();
        let eps: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..k)
            .map(|i| 1.0 + (0..=i).map(|j| l[(i, j)] * eps[j]).sum::<f64>())
            .collect();
        let prior = LogSigmaPrior::lorentz_default();
        let (_, grad) = lgcp_log_posterior(&b, &z, &hypers, &grid, Some(&prior)).unwrap();
        for i in 0..k {
            let step = 1e-5;
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += step;
            bm[i] -= step;
            let fp = lgcp_log_posterior(&bp, &z, &hypers, &grid, Some(&prior)).unwrap().0;
            let fm = lgcp_log_posterior(&bm, &z, &hypers, &grid, Some(&prior)).unwrap().0;
            let num = (fp - fm) / (2.0 * step);
            fd = fd.max((num - grad[i]).abs() / grad[i].abs().max(1.0));
        }
    }

    let k = 16;
    let grid = WavenumberGrid::new(0.0, 1.0, k).unwrap();
    let z = CountVector::from_counts((0..k).map(|i| [0, 1, 3, 8, 4, 1, 0, 0][i % 8]).collect());
    let fit = fit_latent(
        &z,
        &grid,
        &GpHyperParams::new(0.3, 2.5).unwrap(),
        &FitOptions::default(),
    )
    .unwrap();
    let cov = &fit.laplace_cov;
    let sym = (cov - cov.transpose()).abs().max();
    let spd = cov.clone().cholesky().is_some() && jittered_cholesky(cov, 1.0).is_ok();
    let n = 100_000;
    let mut draw_rng = ChaCha8Rng::seed_from_u64(5);
    let mut eps = vec![0.0; k];
    let mut out = vec![0.0; k];
    let mut acc = vec![0.0; k * k];
    for _ in 0..n {
        fit.draw_into(&mut draw_rng, &mut eps, &mut out);
        for i in 0..k {
            let di = out[i] - fit.b_map[i];
            for j in 0..k {
                acc[i * k + j] += di * (out[j] - fit.b_map[j]);
            }
        }
    }
    let mut cov_gap = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
            cov_gap = cov_gap.max((acc[i * k + j] / n as f64 - cov[(i, j)]).abs() / scale);
        }
    }
    vec![
        ("LGCP gradient vs FD 1e-6", fd <= 1e-6, format!("max rel gap {fd:.1e}")),
        (
            "Laplace covariance SPD",
            spd && sym <= 1e-10,
            format!("asymmetry {sym:.1e}"),
        ),
        (
            "sampled covariance 5%",
            cov_gap <= 0.05,
            format!("max normalized gap {cov_gap:.3}"),
        ),
    ]
}

fn reproducibility_checks(work: &Path) -> Vec<Sub> {
    let ranks_ok = rank_statistic(3, &[3, 4, 5]) == 0
        && rank_statistic(9, &[3, 4, 5]) == 3
        && rank_statistic(3, &[1, 2, 3, 4]) == 2
        && rank_statistic(3 + 7, &[8, 9, 10, 11]) == rank_statistic(3, &[1, 2, 3, 4]);

    let grid = WavenumberGrid::new(0.0, 1.0, 128).unwrap();
    let peaks = PeakSet::new(vec![40.0, 70.0], vec![8.0, 6.0]).unwrap();
    let y = add_noise(
        &synthesize(&grid, &peaks, &LineShapeParams::lorentz(3.0).unwrap()).unwrap(),
        &NoiseModel::new(0.02).unwrap(),
        2,
    );
    let input = work.join("repro.csv");
    write_spectrum(&input, &y).unwrap();
    let run = |name: &str| {
        let config = RunConfig {
            input: Some(input.clone()),
            output: work.join(name),
            particles: 60,
            m_hi: 40,
            peak_samples: 500,
            seed: 17,
            ..RunConfig::default()
        };
        run_pipeline(&config).map(|_| config.output)
    };
    let identical = match (run("repro_a"), run("repro_b")) {
        (Ok(a), Ok(b)) => [
            "particles.csv",
            "counts.csv",
            "lgcp_fit.csv",
            "peak_histogram.csv",
            "peak_table.csv",
            "smc_trace.csv",
        ]
        .iter()
        .all(|f| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok()),
        _ => false,
    };
    vec![
        ("rank statistic edge cases", ranks_ok, "examples and translation".into()),
        ("bit-identical artifacts", identical, "two runs, same seed".into()),
    ]
}

fn properties(work: &Path) -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut subs = kernel_checks(&mut rng);
    subs.extend(fourier_checks(&mut rng));
    subs.extend(smc_checks(&mut rng));
    subs.extend(lgcp_checks(&mut rng));
    subs.extend(reproducibility_checks(work));
    let elapsed = t0.elapsed();
    for (name, ok, detail) in &subs {
        println!("    {} {name}: {detail}", if *ok { "ok  " } else { "FAIL" });
    }
    let failed: Vec<&str> = subs.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let fast = elapsed < Duration::from_secs(120);
    outcome(
        "5",
        "property suites, < 2 min",
        failed.is_empty() && fast,
        format!(
            "{} of {} sub-checks passed{}, {:.0} s",
            subs.len() - failed.len(),
            subs.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(" (failed: {})", failed.join(", "))
            },
            elapsed.as_secs_f64()
        ),
    )
}

fn pass_time(k: usize) -> f64 {
    let grid = WavenumberGrid::new(0.0, 1.0, k).unwrap();
    let peaks = PeakSet::new(
        vec![0.3 * k as f64, 0.5 * k as f64, 0.7 * k as f64],
        vec![5.0, 3.0, 4.0],
    )
    .unwrap();
    let y: Spectrum = add_noise(
        &synthesize(&grid, &peaks, &LineShapeParams::lorentz(4.0).unwrap()).unwrap(),
        &NoiseModel::new(0.01).unwrap(),
        3,
    );
    let lomep = Lomep::new(&y);
    let params: Vec<(LineShapeParams, usize)> = (0..40)
        .map(|i| (LineShapeParams::lorentz(2.0 + 0.1 * i as f64).unwrap(), 40 + i))
        .collect();
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let t0 = Instant::now();
            for (p, m) in &params {
                let out = lomep.evaluate(p, *m).unwrap();
                std::hint::black_box(lomep.line_narrowed(&out.xi_lp).unwrap());
            }
            t0.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[2]
}

fn complexity() -> Outcome {
    pass_time(1 << 12);
    let t12 = pass_time(1 << 12);
    let t13 = pass_time(1 << 13);
    let ratio = t13 / t12;
    outcome(
        "6",
        "pass time ratio K = 2^13 vs 2^12 <= 2.5",
        ratio <= 2.5,
        format!("median {:.2} ms vs {:.2} ms, ratio {ratio:.2}", 1e3 * t13, 1e3 * t12),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let work = tempfile::tempdir().expect("temporary directory");
    let mut outcomes = Vec::new();
    let (c1, c2) = calibration();
    outcomes.push(c1);
    outcomes.push(c2);
    outcomes.push(three_peaks(work.path()));
    outcomes.push(anorthite(work.path()));
    outcomes.push(properties(work.path()));
    outcomes.push(complexity());

    println!();
    for o in &outcomes {
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("{tag} criterion {}: {} -- {}", o.id, o.title, o.detail);
    }
    let failed = outcomes.iter().filter(|o| o.verdict == Verdict::Fail).count();
    if failed > 0 {
        println!("\n{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
