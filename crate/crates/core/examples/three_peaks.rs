//! End-to-end run on a synthetic spectrum with three Lorentzian lines.
//!
//! `cargo run --release --example three_peaks [particles] [length_scale]`

use std::time::Instant;

use linenarrow::lgcp::{fit_map, marginalize_counts, sample_peak_posterior, FitOptions, GpHyperParams, LogSigmaPrior};
use linenarrow::smc::{run_smc, PriorSpec, SmcConfig};
use linenarrow::spectrum::{add_noise, synthesize, KernelFamily, LineShapeParams, NoiseModel, PeakSet, WavenumberGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let particles: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let h = 1.0;
    let ell: f64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(5.0 * h);

    let grid = WavenumberGrid::new(400.0, h, 512)?;
    let truth = [600.0, 630.0, 700.0];
    let peaks = PeakSet::new(truth.to_vec(), vec![20.0, 15.0, 25.0])?;
    let params = LineShapeParams::lorentz(5.0)?;
    let y = add_noise(&synthesize(&grid, &peaks, &params)?, &NoiseModel::new(0.025)?, 7);

    let t0 = Instant::now();
    let priors = PriorSpec::standard(KernelFamily::Lorentz);
    let config = SmcConfig::new(0.025, 11).with_particles(particles);
    let post = run_smc(&y, &priors, &config)?;
    let gamma_mean = post.mean(|p| p.params.gamma());
    let lo = post.quantile(|p| p.params.gamma(), 0.025);
    let hi = post.quantile(|p| p.params.gamma(), 0.975);
    println!(
        "smc: {} steps, {:.1}s, gamma mean {gamma_mean:.3} [{lo:.3}, {hi:.3}], M mean {:.1}",
        post.kappa_schedule.len() - 1,
        t0.elapsed().as_secs_f64(),
        post.mean(|p| p.m as f64)
    );

    let t1 = Instant::now();
    let z = marginalize_counts(&post, &y, None)?;
    let nonzero: Vec<(usize, u64)> = z.z.iter().copied().enumerate().filter(|(_, v)| *v > 0).collect();
    println!("counts: total {}, nonzero bins {}", z.total(), nonzero.len());
    let fit = fit_map(
        &z,
        &grid,
        &GpHyperParams::new(0.0, ell)?,
        &LogSigmaPrior::lorentz_default(),
        &FitOptions::default(),
    )?;
    println!(
        "lgcp: log sigma {:.3}, converged {}, |grad| {:.2e}, {:.1}s",
        fit.hypers.log_sigma_lambda,
        fit.converged,
        fit.grad_norm,
        t1.elapsed().as_secs_f64()
    );
    let peaks = sample_peak_posterior(&fit, 20_000, 3);
    let mut hist = std::collections::BTreeMap::new();
    for n in &peaks.count_samples {
        *hist.entry(*n).or_insert(0usize) += 1;
    }
    println!("N posterior: {hist:?}, mode {}", peaks.modal_count());
    let total = peaks.all_locations().count();
    let near = peaks
        .all_locations()
        .filter(|x| truth.iter().any(|t| (x - t).abs() <= 3.0 * h))
        .count();
    println!("mass within 3h of truth: {:.3}", near as f64 / total.max(1) as f64);
    for t in truth {
        let hit = peaks
            .location_samples
            .iter()
            .filter(|s| s.iter().any(|x| (x - t).abs() <= 3.0 * h))
            .count();
        println!(
            "draws with a maximum within 3h of {t}: {:.3}",
            hit as f64 / peaks.len() as f64
        );
    }
    Ok(())
}
