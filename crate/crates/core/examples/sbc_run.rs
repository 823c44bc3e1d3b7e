//! Small calibration run.
//!
//! `cargo run --release --example sbc_run [replicates] [particles] [grid_len]`

use std::time::Instant;

use linenarrow::sbc::{run_sbc, sbc_report, SbcConfig};
use linenarrow::spectrum::WavenumberGrid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let s = args.first().copied().unwrap_or(30);
    let j = args.get(1).copied().unwrap_or(300);
    let k = args.get(2).copied().unwrap_or(256);

    let mut config = SbcConfig::new(WavenumberGrid::new(0.0, 1.0, k)?, 1);
    config.replicates = s;
    config.smc = config.smc.with_particles(j);
    let t0 = Instant::now();
    let run = run_sbc(&config)?;
    for r in &run.replicates {
        let (lo, hi) = r.interval95();
        println!(
            "{:3} N*={:2} gamma*={:5.2} mean={:6.2} [{lo}, {hi}] rank={}",
            r.index,
            r.truth.n_star,
            r.truth.params.gamma(),
            r.posterior_mean(),
            r.rank
        );
    }
    println!("failures: {:?}", run.failures);
    let report = sbc_report(&run.replicates, config.n_bins)?;
    println!("bins {:?}", report.bin_counts);
    println!(
        "chi2 {:.2} p {:.4} bias {:.3} rmse {:.3} coverage {:.3} in {:.0}s",
        report.chi_square,
        report.uniformity_pvalue,
        report.bias,
        report.rmse,
        report.coverage95,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
