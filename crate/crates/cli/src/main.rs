use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use linenarrow_cli::commands::{parse_peaks, sbc, synth, write_synth};
use linenarrow_cli::config::{load, parse_assignment};
use linenarrow_cli::ingest::ingest;
use linenarrow_cli::pipeline::{describe, run_pipeline};
use linenarrow_cli::{CliError, CliResult};

/// Bayesian line narrowing of spectra.
#[derive(Parser, Debug)]
#[command(name = "linenarrow", version, about)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment, global = true)]
    set: Vec<(String, String)>,

    /// Worker threads for particle and replicate work.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of SMC particles.
    #[arg(long)]
    particles: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline on a spectrum.
    Narrow {
        /// Input spectrum (two-column text or RRUFF).
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Line shape family: lorentz or voigt.
        #[arg(long)]
        family: Option<String>,
        /// Noise standard deviation, or "estimate".
        #[arg(long)]
        noise_sd: Option<String>,
    },
    /// Write a synthetic spectrum as two-column text.
    Synth {
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
        /// Lines as location:area pairs, e.g. "600:20,630:15".
        #[arg(long)]
        peaks: String,
        /// Lorentz half width at half maximum.
        #[arg(long)]
        gamma: f64,
        /// Gaussian width; gives Voigt lines when set.
        #[arg(long)]
        sigma: Option<f64>,
        /// Noise standard deviation (0 for a clean spectrum).
        #[arg(long, default_value_t = 0.025)]
        noise_sd: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulation-based calibration of the peak count.
    Sbc {
        #[command(flatten)]
        common: Common,
        /// Number of replicates.
        #[arg(long)]
        replicates: Option<usize>,
        /// Report evenly spaced ranks without running the pipeline.
        #[arg(long, hide = true)]
        inject_uniform_ranks: bool,
    },
    /// Parse and validate a spectrum file.
    IngestCheck { input: PathBuf },
}

fn push<T: ToString>(set: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        set.push((key.to_string(), v.to_string()));
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut set = cli.set.clone();
    push(&mut set, "threads", cli.threads);
    let common = match &cli.command {
        Command::Narrow { common, .. } | Command::Sbc { common, .. } => Some(common),
        _ => None,
    };
    if let Some(c) = common {
        push(&mut set, "output", c.output.as_ref().map(|p| p.display()));
        push(&mut set, "seed", c.seed);
        push(&mut set, "particles", c.particles);
    }
    match &cli.command {
        Command::Narrow {
            input,
            family,
            noise_sd,
            ..
        } => {
            push(&mut set, "input", input.as_ref().map(|p| p.display()));
            push(&mut set, "family", family.as_ref());
            push(&mut set, "noise_sd", noise_sd.as_ref());
        }
        Command::Sbc { replicates, .. } => push(&mut set, "replicates", *replicates),
        Command::Synth { seed, .. } => push(&mut set, "seed", *seed),
        Command::IngestCheck { .. } => {}
    }
    let config = load(cli.config.as_deref(), std::env::vars(), &set)?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Narrow { .. } => {
            let out = run_pipeline(&config)?;
            println!("modal N = {}", out.table.modal_n);
            println!(
                "gamma = {:.4} [{:.4}, {:.4}]",
                out.table.gamma.median, out.table.gamma.lower95, out.table.gamma.upper95
            );
            for p in &out.table.peaks {
                println!(
                    "peak {:.3} [{:.3}, {:.3}] mass {:.3}",
                    p.mode, p.lower95, p.upper95, p.mass
                );
            }
            println!("artifacts in {}", config.output.display());
        }
        Command::Synth {
            out,
            peaks,
            gamma,
            sigma,
            noise_sd,
            ..
        } => {
            let peaks = parse_peaks(&peaks).map_err(CliError::Config)?;
            let spectrum = synth(&config, &peaks, gamma, sigma, noise_sd)?;
            write_synth(&out, &spectrum)?;
            println!("wrote {} points to {}", spectrum.len(), out.display());
        }
        Command::Sbc {
            inject_uniform_ranks, ..
        } => {
            let report = sbc(&config, inject_uniform_ranks)?;
            println!(
                "replicates {} chi2 {:.3} p {:.4} bias {:.3} rmse {:.3} coverage95 {:.3}",
                report.ranks.len(),
                report.chi_square,
                report.uniformity_pvalue,
                report.bias,
                report.rmse,
                report.coverage95
            );
        }
        Command::IngestCheck { input } => {
            let ingested = ingest(&input)?;
            print!("{}", describe(&ingested.spectrum, &ingested.report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
