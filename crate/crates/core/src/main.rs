use clap::Parser;
use parhom::config::{parse_config, ExperimentConfig};
use parhom::harness::{run, RunFlags, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

/// Numerical laboratory for two-sphere one-cylinder inequalities under
/// parabolic periodic homogenization.
#[derive(Parser, Debug)]
#[command(name = "parhom", version, about)]
struct Cli {
    /// Subcommand: homogenize | cheb-table | kernel-gap | verify-2s1c |
    /// verify-ball | verify-potential | caccioppoli
    subcommand: String,

    /// Experiment config file (key = value sections).
    #[arg(long)]
    config: PathBuf,

    /// Output directory for CSV artifacts and the run manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Dump every stored solution slice as CSV.
    #[arg(long)]
    dump: bool,

    /// Emit gnuplot-compatible two-column data files.
    #[arg(long = "plot-data")]
    plot_data: bool,

    /// Worker threads for ensemble solves (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("parhom: error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> parhom::Result<u8> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| parhom::Error::Validation(format!("thread pool: {e}")))?;
    }
    let sub = Subcommand::from_str(&cli.subcommand)?;
    let text = std::fs::read_to_string(&cli.config)?;
    let mut cfg: ExperimentConfig = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let flags = RunFlags {
        dump: cli.dump,
        plot_data: cli.plot_data,
    };
    let outcome = run(sub, &cfg, &cli.out, &flags)?;
    for artifact in &outcome.artifacts {
        println!("wrote {}", artifact.display());
    }
    println!("{}: exit {}", sub.name(), outcome.exit_code);
    Ok(outcome.exit_code as u8)
}
