use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use plmp::scenario::{self, Density};
use plmp::GammaMode;

#[derive(Parser)]
#[command(name = "plmp", version, about = "Local electricity market clearing under uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clear the market for a scenario and write prices, agent runs and AC checks.
    Run {
        /// Scenario file, or one of the bundled names case1, case2, case3.
        scenario: PathBuf,
        /// Output directory (default: the scenario's output_dir, else ./out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Germ samples for price distributions and DP tables.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// gaussian or dist-robust.
        #[arg(long)]
        gamma: Option<GammaMode>,
        /// Total polynomial degree of the expansion.
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Print a random radial scenario as TOML.
    GenerateGrid {
        #[arg(long)]
        buses: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a scenario file without solving it.
    Validate { scenario: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, out, samples, seed, epsilon, gamma, degree } => {
            let mut cfg = scenario::load_scenario(&scenario)?;
            if let Some(n) = samples {
                cfg.sampling.n_samples = n;
            }
            if let Some(s) = seed {
                cfg.sampling.seed = s;
            }
            if let Some(e) = epsilon {
                cfg.epsilon = e;
            }
            if let Some(g) = gamma {
                cfg.gamma_mode = g;
            }
            if let Some(d) = degree {
                cfg.germ.degree = d;
            }
            cfg.validate()?;
            let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let report = scenario::run(&cfg, &out)?;
            println!(
                "{}: {} buses, K={}, objective {:.6}, solver {:.2}s, total {:.2}s",
                report.scenario, report.buses, report.basis_size, report.objective, report.solver_time, report.total_time
            );
            println!("wrote {} files to {}", report.files.len(), out.display());
        }
        Command::GenerateGrid { buses, seed, out } => {
            let text = scenario::generate_synthetic_grid(buses, seed, Density::default()).to_toml();
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Validate { scenario } => {
            let cfg = scenario::load_scenario(&scenario)?;
            cfg.build_problem()?;
            println!("{}: ok ({} buses, {} periods)", cfg.name, cfg.bus_count(), cfg.horizon);
        }
    }
    Ok(())
}
