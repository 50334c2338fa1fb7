use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transport_core::config::{Command, RunConfig};
use transport_core::runner;

/// Lagrangian solver and verification harness for non-local transport
/// equations.
#[derive(Parser)]
#[command(name = "transport", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolve a marker lattice and write markers, monitors and metadata.
    Simulate(Common),
    /// Perturbation sweep of the solution map in Hölder or Zygmund norms.
    Continuity(Common),
    /// Spatial/temporal convergence study on an exact-solution case.
    Convergence(Common),
    /// Norm report of a sampled field read from CSV.
    Norms(NormsArgs),
    /// Homogeneity, derivative and spherical-mean checks of the kernels.
    ValidateKernels(Common),
    /// Empirical constants of the principal-value operator.
    ValidateSio(Common),
    /// Randomized inequality suite, singular-integral constants and Dirac
    /// corrections.
    Lemmas(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set solver.h=1/64`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `run.output_dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads (overrides `run.worker_count`).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct NormsArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with columns x_1..x_n,value.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    pair_budget: Option<usize>,
    /// Comma-separated scales for the vanishing and Zygmund moduli.
    #[arg(long, value_delimiter = ',')]
    h_levels: Option<Vec<f64>>,
}

fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
}

fn quoted(p: &Path) -> String {
    format!("{:?}", absolute(p).to_string_lossy())
}

fn overrides(c: &Common) -> Vec<String> {
    let mut o = c.set.clone();
    if let Some(out) = &c.out {
        o.push(format!("run.output_dir={}", quoted(out)));
    }
    if let Some(w) = c.workers {
        o.push(format!("run.worker_count={w}"));
    }
    if let Some(s) = c.seed {
        o.push(format!("run.seed={s}"));
    }
    o
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, mut extra) = match &cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c, vec![]),
        Cmd::Continuity(c) => (Command::Continuity, c, vec![]),
        Cmd::Convergence(c) => (Command::Convergence, c, vec![]),
        Cmd::ValidateKernels(c) => (Command::ValidateKernels, c, vec![]),
        Cmd::ValidateSio(c) => (Command::ValidateSio, c, vec![]),
        Cmd::Lemmas(c) => (Command::Lemmas, c, vec![]),
        Cmd::Norms(a) => {
            let mut o = Vec::new();
            if let Some(p) = &a.input {
                o.push(format!("norms.input={}", quoted(p)));
            }
            if let Some(g) = a.gamma {
                o.push(format!("norms.gamma={g:?}"));
            }
            if let Some(b) = a.pair_budget {
                o.push(format!("norms.pair_budget={b}"));
            }
            if let Some(h) = &a.h_levels {
                let list: Vec<String> = h.iter().map(|v| format!("{v:?}")).collect();
                o.push(format!("norms.h_levels=[{}]", list.join(", ")));
            }
            (Command::Norms, &a.common, o)
        }
    };
    let mut all = overrides(common);
    all.append(&mut extra);
    let cfg = match RunConfig::load(command, common.config.as_deref(), &all) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match runner::execute(&cfg) {
        Ok(outcome) => {
            for f in &outcome.manifest.files {
                println!("wrote {} ({} bytes)", cfg.run.output_dir.join(&f.name).display(), f.bytes);
            }
            if let Some(h) = outcome.halt {
                eprintln!("simulation stopped early: {}", h.describe());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
