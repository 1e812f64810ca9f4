use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sticky_cli::commands::{write_convergence, write_sweep, SweepStatus};
use sticky_cli::{check_trajectory, convergence_study, epsilon_sweep, output_dir, run_scenario, Overrides, Scenario};
use sticky_core::io::fmt_f64;

/// Sticky particle simulations with weak-solution verification.
#[derive(Parser)]
#[command(name = "sticky", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Integrator step.
    #[arg(long)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long)]
    horizon: Option<f64>,
    /// Semiconvexity constant used by the checks (default a + b).
    #[arg(long)]
    c: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "STICKY_OUT", hide_env_values = true)]
    out_root: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { dt: self.dt, horizon: self.horizon, c: self.c }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, verify it and write its artifacts.
    Run {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Refinement study in the number of particles.
    Converge {
        file: PathBuf,
        /// Comma separated particle counts (default `study.n_list`).
        #[arg(long = "N", value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
    /// Regularization sweep over epsilon.
    Sweep {
        file: PathBuf,
        /// Comma separated epsilons (default `study.eps_list`).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-verify a stored trajectory.
    Check {
        trajectory: PathBuf,
        /// Scenario with masses and potentials (default: the `scenario.toml`
        /// beside the trajectory).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Semiconvexity constant used by the checks.
        #[arg(long)]
        c: Option<f64>,
    },
}

fn load(file: &Path, common: &Common) -> Result<Scenario> {
    let mut s = Scenario::load(file)?;
    s.apply(&common.overrides());
    Ok(s)
}

fn dir_for(s: &Scenario, common: &Common) -> PathBuf {
    output_dir(s, common.out.as_deref(), common.out_root.as_deref())
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run { file, common } => {
            let s = load(&file, &common)?;
            let dir = dir_for(&s, &common);
            let outcome = run_scenario(&s, &dir)?;
            print!("{}", outcome.report.table());
            println!("collisions: {}  artifacts: {}", outcome.record.events.len(), outcome.dir.display());
            Ok(outcome.report.all_pass())
        }
        Command::Converge { file, n, common } => {
            let s = load(&file, &common)?;
            let n_list = n.or_else(|| s.study.n_list.clone()).context("no particle counts: pass --N or set study.n_list")?;
            let study = convergence_study(&s, &n_list)?;
            let dir = dir_for(&s, &common);
            std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            let path = dir.join("convergence.csv");
            write_convergence(&study, &path)?;
            for r in &study.rows {
                let w1: Vec<String> = r.w1_next.iter().map(|x| x.map(fmt_f64).unwrap_or_else(|| "-".into())).collect();
                println!("N={:<5} W1_next=[{}] weak={:.3e} pass={}", r.n, w1.join(", "), r.weak_residual, r.pass);
            }
            println!("table: {}", path.display());
            Ok(study.all_pass())
        }
        Command::Sweep { file, eps, common } => {
            let s = load(&file, &common)?;
            let eps_list = eps.or_else(|| s.study.eps_list.clone()).context("no epsilons: pass --eps or set study.eps_list")?;
            let sweep = epsilon_sweep(&s, &eps_list)?;
            let dir = dir_for(&s, &common);
            std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            let path = dir.join("sweep.csv");
            write_sweep(&sweep, &path)?;
            for r in &sweep.rows {
                match &r.status {
                    SweepStatus::Ran { pass, clusters, .. } => println!("eps={:<8} clusters={clusters} pass={pass}", r.epsilon),
                    SweepStatus::NonCoercive(msg) => println!("eps={:<8} skipped: {msg}", r.epsilon),
                }
            }
            println!("table: {}", path.display());
            Ok(sweep.all_pass())
        }
        Command::Check { trajectory, scenario, c } => {
            let path = scenario.unwrap_or_else(|| trajectory.with_file_name("scenario.toml"));
            let mut s = Scenario::load(&path)?;
            s.apply(&Overrides { c, ..Overrides::default() });
            let (_, report) = check_trajectory(&trajectory, &s)?;
            print!("{}", report.table());
            Ok(report.all_pass())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
