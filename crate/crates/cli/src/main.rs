use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fiberpath::scenario::{preset, PRESETS};
use fiberpath_cli::pareto::compare;
use fiberpath_cli::{plan_command, ScenarioFile, Strategy};

#[derive(Parser)]
#[command(name = "fiberpath", version, about = "Plan continuous-fiber reinforcement paths for 2D parts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write paths.json, report.csv and renders.
    Plan {
        scenario: PathBuf,
        /// Output directory (defaults to the file's output_dir, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// optimized | greedy | field_opt_greedy | concentric[:inner|outer|all_walls[:RINGS]]
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Run every strategy and aggregate one report.csv.
        #[arg(long)]
        sweep: bool,
        /// Strategies run concurrently during a sweep.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Label report rows as dominated or not and plot energy against fiber length.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in scenario as a scenario file.
    Preset { name: String },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Plan { scenario, out, seed, strategy, sweep, jobs } => {
            let mut file = ScenarioFile::load(&scenario)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            if let Some(s) = strategy {
                file.strategy = s;
            }
            let out = out.or_else(|| file.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let summary = plan_command(&file, &out, sweep, jobs)?;
            for r in &summary.rows {
                println!(
                    "{:<22} paths {:>3}  length {:>8.2} mm  energy {:>9.3} N·mm  stiffness {:>9.3} N/mm  {:>7.1} s",
                    r.strategy, r.n_paths, r.fiber_length_mm, r.mean_energy, r.stiffness, r.wall_time_s
                );
            }
            println!("artifacts in {}", summary.out_dir.display());
            if !summary.failures.is_empty() {
                for (s, e) in &summary.failures {
                    eprintln!("{s} failed: {e}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Compare { reports, out } => {
            let (points, front) = compare(&reports, &out)?;
            for (p, nd) in points.iter().zip(front) {
                println!(
                    "{:<22} {:>8.2} mm {:>9.3} N·mm  {}",
                    p.strategy,
                    p.fiber_length_mm,
                    p.mean_energy,
                    if nd { "non-dominated" } else { "dominated" }
                );
            }
        }
        Command::Preset { name } => {
            let Some(spec) = preset(&name) else {
                anyhow::bail!("unknown preset {name:?}; available: {}", PRESETS.join(", "));
            };
            println!("{}", serde_json::to_string_pretty(&ScenarioFile::from_spec(spec))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
