use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use xbarsim_harness::config::TuningPattern;
use xbarsim_harness::{run_recipe, run_sweep, Axis, ExperimentConfig, HarnessError, Knob, Recipe, Result};

/// Memristive-crossbar network simulator: experiment recipes and sweeps.
#[derive(Parser)]
#[command(name = "sim", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one recipe over its seeds.
    Run {
        recipe: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use seeds 0..N instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Sweep knobs of the configured recipe over a grid of values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `knob=v1,v2,...`; repeat for a multi-dimensional grid.
        #[arg(long, required = true)]
        axis: Vec<String>,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write-verify tune a grayscale image (text, 0..=255 per pixel) into an array.
    TuneImage {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forming statistics of a virgin array.
    Form {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List recipes and sweepable knobs.
    List,
}

fn load(config: Option<&Path>, recipe: Recipe) -> Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(p, Some(recipe)),
        None => Ok(ExperimentConfig::for_recipe(recipe)),
    }
}

fn out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    cli.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(default))
}

fn with_seeds(cfg: &mut ExperimentConfig, seeds: Option<u64>) -> Result<()> {
    if let Some(n) = seeds {
        if n == 0 {
            return Err(HarnessError::config("--seeds must be at least 1"));
        }
        cfg.seeds = (0..n).collect();
    }
    Ok(())
}

fn run_and_write(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let report = run_recipe(cfg)?;
    let files = report.write(cfg, out, start.elapsed().as_secs_f64())?;
    for (name, a) in &report.metrics {
        println!("{name}: median {} [q25 {}, q75 {}]", a.median, a.q25, a.q75);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Run { recipe, config, out, seeds } => {
            let recipe: Recipe = recipe.parse()?;
            let mut cfg = load(config.as_deref(), recipe)?;
            with_seeds(&mut cfg, seeds)?;
            let out = out_dir(out, &cfg, recipe.name());
            run_and_write(&cfg, &out)
        }
        Command::Sweep { config, axis, seeds, out } => {
            let text = std::fs::read_to_string(&config).map_err(|e| HarnessError::io(&config, e))?;
            let mut cfg = ExperimentConfig::from_json(&text, None)?;
            with_seeds(&mut cfg, seeds)?;
            let axes = axis.iter().map(|a| a.parse()).collect::<Result<Vec<Axis>>>()?;
            let start = Instant::now();
            let report = run_sweep(&cfg, &axes)?;
            let out = out_dir(out, &cfg, &format!("{}-sweep", cfg.recipe.name()));
            for f in report.write(&cfg, &out, start.elapsed().as_secs_f64())? {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::TuneImage { image, config, out } => {
            let mut cfg = load(config.as_deref(), Recipe::Tuning)?;
            cfg.tuning.pattern = TuningPattern::Image(image);
            cfg.validate()?;
            let out = out_dir(out, &cfg, "tune-image");
            run_and_write(&cfg, &out)
        }
        Command::Form { config, out } => {
            let cfg = load(config.as_deref(), Recipe::Forming)?;
            let out = out_dir(out, &cfg, "forming");
            run_and_write(&cfg, &out)
        }
        Command::List => {
            for r in Recipe::ALL {
                let knobs: Vec<_> = r.knobs().iter().map(Knob::name).collect();
                println!("{:<14} knobs: {}", r.name(), if knobs.is_empty() { "-".into() } else { knobs.join(", ") });
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
