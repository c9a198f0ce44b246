use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use enginewatch::pipeline::{
    cmd_cluster, cmd_fit, cmd_generate, cmd_report, cmd_run, cmd_train, cmd_trajectories, PipelineConfig, StageOutcome,
};
use enginewatch::trajectory::DistanceKind;

/// Engine health monitoring: environmental regression, self-organizing map,
/// super-classes and per-engine trajectories.
#[derive(Parser)]
#[command(name = "enginewatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Write fleet.csv (synthetic unless --input is given).
    Generate,
    /// Fit the environmental model and write residuals.
    Fit,
    /// Train the map on residuals.
    Train,
    /// Group map units into super-classes.
    Cluster,
    /// Extract trajectories and rank engines by deviation.
    Trajectories,
    /// Render figures and the text summary.
    Report,
    /// Run every stage in order.
    Run,
}

#[derive(Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Map size as ROWSxCOLS.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Number of super-classes.
    #[arg(long, global = true)]
    superclasses: Option<usize>,
    /// Trajectory distance: dtw or occupancy.
    #[arg(long, global = true)]
    distance: Option<DistanceKind>,
    /// Keep every N-th trajectory step when comparing.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Fleet CSV to analyse instead of generating one.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((parse(r)?, parse(c)?))
}

impl Overrides {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                PipelineConfig::load(path).with_context(|| format!("loading configuration {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some((r, c)) = self.grid {
            cfg.som.rows = r;
            cfg.som.cols = c;
        }
        if let Some(v) = self.superclasses {
            cfg.superclass.k = v;
        }
        if let Some(v) = self.distance {
            cfg.trajectory.distance = v;
        }
        if let Some(v) = self.stride {
            cfg.trajectory.stride = v;
        }
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
            cfg.generator = None;
        }
        Ok(cfg)
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ENGINEWATCH_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow!("ENGINEWATCH_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn print(outcome: &StageOutcome) {
    println!("[{}]", outcome.stage.name());
    for note in &outcome.notes {
        println!("  {note}");
    }
    println!("  wrote {}", outcome.files.join(", "));
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = cli.overrides.config()?;
    let (name, outcomes) = match cli.command {
        Command::Generate => ("generate", cmd_generate(&cfg).map(|o| vec![o])),
        Command::Fit => ("fit", cmd_fit(&cfg).map(|o| vec![o])),
        Command::Train => ("train", cmd_train(&cfg).map(|o| vec![o])),
        Command::Cluster => ("cluster", cmd_cluster(&cfg).map(|o| vec![o])),
        Command::Trajectories => ("trajectories", cmd_trajectories(&cfg).map(|o| vec![o])),
        Command::Report => ("report", cmd_report(&cfg).map(|o| vec![o])),
        Command::Run => ("run", cmd_run(&cfg)),
    };
    for o in &outcomes.with_context(|| format!("{name} failed"))? {
        print(o);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
