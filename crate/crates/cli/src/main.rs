use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commonfate::pipeline::{self, Layout, PipelineConfig, Stage};
use commonfate::{Error, Result};

#[derive(Parser)]
#[command(name = "commonfate", version, about = "Motion-grouped object and scene models on synthetic fish-tank videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file (defaults are used when absent).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Dotted config override, e.g. `object.schedule.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Start from the small smoke-test configuration.
    #[arg(long)]
    smoke: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and evaluation videos.
    GenData(Common),
    /// Motion segmentation of the training videos.
    Segment(Common),
    /// Cut object crops and background samples.
    Extract(Common),
    /// Train the object model.
    TrainObject(Common),
    /// Train the background model.
    TrainBg(Common),
    /// Encode the training set into a latent bank.
    BuildLatentBank(Common),
    /// Sample scenes, including conditional ones.
    SampleScene(Common),
    /// Render intervention sequences.
    Intervene(Common),
    /// Score segmentation and object reconstruction.
    Evaluate(Common),
    /// Finite-difference gradient checks.
    GradCheck(Common),
    /// Run every stage in order.
    All(Common),
    /// Print the effective configuration.
    ShowConfig(Common),
}

fn config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) if !p.exists() => return Err(Error::MissingInput(p.clone())),
        Some(p) => PipelineConfig::load(p)?,
        None if c.smoke => PipelineConfig::smoke(),
        None => PipelineConfig::default(),
    };
    for s in &c.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn root() -> Result<PathBuf> {
    match std::env::var_os("COMMONFATE_ROOT") {
        Some(r) => Ok(PathBuf::from(r)),
        None => std::env::current_dir().map_err(|e| Error::io(".", e)),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (stage, common) = match &cli.command {
        Command::GenData(c) => (Some(Stage::GenData), c),
        Command::Segment(c) => (Some(Stage::Segment), c),
        Command::Extract(c) => (Some(Stage::Extract), c),
        Command::TrainObject(c) => (Some(Stage::TrainObject), c),
        Command::TrainBg(c) => (Some(Stage::TrainBg), c),
        Command::BuildLatentBank(c) => (Some(Stage::BuildLatentBank), c),
        Command::SampleScene(c) => (Some(Stage::SampleScene), c),
        Command::Intervene(c) => (Some(Stage::Intervene), c),
        Command::Evaluate(c) => (Some(Stage::Evaluate), c),
        Command::GradCheck(c) => (Some(Stage::GradCheck), c),
        Command::All(c) | Command::ShowConfig(c) => (None, c),
    };
    let cfg = config(common)?;
    if let Command::ShowConfig(_) = cli.command {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    if common.jobs == 0 {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let layout = Layout::new(&root()?, &cfg.paths);
    let stages: Vec<Stage> = match stage {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    for s in stages {
        let t = std::time::Instant::now();
        let files = pipeline::run_stage(s, &cfg, &layout)?;
        eprintln!("{}: {} files in {:.1}s", s.name(), files.len(), t.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
