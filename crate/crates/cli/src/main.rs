//! `stitchpipe`: run the pipeline, single stages, metrics and ablations from
//! the shell.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including bad
//! arguments), 3 when a stage fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use stitchpipe::error::{Error, Result};
use stitchpipe::io::read_frames_dir;
use stitchpipe::metrics::MetricReport;
use stitchpipe::model::IdentityEmbedder;
use stitchpipe::pipeline::{load_backend, run_all, run_stage, PipelineConfig, RunOutput, Stage};
use stitchpipe::toy::embedder::ToyEmbedder;
use stitchpipe::toy::{build_toy_models, save_toy_models, write_toy_clip};

#[derive(Parser)]
#[command(name = "stitchpipe", version, about = "Temporally coherent face editing for video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, reusing cached outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one stage; its upstream stages must already be in the workdir.
    Stage {
        name: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// TL-ID and TG-ID of an edited frame directory against the original.
    Metrics {
        #[arg(long)]
        edited: PathBuf,
        #[arg(long)]
        original: PathBuf,
        /// Backend whose embedder to use; the toy embedder by default.
        #[arg(long)]
        backend: Option<PathBuf>,
    },
    /// Run with one component removed, in `<workdir>/ablate-<mode>`.
    Ablate {
        #[arg(long, value_enum)]
        mode: AblationMode,
        #[arg(long)]
        config: PathBuf,
    },
    /// Toy backend utilities.
    #[command(subcommand)]
    Toy(ToyCommand),
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Build, certify and save the toy backend.
    Build {
        #[arg(long, default_value_t = stitchpipe::toy::DEFAULT_TOY_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic clip and a run config for it.
    Video {
        #[arg(long)]
        backend: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value = "grow_radius")]
        direction: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationMode {
    NoEncoder,
    NoPti,
    NoStitch,
}

impl AblationMode {
    fn name(self) -> &'static str {
        match self {
            AblationMode::NoEncoder => "no-encoder",
            AblationMode::NoPti => "no-pti",
            AblationMode::NoStitch => "no-stitch",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

/// Stdout line that tolerates a closed pipe.
fn emit(line: String) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_report(r: &MetricReport) {
    emit(serde_json::to_string_pretty(r).expect("report serializes"));
}

fn summarize(out: &RunOutput, workdir: &Path) {
    for o in &out.outcomes {
        let how = if o.cached { "cached" } else { "ran" };
        eprintln!("{:<8} {how}", o.artifact.stage.name());
    }
    eprintln!("frames written to {}", workdir.join("compose").join("frames").display());
    print_report(&out.report);
}

fn existing_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} is not a directory", p.display())))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = PipelineConfig::load(&config)?;
            cfg.validate()?;
            let backend = load_backend(&cfg.backend)?;
            summarize(&run_all(&cfg, &backend)?, &cfg.workdir);
        }
        Command::Stage { name, config } => {
            let stage: Stage = name.parse()?;
            let cfg = PipelineConfig::load(&config)?;
            cfg.validate()?;
            let backend = load_backend(&cfg.backend)?;
            let o = run_stage(stage, &cfg, &backend)?;
            let how = if o.cached { "cached" } else { "ran" };
            emit(format!("{stage} {how}"));
            for p in &o.artifact.outputs {
                emit(format!("  {}", cfg.workdir.join(p).display()));
            }
        }
        Command::Metrics {
            edited,
            original,
            backend,
        } => {
            existing_dir(&edited)?;
            existing_dir(&original)?;
            let embedder: Arc<dyn IdentityEmbedder> = match backend {
                Some(dir) => load_backend(&dir)?.embedder,
                None => Arc::new(ToyEmbedder::default()),
            };
            let r = MetricReport::evaluate(&read_frames_dir(&edited)?, &read_frames_dir(&original)?, embedder.as_ref())?;
            print_report(&r);
        }
        Command::Ablate { mode, config } => {
            let mut cfg = PipelineConfig::load(&config)?;
            match mode {
                AblationMode::NoEncoder => cfg.ablation.no_encoder = true,
                AblationMode::NoPti => cfg.ablation.no_pti = true,
                AblationMode::NoStitch => cfg.ablation.no_stitch = true,
            }
            cfg.workdir = cfg.workdir.join(format!("ablate-{}", mode.name()));
            cfg.validate()?;
            let backend = load_backend(&cfg.backend)?;
            summarize(&run_all(&cfg, &backend)?, &cfg.workdir);
        }
        Command::Toy(ToyCommand::Build { seed, out }) => {
            let m = build_toy_models(seed)?;
            save_toy_models(&m, &out)?;
            emit(serde_json::to_string_pretty(&m.certificate).expect("certificate serializes"));
        }
        Command::Toy(ToyCommand::Video {
            backend,
            seed,
            frames,
            direction,
            out,
        }) => {
            if frames < 2 {
                return Err(Error::Config("a clip needs at least two frames".into()));
            }
            if !backend.join(stitchpipe::pipeline::BACKEND_MANIFEST).is_file() {
                return Err(Error::Config(format!("{} holds no backend", backend.display())));
            }
            emit(write_toy_clip(&out, &backend, seed, frames, &direction)?.display().to_string());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
