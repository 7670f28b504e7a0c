use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adbn_cli::config::{ExperimentConfig, Overrides};
use adbn_cli::synthetic::{write_dataset, BlobSpec};
use adbn_cli::workflow;
use adbn_core::dbn::Architecture;
use adbn_core::{FusionMode, Result, RunReport};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adbn", version, about = "Frame-fusion DBN pre-training and transfer fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess and fuse the manifest's clips into a row cache.
    Fuse(Common),
    /// Greedy layer-wise pre-training of every repetition.
    Pretrain(Common),
    /// Attach a classification head and fine-tune with the first layer frozen.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pre-trained checkpoint (single repetition only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Clip-level test accuracy; prints one JSON report per repetition.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Fine-tuned checkpoint (single repetition only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fuse, pretrain, finetune, eval and report in one go.
    Run(Common),
    /// Aggregate evaluated runs below a directory into a mean ± std table.
    Report {
        /// Directory to search for run reports.
        dir: PathBuf,
    },
    /// Write a synthetic moving-blob dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        train: usize,
        #[arg(long, default_value_t = 60)]
        test: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 6)]
        frames: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
}

fn parse_arch(s: &str) -> std::result::Result<Architecture, String> {
    s.parse().map_err(|e: adbn_core::Error| e.to_string())
}

fn parse_fusion(s: &str) -> std::result::Result<FusionMode, String> {
    s.parse().map_err(|e: adbn_core::Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let overrides = Overrides {
            manifest: self.manifest.clone(),
            arch: self.arch,
            fusion: self.fusion,
            seed: self.seed,
            out: self.out.clone(),
            repetitions: self.repetitions,
        };
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::from_toml("", Path::new("."), &overrides),
        }
    }
}

fn print_reports(reports: &[RunReport]) -> Result<()> {
    for r in reports {
        println!("{}", r.to_json_line()?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut progress = std::io::stderr();
    match cli.command {
        Command::Fuse(c) => {
            let summary = workflow::cmd_fuse(&c.resolve()?)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::Pretrain(c) => {
            let cfg = c.resolve()?;
            workflow::cmd_pretrain(&cfg, &mut progress)?;
            let layout = workflow::RunLayout::new(&cfg.out);
            for rep in 0..cfg.repetitions {
                println!("{}", layout.pretrained(rep).display());
            }
        }
        Command::Finetune { common, checkpoint } => {
            let cfg = common.resolve()?;
            workflow::cmd_finetune(&cfg, checkpoint.as_deref(), &mut progress)?;
            let layout = workflow::RunLayout::new(&cfg.out);
            for rep in 0..cfg.repetitions {
                println!("{}", layout.finetuned(rep).display());
            }
        }
        Command::Eval { common, checkpoint } => {
            print_reports(&workflow::cmd_eval(&common.resolve()?, checkpoint.as_deref())?)?;
        }
        Command::Run(c) => {
            let (reports, out) = workflow::cmd_run(&c.resolve()?, &mut progress)?;
            print_reports(&reports)?;
            print!("{}", out.table);
        }
        Command::Report { dir } => {
            let out = workflow::cmd_report(&dir)?;
            for a in &out.aggregates {
                println!("{}", serde_json::to_string(a).expect("aggregate serializes"));
            }
            print!("{}", out.table);
        }
        Command::Synth {
            out,
            train,
            test,
            classes,
            frames,
            seed,
        } => {
            let spec = BlobSpec {
                train_clips: train,
                test_clips: test,
                n_classes: classes,
                frames,
                seed,
                ..BlobSpec::default()
            };
            println!("{}", write_dataset(&out, &spec)?.display());
        }
    }
    let _ = progress.flush();
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(adbn_cli::exit_code(&e))
        }
    }
}
