//! `anchordet` command-line interface.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run_config::{Profile, RunConfig};

#[derive(Parser)]
#[command(name = "anchordet", version, about = "Anchor-query set detector for sparse point clouds")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` settings file applied after the profile.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for scene generation, initialization and shuffling.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Refinement layers, e.g. `1,3,5` (empty for propagation).
    #[arg(long, global = true, value_name = "SR_SPEC")]
    refine: Option<String>,
    /// Minimum BEV IoU for suppression during evaluation.
    #[arg(long, global = true, value_name = "F32")]
    nms: Option<f32>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Run directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    out: PathBuf,
    /// Extra `KEY=VALUE` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene files.
    GenData {
        /// Number of scenes to write
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Stage-1 propagation training, or stage 2 with `--refine` and an AAM checkpoint.
    Train {
        /// Directory of `.scene` files; generated from the config when absent
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint to continue from (required with `--refine`)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit the anchor alignment module on a stage-1 checkpoint.
    TrainAam {
        /// Stage-1 checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of `.scene` files; generated from the config when absent
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Detection metrics, optionally with and without NMS.
    Eval {
        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of `.scene` files; generated from the config when absent
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and compare the four refinement schedules.
    AblateSchedules {
        /// Training scenes; generated from the config when absent
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluation scenes; generated from the config when absent
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
    /// First- and latest-query travel statistics.
    AnalyzeTravel {
        /// Checkpoint to analyze
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of `.scene` files; generated from the config when absent
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Per-layer cross-attention maps of one query.
    DumpAttention {
        /// Checkpoint to run
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene file to run it on
        #[arg(long)]
        scene: PathBuf,
        /// Query slot whose attention is written
        #[arg(long, default_value_t = 0)]
        query: usize,
    },
}

fn build_config(c: &Common) -> anchordet::Result<RunConfig> {
    let mut config = RunConfig::new(c.profile);
    if let Some(path) = &c.config {
        config.apply_file(path)?;
    }
    if let Some(seed) = c.seed {
        config.set("scene.seed", &seed.to_string())?;
        config.set("train.seed", &seed.to_string())?;
    }
    if let Some(spec) = &c.refine {
        config.set("model.refine", spec)?;
    }
    if let Some(t) = c.nms {
        config.set("eval.nms", &t.to_string())?;
    }
    for assignment in &c.set {
        config.apply_assignment(assignment)?;
    }
    config.resolve()?;
    Ok(config)
}

fn run(cli: Cli) -> anchordet::Result<()> {
    let config = build_config(&cli.common)?;
    let out = cli.common.out.as_path();
    match cli.command {
        Command::GenData { count } => commands::gen_data(&config, count, out),
        Command::Train { data, checkpoint } => commands::train(&config, data.as_deref(), checkpoint.as_deref(), out),
        Command::TrainAam { checkpoint, data } => commands::train_aam_cmd(&config, &checkpoint, data.as_deref(), out),
        Command::Eval { checkpoint, data } => commands::eval(&config, &checkpoint, data.as_deref(), out),
        Command::AblateSchedules { data, eval_data } => {
            commands::ablate(&config, data.as_deref(), eval_data.as_deref(), out)
        }
        Command::AnalyzeTravel { checkpoint, data } => {
            commands::analyze_travel(&config, &checkpoint, data.as_deref(), out)
        }
        Command::DumpAttention { checkpoint, scene, query } => {
            commands::dump_attention(&config, &checkpoint, &scene, query, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
