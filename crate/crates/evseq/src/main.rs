use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evseq::config::RunConfig;
use evseq::pipeline::{self, Stage};
use evseq::{Error, Result};
use evseq_core::robustness::Operation;

#[derive(Parser)]
#[command(name = "evseq", version, about = "Event detection and captioning as sequence generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.pretrain.lambda=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed (overrides `train.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArg {
    /// Directory with train.json, val.json and features.bin.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train concept features and write an augmented data directory.
    TrainCpt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Masked multi-task pre-training.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Fine-tune the event-sequence generator.
    FinetuneEd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Fine-tune the caption generator.
    FinetuneEc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Detect then describe every validation video.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        ed: PathBuf,
        #[arg(long)]
        ec: PathBuf,
    },
    /// Score a submission against reference annotations.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        submission: PathBuf,
        /// Data directory whose validation annotations are the references.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference annotation files (repeatable); overrides --data.
        #[arg(long)]
        refs: Vec<PathBuf>,
    },
    /// Evaluate a submission under adverse edits.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        submission: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        refs: Vec<PathBuf>,
        /// Operations to run (repeatable); all of them when omitted.
        #[arg(long, value_enum)]
        operation: Vec<OpArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Increase,
    Reduce,
    Exchange,
    Extreme,
}

impl From<OpArg> for Operation {
    fn from(o: OpArg) -> Self {
        match o {
            OpArg::Increase => Operation::Increase,
            OpArg::Reduce => Operation::Reduce,
            OpArg::Exchange => Operation::Exchange,
            OpArg::Extreme => Operation::Extreme,
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let base = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage(common: &Common, data: &Path, init: Option<&Path>, stage: Stage) -> Result<()> {
    let cfg = load_config(common)?;
    pipeline::run_train_stage(stage, &cfg, data, init, &common.out).map(drop)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            pipeline::run_gen_data(&cfg, &common.out).map(drop)
        }
        Command::TrainCpt { common, data } => {
            let cfg = load_config(&common)?;
            pipeline::run_train_cpt(&cfg, &data.data, &common.out).map(drop)
        }
        Command::Pretrain { common, data, init } => stage(&common, &data.data, init.as_deref(), Stage::Pretrain),
        Command::FinetuneEd { common, data, init } => stage(&common, &data.data, init.as_deref(), Stage::FinetuneEd),
        Command::FinetuneEc { common, data, init } => stage(&common, &data.data, init.as_deref(), Stage::FinetuneEc),
        Command::Infer { common, data, ed, ec } => {
            let cfg = load_config(&common)?;
            pipeline::run_infer(&cfg, &data.data, &ed, &ec, &common.out).map(drop)
        }
        Command::Evaluate { common, submission, data, refs } => {
            let cfg = load_config(&common)?;
            let (sets, files) = pipeline::load_references(data.as_deref(), &refs)?;
            let report = pipeline::run_evaluate(&cfg, &submission, &sets, &files, &common.out)?;
            println!("{}", serde_json::to_string(&report.detection).map_err(|e| Error::json(&submission, e))?);
            Ok(())
        }
        Command::Audit { common, submission, data, refs, operation } => {
            let cfg = load_config(&common)?;
            let (sets, files) = pipeline::load_references(data.as_deref(), &refs)?;
            let ops: Vec<Operation> = if operation.is_empty() {
                Operation::ALL.to_vec()
            } else {
                operation.into_iter().map(Operation::from).collect()
            };
            let report = pipeline::run_audit(&cfg, &submission, &sets, &files, &ops, &common.out)?;
            print!("{}", pipeline::audit_csv(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
