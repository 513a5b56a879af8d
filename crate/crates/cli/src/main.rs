use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use garcia_cli::commands::{self, CommonArgs};

#[derive(Parser)]
#[command(
    name = "garcia",
    version,
    about = "Long-tail service search: graph construction, contrastive pre-training, \
             fine-tuning, evaluation, and retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the root seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (must be empty or absent); default runs/<command>-<timestamp>.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs { config: c.config, seed: c.seed, out: c.out }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic long-tail search scenario.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Build the interaction graph, split it, and mine anchor pairs.
    BuildGraph {
        /// Directory holding the dataset files from gen-data.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Contrastively pre-train the head and tail encoders.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a pre-trained checkpoint on click labels.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to start from.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a label split and write sliced ranking metrics.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which label split to score.
        #[arg(long, default_value = "test")]
        split: String,
        /// Ranking cutoff for NDCG; defaults to the config value.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write query and service embeddings for retrieval.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Rank services for one query by embedding score.
    Retrieve {
        #[arg(long)]
        data: PathBuf,
        /// Embeddings file from the export command.
        #[arg(long)]
        embeddings: PathBuf,
        /// Query node id to rank services for.
        #[arg(long)]
        query: String,
        /// How many services to return; defaults to the config value.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate every ablation arm over several seeds.
    Ablate {
        /// Number of independent seeds to run.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Render CSV tables and SVG charts from a run directory.
    Report {
        /// Run directory holding report JSON files.
        #[arg(long = "in")]
        in_dir: PathBuf,
        /// Output directory (must be empty or absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> garcia_cli::CliResult<()> {
    match command {
        Command::GenData { common } => commands::gen_data(&common.into()).map(drop),
        Command::BuildGraph { data, common } => {
            commands::build_graph_cmd(&common.into(), &data).map(drop)
        }
        Command::Pretrain { data, common } => {
            commands::pretrain_cmd(&common.into(), &data).map(drop)
        }
        Command::Finetune { data, checkpoint, common } => {
            commands::finetune_cmd(&common.into(), &data, &checkpoint).map(drop)
        }
        Command::Eval { data, checkpoint, split, k, common } => {
            commands::eval_cmd(&common.into(), &data, &checkpoint, &split, k).map(drop)
        }
        Command::Export { data, checkpoint, common } => {
            commands::export_cmd(&common.into(), &data, &checkpoint).map(drop)
        }
        Command::Retrieve { data, embeddings, query, k, config } => {
            commands::retrieve_cmd(config.as_deref(), &data, &embeddings, &query, k).map(drop)
        }
        Command::Ablate { seeds, common } => commands::ablate_cmd(&common.into(), seeds).map(drop),
        Command::Report { in_dir, out } => commands::report_cmd(&in_dir, out.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GARCIA_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
