use std::path::PathBuf;
use std::process::ExitCode;

use cadc::config::RunConfig;
use cadc::eval::metrics_csv;
use cadc::pipeline::{self, sweep_csv, table1_csv};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cadc", about = "Pretrained-embedding training on compressed interaction logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Every flag overrides the same-named key of `--config` (dashes become
/// underscores).
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    ratings: Option<String>,
    #[arg(long)]
    users: Option<String>,
    #[arg(long)]
    items: Option<String>,
    /// movielens-dat or tsv
    #[arg(long)]
    format: Option<String>,
    /// movielens or none
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    dataset_name: Option<String>,
    /// gold-standard, random, over, under, logq, cadc or cadc-mlp
    #[arg(long)]
    method: Option<String>,
    /// random, hybrid, init, init-frz, linear or mlp
    #[arg(long)]
    strategy: Option<String>,
    /// Fraction of the train split kept, in (0, 1].
    #[arg(long)]
    ratio: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    pretrain_epochs: Option<String>,
    #[arg(long)]
    emb_dim: Option<String>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    tower_hidden: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    negatives: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    pretrain_lr: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Box<dyn std::error::Error>> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("seed", &self.seed),
            ("out", &self.out),
            ("ratings", &self.ratings),
            ("users", &self.users),
            ("items", &self.items),
            ("format", &self.format),
            ("schema", &self.schema),
            ("dataset_name", &self.dataset_name),
            ("method", &self.method),
            ("strategy", &self.strategy),
            ("ratio", &self.ratio),
            ("epochs", &self.epochs),
            ("pretrain_epochs", &self.pretrain_epochs),
            ("emb_dim", &self.emb_dim),
            ("tower_hidden", &self.tower_hidden),
            ("batch_size", &self.batch_size),
            ("negatives", &self.negatives),
            ("lr", &self.lr),
            ("pretrain_lr", &self.pretrain_lr),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and split a dataset; writes split TSVs and a summary.
    Ingest(RunArgs),
    /// Pretrain MF (MF-MLP for cadc-mlp) embeddings on the train split.
    Pretrain(RunArgs),
    /// Write the training subset of the configured method.
    Compress(RunArgs),
    /// Train the two-tower model and save tower outputs.
    Train(RunArgs),
    /// Evaluate tower outputs saved by `train`.
    Evaluate(RunArgs),
    /// compress, pretrain, train and evaluate in one go.
    Pipeline(RunArgs),
    /// One pipeline run per full-to-selected ratio.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated ratios, e.g. 1,10,50 (10 keeps 10% of train).
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50")]
        ratios: Vec<f64>,
    },
    /// All seven methods on one split.
    Table1(RunArgs),
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Ingest(a) => print!("{}", pipeline::cmd_ingest(&a.resolve()?)?),
        Command::Pretrain(a) => {
            let p = pipeline::cmd_pretrain(&a.resolve()?)?;
            println!("pretrained {} users x {} items in {:.1}s", p.tables.user.rows(), p.tables.item.rows(), p.seconds);
        }
        Command::Compress(a) => {
            let s = pipeline::cmd_compress(&a.resolve()?)?;
            println!("selected {} interactions", s.d_sel.len());
        }
        Command::Train(a) => {
            pipeline::cmd_train(&a.resolve()?)?;
        }
        Command::Evaluate(a) => print!("{}", metrics_csv(&[pipeline::cmd_evaluate(&a.resolve()?)?])),
        Command::Pipeline(a) => print!("{}", metrics_csv(&[pipeline::cmd_pipeline(&a.resolve()?)?])),
        Command::Sweep { run, ratios } => print!("{}", sweep_csv(&pipeline::cmd_sweep(&run.resolve()?, &ratios)?)),
        Command::Table1(a) => print!("{}", table1_csv(&pipeline::cmd_table1(&a.resolve()?)?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
