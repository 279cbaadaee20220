//! `dimix`: train, evaluate, analyze, and benchmark dimension-mixing models.

use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};

use dimix_cli::analysis;
use dimix_cli::bench;
use dimix_cli::checkpoint;
use dimix_cli::config::ExperimentConfig;
use dimix_cli::data;
use dimix_cli::error::{CliError, Result};
use dimix_cli::model::Model;
use dimix_cli::train;

#[derive(Parser)]
#[command(name = "dimix", version, about = "Dimension-mixing experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file of `key = value` lines; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Directory for metrics, checkpoints, and benchmark tables.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs/latest")]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, final.ckpt, and best.ckpt.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint to load; defaults to OUT/final.ckpt.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Report mixing completeness and parameter/MAC/permutation costs as JSON.
    Analyze,
    /// Average training-step time and peak memory, dense vs butterfly attention.
    Bench,
}

fn main() {
    dimix_cli::memtrack::tune_allocator();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        exit(err.exit_code());
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for pair in &cli.overrides {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set expects KEY=VALUE, got `{pair}`"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train => {
            let outcome = train::train(&cfg, &cli.out)?;
            let last = outcome.final_row();
            eprintln!(
                "done: {} epochs, final test_acc {:.4}, best {:.4} at epoch {}",
                cfg.epochs, last.test_acc, outcome.best_test_acc, outcome.best_epoch
            );
            println!("final_test_acc,{:.6}", last.test_acc);
        }
        Command::Eval { checkpoint: path } => {
            let path = path.unwrap_or_else(|| cli.out.join("final.ckpt"));
            let model = Model::build(&cfg)?;
            let params = model.params();
            checkpoint::load_params(&path, &params)?;
            let (_, test_set) = data::load(&cfg)?;
            let acc = train::evaluate(&model, &test_set, cfg.batch_size)?;
            eprintln!(
                "{}: test accuracy {:.4} on {} samples",
                path.display(),
                acc,
                test_set.len()
            );
            println!("test_acc,{acc:.6}");
        }
        Command::Analyze => {
            let report = analysis::analyze(&cfg)?;
            eprintln!(
                "{}: complete={} params={}",
                cfg.family, report["complete"], report["params"]
            );
            println!("{}", serde_json::to_string_pretty(&report).expect("report is valid JSON"));
        }
        Command::Bench => {
            let rows = bench::run(&cfg)?;
            let mut table = String::from(bench::HEADER);
            for row in &rows {
                table.push('\n');
                table.push_str(&row.to_csv_line());
            }
            std::fs::create_dir_all(&cli.out)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cli.out.display())))?;
            std::fs::write(cli.out.join("bench.csv"), format!("{table}\n"))
                .map_err(|e| CliError::Data(format!("cannot write bench.csv: {e}")))?;
            println!("{table}");
        }
    }
    Ok(())
}
