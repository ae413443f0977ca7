use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vmekit::pipeline::{
    cmd_evaluate, cmd_gen_data, cmd_report, cmd_train_separator, cmd_train_vme, Config, System,
};

#[derive(Parser)]
#[command(name = "vmekit", version, about = "Multi-task NN-VME pipeline: simulate, train, beamform, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; absent keys follow the named preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the train, dev and eval splits.
    GenData(Common),
    /// Train the PIT separator.
    TrainSep {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train the NN-VME under the multi-task loss, one model per α.
    TrainVme {
        #[command(flatten)]
        common: Common,
        /// Comma-separated α values; defaults to `train.alpha`.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long)]
        resume: bool,
    },
    /// Score systems on the eval split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated systems: mixture, rm2, rm3, vm (every `eval.alphas`), vm@ALPHA.
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
        /// Replaces `eval.alphas` for a bare `vm`.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
    },
    /// Plot the α sweep from metric CSVs.
    Report {
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Metric CSVs; defaults to `<out>/eval/metrics.csv`.
        csv: Vec<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::desk(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(&c)?;
            let n = cmd_gen_data(&cfg, &c.out)?.len();
            println!("generated {n} samples in {}", c.out.join("data").display());
        }
        Command::TrainSep { common, resume } => {
            let cfg = load_config(&common)?;
            let ck = cmd_train_separator(&cfg, &common.out, resume)?;
            let last = ck.history.last().context("empty training history")?;
            println!("separator: {} epochs, dev PIT loss {:.3} dB", ck.epochs_done, last.dev_loss);
        }
        Command::TrainVme { common, alpha, resume } => {
            let cfg = load_config(&common)?;
            let alphas = if alpha.is_empty() { vec![cfg.train.alpha] } else { alpha };
            for ck in cmd_train_vme(&cfg, &common.out, &alphas, resume)? {
                let last = ck.history.last().context("empty training history")?;
                println!(
                    "vme α={}: {} epochs, dev L_MTL {:.3} (L_VM {:.3}, L_BF {:.3})",
                    ck.alpha.unwrap_or_default(),
                    ck.epochs_done,
                    last.dev_loss,
                    last.dev_vm.unwrap_or(f64::NAN),
                    last.dev_bf.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Evaluate { common, systems, alpha } => {
            let mut cfg = load_config(&common)?;
            if !alpha.is_empty() {
                cfg.eval.alphas = alpha;
                cfg.validate()?;
            }
            let list = if systems.is_empty() { cfg.eval.systems.clone() } else { systems };
            let systems = System::parse_list(&list, &cfg.eval.alphas)?;
            let rows = cmd_evaluate(&cfg, &common.out, &systems)?;
            print!(
                "{}",
                vmekit::pipeline::evaluate::summary_markdown(&vmekit::pipeline::evaluate::summarize(&rows))
            );
        }
        Command::Report { out, csv } => {
            let report = cmd_report(&out, &csv)?;
            print!("{}", report.markdown);
        }
    }
    Ok(())
}

fn category(err: &anyhow::Error) -> &'static str {
    err.downcast_ref::<vmekit::Error>().map_or("internal", vmekit::Error::category)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", category(&e));
            ExitCode::from(2)
        }
    }
}
