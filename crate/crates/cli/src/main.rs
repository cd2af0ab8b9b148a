use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refres::context::WindowName;
use refres::describers::DescriptionSource;
use refres_cli::{
    cmd_describe, cmd_evaluate, cmd_export, cmd_serve, cmd_validate, CliError, Overrides, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "refres",
    version,
    about = "Reference resolution by referent description and retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Context window: 3, 7, 13 or full. Repeatable.
    #[arg(long = "window")]
    windows: Vec<WindowName>,
    /// Describer name, from the config or built in. Repeatable.
    #[arg(long = "describer")]
    describers: Vec<String>,
    /// Embedding backend: hash, planted or http.
    #[arg(long)]
    backend: Option<String>,
    /// Evaluate with the reduced candidate set only.
    #[arg(long, conflicts_with = "no_reduced")]
    reduced: bool,
    /// Evaluate with all candidates only.
    #[arg(long)]
    no_reduced: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let o = Overrides {
            corpus: self.corpus.clone(),
            windows: self.windows.clone(),
            describers: self.describers.clone(),
            backend: self.backend.clone(),
            reduced: match (self.reduced, self.no_reduced) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            out: self.out.clone(),
            seed: self.seed,
        };
        RunConfig::resolve(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus file and print a summary.
    Validate {
        /// Corpus file; defaults to --corpus or the config's corpus.
        path: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write fine-tuning data for each fold's training dialogues.
    Export {
        #[command(flatten)]
        common: Common,
        /// Only this fold (the held-out image set id).
        #[arg(long)]
        fold: Option<String>,
        /// gt_manual, gt_chain or gt_set.
        #[arg(long, default_value = "gt_manual")]
        label_source: DescriptionSource,
    },
    /// Describe the held-out mentions of every fold with one describer.
    Describe {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate the configured describers and write the report.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Serve the human evaluation experiment.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Append-only event log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { path, common } => {
            let path = match path {
                Some(p) => p,
                None => common.resolve()?.corpus,
            };
            let s = cmd_validate(&path)?;
            println!(
                "ok: {} image sets, {} dialogues, {} mentions ({} single-image)",
                s.image_sets, s.dialogues, s.mentions, s.single_image_mentions
            );
        }
        Command::Export {
            common,
            fold,
            label_source,
        } => {
            let cfg = common.resolve()?;
            let out = cfg.out.clone();
            let mut total = 0;
            for &w in &cfg.windows {
                for (path, n) in cmd_export(&cfg, fold.as_deref(), w, label_source, &out)? {
                    println!("{}: {n} samples", path.display());
                    total += n;
                }
            }
            println!("{total} samples");
        }
        Command::Describe { common } => {
            let cfg = common.resolve()?;
            let out = cfg.out.join("descriptions.jsonl");
            let n = cmd_describe(&cfg, &out)?;
            println!("{}: {n} descriptions", out.display());
        }
        Command::Evaluate { common } => {
            let cfg = common.resolve()?;
            let report = cmd_evaluate(&cfg)?;
            println!(
                "{} items over {} folds written to {}",
                report.items.len(),
                report.folds.len(),
                cfg.out.display()
            );
        }
        Command::Serve {
            common,
            addr,
            log,
            images,
        } => {
            let mut cfg = common.resolve()?;
            if log.is_some() {
                cfg.experiment.log_path = log;
            }
            if images.is_some() {
                cfg.experiment.image_root = images;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
                path: "tokio runtime".into(),
                source,
            })?;
            rt.block_on(cmd_serve(&cfg, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_leakage() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
