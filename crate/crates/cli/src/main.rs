//! Command-line runner for weak-supervision experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
//! failure (partial artifacts are still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eoerm::experiment::{run_experiment, ExperimentConfig, RunOptions};
use eoerm::losses::LossKind;
use eoerm::Error;

/// Environment variable naming the default output root.
const OUT_ROOT_VAR: &str = "EOERM_OUT_ROOT";

#[derive(Parser)]
#[command(name = "eoerm", version, about = "Run weakly supervised classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Output directory (default: config `out`, else `$EOERM_OUT_ROOT/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated method list replacing the config's.
        #[arg(long)]
        methods: Option<String>,
        /// Base loss replacing `train.loss`.
        #[arg(long)]
        loss: Option<String>,
        /// Suppress per-run progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a config, then print it with defaults filled in.
    Validate { config: PathBuf },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn output_dir(cfg: &ExperimentConfig, config_path: &Path, flag: Option<PathBuf>) -> PathBuf {
    if let Some(dir) = flag.or_else(|| cfg.out.clone()) {
        return dir;
    }
    let name = cfg.name.clone().unwrap_or_else(|| {
        config_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into())
    });
    let root = std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", cfg.to_toml());
            Ok(0)
        }
        Command::Run {
            config,
            seed_override,
            out,
            methods,
            loss,
            quiet,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed_override {
                cfg.seeds = vec![seed];
            }
            if let Some(list) = methods {
                cfg.methods = Some(
                    list.split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect(),
                );
            }
            if let Some(name) = loss {
                cfg.train.loss = name.parse::<LossKind>().map_err(|e| Error::Config {
                    path: "--loss".into(),
                    reason: e.to_string(),
                })?;
            }
            cfg.validate()?;
            let dir = output_dir(&cfg, &config, out);
            let report = run_experiment(&cfg, &RunOptions { out_dir: dir.clone(), quiet })?;
            print!("{}", eoerm::experiment::summary_table(&report));
            println!("artifacts: {}", dir.display());
            if !report.failures.is_empty() {
                eprintln!("{} run(s) failed numerically; see failures.csv", report.failures.len());
                return Ok(4);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
