use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softkin::config::{Overrides, RunConfig};
use softkin::pipeline;
use softkin::Result;

/// Learn soft-robot forward kinematics and wrap the best model in conformal prediction intervals.
///
/// Log verbosity follows RUST_LOG (default: info).
#[derive(Debug, Parser)]
#[command(name = "softkin", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Miscoverage level in (0, 1) (overrides the config)
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Run directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated model ids to keep from the pool
    #[arg(long, global = true, value_delimiter = ',')]
    models: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or load the data and write the four split CSVs
    Generate,
    /// Fit the model pool and select the best model on the calibration split
    Train,
    /// Calibrate a trained model and write prediction intervals
    Conformal {
        /// Model id to calibrate (default: the selected model)
        #[arg(long)]
        model: Option<String>,
    },
    /// Recompute every stored metric from the saved models and data
    Evaluate,
    /// Write tables and plot data from a finished run
    Report,
    /// generate, train, conformal, evaluate and report in one go
    Run,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let base = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    base.resolve(&Overrides {
        seed: common.seed,
        alpha: common.alpha,
        out_dir: common.out.clone(),
        models: common.models.clone(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Generate => {
            let b = pipeline::cmd_generate(&cfg)?;
            println!(
                "data: {} train, {} calibration, {} test, {} extrapolation",
                b.train.len(),
                b.calibration.len(),
                b.test.len(),
                b.extrapolation.len()
            );
        }
        Command::Train => {
            let sel = pipeline::cmd_train(&cfg)?;
            for r in &sel.ranking {
                println!("{:<12} {:<6} calibration {} = {:.6}", r.id, r.method, sel.metric, r.value);
            }
            for f in &sel.failures {
                println!("{:<12} failed: {}", f.id, f.error);
            }
            println!("selected: {}", sel.best);
        }
        Command::Conformal { model } => {
            let s = pipeline::cmd_conformal(&cfg, model.as_deref())?;
            println!("calibrated {} on {} samples at alpha = {}", s.model_id, s.n_cal, s.alpha);
            if s.unbounded {
                println!("warning: calibration set too small for this alpha, intervals are unbounded");
            }
        }
        Command::Evaluate => {
            let e = pipeline::cmd_evaluate(&cfg)?;
            println!("{} stored metrics recomputed exactly", e.checked);
        }
        Command::Report => {
            let r = pipeline::cmd_report(&cfg)?;
            println!("report: {} files under {}", r.files.len(), cfg.out_dir.join("report").display());
        }
        Command::Run => {
            let r = pipeline::run_all(&cfg)?;
            println!("selected {}; report: {} files under {}", r.selected, r.files.len(), cfg.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
