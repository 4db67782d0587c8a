//! Command-line front end: `train`, `baseline-study`, `analyze`, `verify`.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cmr::experiment::{
    analyze_checkpoint, preset, run_baseline_study, run_experiment, snapshot_csv, snapshot_table,
    ExperimentConfig, Mode,
};
use cmr::penalty::CmrConfig;
use cmr::verify::{report_table, run_all};

#[derive(Parser)]
#[command(name = "cmr", version, about = "Spectral conditioning experiments: training, analysis, and theory verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config file (fields default to the kappa-stress preset).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: kappa-stress | baseline.
    #[arg(long)]
    preset: Option<String>,
    /// Training mode: vanilla | cmr | l2 | sn | sn+cmr.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for metrics, gradient logs, and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory with the four IDX files (synthesized when absent).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment.
    Train(RunArgs),
    /// Run every mode (vanilla, l2, sn, cmr, sn+cmr) from one base config
    /// and summarize per-epoch conditioning.
    BaselineStudy(RunArgs),
    /// Report per-layer spectral statistics of a checkpoint.
    Analyze {
        /// Checkpoint path (written by `train`).
        ckpt: PathBuf,
        /// Write the per-layer CSV here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON config whose `cmr` block sets K and epsilon for the report.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the theory verification suite; exits nonzero on any failure.
    Verify {
        #[arg(long, default_value_t = 12345)]
        seed: u64,
        /// Emit machine-readable JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
}

fn resolve_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config: ExperimentConfig = if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let name = args.preset.as_deref().unwrap_or("kappa-stress");
        preset(name)?
    };
    if let Some(mode) = &args.mode {
        config.mode = mode.parse::<Mode>()?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(data) = &args.data {
        config.data_dir = data.clone();
    }
    Ok(config)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let config = resolve_config(&args)?;
            eprintln!(
                "training mode={} seed={} epochs={} out={}",
                config.mode,
                config.seed,
                config.epochs,
                config.output_dir.display()
            );
            let out = run_experiment(&config)?;
            for m in &out.metrics {
                eprintln!(
                    "epoch {:>3}: loss {:.4}  acc {:.4}  grad {:.4}  kappa(W) {:.4e}  max|s_k| {:.4}",
                    m.epoch,
                    m.train_loss_mean,
                    m.test_accuracy,
                    m.avg_grad_norm,
                    m.mean_kappa_w,
                    m.max_abs_moment
                );
            }
            println!("final test accuracy: {:.4}", out.final_test_accuracy);
            println!("outputs in {}", out.output_dir.display());
        }
        Command::BaselineStudy(args) => {
            let mut config = resolve_config(&args)?;
            if args.config.is_none() && args.preset.is_none() {
                config = preset("baseline")?;
                // Re-apply overrides on the baseline base.
                let mut args2 = args.clone();
                args2.preset = Some("baseline".into());
                config = resolve_config(&args2)?;
            }
            let rows = run_baseline_study(&config, &Mode::ALL)?;
            let mut final_acc: Vec<(Mode, f64)> = Vec::new();
            for &mode in &Mode::ALL {
                if let Some(last) = rows.iter().filter(|r| r.mode == mode).next_back() {
                    final_acc.push((mode, last.test_accuracy));
                }
            }
            println!("mode     final_acc");
            for (mode, acc) in final_acc {
                println!("{:<8} {:.4}", mode.to_string(), acc);
            }
            println!("summary in {}", config.output_dir.join("baseline_summary.csv").display());
        }
        Command::Analyze { ckpt, out, config } => {
            let cmr_config: CmrConfig<f64> = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    let full: ExperimentConfig = serde_json::from_str(&text)?;
                    full.cmr
                }
                None => CmrConfig::default(),
            };
            let snap = analyze_checkpoint(&ckpt, &cmr_config)?;
            print!("{}", snapshot_table(&snap));
            if let Some(out) = out {
                std::fs::write(&out, snapshot_csv(&snap, cmr_config.k_max))?;
                println!("csv written to {}", out.display());
            }
        }
        Command::Verify { seed, json } => {
            let reports = run_all(seed)?;
            let all_pass = reports.iter().all(|r| r.pass);
            if json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            } else {
                print!("{}", report_table(&reports));
            }
            if !all_pass {
                bail!("verification failed");
            }
        }
    }
    Ok(())
}
