//! Command-line front end for the bias-diagnosis pipeline.
//!
//! Every subcommand maps onto one pipeline stage; `diagnose` runs them
//! all. Stages communicate only through files in the output directory,
//! so any stage can be re-run on its own.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 training error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use navdiag_core::featurize::FeatureKind;
use navdiag_core::navgraph::Axis;
use navdiag_core::pipeline::{
    load_config, run_experiment, stage_eval, stage_featurize, stage_gen_world, stage_lang_dist,
    stage_report, stage_split, stage_train, stage_train_seg, ExperimentConfig, ReportBundle,
};
use navdiag_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "navdiag",
    version,
    about = "Diagnose environment bias in instruction-guided navigation agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (JSON); built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the configuration's out_dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeedArg {
    /// Single run seed to process; every configured seed when omitted.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct FeaturesArg {
    /// Feature representations, comma separated
    /// (zero, lowlevel, classprob, detection, gtseg, learnedseg);
    /// every configured representation when omitted.
    #[arg(long, value_name = "KINDS", value_delimiter = ',')]
    features: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world and sample episode pools.
    GenWorld {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Re-split the episodes by a coordinate cut.
    Split {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArg,
        /// Cut axis: x or z (overrides the configuration).
        #[arg(long, value_name = "AXIS")]
        axis: Option<String>,
        /// Target fraction of viewpoints on the training side.
        #[arg(long, value_name = "F")]
        fraction: Option<f64>,
    },
    /// Compute and store view features.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArg,
        #[command(flatten)]
        features: FeaturesArg,
    },
    /// Train the segmentation predictor on held-out training environments.
    TrainSeg {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the navigation agent by imitation.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArg,
        #[command(flatten)]
        features: FeaturesArg,
    },
    /// Roll the trained agent out and write per-split metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArg,
        #[command(flatten)]
        features: FeaturesArg,
    },
    /// Score instruction distances against the training set.
    LangDist {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Aggregate per-seed results into the cross-seed report.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Run the whole diagnosis end to end.
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for configuration problems, 4 for training failures, 3 for every
/// other (data) error.
fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::Validation(_) => 2,
        Error::Training { .. } => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld { common, seed } => {
            let (cfg, out) = load(&common)?;
            for seed in seeds_for(&cfg, &seed) {
                stage_gen_world(&cfg, seed, &out)?;
            }
            Ok(())
        }
        Command::Split {
            common,
            seed,
            axis,
            fraction,
        } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(axis) = axis {
                cfg.split.axis = parse_axis(&axis)?;
            }
            if let Some(fraction) = fraction {
                cfg.split.fraction = fraction;
            }
            cfg.split.validate()?;
            for seed in seeds_for(&cfg, &seed) {
                stage_split(&cfg, seed, &out)?;
            }
            Ok(())
        }
        Command::Featurize {
            common,
            seed,
            features,
        } => {
            let (cfg, out) = load(&common)?;
            for seed in seeds_for(&cfg, &seed) {
                for kind in kinds_for(&cfg, &features)? {
                    stage_featurize(&cfg, seed, kind, &out)?;
                }
            }
            Ok(())
        }
        Command::TrainSeg { common, seed } => {
            let (cfg, out) = load(&common)?;
            for seed in seeds_for(&cfg, &seed) {
                stage_train_seg(&cfg, seed, &out)?;
            }
            Ok(())
        }
        Command::Train {
            common,
            seed,
            features,
        } => {
            let (cfg, out) = load(&common)?;
            for seed in seeds_for(&cfg, &seed) {
                for kind in kinds_for(&cfg, &features)? {
                    stage_train(&cfg, seed, kind, &out)?;
                }
            }
            Ok(())
        }
        Command::Eval {
            common,
            seed,
            features,
        } => {
            let (cfg, out) = load(&common)?;
            for seed in seeds_for(&cfg, &seed) {
                for kind in kinds_for(&cfg, &features)? {
                    stage_eval(&cfg, seed, kind, &out)?;
                }
            }
            Ok(())
        }
        Command::LangDist { common, seed } => {
            let (cfg, out) = load(&common)?;
            for seed in seeds_for(&cfg, &seed) {
                stage_lang_dist(&cfg, seed, &out)?;
            }
            Ok(())
        }
        Command::Report { common } => {
            let (cfg, out) = load(&common)?;
            let bundle = stage_report(&cfg, &out)?;
            print_summary(&bundle);
            Ok(())
        }
        Command::Diagnose { common } => {
            let (cfg, out) = load(&common)?;
            let bundle = run_experiment(&cfg, &out)?;
            print_summary(&bundle);
            Ok(())
        }
    }
}

/// Load and validate the configuration, and resolve the output
/// directory: the --out flag wins, then the configuration's out_dir,
/// then `navdiag_out`.
fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("navdiag_out"));
    Ok((cfg, out))
}

fn seeds_for(cfg: &ExperimentConfig, seed: &SeedArg) -> Vec<u64> {
    match seed.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    }
}

fn kinds_for(cfg: &ExperimentConfig, features: &FeaturesArg) -> Result<Vec<FeatureKind>> {
    if features.features.is_empty() {
        return Ok(cfg.features.clone());
    }
    features.features.iter().map(|s| s.parse()).collect()
}

fn parse_axis(s: &str) -> Result<Axis> {
    match s {
        "x" => Ok(Axis::X),
        "z" => Ok(Axis::Z),
        other => Err(Error::Config(format!(
            "unknown axis {other:?}; expected x or z"
        ))),
    }
}

/// Print the per-feature gap table and where the report files live.
fn print_summary(bundle: &ReportBundle) {
    if bundle.aggregates.is_empty() {
        println!("outputs in {}", bundle.report_dir.display());
        return;
    }
    println!(
        "{:<12} {:>9} {:>11} {:>6}",
        "feature", "val_seen", "val_unseen", "gap"
    );
    for row in &bundle.aggregates {
        println!(
            "{:<12} {:>9.1} {:>11.1} {:>6.1}",
            row.feature, row.seen_mean, row.unseen_mean, row.gap_mean
        );
    }
    println!("report files in {}", bundle.report_dir.display());
}
