//! `erase` — fit, apply, and evaluate spectral attribute erasure over
//! multilingual embedding datasets.

mod commands;
mod context;
mod pca;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use erasure_core::{AggregateKind, PlanMode, SubsetOrder};

use commands::{ProbeLabel, SplitName};
use context::{usage, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "erase",
    version,
    about = "Spectral erasure of protected-attribute information from multilingual embeddings",
    after_help = "Exit codes: 1 usage, 2 data, 3 numeric."
)]
struct Cli {
    /// JSON run-config supplying defaults for --manifest/--plan/--out/--seed/--aggregate
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for default file locations
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Aggregation of per-class TPR gaps
    #[arg(long, global = true, value_enum)]
    aggregate: Option<AggregateArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AggregateArg {
    Rms,
    Meanabs,
    Positive,
}

impl From<AggregateArg> for AggregateKind {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Rms => AggregateKind::Rms,
            AggregateArg::Meanabs => AggregateKind::MeanAbs,
            AggregateArg::Positive => AggregateKind::PositiveClass,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Monolingual,
    CrossLingual,
    SubsetsWithoutTarget,
    SubsetsWithTarget,
    FullyJoint,
    Custom,
}

impl From<ModeArg> for PlanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Monolingual => PlanMode::Monolingual,
            ModeArg::CrossLingual => PlanMode::CrossLingual,
            ModeArg::SubsetsWithoutTarget => PlanMode::SubsetsWithoutTarget,
            ModeArg::SubsetsWithTarget => PlanMode::SubsetsWithTarget,
            ModeArg::FullyJoint => PlanMode::FullyJoint,
            ModeArg::Custom => PlanMode::Custom,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrderArg {
    GlobalThenLocal,
    LocalThenGlobal,
}

impl From<OrderArg> for SubsetOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::GlobalThenLocal => SubsetOrder::GlobalThenLocal,
            OrderArg::LocalThenGlobal => SubsetOrder::LocalThenGlobal,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LabelArg {
    Z,
    Y,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Validation => SplitName::Validation,
            SplitArg::Test => SplitName::Test,
            SplitArg::All => SplitName::All,
        }
    }
}

#[derive(Args)]
struct ProbeFlags {
    /// Maximum optimizer iterations
    #[arg(long)]
    max_iter: Option<usize>,
    /// Gradient infinity-norm stopping tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// L2 regularization strength on the mean loss
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a language-subset plan and write it as JSON
    Plan {
        /// Source languages (comma separated)
        #[arg(long, value_delimiter = ',', required = true)]
        source: Vec<String>,
        /// Target languages (comma separated)
        #[arg(long, value_delimiter = ',', default_value = "")]
        target: Vec<String>,
        #[arg(long, value_enum, default_value = "subsets-with-target")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "global-then-local")]
        order: OrderArg,
        /// Rank removed per step
        #[arg(short, long, default_value_t = 2)]
        k: usize,
        /// Skip mean-centering at fit time
        #[arg(long)]
        no_center: bool,
        /// Explicit subsets for --mode custom: comma within a subset,
        /// semicolon between subsets (e.g. "en,de;de;en")
        #[arg(long)]
        subsets: Option<String>,
        /// Output path (default <out>/plan.json)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic multilingual dataset
    Synth {
        #[arg(long, value_delimiter = ',', default_value = "en,de,fr")]
        languages: Vec<String>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Samples per language
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Planted attribute signal strength
        #[arg(long, default_value_t = 2.0)]
        signal: f64,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        /// Full mixture config JSON (overrides the flags above)
        #[arg(long, conflicts_with_all = ["languages", "dim", "samples", "signal", "noise"])]
        mixture_config: Option<PathBuf>,
        /// Output manifest path (default <out>/dataset.json)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit an erasure artifact from a dataset and a plan
    Fit {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Relative singular-value floor (default 1e-10)
        #[arg(long)]
        sigma_tol: Option<f64>,
        /// Output artifact path (default <out>/artifact.json)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Apply an artifact to a dataset and write the erased copy
    Apply {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, required = true)]
        artifact: PathBuf,
        /// Add the fit-time mean back after projecting
        #[arg(long)]
        restore_mean: bool,
        /// Output manifest path (default <out>/erased.json)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a probe on one label and report accuracy
    Probe {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Which label to probe: the protected attribute (z) or the task (y)
        #[arg(long, value_enum)]
        label: LabelArg,
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        train_split: SplitArg,
        #[arg(long, value_enum, default_value = "test")]
        eval_split: SplitArg,
        #[command(flatten)]
        probe: ProbeFlags,
        /// Output probe path (default <out>/probe.json)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train y- and z-probes with and without erasure; write JSON + CSV
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[command(flatten)]
        probe: ProbeFlags,
        /// Output filename prefix
        #[arg(long, default_value = "eval")]
        prefix: String,
    },
    /// Export 2-D PCA coordinates with language and z columns
    Export2d {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        artifact: Option<PathBuf>,
        /// Output CSV path (default <out>/coords.csv)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Merge eval JSON documents into one CSV table
    Report {
        /// Eval JSON paths (comma separated)
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        /// Output CSV path (default <out>/report.csv)
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.code());
            ExitCode::from(e.code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out_dir: PathBuf = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let aggregate: AggregateKind = match cli.aggregate {
        Some(a) => a.into(),
        None => match config.aggregate.as_deref() {
            None => AggregateKind::Rms,
            Some("rms") => AggregateKind::Rms,
            Some("meanabs") => AggregateKind::MeanAbs,
            Some("positive") => AggregateKind::PositiveClass,
            Some(other) => return Err(usage(format!("unknown aggregate {other:?} in config"))),
        },
    };
    let manifest_of = |flag: &Option<PathBuf>| -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| config.manifest.clone())
            .ok_or_else(|| usage("--manifest is required (flag or config)"))
    };

    match cli.command {
        Command::Plan {
            source,
            target,
            mode,
            order,
            k,
            no_center,
            subsets,
            output,
        } => {
            let target: Vec<String> = target.into_iter().filter(|t| !t.is_empty()).collect();
            commands::cmd_plan(
                &source,
                &target,
                mode.into(),
                order.into(),
                k,
                !no_center,
                subsets.as_deref(),
                &output.unwrap_or_else(|| out_dir.join("plan.json")),
            )
        }
        Command::Synth {
            languages,
            dim,
            samples,
            signal,
            noise,
            mixture_config,
            output,
        } => commands::cmd_synth(
            &languages,
            dim,
            samples,
            signal,
            noise,
            seed,
            mixture_config.as_deref(),
            &output.unwrap_or_else(|| out_dir.join("dataset.json")),
        ),
        Command::Fit {
            manifest,
            plan,
            sigma_tol,
            output,
        } => {
            let plan_path = plan
                .or_else(|| config.plan.clone())
                .ok_or_else(|| usage("--plan is required (flag or config)"))?;
            commands::cmd_fit(
                &manifest_of(&manifest)?,
                &plan_path,
                sigma_tol,
                &output.unwrap_or_else(|| out_dir.join("artifact.json")),
            )
        }
        Command::Apply {
            manifest,
            artifact,
            restore_mean,
            output,
        } => commands::cmd_apply(
            &manifest_of(&manifest)?,
            &artifact,
            restore_mean,
            &output.unwrap_or_else(|| out_dir.join("erased.json")),
        ),
        Command::Probe {
            manifest,
            label,
            artifact,
            train_split,
            eval_split,
            probe,
            output,
        } => commands::cmd_probe(
            &manifest_of(&manifest)?,
            match label {
                LabelArg::Z => ProbeLabel::Z,
                LabelArg::Y => ProbeLabel::Y,
            },
            artifact.as_deref(),
            train_split.into(),
            eval_split.into(),
            &config.probe_config(probe.max_iter, probe.tol, probe.l2),
            &output.unwrap_or_else(|| out_dir.join("probe.json")),
        ),
        Command::Eval {
            manifest,
            artifact,
            probe,
            prefix,
        } => commands::cmd_eval(
            &manifest_of(&manifest)?,
            artifact.as_deref(),
            &config.probe_config(probe.max_iter, probe.tol, probe.l2),
            aggregate,
            &out_dir,
            &prefix,
        ),
        Command::Export2d {
            manifest,
            artifact,
            output,
        } => commands::cmd_export2d(
            &manifest_of(&manifest)?,
            artifact.as_deref(),
            &output.unwrap_or_else(|| out_dir.join("coords.csv")),
        ),
        Command::Report { inputs, output } => {
            commands::cmd_report(&inputs, &output.unwrap_or_else(|| out_dir.join("report.csv")))
        }
    }
}
