//! `affordem`: synthetic benchmarks, supervised and weakly supervised
//! training, pose-based keypoint transfer and evaluation.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affordem::{Aggregation, RegressorInput};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{parse_assignment, resolve, RunConfig};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<affordem::Error> for Failure {
    fn from(e: affordem::Error) -> Self {
        match e {
            affordem::Error::Numerical(m) => Failure::Numerical(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "affordem", version, about = "Weakly supervised affordance segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON config file; keys may be nested or flat and dotted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set experiment.em.max_iterations=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_assignment)]
    overrides: Vec<(String, Value)>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed copied into every component.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    SynthGen {
        /// Number of scenes
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the pixel scorer on full pixel labels and score the test actors.
    TrainSupervised {
        /// Dataset root holding the manifest
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train with EM from keypoints (and image labels).
    TrainWeak {
        /// Dataset root holding the manifest
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use the GrabCut masks as the estimate.
        #[arg(long, conflicts_with = "only_gm")]
        only_gc: bool,
        /// Fit the spatial mixtures to the raw argmax regions.
        #[arg(long)]
        only_gm: bool,
        /// Cap on EM iterations
        #[arg(long)]
        max_iters: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate and fit one keypoint regressor per label.
    FitPose {
        /// Dataset root holding the manifest
        #[arg(long)]
        data: Option<PathBuf>,
        /// Regressor input: human pose or the bounding box
        #[arg(long, value_enum)]
        input: Option<InputArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Give image-label training records regressed keypoints.
    TransferKeypoints {
        /// Dataset root holding the manifest
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of regressors written by `fit-pose`.
        #[arg(long)]
        regressors: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted label maps against ground truth, matched by file name.
    Eval {
        /// Directory of predicted label PNGs
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth label PNGs
        #[arg(long)]
        gt: PathBuf,
        /// Label count including background; inferred from the maps if absent
        #[arg(long)]
        num_labels: Option<usize>,
        /// Comma-separated class names, background first.
        #[arg(long, value_delimiter = ',')]
        names: Vec<String>,
        /// Average each class over images instead of pooling pixels.
        #[arg(long)]
        per_image: bool,
        #[command(flatten)]
        common: Common,
    },
    /// fit-pose, transfer-keypoints, train-weak and eval in one run.
    Pipeline {
        /// Dataset root holding the manifest
        #[arg(long)]
        data: Option<PathBuf>,
        /// Regressor input: human pose or the bounding box
        #[arg(long, value_enum)]
        input: Option<InputArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a run from its reproducibility record.
    Rerun {
        /// `run.json` written by an earlier run
        record: PathBuf,
        /// Output directory of the repeat; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum InputArg {
    Pose,
    Bbox,
}

impl From<InputArg> for RegressorInput {
    fn from(a: InputArg) -> Self {
        match a {
            InputArg::Pose => RegressorInput::Pose,
            InputArg::Bbox => RegressorInput::BoundingBox,
        }
    }
}

const RECORD_FILE: &str = "run.json";

fn versions() -> Value {
    json!({
        "affordem": env!("CARGO_PKG_VERSION"),
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
    })
}

/// Subcommand name plus the flags that are not part of the config.
fn describe(command: &Command) -> (&'static str, Value) {
    match command {
        Command::SynthGen { .. } => ("synth-gen", json!({})),
        Command::TrainSupervised { .. } => ("train-supervised", json!({})),
        Command::TrainWeak { .. } => ("train-weak", json!({})),
        Command::FitPose { .. } => ("fit-pose", json!({})),
        Command::TransferKeypoints { regressors, .. } => ("transfer-keypoints", json!({ "regressors": regressors })),
        Command::Eval { pred, gt, num_labels, names, .. } => {
            ("eval", json!({ "pred": pred, "gt": gt, "num_labels": num_labels, "names": names }))
        }
        Command::Pipeline { .. } => ("pipeline", json!({})),
        Command::Rerun { .. } => ("rerun", json!({})),
    }
}

/// Folds the subcommand flags into config overrides.
fn flag_overrides(command: &Command) -> Vec<(String, Value)> {
    let mut o = Vec::new();
    let mut push = |k: &str, v: Value| o.push((k.to_string(), v));
    match command {
        Command::SynthGen { count: Some(c), .. } => push("count", json!(c)),
        Command::TrainWeak { only_gc, only_gm, max_iters, .. } => {
            if *only_gc || *only_gm {
                push("experiment.em.variant", json!(commands::variant(*only_gc, *only_gm)));
            }
            if let Some(n) = max_iters {
                push("experiment.em.max_iterations", json!(n));
            }
        }
        Command::FitPose { input: Some(i), .. } | Command::Pipeline { input: Some(i), .. } => {
            push("pose_input", json!(RegressorInput::from(*i)));
        }
        Command::Eval { per_image: true, .. } => push("experiment.aggregation", json!(Aggregation::PerImage)),
        _ => {}
    }
    if let Some(d) = data_flag(command) {
        push("data", json!(d));
    }
    o
}

fn data_flag(command: &Command) -> Option<&PathBuf> {
    match command {
        Command::TrainSupervised { data, .. }
        | Command::TrainWeak { data, .. }
        | Command::FitPose { data, .. }
        | Command::TransferKeypoints { data, .. }
        | Command::Pipeline { data, .. } => data.as_ref(),
        _ => None,
    }
}

fn common(command: &Command) -> Common {
    match command {
        Command::SynthGen { common, .. }
        | Command::TrainSupervised { common, .. }
        | Command::TrainWeak { common, .. }
        | Command::FitPose { common, .. }
        | Command::TransferKeypoints { common, .. }
        | Command::Eval { common, .. }
        | Command::Pipeline { common, .. } => common.clone(),
        Command::Rerun { .. } => Common::default(),
    }
}

fn execute(command: &Command, config: &RunConfig, out: &Path) -> Result<Value, Failure> {
    match command {
        Command::SynthGen { .. } => commands::synth_gen(config, out),
        Command::TrainSupervised { .. } => commands::train_supervised_cmd(config, out),
        Command::TrainWeak { .. } => commands::train_weak(config, out),
        Command::FitPose { .. } => commands::fit_pose(config, out),
        Command::TransferKeypoints { regressors, .. } => commands::transfer(config, regressors, out),
        Command::Eval { pred, gt, num_labels, names, .. } => commands::eval(
            pred,
            gt,
            *num_labels,
            names,
            config.experiment.aggregation,
            Some(out),
        ),
        Command::Pipeline { .. } => commands::pipeline(config, out),
        Command::Rerun { .. } => unreachable!("reruns are resolved before execution"),
    }
}

fn write_record(out: &Path, name: &str, args: &Value, config: &RunConfig) -> Result<(), Failure> {
    let record = json!({
        "command": name,
        "arguments": args,
        "seed": config.seed,
        "config": config,
        "versions": versions(),
    });
    commands::write_json(&out.join(RECORD_FILE), &record)
}

/// Rebuilds the command line of a recorded run.
fn replay(record: &Path, out: Option<&PathBuf>) -> Result<(Command, RunConfig, PathBuf), Failure> {
    let text = std::fs::read_to_string(record).map_err(|e| Failure::Usage(format!("{}: {e}", record.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", record.display())))?;
    let name = v["command"].as_str().ok_or_else(|| Failure::Usage("record has no command".into()))?;
    let mut argv = vec!["affordem".to_string(), name.to_string()];
    if let Some(args) = v["arguments"].as_object() {
        for (k, val) in args {
            match val {
                Value::Null => {}
                Value::Array(items) if items.is_empty() => {}
                Value::Array(items) => {
                    let joined: Vec<String> = items.iter().filter_map(|i| i.as_str().map(String::from)).collect();
                    argv.push(format!("--{}={}", k.replace('_', "-"), joined.join(",")));
                }
                Value::String(s) => argv.push(format!("--{}={s}", k.replace('_', "-"))),
                other => argv.push(format!("--{}={other}", k.replace('_', "-"))),
            }
        }
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| Failure::Usage(e.to_string()))?;
    let config = resolve(None, Some(v["config"].clone()), &[]).map_err(Failure::Usage)?;
    let out = out
        .cloned()
        .or_else(|| config.out.clone())
        .ok_or_else(|| Failure::Usage("record has no output directory".into()))?;
    Ok((cli.command, config, out))
}

fn run(cli: Cli) -> Result<Value, Failure> {
    let (command, config, out) = match cli.command {
        Command::Rerun { record, out } => replay(&record, out.as_ref())?,
        command => {
            let common = common(&command);
            let mut overrides = flag_overrides(&command);
            if let Some(s) = common.seed {
                overrides.push(("seed".into(), json!(s)));
            }
            if let Some(o) = &common.out {
                overrides.push(("out".into(), json!(o)));
            }
            overrides.extend(common.overrides.iter().cloned());
            let config = resolve(common.config.as_deref(), None, &overrides).map_err(Failure::Usage)?;
            let mut config = config.seeded();
            let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            config.out = Some(out.clone());
            (command, config, out)
        }
    };
    std::fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    let (name, args) = describe(&command);
    write_record(&out, name, &args, &config)?;
    execute(&command, &config, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            // a closed pipe on stdout is not a failure of the run
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("affordem: {f}");
            ExitCode::from(f.code())
        }
    }
}
