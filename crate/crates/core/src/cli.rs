//! The `polytuplet` command line.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage error, 3 data or
//! validation error, 4 numerical divergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{generate_synthetic, load_dataset_json, save_dataset_json, split_dataset, Difficulty};
use crate::encoder::{encode_batch, EncoderParams, Mode};
use crate::gradcheck::{run_all, GradCheckOptions, DEFAULT_STEP};
use crate::mining::classify_negatives;
use crate::training::{
    compare_modes, evaluate_with, predict_with, train, AnswerScorer, SearchSpace, TokenOverlapScorer,
    TrainConfig, TrainMode, TuneConfig,
};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "polytuplet", version, about = "Polytuplet metric learning for multiple-choice QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset in the ReClor JSON schema.
    GenData(GenDataArgs),
    /// Split a dataset into stratified train and test files.
    Split(SplitArgs),
    /// Train an encoder and write a checkpoint and a JSON-lines report.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint or the token-overlap oracle.
    Eval(EvalArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Successive-halving hyperparameter search.
    Tune(TuneArgs),
    /// Train CCE-only and hybrid models on the same data and print both.
    Compare(CompareArgs),
    /// Hard / semi-hard / easy negative counts for a checkpoint on a dataset.
    Mine(MineArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, value_enum, default_value = "separable")]
    difficulty: Difficulty,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(8..))]
    vocab_size: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
    answers: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

/// Training flags shared by `train`, `compare` and `tune`. Flags override
/// the JSON config file, which overrides the defaults.
#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// JSON overlay of a (partial) training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Hybrid,
    #[value(name = "cce_only", alias = "cce-only")]
    CceOnly,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Hybrid => TrainMode::Hybrid,
            ModeArg::CceOnly => TrainMode::CceOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleArg {
    TokenOverlap,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Epochs given to the final survivor.
    #[arg(long)]
    budget: u64,
    #[arg(long, default_value_t = 3.0)]
    eta: f64,
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 9, value_parser = clap::value_parser!(u64).range(1..))]
    configs: u64,
    /// JSON search space; defaults to a standard space.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Where to write the best configuration as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct MineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
    CheckFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn exit_code(f: &Failure) -> i32 {
    match f {
        Failure::Usage(_) => EXIT_USAGE,
        Failure::CheckFailed(_) => EXIT_CHECK_FAILED,
        Failure::Lib(Error::Config(_)) => EXIT_USAGE,
        Failure::Lib(Error::Divergence { .. }) => EXIT_DIVERGENCE,
        Failure::Lib(_) => EXIT_DATA,
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|source| {
        Failure::Lib(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn build_config(flags: &TrainFlags) -> std::result::Result<TrainConfig, Failure> {
    let mut cfg = match &flags.config {
        Some(path) => read_json::<TrainConfig>(path)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = flags.margin {
        cfg.loss.margin = m;
    }
    if let Some(d) = flags.dropout {
        cfg.model.dropout_rate = d;
    }
    if let Some(e) = flags.epochs {
        cfg.epochs = e as usize;
    }
    if let Some(lr) = flags.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = flags.batch_size {
        cfg.batch_size = b as usize;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(args: GenDataArgs, out: &mut dyn Write) -> CliResult {
    let data = generate_synthetic(
        args.n as usize,
        args.vocab_size as usize,
        args.answers as usize,
        args.difficulty,
        args.seed,
    )?;
    save_dataset_json(&args.out, &data)?;
    let _ = writeln!(out, "{}", json_line(&serde_json::json!({
        "written": data.len(),
        "path": args.out,
    })));
    Ok(())
}

fn split(args: SplitArgs, out: &mut dyn Write) -> CliResult {
    let corpus = load_dataset_json(&args.data)?;
    let split = split_dataset(&corpus, args.test_fraction, args.seed)?;
    save_dataset_json(&args.train_out, &split.train)?;
    save_dataset_json(&args.test_out, &split.test)?;
    let _ = writeln!(out, "{}", json_line(&serde_json::json!({
        "train": split.train.len(),
        "test": split.test.len(),
        "seed": split.seed,
    })));
    Ok(())
}

fn train_cmd(args: TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg = build_config(&args.flags)?;
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    let train_set = load_dataset_json(&args.flags.train)?;
    let test_set = load_dataset_json(&args.flags.test)?;
    let (params, report) = train(&train_set, &test_set, &cfg)?;
    if let Some(path) = &args.out {
        params.save(path)?;
    }
    if let Some(path) = &args.report {
        write_file(path, &report.to_json_lines())?;
    }
    eprintln!("trained in {:.2}s", report.wall_clock_seconds);
    let _ = writeln!(out, "{}", json_line(&report.summary()));
    Ok(())
}

fn eval_cmd(args: EvalArgs, out: &mut dyn Write) -> CliResult {
    let data = load_dataset_json(&args.data)?;
    let scorer: Box<dyn AnswerScorer> = match (&args.checkpoint, args.oracle) {
        (Some(path), _) => Box::new(EncoderParams::load(path)?),
        (None, Some(OracleArg::TokenOverlap)) => Box::new(TokenOverlapScorer),
        (None, None) => return Err(Failure::Usage("need --checkpoint or --oracle".into())),
    };
    let preds = predict_with(scorer.as_ref(), &data)?;
    for (inst, p) in data.iter().zip(&preds) {
        let _ = writeln!(out, "{}", json_line(&serde_json::json!({
            "id_string": inst.id,
            "predicted": p.index,
            "label": inst.label,
            "scores": p.scores,
        })));
    }
    let accuracy = evaluate_with(&data, scorer.as_ref())?;
    let _ = writeln!(out, "{}", json_line(&serde_json::json!({
        "kind": "summary",
        "n": data.len(),
        "accuracy": accuracy,
    })));
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let opts = GradCheckOptions {
        seed: args.seed,
        trials: args.trials as usize,
        tolerance: args.tolerance,
        step: DEFAULT_STEP,
    };
    let results = run_all(&opts)?;
    for r in &results {
        let _ = writeln!(out, "{}", json_line(r));
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.component.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::CheckFailed(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn tune_cmd(args: TuneArgs, out: &mut dyn Write) -> CliResult {
    let base = build_config(&args.flags)?;
    let space = match &args.space {
        Some(path) => read_json::<SearchSpace>(path)?,
        None => SearchSpace::standard(),
    };
    let train_set = load_dataset_json(&args.flags.train)?;
    let test_set = load_dataset_json(&args.flags.test)?;
    let tc = TuneConfig {
        n_configs: args.configs as usize,
        budget: args.budget as usize,
        eta: args.eta,
        seed: args.flags.seed.unwrap_or(base.seed),
    };
    let result = crate::training::tune(&train_set, &test_set, &base, &space, &tc)?;
    for row in &result.leaderboard {
        let _ = writeln!(out, "{}", json_line(row));
    }
    let _ = writeln!(out, "{}", json_line(&serde_json::json!({
        "kind": "best",
        "trial": result.best_trial,
        "rung_sizes": result.rung_sizes,
        "rung_epochs": result.rung_epochs,
        "config": result.best,
    })));
    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&result.best).expect("serializable");
        write_file(path, &(text + "\n"))?;
    }
    Ok(())
}

fn compare_cmd(args: CompareArgs, out: &mut dyn Write) -> CliResult {
    let cfg = build_config(&args.flags)?;
    let train_set = load_dataset_json(&args.flags.train)?;
    let test_set = load_dataset_json(&args.flags.test)?;
    let cmp = compare_modes(&train_set, &test_set, &cfg)?;
    eprint!("{}", cmp.table());
    let _ = writeln!(out, "{}", json_line(&cmp));
    Ok(())
}

fn mine_cmd(args: MineArgs, out: &mut dyn Write) -> CliResult {
    let data = load_dataset_json(&args.data)?;
    let params = EncoderParams::load(&args.checkpoint)?;
    let (batch, _) = encode_batch(&data, &params, Mode::Eval, 0)?;
    let report = classify_negatives(&batch, args.margin)?;
    let _ = writeln!(out, "{}", json_line(&serde_json::json!({
        "margin": args.margin,
        "counts": report.counts,
    })));
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing machine-readable output to `out`. Returns the process exit code.
pub fn run_with_output<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Split(a) => split(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Tune(a) => tune_cmd(a, out),
        Command::Compare(a) => compare_cmd(a, out),
        Command::Mine(a) => mine_cmd(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Usage(msg) | Failure::CheckFailed(msg) => eprintln!("error: {msg}"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            exit_code(&f)
        }
    }
}

/// Entry point for the binary: runs with the process arguments and stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with_output(args, &mut lock)
}
