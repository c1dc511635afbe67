//! Argument parsing and the six subcommands.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or inputs that fail
//! validation, 3 for malformed TQT1 files or CSV tables, 1 for anything
//! else (I/O failures, diverged training).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use truncquant_core::analysis::qt_error;
use truncquant_core::qat::{evaluate, predict, train, DatasetSpec, TrainConfig, WeightMode};
use truncquant_core::quant::quantize;
use truncquant_core::storage::StorageModel;
use truncquant_core::tensor::normalize;
use truncquant_core::{truncate, NormKind, NormMode, QuantConfig, QuantizedTensor, Scheme};

use crate::checkpoint::{from_records, to_records, CheckpointError};
use crate::format::{FloatRecord, NamedRecord, TensorRecord, TqtFile};
use crate::report::{
    read_layer_table, write_predictions, write_qt_reports, write_storage, write_train_log,
    LayerTableError,
};
use crate::{read_file, write_atomic, write_file, FileError};

/// Overrides `--seed` for `train` and `eval` when set.
pub const SEED_ENV: &str = "TQT_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "truncquant",
    version,
    about = "Truncation-ready weight quantization toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize float weights to integer bins.
    Quantize(QuantizeArgs),
    /// Bit-shift integer bins down to a lower precision.
    Truncate(TruncateArgs),
    /// Per-layer quantization and quantization-truncation error report.
    Analyze(AnalyzeArgs),
    /// Train the toy MLP with fake-quantized weights.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the synthetic test split.
    Eval(EvalArgs),
    /// Compare storage of dedicated, once-for-all and truncation-ready models.
    Storage(StorageArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Uniform,
    Truncquant,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Uniform => Scheme::Uniform,
            SchemeArg::Truncquant => Scheme::TruncQuant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormModeArg {
    DorefaTanh,
    Minmax,
}

impl From<NormModeArg> for NormMode {
    fn from(m: NormModeArg) -> Self {
        match m {
            NormModeArg::DorefaTanh => NormMode::DorefaTanh,
            NormModeArg::Minmax => NormMode::MinMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Blobs,
    Moons,
}

impl DatasetArg {
    fn spec(self) -> DatasetSpec {
        match self {
            DatasetArg::Blobs => DatasetSpec::blobs(),
            DatasetArg::Moons => DatasetSpec::moons(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModeArg {
    Quant,
    Trunc,
}

/// Ascending, duplicate-free list of bit widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitList(pub Vec<u32>);

impl std::ops::Deref for BitList {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

/// Parses `lo-hi` or a comma list.
pub fn parse_bits(s: &str) -> Result<BitList, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map_err(|_| format!("{t:?} is not a bit width"))
    };
    let mut out = if let Some((lo, hi)) = s.split_once('-') {
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo > hi {
            return Err(format!("empty range {s:?}"));
        }
        (lo..=hi).collect::<Vec<_>>()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    out.sort_unstable();
    out.dedup();
    if let Some(&n) = out.iter().find(|&&n| !(1..=16).contains(&n)) {
        return Err(format!("bit width {n} outside 1..=16"));
    }
    Ok(BitList(out))
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub bits: u32,
    /// Defaults to the scheme recorded in the input.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Used when the input carries no normalization parameters.
    #[arg(long, value_enum, default_value = "dorefa-tanh")]
    pub norm_mode: NormModeArg,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TruncateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub to: u32,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub start_bits: u32,
    /// Target precisions, `lo-hi` or a comma list.
    #[arg(long, value_parser = parse_bits, default_value = "1-7")]
    pub bits: BitList,
    #[arg(long, value_enum, default_value = "uniform")]
    pub scheme: SchemeArg,
    #[arg(long, value_enum, default_value = "l1")]
    pub norm: NormArg,
    #[arg(long, value_enum, default_value = "dorefa-tanh")]
    pub norm_mode: NormModeArg,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    #[arg(long, value_parser = parse_bits, default_value = "2,3,4,8")]
    pub precisions: BitList,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "blobs")]
    pub dataset: DatasetArg,
    #[arg(long, value_enum, default_value = "dorefa-tanh")]
    pub norm_mode: NormModeArg,
    #[arg(long)]
    pub output: PathBuf,
    /// Training curve CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target precision; full precision when omitted.
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long, value_enum, default_value = "quant")]
    pub mode: EvalModeArg,
    #[arg(long, default_value_t = 8)]
    pub start_bits: u32,
    #[arg(long, value_enum, default_value = "blobs")]
    pub dataset: DatasetArg,
    /// Seed of the dataset the model was trained on.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Per-sample predictions CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StorageArgs {
    /// CSV with header `name,param_count,position`.
    #[arg(long)]
    pub layers: PathBuf,
    /// Precisions served; the truncation-ready model stores the largest.
    #[arg(long, value_parser = parse_bits, default_value = "2,4,8")]
    pub bits: BitList,
    /// Quantize the first and last layers as well.
    #[arg(long)]
    pub quantize_all: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{flag}: {message}")]
    Usage { flag: &'static str, message: String },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Format(_) => 3,
            CliError::Failed(_) => 1,
        }
    }

    fn usage(flag: &'static str, message: impl ToString) -> Self {
        CliError::Usage {
            flag,
            message: message.to_string(),
        }
    }

    fn failed(e: impl ToString) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        match e {
            FileError::Format { .. } => CliError::Format(e.to_string()),
            FileError::Io { .. } => CliError::Failed(e.to_string()),
        }
    }
}

/// Validation failures of the core library become usage errors on `flag`.
fn core_err(flag: &'static str) -> impl Fn(truncquant_core::Error) -> CliError {
    move |e| {
        use truncquant_core::Error as E;
        match e {
            E::BitWidth(_) | E::PrecisionOrder { .. } | E::Config(_) => CliError::usage(flag, e),
            E::Degenerate(_) | E::NonFinite { .. } | E::Empty | E::OutOfUnitRange { .. } => {
                CliError::usage(flag, e)
            }
            other => CliError::failed(other),
        }
    }
}

fn open(flag: &'static str, path: &Path) -> Result<TqtFile, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(
            flag,
            format!("{}: no such file", path.display()),
        ));
    }
    Ok(read_file(path)?)
}

fn write_csv(
    path: &Path,
    emit: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    emit(&mut buf).map_err(CliError::failed)?;
    write_atomic(path, &buf).map_err(|e| CliError::failed(format!("{}: {e}", path.display())))
}

fn seed_override(seed: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage("--seed", format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(seed),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Quantize(a) => cmd_quantize(&a, out),
        Command::Truncate(a) => cmd_truncate(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Storage(a) => cmd_storage(&a, out),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(CliError::failed)
}

fn quantize_record(f: &FloatRecord, a: &QuantizeArgs) -> Result<QuantizedTensor, CliError> {
    let cfg = QuantConfig::new(a.bits).map_err(core_err("--bits"))?;
    let scheme =
        a.scheme.map(Scheme::from).or(f.scheme).ok_or_else(|| {
            CliError::usage("--scheme", "required when the input records no scheme")
        })?;
    let mode = f.norm.map_or(a.norm_mode.into(), |p| p.mode);
    let (wn, params) = normalize(&f.tensor, mode).map_err(core_err("--input"))?;
    quantize(&wn, cfg, scheme, params).map_err(core_err("--input"))
}

fn cmd_quantize(a: &QuantizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    QuantConfig::new(a.bits).map_err(core_err("--bits"))?;
    let result = match open("--input", &a.input)? {
        TqtFile::Single(TensorRecord::Float(f)) => {
            TqtFile::Single(TensorRecord::Quantized(quantize_record(&f, a)?))
        }
        TqtFile::Single(TensorRecord::Quantized(_)) => {
            return Err(CliError::usage(
                "--input",
                "already quantized; use truncate",
            ));
        }
        TqtFile::Container(records) => {
            let mut touched = 0;
            let records = records
                .into_iter()
                .map(|r| match &r.record {
                    TensorRecord::Float(f) if f.scheme.is_some() => {
                        touched += 1;
                        Ok(NamedRecord {
                            record: TensorRecord::Quantized(quantize_record(f, a)?),
                            name: r.name,
                        })
                    }
                    _ => Ok(r),
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            if touched == 0 {
                return Err(CliError::usage(
                    "--input",
                    "container has no quantizable float tensors",
                ));
            }
            TqtFile::Container(records)
        }
    };
    write_file(&a.output, &result)?;
    say(
        out,
        format_args!("wrote {}-bit bins to {}", a.bits, a.output.display()),
    )
}

fn cmd_truncate(a: &TruncateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let shift = |q: &QuantizedTensor| truncate(q, a.to).map_err(core_err("--to"));
    let result = match open("--input", &a.input)? {
        TqtFile::Single(TensorRecord::Quantized(q)) => {
            TqtFile::Single(TensorRecord::Quantized(shift(&q)?))
        }
        TqtFile::Single(TensorRecord::Float(_)) => {
            return Err(CliError::usage(
                "--input",
                "holds float weights; quantize it first",
            ));
        }
        TqtFile::Container(records) => {
            let mut touched = 0;
            let records = records
                .into_iter()
                .map(|r| match &r.record {
                    TensorRecord::Quantized(q) => {
                        touched += 1;
                        Ok(NamedRecord {
                            record: TensorRecord::Quantized(shift(q)?),
                            name: r.name,
                        })
                    }
                    TensorRecord::Float(_) => Ok(r),
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            if touched == 0 {
                return Err(CliError::usage(
                    "--input",
                    "container has no quantized tensors",
                ));
            }
            TqtFile::Container(records)
        }
    };
    write_file(&a.output, &result)?;
    say(
        out,
        format_args!("wrote {}-bit bins to {}", a.to, a.output.display()),
    )
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    QuantConfig::new(a.start_bits).map_err(core_err("--start-bits"))?;
    if let Some(&n) = a.bits.iter().find(|&&n| n >= a.start_bits) {
        return Err(CliError::usage(
            "--bits",
            format!("target {n} must be below --start-bits {}", a.start_bits),
        ));
    }
    let layers: Vec<(String, FloatRecord)> = match open("--input", &a.input)? {
        TqtFile::Single(TensorRecord::Float(f)) => vec![("0".into(), f)],
        TqtFile::Single(TensorRecord::Quantized(_)) => {
            return Err(CliError::usage("--input", "analysis needs float weights"));
        }
        TqtFile::Container(records) => {
            let floats: Vec<_> = records
                .into_iter()
                .filter_map(|r| match r.record {
                    TensorRecord::Float(f) => Some((r.name, f)),
                    TensorRecord::Quantized(_) => None,
                })
                .collect();
            // Analyze the fake-quantized layers when the file marks any.
            if floats.iter().any(|(_, f)| f.scheme.is_some()) {
                floats
                    .into_iter()
                    .filter(|(_, f)| f.scheme.is_some())
                    .collect()
            } else {
                floats
            }
        }
    };
    if layers.is_empty() {
        return Err(CliError::usage("--input", "no float tensors to analyze"));
    }
    let norm = match a.norm {
        NormArg::L1 => NormKind::L1,
        NormArg::L2 => NormKind::L2,
    };
    let mut reports = Vec::with_capacity(layers.len() * a.bits.len());
    for (name, f) in &layers {
        let mode = f.norm.map_or(a.norm_mode.into(), |p| p.mode);
        let (wn, params) = normalize(&f.tensor, mode).map_err(core_err("--input"))?;
        for &n in a.bits.iter() {
            reports.push(
                qt_error(
                    name,
                    &wn,
                    f64::from(params.delta_prime),
                    n,
                    a.start_bits,
                    a.scheme.into(),
                    norm,
                )
                .map_err(core_err("--bits"))?,
            );
        }
    }
    write_csv(&a.output, |buf| write_qt_reports(buf, &reports))?;
    say(
        out,
        format_args!("wrote {} rows to {}", reports.len(), a.output.display()),
    )
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = seed_override(a.seed)?;
    let dataset = a.dataset.spec();
    let mut layer_sizes = vec![2];
    layer_sizes.extend(&a.hidden);
    layer_sizes.push(dataset.num_classes());
    let cfg = TrainConfig {
        layer_sizes,
        scheme: a.scheme.into(),
        precisions: a.precisions.0.clone(),
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed,
        norm_mode: a.norm_mode.into(),
        dataset,
    };
    cfg.validate().map_err(core_err("--precisions"))?;
    let outcome = train(&cfg).map_err(|e| match e {
        truncquant_core::Error::Diverged { .. } => CliError::failed(e),
        other => core_err("--precisions")(other),
    })?;
    let records = to_records(&outcome.model).map_err(CliError::failed)?;
    write_file(&a.output, &TqtFile::Container(records))?;
    if let Some(log) = &a.log {
        write_csv(log, |buf| write_train_log(buf, &outcome.log))?;
    }
    let (_, test) = cfg.dataset.generate(seed).map_err(CliError::failed)?;
    let top = *cfg.precisions.iter().max().expect("validated non-empty");
    let acc = evaluate(&outcome.model, &test, WeightMode::Quant { bits: top })
        .map_err(CliError::failed)?;
    say(
        out,
        format_args!(
            "wrote {} (test accuracy {acc:.4} at {top} bits)",
            a.output.display()
        ),
    )
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = seed_override(a.seed)?;
    let records = match open("--model", &a.model)? {
        TqtFile::Container(r) => r,
        TqtFile::Single(_) => {
            return Err(CliError::usage(
                "--model",
                "expected a checkpoint container",
            ));
        }
    };
    let loaded = from_records(&records).map_err(|e| match e {
        CheckpointError::Core(c) => core_err("--model")(c),
        other => CliError::Format(format!("{}: {other}", a.model.display())),
    })?;
    let mode = match (loaded.frozen_bits, a.bits) {
        (Some(frozen), Some(bits)) if bits != frozen => {
            return Err(CliError::usage(
                "--bits",
                format!("checkpoint is pinned to {frozen} bits"),
            ));
        }
        (Some(_), _) | (None, None) => WeightMode::Full,
        (None, Some(bits)) => match a.mode {
            EvalModeArg::Quant => WeightMode::Quant { bits },
            EvalModeArg::Trunc => WeightMode::Trunc {
                bits,
                start_bits: a.start_bits,
            },
        },
    };
    let spec = a.dataset.spec();
    if loaded.model.output_dim() != spec.num_classes() || loaded.model.input_dim() != 2 {
        return Err(CliError::usage(
            "--dataset",
            "does not match the model's input/output widths",
        ));
    }
    let (_, test) = spec.generate(seed).map_err(CliError::failed)?;
    let flag = if a.mode == EvalModeArg::Trunc {
        "--start-bits"
    } else {
        "--bits"
    };
    let predictions = predict(&loaded.model, &test, mode).map_err(core_err(flag))?;
    let correct = predictions
        .iter()
        .zip(test.labels())
        .filter(|(p, l)| p == l)
        .count();
    if let Some(path) = &a.predictions {
        write_csv(path, |buf| {
            write_predictions(buf, &predictions, test.labels())
        })?;
    }
    say(
        out,
        format_args!("accuracy {}", correct as f64 / test.len() as f64),
    )
}

fn cmd_storage(a: &StorageArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !a.layers.is_file() {
        return Err(CliError::usage(
            "--layers",
            format!("{}: no such file", a.layers.display()),
        ));
    }
    let file = std::fs::File::open(&a.layers).map_err(CliError::failed)?;
    let table = read_layer_table(file)
        .map_err(|e: LayerTableError| CliError::Format(format!("{}: {e}", a.layers.display())))?;
    let model = StorageModel::new(table, !a.quantize_all).map_err(core_err("--layers"))?;
    let lines = model.report(&a.bits).map_err(core_err("--bits"))?;
    for l in &lines {
        say(
            out,
            format_args!(
                "{:<16} {:>16.1} B  {:>6.3}x",
                l.strategy.as_str(),
                l.bytes,
                l.ratio_to_truncquant
            ),
        )?;
    }
    if let Some(path) = &a.output {
        write_csv(path, |buf| write_storage(buf, &lines))?;
    }
    Ok(())
}
