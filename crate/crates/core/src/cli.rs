//! The `salseg` command line.
//!
//! Every subcommand writes `run.json` (`"v": 1`) with its fully resolved
//! settings next to its outputs. Exit codes: 0 success, 2 usage or input
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{self, GrayImage};
use crate::maps::{self, FixationMap, SaliencyMap, DEFAULT_SIGMA};
use crate::metrics::{self, EvalItem, MetricSet, DEFAULT_SPLITS};
use crate::net::{Architecture, DecoderMode, Tensor};
use crate::train::{self, Checkpoint, LossForm, TrainConfig, TrainingSample};
use crate::viz;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "salseg", version, about = "Salient region segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blur a fixation CSV into a saliency map
    Saliency(SaliencyArgs),
    /// Quantize a saliency map into K levels (display PGM + sidecar JSON)
    Quantize(QuantizeArgs),
    /// Mask a multi-level map with a binary map
    Restrict(RestrictArgs),
    /// Write a synthetic dataset directory
    Synth(SynthArgs),
    /// Train a segmentation or regression model
    Train(TrainArgs),
    /// Run a checkpoint on images
    Predict(PredictArgs),
    /// Score predictions against fixations
    Eval(EvalArgs),
    /// Metric loss caused by quantizing ground-truth maps
    QuantLoss(QuantLossArgs),
    /// Standard deviation, normalized maximum and NSS of several maps
    NssStd(NssStdArgs),
    /// Receptive-field grid of encoder neurons
    Visualize(VisualizeArgs),
    /// Segmentation vs regression, unpooling vs deconvolution
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderArg {
    Unpool,
    Deconv,
}

impl From<DecoderArg> for DecoderMode {
    fn from(d: DecoderArg) -> Self {
        match d {
            DecoderArg::Unpool => DecoderMode::Unpool,
            DecoderArg::Deconv => DecoderMode::Deconv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Categorical,
    PerLevel,
    Regression,
}

impl From<LossArg> for LossForm {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Categorical => LossForm::Categorical,
            LossArg::PerLevel => LossForm::PerLevelBinary,
            LossArg::Regression => LossForm::EuclideanRegression,
        }
    }
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub fixations: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RestrictArgs {
    /// Multi-level map with its sidecar
    #[arg(long)]
    pub quantized: PathBuf,
    /// Two-level map with its sidecar
    #[arg(long)]
    pub binary: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Where training data comes from.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory of `<stem>.pgm`, `<stem>.fix.csv`, optional `<stem>.sal.pgm`
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic samples instead
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side of synthetic images
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Blur for datasets without `<stem>.sal.pgm`
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<TrainingSample>> {
        let data = match (&self.data, self.synthetic) {
            (Some(dir), None) => train::load_dataset(dir, self.levels, self.sigma)?,
            (None, Some(n)) => train::synthesize_dataset(n, self.size, self.levels, self.seed)?,
            _ => return Err(Error::invalid("give exactly one of --data or --synthetic")),
        };
        if data.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        Ok(data)
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "data": self.data,
            "synthetic": self.synthetic,
            "size": self.size,
            "levels": self.levels,
            "sigma": self.sigma,
            "seed": self.seed,
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, value_enum, default_value_t = DecoderArg::Unpool)]
    pub decoder: DecoderArg,
    #[arg(long, value_enum, default_value_t = LossArg::Categorical)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub step_size: usize,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Channels of each encoder stage, e.g. `8,16`
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    pub convs_per_stage: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
}

impl TrainFlags {
    fn config(&self, data: &DataArgs) -> TrainConfig {
        let base = TrainConfig::default();
        let arch = Architecture::default();
        TrainConfig {
            base_lr: self.lr,
            step_size: self.step_size,
            gamma: self.gamma.unwrap_or(base.gamma),
            max_iters: self.iters.unwrap_or(base.max_iters),
            batch_size: self.batch.unwrap_or(base.batch_size),
            num_levels: data.levels,
            decoder: self.decoder.into(),
            loss: self.loss.into(),
            seed: data.seed,
            arch: Architecture {
                stage_widths: self.widths.clone().unwrap_or(arch.stage_widths),
                convs_per_stage: self.convs_per_stage.unwrap_or(arch.convs_per_stage),
                kernel: self.kernel.unwrap_or(arch.kernel),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Continue from this checkpoint up to `--iters`
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image, or a directory of `<stem>.pgm` images
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<stem>.pgm` predictions; a `<stem>.json` sidecar marks a region map
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory holding `<stem>.fix.csv` (and optionally `<stem>.sal.pgm`)
    #[arg(long)]
    pub gt: PathBuf,
    /// Blur used to rebuild ground-truth saliency when `<stem>.sal.pgm` is missing
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    /// Subset of auc-judd, sauc, nss, accuracy
    #[arg(long, value_delimiter = ',', default_value = "auc-judd,sauc,nss,accuracy")]
    pub metrics: Vec<MetricArg>,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    AucJudd,
    Sauc,
    Nss,
    Accuracy,
}

#[derive(Debug, Args)]
pub struct QuantLossArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    pub splits: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct NssStdArgs {
    #[arg(long)]
    pub fixations: PathBuf,
    /// Saliency maps to compare, all the same size
    #[arg(long, num_args = 1.., required = true)]
    pub maps: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Encoder stage, counted from 1
    #[arg(long)]
    pub layer: usize,
    /// Number of neurons, from channel 0
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub output: PathBuf,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INPUT
            }
        }
    }
}

fn write_run_json(dir: &Path, command: &str, config: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("run.json");
    let body = json!({ "v": 1, "command": command, "config": config });
    fs::write(&path, serde_json::to_vec_pretty(&body)?).map_err(|e| Error::io(&path, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Saliency(a) => {
            let fm = io::read_fixations(&a.fixations, a.width, a.height)?;
            let sm = maps::saliency_from_fixations(&fm, a.sigma)?;
            write_run_json(&parent_dir(&a.output), "saliency", json!({
                "fixations": a.fixations, "width": a.width, "height": a.height,
                "sigma": a.sigma, "output": a.output,
            }))?;
            io::write_gray(&a.output, &GrayImage::from(&sm))
        }
        Command::Quantize(a) => {
            let sm = io::read_gray(&a.input)?.to_saliency();
            let srm = maps::quantize(&sm, a.levels)?;
            write_run_json(&parent_dir(&a.output), "quantize", json!({
                "input": a.input, "levels": a.levels, "output": a.output,
            }))?;
            io::write_region_map(&a.output, &srm)
        }
        Command::Restrict(a) => {
            let q = io::read_region_map(&a.quantized)?;
            let b = io::read_region_map(&a.binary)?;
            let out = maps::restrict(&q, &b)?;
            write_run_json(&parent_dir(&a.output), "restrict", json!({
                "quantized": a.quantized, "binary": a.binary, "output": a.output,
            }))?;
            io::write_region_map(&a.output, &out)
        }
        Command::Synth(a) => {
            // level maps are not saved, so the level count is irrelevant here
            let data = train::synthesize_dataset(a.count, a.size, 2, a.seed)?;
            write_run_json(&a.output, "synth", json!({
                "count": a.count, "size": a.size, "seed": a.seed,
                "sigma": train::synthetic_sigma(a.size),
            }))?;
            train::save_dataset(&a.output, &data)
        }
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::QuantLoss(a) => {
            let data = a.data.load()?;
            let pairs: Vec<(SaliencyMap, FixationMap)> =
                data.iter().map(|s| (s.gt_saliency.clone(), s.fixations.clone())).collect();
            let report = metrics::quantization_loss_report(&pairs, a.data.levels, a.splits, a.data.seed)?;
            write_run_json(&a.output, "quant-loss", json!({ "data": a.data.describe(), "splits": a.splits }))?;
            write_json(&a.output.join("quant_loss.json"), &report)?;
            let table = report.to_table();
            write_text(&a.output.join("quant_loss.txt"), &table)?;
            print!("{table}");
            Ok(())
        }
        Command::NssStd(a) => {
            let first = io::read_gray(&a.maps[0])?;
            let fm = io::read_fixations(&a.fixations, first.width, first.height)?;
            let maps = a
                .maps
                .iter()
                .map(|p| {
                    let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((name, io::read_gray(p)?.to_saliency()))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = metrics::nss_std_analysis(&maps, &fm);
            write_run_json(&a.output, "nss-std", json!({ "fixations": a.fixations, "maps": a.maps }))?;
            write_json(&a.output.join("nss_std.json"), &rows)?;
            let table = metrics::std_table(&rows);
            write_text(&a.output.join("nss_std.txt"), &table)?;
            print!("{table}");
            Ok(())
        }
        Command::Visualize(a) => {
            let ck = Checkpoint::load(&a.checkpoint)?;
            write_run_json(&a.output, "visualize", json!({
                "checkpoint": a.checkpoint, "layer": a.layer, "count": a.count,
            }))?;
            let path = viz::export_grid(&ck.network, a.layer, a.count, &a.output)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Compare(a) => {
            let data = a.data.load()?;
            let cfg = a.flags.config(&a.data);
            let report = train::compare_convergence(&data, &cfg)?;
            write_run_json(&a.output, "compare", json!({ "data": a.data.describe(), "train": cfg }))?;
            report.save(&a.output)?;
            print!("{}", report.to_table());
            Ok(())
        }
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = a.data.load()?;
    let outcome = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let iters = a.flags.iters.unwrap_or(ck.config.max_iters);
            train::resume(&ck, &data, iters)?
        }
        None => train::train(&data, &a.flags.config(&a.data))?,
    };
    write_run_json(&a.output, "train", json!({
        "data": a.data.describe(),
        "resume": a.resume,
        "train": outcome.checkpoint.config,
        "class_weights": outcome.checkpoint.class_weights,
    }))?;
    train::save_run(&a.output, &outcome)?;
    if let Some(last) = outcome.log.last() {
        println!("iter {} loss {:.6} pixel_acc {:.4}", last.iter, last.loss, last.pixel_acc);
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let inputs: Vec<(String, PathBuf)> = if a.input.is_dir() {
        train::dataset_stems(&a.input)?
            .into_iter()
            .map(|s| {
                let p = a.input.join(format!("{s}.pgm"));
                (s, p)
            })
            .collect()
    } else {
        let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        vec![(stem, a.input.clone())]
    };
    fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    write_run_json(&a.output, "predict", json!({ "checkpoint": a.checkpoint, "input": a.input }))?;
    for (stem, path) in inputs {
        let img = io::read_gray(&path)?;
        let x = Tensor::from_vec(&[1, 1, img.height, img.width], img.to_unit())?;
        let srm = train::predict(&ck, &x)?;
        io::write_region_map(&a.output.join(format!("{stem}.pgm")), &srm)?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let stems = train::dataset_stems(&a.pred)?;
    if stems.is_empty() {
        return Err(Error::invalid(format!("no predictions in {}", a.pred.display())));
    }
    let set = MetricSet {
        auc_judd: a.metrics.contains(&MetricArg::AucJudd),
        auc_shuffled: a.metrics.contains(&MetricArg::Sauc),
        nss: a.metrics.contains(&MetricArg::Nss),
        accuracy: a.metrics.contains(&MetricArg::Accuracy),
    };
    let items = stems
        .iter()
        .map(|stem| {
            let pred_path = a.pred.join(format!("{stem}.pgm"));
            let img = io::read_gray(&pred_path)?;
            let fixations = io::read_fixations(&a.gt.join(format!("{stem}.fix.csv")), img.width, img.height)?;
            let levels = match io::read_sidecar(&pred_path)? {
                Some(side) if set.accuracy => {
                    let pred = io::read_region_map(&pred_path)?;
                    let sal_path = a.gt.join(format!("{stem}.sal.pgm"));
                    let gt_sal = if sal_path.exists() {
                        io::read_gray(&sal_path)?.to_saliency()
                    } else {
                        maps::saliency_from_fixations(&fixations, a.sigma)?
                    };
                    Some((pred, maps::quantize(&gt_sal, side.num_levels)?))
                }
                _ => None,
            };
            Ok(EvalItem {
                name: stem.clone(),
                prediction: img.to_saliency(),
                fixations,
                levels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = metrics::evaluate(&items, set, a.splits, a.seed)?;
    write_run_json(&a.output, "eval", json!({
        "pred": a.pred, "gt": a.gt, "sigma": a.sigma, "metrics": a.metrics,
        "splits": a.splits, "seed": a.seed,
    }))?;
    write_json(&a.output.join("report.json"), &report)?;
    let table = report.to_table();
    write_text(&a.output.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
