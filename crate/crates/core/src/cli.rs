//! Command-line interface. Each command has an in-process entry point that
//! writes its report to the supplied sink, so the binary stays a thin shim.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::{ModeName, PartialRunConfig, RunConfig};
use crate::data::{self, Split, SynthSpec, TimeSeriesDataset};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::plot;
use crate::scoring;
use crate::train::{self, TrainOptions};

const LABEL: &str = "label";

#[derive(Debug, Parser)]
#[command(
    name = "mgadn",
    version,
    about = "Two-headed graph-attention anomaly detector for multivariate time series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a labelled synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint and report metrics.
    Eval(EvalArgs),
    /// Write the learned adjacency and similarity matrices as CSV.
    ExportGraph(ExportGraphArgs),
    /// Render a score CSV as an SVG plot.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of sensors.
    #[arg(long, default_value_t = 8)]
    pub sensors: usize,
    /// Number of timestamps.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Target fraction of anomalous timestamps.
    #[arg(long, default_value_t = 0.05)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training CSV (sensor columns plus an optional `label` column).
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the per-epoch log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Sliding window length d.
    #[arg(long)]
    pub window: Option<usize>,
    /// In-neighbours kept per sensor.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sensor embedding width.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// VAE latent size (default max(2, N/2)).
    #[arg(long)]
    pub latent: Option<usize>,
    /// VAE hidden width (default ceil(d*N/2)).
    #[arg(long)]
    pub vae_hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// How the two losses are combined.
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    /// Forecast-loss weight in fixed mode.
    #[arg(long)]
    pub c_pred: Option<f64>,
    /// Epochs per head in alternating mode.
    #[arg(long)]
    pub alt_period: Option<usize>,
    /// Drop the reconstruction head.
    #[arg(long)]
    pub no_vae_head: bool,
    /// Drop the forecast head.
    #[arg(long)]
    pub no_pred_head: bool,
    /// Feed raw windows to both heads.
    #[arg(long)]
    pub no_shared_layer: bool,
    /// Alternate the losses instead of balancing them.
    #[arg(long)]
    pub no_mgda: bool,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[arg(long)]
    pub val_ratio: Option<f64>,
    #[arg(long)]
    pub test_ratio: Option<f64>,
}

impl TrainArgs {
    pub fn overrides(&self) -> PartialRunConfig {
        let flag = |b: bool| b.then_some(true);
        PartialRunConfig {
            window: self.window,
            k: self.k,
            embed_dim: self.embed_dim,
            latent: self.latent,
            vae_hidden: self.vae_hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            mode: self.mode,
            c_pred: self.c_pred,
            alt_period: self.alt_period,
            no_vae_head: flag(self.no_vae_head),
            no_pred_head: flag(self.no_pred_head),
            no_shared_layer: flag(self.no_shared_layer),
            no_mgda: flag(self.no_mgda),
            train_ratio: self.train_ratio,
            val_ratio: self.val_ratio,
            test_ratio: self.test_ratio,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    /// Every row of the file.
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output score CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Rows to score, using the checkpoint's split ratios.
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    /// Add per-sensor score columns to the CSV.
    #[arg(long)]
    pub per_sensor: bool,
}

#[derive(Debug, Args)]
pub struct ExportGraphArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory receiving `adjacency.csv` and `similarity.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Score CSV written by `eval`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| ()),
        Command::ExportGraph(a) => cmd_export_graph(&a, out),
        Command::Plot(a) => cmd_plot(&a, out),
    }
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// Loads a CSV, treating a `label` column as labels when present.
pub fn load_dataset(path: &Path) -> Result<TimeSeriesDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text
        .lines()
        .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .unwrap_or("");
    let has_label = header.split(',').any(|h| h.trim() == LABEL);
    data::parse_csv(&text, has_label.then_some(LABEL))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let ds = data::synth_generate_with(&SynthSpec::new(a.sensors, a.steps, a.rate, a.seed))?;
    write_atomic(&a.out, data::to_csv(&ds).as_bytes())?;
    let anomalous = ds.labels.as_ref().map_or(0, |l| l.iter().filter(|&&v| v == 1).count());
    emit(
        out,
        &format!(
            "wrote {} rows, {} sensors, {anomalous} anomalous rows to {}",
            ds.n_steps(),
            ds.n_sensors(),
            a.out.display()
        ),
    )
}

/// Trains on the train split, calibrates on validation, returns the checkpoint.
pub fn train_checkpoint(
    cfg: &RunConfig,
    ds: TimeSeriesDataset,
    mut on_epoch: impl FnMut(&train::EpochLog),
) -> Result<Checkpoint> {
    let ds = ds.with_splits(cfg.split)?;
    let (norm, stats) = data::normalize(&ds)?;
    let windows = data::make_windows(&norm, Split::Train, cfg.window)?;
    let mut model = Model::init(cfg.model_config(ds.n_sensors())?, cfg.seed)?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        mode: cfg.combination_mode(),
        seed: cfg.seed,
    };
    train::train(&mut model, &windows, &opts, &mut on_epoch)?;
    let det = Detector::calibrate(model, stats, &norm)?;
    Ok(Checkpoint::new(cfg.clone(), &det, ds.sensor_names.clone()))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let file = a.config.as_deref().map(PartialRunConfig::load).transpose()?;
    let cfg = RunConfig::layered(file.as_ref(), &a.overrides())?;
    let ds = load_dataset(&a.data)?;
    let mut log = String::new();
    let mut sink_err = None;
    let ck = train_checkpoint(&cfg, ds, |e| {
        let line = e.to_string();
        let _ = writeln!(log, "{line}");
        if let Err(err) = emit(out, &line) {
            sink_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    ck.save(&a.out)?;
    if let Some(path) = &a.log {
        write_atomic(path, log.as_bytes())?;
    }
    emit(out, &format!("threshold={:?}", ck.threshold))?;
    emit(out, &format!("wrote checkpoint {}", a.out.display()))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<Option<scoring::Metrics>> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    if ds.sensor_names != ck.sensor_names {
        return Err(Error::Data(format!(
            "sensor columns {:?} do not match the checkpoint's {:?}",
            ds.sensor_names, ck.sensor_names
        )));
    }
    let det = ck.detector()?;
    let ds = ds.with_splits(ck.config.split)?;
    let mut norm = ds.clone();
    norm.values = ds.values.iter().map(|r| det.normalization.apply_row(r)).collect();
    let scored = match a.split {
        EvalSplit::All => det.score_normalized(&norm.values, 0..norm.n_steps())?,
        EvalSplit::Train => det.score_split(&norm, Split::Train)?,
        EvalSplit::Val => det.score_split(&norm, Split::Val)?,
        EvalSplit::Test => det.score_split(&norm, Split::Test)?,
    };
    let records = det.records(&scored, ds.labels.as_deref());
    let csv = scoring::write_score_csv(&records, det.threshold, &ck.sensor_names, a.per_sensor);
    write_atomic(&a.out, csv.as_bytes())?;

    let verdicts: Vec<u8> = records.iter().map(|r| r.verdict).collect();
    let alarms = verdicts.iter().filter(|&&v| v == 1).count();
    emit(
        out,
        &format!("scored={} alarms={alarms} threshold={:?}", records.len(), det.threshold),
    )?;
    let metrics = match &ds.labels {
        Some(_) => {
            let labels: Vec<u8> = records.iter().filter_map(|r| r.label).collect();
            let m = scoring::metrics(&verdicts, &labels)?;
            emit(
                out,
                &format!(
                    "precision={:.4} recall={:.4} f1={:.4} tp={} fp={} fn={} tn={}",
                    m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn
                ),
            )?;
            Some(m)
        }
        None => {
            emit(out, "no labels in data: metrics skipped")?;
            None
        }
    };
    emit(out, &format!("wrote scores {}", a.out.display()))?;
    Ok(metrics)
}

fn matrix_csv<T: std::fmt::Debug>(names: &[String], m: &[Vec<T>]) -> String {
    let mut s = format!("source,{}\n", names.join(","));
    for (name, row) in names.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{name},{}", cells.join(","));
    }
    s
}

pub fn cmd_export_graph(a: &ExportGraphArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mask = ck
        .detector()?
        .model
        .structure()?
        .ok_or_else(|| Error::Checkpoint("checkpoint has no forecast head, so no graph".into()))?;
    let adj = a.out_dir.join("adjacency.csv");
    let sim = a.out_dir.join("similarity.csv");
    write_atomic(&adj, matrix_csv(&ck.sensor_names, &mask.a).as_bytes())?;
    write_atomic(&sim, matrix_csv(&ck.sensor_names, &mask.similarity).as_bytes())?;
    emit(
        out,
        &format!(
            "wrote {} and {} (rows are sources, columns destinations)",
            adj.display(),
            sim.display()
        ),
    )
}

pub fn cmd_plot(a: &PlotArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&a.scores).map_err(|e| Error::io(&a.scores, e))?;
    let trace = scoring::parse_score_csv(&text)?;
    write_atomic(&a.out, plot::render_svg(&trace)?.as_bytes())?;
    emit(out, &format!("wrote {} ({} points)", a.out.display(), trace.t.len()))
}
