//! Command-line front end shared by the `xai-triage` binary and its tests.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use crate::config::{PipelineConfig, ThresholdRange};
use crate::error::{Error, Result};
use crate::lrp::relevance;
use crate::manifest::{ingest_manifest, Manifest, Split};
use crate::model_io::{load_model_file, save_model_file};
use crate::net::Network;
use crate::pipeline::{
    crop_shells, image_input, labeled_samples, run_pipeline, write_heatmaps, write_outputs,
    HeatmapArtifact, HeatmapPolicy, RunOptions,
};
use crate::pnm;
use crate::rebalance::{per_class_accuracy, rebalance_head};
use crate::render::render_heatmap;
use crate::sharpness::{gate, image_sharpness, sweep_csv};

#[derive(Debug, Parser)]
#[command(
    name = "xai-triage",
    version,
    about = "Insulator shell triage: crop, classify, explain, gate, score"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// JSON-lines sample manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model file, overriding the config.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sharpness threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// tki cut-off.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Class weight multiplier, `class=factor`; repeatable.
    #[arg(long, global = true, value_parser = parse_emphasis)]
    pub emphasis: Vec<(String, f64)>,
    /// Only process records of this split.
    #[arg(long, global = true, value_parser = parse_split)]
    pub split: Option<Split>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write every shell crop as `crops/<sample>_<shell>.ppm`.
    Crop,
    /// Print predictions and logits for every shell.
    Classify,
    /// Heatmap and raw relevance dump for one shell.
    Explain {
        #[arg(long)]
        sample: String,
        #[arg(long, default_value_t = 0)]
        shell: usize,
        /// Explain this class instead of the prediction.
        #[arg(long)]
        class: Option<String>,
    },
    /// Print sharpness scores and the kept/discarded split.
    Gate,
    /// Accuracy over kept shells per threshold, written to `sweep.csv`.
    Sweep {
        /// `start:stop:step`
        #[arg(long)]
        thresholds: Option<ThresholdRange>,
    },
    /// Re-balance the classification head on the train split; writes `head.model`.
    RetrainHead,
    /// tki for every shell with a damage mask, whatever the gate or prediction.
    EvalTki,
    /// Full pipeline: `report.json`, `sweep.csv` and `heatmaps/`.
    Run {
        /// Heatmaps for every kept shell, not only damage predictions.
        #[arg(long)]
        all_heatmaps: bool,
    },
}

fn parse_emphasis(s: &str) -> std::result::Result<(String, f64), String> {
    let (class, factor) = s
        .split_once('=')
        .ok_or_else(|| format!("expected class=factor, got {s:?}"))?;
    let factor: f64 = factor.parse().map_err(|_| format!("bad factor in {s:?}"))?;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(format!("factor must be positive in {s:?}"));
    }
    Ok((class.to_string(), factor))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl CommonArgs {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
        }
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threshold {
            cfg.sharpness.threshold = t;
        }
        if let Some(k) = self.k {
            cfg.k = Some(k);
        }
        for (class, factor) in &self.emphasis {
            cfg.rebalance.emphasis.insert(class.clone(), *factor);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Context {
    cfg: PipelineConfig,
    net: Network,
    manifest: Manifest,
    split: Option<Split>,
}

impl Context {
    fn load(common: &CommonArgs) -> Result<Self> {
        let cfg = common.resolve()?;
        let net = load_model_file(cfg.model_path()?)?;
        let manifest = ingest_manifest(cfg.manifest_path()?, &cfg.classes)?;
        for e in &manifest.errors {
            log::warn!("manifest line {}: {}", e.line, e.message);
        }
        info!(
            "{} records, {} rejected",
            manifest.records.len(),
            manifest.errors.len()
        );
        Ok(Self {
            cfg,
            net,
            manifest,
            split: common.split,
        })
    }

    fn options(&self, heatmaps: HeatmapPolicy) -> RunOptions {
        RunOptions {
            heatmaps,
            split: self.split,
        }
    }
}

fn print(v: &Value) -> Result<()> {
    use std::io::Write;
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        // a closed pipe (`| head`) is not a failure of the command
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// Executes one parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Crop => crop(&cli.common),
        Command::Classify => {
            let ctx = Context::load(&cli.common)?;
            let out = run_pipeline(
                &ctx.cfg,
                &ctx.net,
                &ctx.manifest,
                &ctx.options(HeatmapPolicy::None),
            )?;
            let rows: Vec<Value> = out
                .report
                .shells
                .iter()
                .map(|r| {
                    json!({"sample": r.sample, "shell": r.shell, "label": r.label,
                           "prediction": r.prediction, "logits": r.logits, "error": r.error})
                })
                .collect();
            print(&json!({"shells": rows, "rejected": out.report.rejected}))
        }
        Command::Explain {
            sample,
            shell,
            class,
        } => explain(&cli.common, sample, *shell, class.as_deref()),
        Command::Gate => {
            let ctx = Context::load(&cli.common)?;
            let out = run_pipeline(
                &ctx.cfg,
                &ctx.net,
                &ctx.manifest,
                &ctx.options(HeatmapPolicy::None),
            )?;
            let ok: Vec<_> = out
                .report
                .shells
                .iter()
                .filter(|r| r.error.is_none())
                .collect();
            let scores: Vec<f64> = ok.iter().map(|r| r.score.unwrap_or(0.0)).collect();
            let split = gate(&scores, ctx.cfg.sharpness.threshold)?;
            let name = |i: &usize| format!("{}_{}", ok[*i].sample, ok[*i].shell);
            let scores: Vec<Value> = ok
                .iter()
                .map(|r| json!({"sample": r.sample, "shell": r.shell, "sharpness": r.sharpness}))
                .collect();
            print(&json!({
                "threshold": ctx.cfg.sharpness.threshold,
                "variant": ctx.cfg.sharpness.variant,
                "kept": split.kept.iter().map(name).collect::<Vec<_>>(),
                "discarded": split.discarded.iter().map(name).collect::<Vec<_>>(),
                "scores": scores,
            }))
        }
        Command::Sweep { thresholds } => {
            let mut ctx = Context::load(&cli.common)?;
            if let Some(t) = thresholds {
                ctx.cfg.sharpness.sweep = Some(*t);
            }
            let out = run_pipeline(
                &ctx.cfg,
                &ctx.net,
                &ctx.manifest,
                &ctx.options(HeatmapPolicy::None),
            )?;
            let path = ctx.cfg.out.join("sweep.csv");
            write(
                path.clone(),
                sweep_csv(&out.report.aggregates.sweep, ctx.cfg.classes.names()),
            )?;
            print(&json!({"sweep": path, "rows": out.report.aggregates.sweep.len()}))
        }
        Command::RetrainHead => retrain(&cli.common),
        Command::EvalTki => {
            let ctx = Context::load(&cli.common)?;
            let out = run_pipeline(
                &ctx.cfg,
                &ctx.net,
                &ctx.manifest,
                &ctx.options(HeatmapPolicy::Masked),
            )?;
            let rows: Vec<Value> = out
                .report
                .shells
                .iter()
                .filter(|r| r.tki.is_some())
                .map(|r| {
                    json!({"sample": r.sample, "shell": r.shell, "label": r.label,
                                "prediction": r.prediction, "tki": r.tki})
                })
                .collect();
            print(&json!({
                "k": out.report.k,
                "mean_tki": out.report.aggregates.mean_tki,
                "count": out.report.aggregates.tki_count,
                "shells": rows,
            }))
        }
        Command::Run { all_heatmaps } => {
            let mut ctx = Context::load(&cli.common)?;
            ctx.cfg.all_heatmaps |= *all_heatmaps;
            let out = run_pipeline(
                &ctx.cfg,
                &ctx.net,
                &ctx.manifest,
                &ctx.options(HeatmapPolicy::DamageOnly),
            )?;
            write_outputs(&out, &ctx.cfg.out)?;
            let a = &out.report.aggregates;
            print(&json!({
                "out": ctx.cfg.out,
                "shells": a.shells,
                "failed": a.failed,
                "kept": a.kept,
                "heatmaps": a.heatmaps,
                "accuracy": a.accuracy.per_class,
                "mean_tki": a.mean_tki,
            }))
        }
    }
}

fn crop(common: &CommonArgs) -> Result<()> {
    let cfg = common.resolve()?;
    let manifest = ingest_manifest(cfg.manifest_path()?, &cfg.classes)?;
    let dir = cfg.out.join("crops");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = 0usize;
    let mut failed = Vec::new();
    for r in manifest
        .records
        .iter()
        .filter(|r| common.split.is_none_or(|s| r.split == s))
    {
        let crops = pnm::read_image(&r.image).and_then(|img| {
            r.shells
                .iter()
                .map(|s| img.crop(&r.boxes[s.insulator])?.crop(&s.local))
                .collect::<Result<Vec<_>>>()
        });
        match crops {
            Ok(crops) => {
                for (i, c) in crops.iter().enumerate() {
                    pnm::write_image(dir.join(format!("{}_{i}.ppm", r.id)), c)?;
                    written += 1;
                }
            }
            Err(e) => failed.push(json!({"line": r.line, "message": e.to_string()})),
        }
    }
    print(&json!({"crops": written, "dir": dir, "failed": failed, "rejected": manifest.errors}))
}

fn explain(common: &CommonArgs, sample: &str, shell: usize, class: Option<&str>) -> Result<()> {
    let ctx = Context::load(common)?;
    let record = ctx
        .manifest
        .records
        .iter()
        .find(|r| r.id == sample)
        .ok_or_else(|| Error::InvalidArgument(format!("no sample {sample:?} in the manifest")))?;
    let crop = crop_shells(record, image_input(&ctx.net)?)?
        .into_iter()
        .nth(shell)
        .ok_or_else(|| Error::InvalidArgument(format!("sample {sample:?} has no shell {shell}")))?;
    let trace = ctx.net.trace(&crop.input)?;
    let predicted = trace.logits().argmax().ok_or(Error::NonFinite("logits"))?;
    let target = match class {
        Some(name) => ctx
            .cfg
            .classes
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class {name:?}")))?,
        None => predicted,
    };
    let h = relevance(&ctx.net, &trace, target, &ctx.cfg.rules)?;
    let art = HeatmapArtifact {
        name: format!("{sample}_{shell}"),
        overlay: render_heatmap(&h, &crop.input)?,
        relevance: h,
    };
    write_heatmaps(std::slice::from_ref(&art), &ctx.cfg.out, true)?;
    let dir = ctx.cfg.out.join("heatmaps");
    print(&json!({
        "heatmap": dir.join(format!("{}.ppm", art.name)),
        "relevance": dir.join(format!("{}.rel", art.name)),
        "width": art.relevance.width(),
        "height": art.relevance.height(),
        "class": ctx.cfg.classes.name(target),
        "predicted": ctx.cfg.classes.name(predicted),
        "logit": trace.logits().data()[target],
        "relevance_sum": art.relevance.sum(),
        "sharpness": image_sharpness(&crop.image)?,
    }))
}

fn retrain(common: &CommonArgs) -> Result<()> {
    let ctx = Context::load(common)?;
    let train = labeled_samples(&ctx.manifest, Split::Train, &ctx.net)?;
    if train.is_empty() {
        return Err(Error::InvalidArgument(
            "no labeled train shells in the manifest".into(),
        ));
    }
    let outcome = rebalance_head(
        &ctx.net,
        &train,
        &ctx.cfg.classes,
        &ctx.cfg.rebalance_config()?,
    )?;
    let path = ctx.cfg.out.join("head.model");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_model_file(&outcome.network, &path)?;

    let test = labeled_samples(&ctx.manifest, Split::Test, &ctx.net)?;
    let (before, after) = if test.is_empty() {
        (None, None)
    } else {
        (
            Some(per_class_accuracy(&ctx.net, &test)?.accuracy),
            Some(per_class_accuracy(&outcome.network, &test)?.accuracy),
        )
    };
    print(&json!({
        "model": path,
        "train_shells": train.len(),
        "partitions": outcome.partitions.len(),
        "partition_size": outcome.partitions.first().map(Vec::len),
        "iterations": outcome.fits.iter().map(|f| f.iterations).collect::<Vec<_>>(),
        "final_loss": outcome.fits.iter().map(|f| f.final_loss).collect::<Vec<_>>(),
        "test_before": before,
        "test_after": after,
    }))
}

/// Machine-readable error report for stderr.
pub fn error_json(e: &Error) -> String {
    json!({"error": {"kind": e.kind(), "message": e.to_string()}}).to_string()
}

/// Logger driven by `XAI_TRIAGE_LOG` (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("XAI_TRIAGE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}
