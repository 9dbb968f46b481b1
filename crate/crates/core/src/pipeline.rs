//! End-to-end triage over a manifest: insulator crop, shell crop, sharpness
//! gate, classification, heatmaps for damage predictions and tki scoring.

use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::dataset::{ClassSet, Sample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::localization::{default_k, heatmap_tki, BinaryMask};
use crate::lrp::{relevance, Heatmap, RuleConfig};
use crate::manifest::{Manifest, SampleRecord, Split};
use crate::model_io::write_float_block;
use crate::net::Network;
use crate::pnm;
use crate::render::render_heatmap;
use crate::report::{Aggregates, RunReport, ShellRow};
use crate::sharpness::{image_sharpness, sweep_csv, ScoreVariant};
use crate::tensor::Tensor;

/// One shell cut out of its record's image.
#[derive(Debug, Clone)]
pub struct ShellCrop {
    pub shell: usize,
    /// Crop at its native resolution.
    pub image: Image,
    /// Crop resampled to the network input, `[c, h, w]`.
    pub input: Tensor,
    /// Damage mask at network input resolution, when the record has one.
    pub mask: Option<BinaryMask>,
}

/// `(channels, height, width)` of an image network.
pub fn image_input(net: &Network) -> Result<(usize, usize, usize)> {
    match *net.input_shape() {
        [c, h, w] if c == 1 || c == 3 => Ok((c, h, w)),
        ref s => Err(Error::Config(format!(
            "model input {s:?} is not a [channels, height, width] image with 1 or 3 channels"
        ))),
    }
}

fn to_input(img: &Image, (c, h, w): (usize, usize, usize)) -> Tensor {
    let resized = img.resize_bilinear(w, h);
    if c == 1 {
        resized.to_gray()
    } else {
        resized.to_rgb()
    }
    .to_tensor()
}

/// Two-stage crop of every shell of `record`: insulator box first, then the
/// shell box inside it. Masks follow the same boxes and are resampled with
/// nearest neighbours.
pub fn crop_shells(
    record: &SampleRecord,
    net_input: (usize, usize, usize),
) -> Result<Vec<ShellCrop>> {
    let image = pnm::read_image(&record.image)?;
    let mask = record.mask.as_ref().map(pnm::read_image).transpose()?;
    let (_, h, w) = net_input;
    let mut out = Vec::with_capacity(record.shells.len());
    for (i, s) in record.shells.iter().enumerate() {
        let insulator = image.crop(&record.boxes[s.insulator])?;
        let crop = insulator.crop(&s.local)?;
        let mask = match &mask {
            Some(m) => {
                let m = m.crop(&record.boxes[s.insulator])?.crop(&s.local)?;
                Some(BinaryMask::from_image(&m.resize_nearest(w, h)))
            }
            None => None,
        };
        out.push(ShellCrop {
            shell: i,
            input: to_input(&crop, net_input),
            image: crop,
            mask,
        });
    }
    Ok(out)
}

/// Labeled samples from the records of `split`; unlabeled or unreadable
/// records are skipped with a warning.
pub fn labeled_samples(manifest: &Manifest, split: Split, net: &Network) -> Result<Vec<Sample>> {
    let dims = image_input(net)?;
    let records: Vec<&SampleRecord> = manifest
        .split(split)
        .filter(|r| r.label.is_some())
        .collect();
    let crops: Vec<Result<Vec<ShellCrop>>> =
        records.par_iter().map(|r| crop_shells(r, dims)).collect();
    let mut samples = Vec::new();
    for (r, c) in records.iter().zip(crops) {
        match c {
            Ok(shells) => samples.extend(
                shells
                    .into_iter()
                    .map(|s| Sample::new(s.input, r.label.unwrap_or(0))),
            ),
            Err(e) => warn!("line {}: skipped: {e}", r.line),
        }
    }
    Ok(samples)
}

/// Which shells receive a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeatmapPolicy {
    /// Kept shells predicted as a damage class.
    #[default]
    DamageOnly,
    /// Every kept shell.
    AllKept,
    /// Every shell with a damage mask, gated or not, whatever its prediction.
    Masked,
    None,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub heatmaps: HeatmapPolicy,
    /// Restrict the run to one split.
    pub split: Option<Split>,
}

#[derive(Debug, Clone)]
pub struct HeatmapArtifact {
    /// `<sample>_<shell>`
    pub name: String,
    pub overlay: Image,
    pub relevance: Heatmap,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub heatmaps: Vec<HeatmapArtifact>,
}

struct Settings<'a> {
    net: &'a Network,
    classes: &'a ClassSet,
    rules: &'a RuleConfig,
    variant: ScoreVariant,
    threshold: f64,
    k: usize,
    policy: HeatmapPolicy,
    dims: (usize, usize, usize),
}

pub fn run_pipeline(
    config: &PipelineConfig,
    net: &Network,
    manifest: &Manifest,
    options: &RunOptions,
) -> Result<PipelineOutput> {
    config.rules.validate()?;
    let classes = &config.classes;
    if classes.len() != net.num_classes() {
        return Err(Error::Config(format!(
            "{} classes configured for a {}-class model",
            classes.len(),
            net.num_classes()
        )));
    }
    let dims = image_input(net)?;
    let k = config.k.unwrap_or_else(|| default_k(dims.2, dims.1));
    if k == 0 || k > dims.1 * dims.2 {
        return Err(Error::Config(format!(
            "k = {k} outside 1..={} for {}x{} shells",
            dims.1 * dims.2,
            dims.2,
            dims.1
        )));
    }
    let policy = match (options.heatmaps, config.all_heatmaps) {
        (HeatmapPolicy::DamageOnly, true) => HeatmapPolicy::AllKept,
        (p, _) => p,
    };
    let settings = Settings {
        net,
        classes,
        rules: &config.rules,
        variant: config.sharpness.variant,
        threshold: config.sharpness.threshold,
        k,
        policy,
        dims,
    };

    let records: Vec<&SampleRecord> = manifest
        .records
        .iter()
        .filter(|r| options.split.is_none_or(|s| r.split == s))
        .collect();
    info!("processing {} records", records.len());
    // collect() keeps manifest order regardless of scheduling
    let per_record: Vec<Vec<(ShellRow, Option<HeatmapArtifact>)>> = records
        .par_iter()
        .map(|r| process_record(r, &settings))
        .collect();

    let mut rows = Vec::new();
    let mut heatmaps = Vec::new();
    for (row, art) in per_record.into_iter().flatten() {
        rows.push(row);
        heatmaps.extend(art);
    }
    let thresholds = match config.sharpness.sweep {
        Some(r) => r.values(),
        None => default_sweep(&rows),
    };
    let aggregates =
        Aggregates::from_rows(&rows, classes, config.sharpness.threshold, &thresholds)?;
    let mut rejected = manifest.errors.clone();
    rejected.sort_by_key(|e| e.line);
    Ok(PipelineOutput {
        report: RunReport {
            classes: classes.clone(),
            variant: config.sharpness.variant,
            threshold: config.sharpness.threshold,
            k,
            shells: rows,
            rejected,
            aggregates,
        },
        heatmaps,
    })
}

/// 21 thresholds from 0 to the largest score seen.
fn default_sweep(rows: &[ShellRow]) -> Vec<f64> {
    let max = rows.iter().filter_map(|r| r.score).fold(0.0f64, f64::max);
    if max == 0.0 {
        return vec![0.0];
    }
    (0..=20).map(|i| max * i as f64 / 20.0).collect()
}

fn process_record(record: &SampleRecord, s: &Settings) -> Vec<(ShellRow, Option<HeatmapArtifact>)> {
    let label = record.label.map(|l| s.classes.name(l).to_string());
    match crop_shells(record, s.dims) {
        Ok(crops) => crops
            .into_iter()
            .map(|c| {
                let shell = c.shell;
                process_shell(record, c, s).unwrap_or_else(|e| {
                    warn!("{} shell {shell}: {e}", record.id);
                    let row = ShellRow::failed(
                        record.line,
                        &record.id,
                        shell,
                        record.split,
                        label.clone(),
                        e.to_string(),
                    );
                    (row, None)
                })
            })
            .collect(),
        Err(e) => {
            warn!("line {}: {e}", record.line);
            (0..record.shells.len())
                .map(|i| {
                    let row = ShellRow::failed(
                        record.line,
                        &record.id,
                        i,
                        record.split,
                        label.clone(),
                        e.to_string(),
                    );
                    (row, None)
                })
                .collect()
        }
    }
}

fn process_shell(
    record: &SampleRecord,
    crop: ShellCrop,
    s: &Settings,
) -> Result<(ShellRow, Option<HeatmapArtifact>)> {
    let sharpness = image_sharpness(&crop.image)?;
    let score = sharpness.value(s.variant);
    let kept = score >= s.threshold;
    let trace = s.net.trace(&crop.input)?;
    let logits = trace.logits().clone();
    let pred = logits.argmax().ok_or(Error::NonFinite("logits"))?;

    // a mask without damage pixels has nothing to localize
    let mask = crop.mask.filter(|m| m.count() > 0);
    let damage = s.classes.is_damage(pred);
    let explain = match s.policy {
        HeatmapPolicy::DamageOnly => kept && damage,
        HeatmapPolicy::AllKept => kept,
        HeatmapPolicy::Masked => mask.is_some(),
        HeatmapPolicy::None => false,
    };
    let name = format!("{}_{}", record.id, crop.shell);
    let (heatmap, tki, artifact) = if explain {
        let h = relevance(s.net, &trace, pred, s.rules)?;
        let tki = mask.as_ref().map(|m| heatmap_tki(&h, m, s.k)).transpose()?;
        let overlay = render_heatmap(&h, &crop.input)?;
        debug!("{name}: class {pred}, tki {tki:?}");
        let art = HeatmapArtifact {
            name: name.clone(),
            overlay,
            relevance: h,
        };
        (Some(format!("heatmaps/{name}.ppm")), tki, Some(art))
    } else {
        (None, None, None)
    };
    let row = ShellRow {
        line: record.line,
        sample: record.id.clone(),
        shell: crop.shell,
        split: record.split,
        label: record.label.map(|l| s.classes.name(l).to_string()),
        error: None,
        sharpness: Some(sharpness),
        score: Some(score),
        kept: Some(kept),
        prediction: Some(s.classes.name(pred).to_string()),
        logits: Some(logits.into_data()),
        heatmap,
        tki,
    };
    Ok((row, artifact))
}

/// Writes `heatmaps/<name>.ppm` and, with `dump`, the raw relevance as
/// `heatmaps/<name>.rel` (little-endian `f32`, row-major).
pub fn write_heatmaps(artifacts: &[HeatmapArtifact], out: &Path, dump: bool) -> Result<()> {
    let dir = out.join("heatmaps");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for a in artifacts {
        pnm::write_image(dir.join(format!("{}.ppm", a.name)), &a.overlay)?;
        if dump {
            let p = dir.join(format!("{}.rel", a.name));
            let mut bytes = Vec::new();
            write_float_block(a.relevance.values(), &mut bytes).map_err(|e| Error::io(&p, e))?;
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

/// `report.json`, `sweep.csv` and the heatmap overlays.
pub fn write_outputs(output: &PipelineOutput, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report = out.join("report.json");
    fs::write(&report, output.report.to_json()?).map_err(|e| Error::io(&report, e))?;
    let sweep = out.join("sweep.csv");
    let csv = sweep_csv(
        &output.report.aggregates.sweep,
        output.report.classes.names(),
    );
    fs::write(&sweep, csv).map_err(|e| Error::io(&sweep, e))?;
    write_heatmaps(&output.heatmaps, out, false)
}
