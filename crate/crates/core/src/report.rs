//! Run report: one row per shell plus corpus aggregates derived from the rows.

use serde::{Deserialize, Serialize};

use crate::dataset::ClassSet;
use crate::error::Result;
use crate::manifest::{RecordError, Split};
use crate::rebalance::ClassAccuracy;
use crate::sharpness::{gate, sweep_predictions, ScoreVariant, SharpnessScore, SweepPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellRow {
    /// Manifest line of the record the shell came from.
    pub line: usize,
    pub sample: String,
    pub shell: usize,
    pub split: Split,
    pub label: Option<String>,
    /// Set when the shell could not be processed; every field below is then `None`.
    pub error: Option<String>,
    pub sharpness: Option<SharpnessScore>,
    /// The gated variant of `sharpness`.
    pub score: Option<f64>,
    pub kept: Option<bool>,
    pub prediction: Option<String>,
    pub logits: Option<Vec<f64>>,
    /// Path relative to the output directory.
    pub heatmap: Option<String>,
    pub tki: Option<f64>,
}

impl ShellRow {
    pub fn failed(
        line: usize,
        sample: &str,
        shell: usize,
        split: Split,
        label: Option<String>,
        error: String,
    ) -> Self {
        Self {
            line,
            sample: sample.to_string(),
            shell,
            split,
            label,
            error: Some(error),
            sharpness: None,
            score: None,
            kept: None,
            prediction: None,
            logits: None,
            heatmap: None,
            tki: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub shells: usize,
    pub failed: usize,
    pub kept: usize,
    pub discarded: usize,
    pub heatmaps: usize,
    /// Over kept shells that carry a label.
    pub accuracy: ClassAccuracy,
    pub mean_tki: Option<f64>,
    pub tki_count: usize,
    /// Accuracy over labeled shells surviving each threshold.
    pub sweep: Vec<SweepPoint>,
}

impl Aggregates {
    pub fn from_rows(
        rows: &[ShellRow],
        classes: &ClassSet,
        threshold: f64,
        sweep: &[f64],
    ) -> Result<Self> {
        let ok: Vec<&ShellRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        let scores: Vec<f64> = ok.iter().map(|r| r.score.unwrap_or(0.0)).collect();
        let split = gate(&scores, threshold)?;

        let labeled = |r: &ShellRow| -> Option<(usize, usize)> {
            let y = classes.index_of(r.label.as_deref()?)?;
            let p = classes.index_of(r.prediction.as_deref()?)?;
            Some((y, p))
        };
        let (mut ys, mut ps) = (Vec::new(), Vec::new());
        for &i in &split.kept {
            if let Some((y, p)) = labeled(ok[i]) {
                ys.push(y);
                ps.push(p);
            }
        }
        let accuracy = ClassAccuracy::from_predictions(&ys, &ps, classes.len())?;

        let (mut sy, mut sp, mut ss) = (Vec::new(), Vec::new(), Vec::new());
        for (r, &s) in ok.iter().zip(&scores) {
            if let Some((y, p)) = labeled(r) {
                sy.push(y);
                sp.push(p);
                ss.push(s);
            }
        }
        let sweep = sweep_predictions(&sy, &sp, &ss, classes.len(), sweep)?;

        let tkis: Vec<f64> = rows.iter().filter_map(|r| r.tki).collect();
        Ok(Self {
            shells: rows.len(),
            failed: rows.len() - ok.len(),
            kept: split.kept.len(),
            discarded: split.discarded.len(),
            heatmaps: rows.iter().filter(|r| r.heatmap.is_some()).count(),
            accuracy,
            mean_tki: (!tkis.is_empty()).then(|| tkis.iter().sum::<f64>() / tkis.len() as f64),
            tki_count: tkis.len(),
            sweep,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub classes: ClassSet,
    pub variant: ScoreVariant,
    pub threshold: f64,
    pub k: usize,
    pub shells: Vec<ShellRow>,
    /// Manifest lines that never produced shells.
    pub rejected: Vec<RecordError>,
    pub aggregates: Aggregates,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
