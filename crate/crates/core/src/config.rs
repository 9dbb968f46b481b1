//! Pipeline configuration (TOML).
//!
//! ```toml
//! model = "base.model"
//! manifest = "manifest.jsonl"
//! out = "out"
//! classes = ["broken", "flash", "healthy"]
//! seed = 0
//! k = 28
//! all_heatmaps = false
//!
//! [rules]
//! input_layer = { rule = "z_box", low = 0.0, high = 1.0 }
//! conv = { rule = "gamma", gamma = 0.25 }
//! dense = { rule = "epsilon", epsilon = 1e-6, std_scale = 0.25 }
//!
//! [sharpness]
//! variant = "normalized"
//! threshold = 0.0
//! sweep = "0:0.004:0.0002"
//!
//! [rebalance]
//! partitions = 10
//! emphasis = { broken = 2.0 }
//! ```
//!
//! Every key is optional. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassSet;
use crate::error::{Error, Result};
use crate::lrp::RuleConfig;
use crate::rebalance::{ClassWeights, RebalanceConfig, SolverConfig};
use crate::sharpness::ScoreVariant;

/// Evenly spaced thresholds `start, start + step, ...` up to and including
/// `stop`, written `start:stop:step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ThresholdRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ThresholdRange {
    pub fn values(&self) -> Vec<f64> {
        // tolerance so that 0:50:5 ends exactly at 50
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl FromStr for ThresholdRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::InvalidArgument(format!("threshold range {s:?} is not start:stop:step"));
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(start >= 0.0 && stop >= start && step > 0.0 && stop.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold range {s:?} needs 0 <= start <= stop and step > 0"
            )));
        }
        Ok(Self { start, stop, step })
    }
}

impl TryFrom<String> for ThresholdRange {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ThresholdRange> for String {
    fn from(r: ThresholdRange) -> String {
        r.to_string()
    }
}

impl fmt::Display for ThresholdRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessConfig {
    pub variant: ScoreVariant,
    pub threshold: f64,
    /// Thresholds for the sweep curve; `None` spreads 21 points from 0 to the
    /// largest observed score.
    pub sweep: Option<ThresholdRange>,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            variant: ScoreVariant::Normalized,
            threshold: 0.0,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RebalanceSection {
    pub partitions: usize,
    /// Weight multipliers by class name.
    pub emphasis: BTreeMap<String, f64>,
    /// Fixed per-class weights by name, replacing inverse-frequency weighting.
    pub class_weights: Option<BTreeMap<String, f64>>,
    pub standardize: bool,
    pub solver: SolverConfig,
}

impl Default for RebalanceSection {
    fn default() -> Self {
        Self {
            partitions: 10,
            emphasis: BTreeMap::from([("broken".to_string(), 2.0)]),
            class_weights: None,
            standardize: true,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub classes: ClassSet,
    pub seed: u64,
    /// tki cut-off; `None` uses 5% of the shell pixels (at most 100).
    pub k: Option<usize>,
    /// Render heatmaps for every kept shell, not only damage predictions.
    pub all_heatmaps: bool,
    pub rules: RuleConfig,
    pub sharpness: SharpnessConfig,
    pub rebalance: RebalanceSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: None,
            manifest: None,
            out: PathBuf::from("out"),
            classes: ClassSet::default(),
            seed: 0,
            k: None,
            all_heatmaps: false,
            rules: RuleConfig::default(),
            sharpness: SharpnessConfig::default(),
            rebalance: RebalanceSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses the file and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.model, &mut cfg.manifest].into_iter().flatten() {
            *p = base.join(&*p);
        }
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Range checks on every numeric field plus existence of the model and
    /// manifest files when set.
    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if !(self.sharpness.threshold >= 0.0 && self.sharpness.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "sharpness threshold must be a finite value >= 0, got {}",
                self.sharpness.threshold
            )));
        }
        if self.k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let rb = &self.rebalance;
        if rb.partitions == 0 {
            return Err(Error::Config(
                "rebalance.partitions must be at least 1".into(),
            ));
        }
        let s = &rb.solver;
        if !(s.learning_rate > 0.0 && s.learning_rate.is_finite() && s.tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "solver settings out of range: {s:?}"
            )));
        }
        self.emphasis_indices()?;
        self.fixed_weights()?;
        for (what, p) in [("model", &self.model), ("manifest", &self.manifest)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "{what} {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn model_path(&self) -> Result<&Path> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::Config("no model given (set `model` or pass --model)".into()))
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| {
            Error::Config("no manifest given (set `manifest` or pass --manifest)".into())
        })
    }

    fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown class {name:?}")))
    }

    fn emphasis_indices(&self) -> Result<Vec<(usize, f64)>> {
        self.rebalance
            .emphasis
            .iter()
            .map(|(name, &f)| {
                if !(f > 0.0 && f.is_finite()) {
                    return Err(Error::Config(format!(
                        "emphasis for {name:?} must be positive, got {f}"
                    )));
                }
                Ok((self.class_index(name)?, f))
            })
            .collect()
    }

    fn fixed_weights(&self) -> Result<Option<ClassWeights>> {
        let Some(map) = &self.rebalance.class_weights else {
            return Ok(None);
        };
        let mut w = vec![1.0; self.classes.len()];
        for (name, &v) in map {
            w[self.class_index(name)?] = v;
        }
        ClassWeights::new(w)
            .map(Some)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn rebalance_config(&self) -> Result<RebalanceConfig> {
        Ok(RebalanceConfig {
            num_partitions: self.rebalance.partitions,
            seed: self.seed,
            solver: self.rebalance.solver,
            emphasis: self.emphasis_indices()?,
            class_weights: self.fixed_weights()?,
            standardize: self.rebalance.standardize,
        })
    }
}
