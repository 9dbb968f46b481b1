//! Head re-balancing for imbalanced classifiers.
//!
//! The frozen network's penultimate activations are extracted, the training
//! set is cut into class-balanced partitions by undersampling, a
//! class-weighted multinomial logistic regression is fitted on every
//! partition, and the partition heads are averaged into the replacement
//! final layer.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassSet, Sample};
use crate::error::{Error, Result};
use crate::net::{Dense, Network};
use crate::tensor::Tensor;

/// Row-major `rows x cols` feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    cols: usize,
    values: Vec<f64>,
    labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(cols: usize, values: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if values.len() != cols * labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels x {cols} features needs {} values, got {}",
                labels.len(),
                cols * labels.len(),
                values.len()
            )));
        }
        Ok(Self {
            cols,
            values,
            labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sub-matrix of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            cols: self.cols,
            values,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleError {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtraction {
    pub features: FeatureMatrix,
    /// Source sample index of every row.
    pub source: Vec<usize>,
    pub errors: Vec<SampleError>,
}

/// Penultimate activations (the input of the final dense layer) for every
/// sample. Samples that fail the forward pass are skipped and reported.
pub fn extract_features(net: &Network, samples: &[Sample]) -> FeatureExtraction {
    let cols = net.feature_width();
    let results: Vec<Result<Vec<f64>>> = samples
        .par_iter()
        .map(|s| {
            if s.label >= net.num_classes() {
                return Err(Error::ClassOutOfRange {
                    class: s.label,
                    num_classes: net.num_classes(),
                });
            }
            Ok(net.trace(&s.input)?.penultimate().data().to_vec())
        })
        .collect();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut source = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => {
                values.extend(row);
                labels.push(samples[i].label);
                source.push(i);
            }
            Err(e) => errors.push(SampleError {
                index: i,
                message: e.to_string(),
            }),
        }
    }
    FeatureExtraction {
        features: FeatureMatrix {
            cols,
            values,
            labels,
        },
        source,
        errors,
    }
}

/// Splits the samples into `num_partitions` class-balanced subsets.
///
/// Every partition holds `n_min` samples of each class, where `n_min` is the
/// smallest class count. Each class is shuffled once and partitions take
/// consecutive windows of that order, wrapping around, so the largest class
/// is spread over disjoint chunks as far as its size allows while the
/// smallest class is reused in full. No index repeats within a partition.
pub fn make_partitions(
    labels: &[usize],
    classes: &ClassSet,
    num_partitions: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if num_partitions == 0 {
        return Err(Error::InvalidArgument(
            "num_partitions must be at least 1".into(),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or(Error::ClassOutOfRange {
                class: l,
                num_classes: classes.len(),
            })?
            .push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(classes.name(c).to_string()));
    }
    let per_class = by_class.iter().map(Vec::len).min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pool in &mut by_class {
        pool.shuffle(&mut rng);
    }
    Ok((0..num_partitions)
        .map(|p| {
            let mut part = Vec::with_capacity(per_class * classes.len());
            for pool in &by_class {
                let start = p * per_class;
                part.extend((0..per_class).map(|i| pool[(start + i) % pool.len()]));
            }
            part.sort_unstable();
            part
        })
        .collect())
}

/// Positive per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive and finite, got {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0; num_classes])
    }

    /// `n / (K * n_c)` per class present in `labels`, multiplied by the
    /// emphasis factor of designated classes. Classes absent from `labels`
    /// get weight 1.
    pub fn inverse_frequency(
        labels: &[usize],
        num_classes: usize,
        emphasis: &[(usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; num_classes];
        for &l in labels {
            *counts.get_mut(l).ok_or(Error::ClassOutOfRange {
                class: l,
                num_classes,
            })? += 1;
        }
        let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
        let n = labels.len() as f64;
        let mut w: Vec<f64> = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    1.0
                } else {
                    n / (present * c as f64)
                }
            })
            .collect();
        for &(class, factor) in emphasis {
            *w.get_mut(class)
                .ok_or(Error::ClassOutOfRange { class, num_classes })? *= factor;
        }
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Final-layer parameters, `weights` stored `[num_classes, features]` like
/// the dense layer they replace. Values are held at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    weights: Tensor,
    bias: Tensor,
}

impl HeadWeights {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let &[classes, _] = weights.shape() else {
            return Err(Error::HeadMismatch {
                expected: "[classes, features]".into(),
                actual: format!("{:?}", weights.shape()),
            });
        };
        if bias.shape() != [classes] {
            return Err(Error::HeadMismatch {
                expected: format!("[{classes}]"),
                actual: format!("{:?}", bias.shape()),
            });
        }
        if !weights.is_finite() || !bias.is_finite() {
            return Err(Error::NonFinite("head weights"));
        }
        Ok(Self {
            weights: weights.to_f32_precision(),
            bias: bias.to_f32_precision(),
        })
    }

    /// Current final layer of `net`.
    pub fn of(net: &Network) -> Self {
        let head = net.head();
        Self {
            weights: head.weights().clone(),
            bias: head.bias().clone(),
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.weights.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iters: 5000,
            tolerance: 1e-6,
        }
    }
}

/// Class-weighted mean cross-entropy and its gradient for the linear head
/// `logits = W z + b` (`W` row-major `[classes, features]`).
///
/// `J = -(1 / sum_i w_{y_i}) * sum_i w_{y_i} * log softmax(W z_i + b)[y_i]`
pub fn weighted_loss_and_gradient(
    features: &FeatureMatrix,
    class_weights: &ClassWeights,
    w: &[f64],
    b: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = class_weights.len();
    let f = features.cols();
    let cw = class_weights.as_slice();
    let total: f64 = features.labels().iter().map(|&y| cw[y]).sum();
    let mut loss = 0.0;
    let mut gw = vec![0.0; k * f];
    let mut gb = vec![0.0; k];
    let mut logits = vec![0.0; k];
    for i in 0..features.rows() {
        let z = features.row(i);
        let y = features.labels()[i];
        for c in 0..k {
            logits[c] = b[c]
                + w[c * f..(c + 1) * f]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let weight = cw[y] / total;
        loss -= weight * (logits[y] - lse);
        for c in 0..k {
            let p = (logits[c] - lse).exp();
            let g = weight * (p - if c == y { 1.0 } else { 0.0 });
            gb[c] += g;
            for (gwj, zj) in gw[c * f..(c + 1) * f].iter_mut().zip(z) {
                *gwj += g * zj;
            }
        }
    }
    (loss, gw, gb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub head: HeadWeights,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full-batch gradient descent from zero on the class-weighted objective.
/// A step that would raise the loss is retried at half the learning rate,
/// so the loss never increases across accepted steps.
pub fn fit_weighted_logreg(
    features: &FeatureMatrix,
    class_weights: &ClassWeights,
    solver: &SolverConfig,
) -> Result<LogRegFit> {
    let k = class_weights.len();
    let f = features.cols();
    if let Some(&bad) = features.labels().iter().find(|&&y| y >= k) {
        return Err(Error::ClassOutOfRange {
            class: bad,
            num_classes: k,
        });
    }
    let distinct: BTreeSet<usize> = features.labels().iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "logistic regression needs at least 2 classes, found {}",
            distinct.len()
        )));
    }
    if features.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features"));
    }
    if !(solver.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(
            "learning rate must be positive".into(),
        ));
    }

    let mut w = vec![0.0; k * f];
    let mut b = vec![0.0; k];
    let (mut loss, mut gw, mut gb) = weighted_loss_and_gradient(features, class_weights, &w, &b);
    let initial_loss = loss;
    let mut lr = solver.learning_rate;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < solver.max_iters {
        let gnorm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < solver.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        loop {
            let cw: Vec<f64> = w.iter().zip(&gw).map(|(p, g)| p - lr * g).collect();
            let cb: Vec<f64> = b.iter().zip(&gb).map(|(p, g)| p - lr * g).collect();
            let (cl, cgw, cgb) = weighted_loss_and_gradient(features, class_weights, &cw, &cb);
            if !cl.is_finite() {
                return Err(Error::Diverged {
                    iteration: iterations,
                });
            }
            if cl <= loss {
                (w, b, loss, gw, gb) = (cw, cb, cl, cgw, cgb);
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                // no further descent possible at machine precision
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }
    let head = HeadWeights::new(Tensor::new(vec![k, f], w)?, Tensor::vector(b))?;
    Ok(LogRegFit {
        head,
        initial_loss,
        final_loss: loss,
        iterations,
        converged,
    })
}

/// Element-wise mean of weights and biases.
pub fn average_heads(heads: &[HeadWeights]) -> Result<HeadWeights> {
    let first = heads
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty list of heads".into()))?;
    let mut w = vec![0.0; first.weights.len()];
    let mut b = vec![0.0; first.bias.len()];
    for h in heads {
        if h.weights.shape() != first.weights.shape() {
            return Err(Error::HeadMismatch {
                expected: format!("{:?}", first.weights.shape()),
                actual: format!("{:?}", h.weights.shape()),
            });
        }
        w.iter_mut()
            .zip(h.weights.data())
            .for_each(|(a, v)| *a += v);
        b.iter_mut().zip(h.bias.data()).for_each(|(a, v)| *a += v);
    }
    let n = heads.len() as f64;
    HeadWeights::new(
        Tensor::new(
            first.weights.shape().to_vec(),
            w.into_iter().map(|v| v / n).collect(),
        )?,
        Tensor::vector(b.into_iter().map(|v| v / n).collect()),
    )
}

/// Copy of `net` whose final dense layer carries `head`.
pub fn replace_head(net: &Network, head: &HeadWeights) -> Result<Network> {
    let current = net.head();
    if head.weights.shape() != current.weights().shape() {
        return Err(Error::HeadMismatch {
            expected: format!("{:?}", current.weights().shape()),
            actual: format!("{:?}", head.weights.shape()),
        });
    }
    net.with_head(Dense::new(head.weights.clone(), head.bias.clone())?)
}

/// Per-feature affine standardization `(z - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Statistics over the given rows; constant features get unit scale.
    pub fn fit(features: &FeatureMatrix, rows: &[usize]) -> Self {
        let f = features.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; f];
        for &r in rows {
            mean.iter_mut()
                .zip(features.row(r))
                .for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, features: &FeatureMatrix) -> FeatureMatrix {
        let f = features.cols();
        let values = features
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % f]) / self.std[i % f])
            .collect();
        FeatureMatrix {
            cols: f,
            values,
            labels: features.labels().to_vec(),
        }
    }

    /// Head acting on raw features equivalent to `head` on standardized ones.
    pub fn fold(&self, head: &HeadWeights) -> Result<HeadWeights> {
        let (k, f) = (head.num_classes(), head.features());
        let mut w = Vec::with_capacity(k * f);
        let mut b = head.bias.data().to_vec();
        for c in 0..k {
            for j in 0..f {
                let scaled = head.weights.data()[c * f + j] / self.std[j];
                b[c] -= scaled * self.mean[j];
                w.push(scaled);
            }
        }
        HeadWeights::new(Tensor::new(vec![k, f], w)?, Tensor::vector(b))
    }
}

/// Settings of the partitioned re-balancing procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceConfig {
    pub num_partitions: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Extra weight multipliers per class index.
    pub emphasis: Vec<(usize, f64)>,
    /// Fixed weights used instead of the within-partition inverse frequency.
    pub class_weights: Option<ClassWeights>,
    pub standardize: bool,
}

impl RebalanceConfig {
    /// Ten partitions, default solver, standardized features and a 2x
    /// emphasis on the class named `broken` when present.
    pub fn for_classes(classes: &ClassSet) -> Self {
        Self {
            num_partitions: 10,
            seed: 0,
            solver: SolverConfig::default(),
            emphasis: classes
                .index_of("broken")
                .map(|i| vec![(i, 2.0)])
                .unwrap_or_default(),
            class_weights: None,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RebalanceOutcome {
    pub network: Network,
    pub head: HeadWeights,
    /// Row indices (into the extracted feature matrix) of every partition.
    pub partitions: Vec<Vec<usize>>,
    pub fits: Vec<LogRegFit>,
    pub extraction_errors: Vec<SampleError>,
}

/// Retrains the final layer of `net` on balanced partitions of `samples` and
/// installs the averaged head.
pub fn rebalance_head(
    net: &Network,
    samples: &[Sample],
    classes: &ClassSet,
    config: &RebalanceConfig,
) -> Result<RebalanceOutcome> {
    if classes.len() != net.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "{} class names for a {}-class network",
            classes.len(),
            net.num_classes()
        )));
    }
    let extraction = extract_features(net, samples);
    let features = &extraction.features;
    let partitions = make_partitions(
        features.labels(),
        classes,
        config.num_partitions,
        config.seed,
    )?;

    let standardization = config.standardize.then(|| {
        let union: Vec<usize> = partitions
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Standardization::fit(features, &union)
    });

    let fits = partitions
        .par_iter()
        .map(|rows| {
            let part = features.select(rows);
            let part = match &standardization {
                Some(s) => s.apply(&part),
                None => part,
            };
            let weights = match &config.class_weights {
                Some(w) => w.clone(),
                None => {
                    ClassWeights::inverse_frequency(part.labels(), classes.len(), &config.emphasis)?
                }
            };
            let mut fit = fit_weighted_logreg(&part, &weights, &config.solver)?;
            if let Some(s) = &standardization {
                fit.head = s.fold(&fit.head)?;
            }
            Ok(fit)
        })
        .collect::<Result<Vec<_>>>()?;

    let heads: Vec<HeadWeights> = fits.iter().map(|f| f.head.clone()).collect();
    let head = average_heads(&heads)?;
    let network = replace_head(net, &head)?;
    Ok(RebalanceOutcome {
        network,
        head,
        partitions,
        fits,
        extraction_errors: extraction.errors,
    })
}

/// Per-class accuracy; classes without samples are `None` and excluded from
/// the macro mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub per_class: Vec<Option<f64>>,
    pub totals: Vec<usize>,
    pub correct: Vec<usize>,
    pub macro_mean: Option<f64>,
    /// Fraction of all samples classified correctly.
    pub overall: Option<f64>,
}

impl ClassAccuracy {
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels vs {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut totals = vec![0usize; num_classes];
        let mut correct = vec![0usize; num_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            *totals.get_mut(y).ok_or(Error::ClassOutOfRange {
                class: y,
                num_classes,
            })? += 1;
            if y == p {
                correct[y] += 1;
            }
        }
        let per_class: Vec<Option<f64>> = totals
            .iter()
            .zip(&correct)
            .map(|(&t, &c)| (t > 0).then(|| c as f64 / t as f64))
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let macro_mean =
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        let n: usize = totals.iter().sum();
        let overall = (n > 0).then(|| correct.iter().sum::<usize>() as f64 / n as f64);
        Ok(Self {
            per_class,
            totals,
            correct,
            macro_mean,
            overall,
        })
    }

    /// Lowest accuracy among classes that have samples.
    pub fn worst_class(&self) -> Option<f64> {
        self.per_class.iter().flatten().copied().reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: ClassAccuracy,
    pub predictions: Vec<Option<usize>>,
    pub errors: Vec<SampleError>,
}

pub fn per_class_accuracy(net: &Network, samples: &[Sample]) -> Result<AccuracyReport> {
    let outcomes: Vec<Result<usize>> = samples
        .par_iter()
        .map(|s| net.predict_class(&s.input).map(|(c, _)| c))
        .collect();
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    let mut predictions = Vec::with_capacity(samples.len());
    let mut errors = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(p) => {
                labels.push(samples[i].label);
                preds.push(p);
                predictions.push(Some(p));
            }
            Err(e) => {
                predictions.push(None);
                errors.push(SampleError {
                    index: i,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(AccuracyReport {
        accuracy: ClassAccuracy::from_predictions(&labels, &preds, net.num_classes())?,
        predictions,
        errors,
    })
}
