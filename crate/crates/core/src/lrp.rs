//! Layer-wise relevance propagation.
//!
//! Relevance starts at the explained logit and is pushed backward through the
//! traced network. Every linear layer (dense or conv) redistributes the
//! relevance `R_k` of each output in proportion to the contributions `z_jk` of
//! its inputs:
//!
//! ```text
//! R_j = sum_k  z_jk / (sum_j z_jk) * R_k
//! ```
//!
//! The rules only differ in how `z_jk` and the denominator are formed. The
//! bias term participates in the denominator but its share is not handed to
//! any input, so relevance conservation is exact only for bias-free layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ActivationTrace, Conv2d, Dense, Layer, Network, Pool};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Plain proportional redistribution.
    Basic,
    /// Stabilized denominator `z + eps * sign(z)` with
    /// `eps = epsilon + std_scale * std(|z|)` over the layer's outputs.
    Epsilon { epsilon: f64, std_scale: f64 },
    /// Positive contributions boosted by `gamma`.
    Gamma { gamma: f64 },
    /// Bounded-input rule for the layer that reads the image.
    ZBox { low: f64, high: f64 },
}

impl Rule {
    pub fn epsilon(epsilon: f64) -> Self {
        Rule::Epsilon {
            epsilon,
            std_scale: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Rule::Basic => true,
            Rule::Epsilon { epsilon, std_scale } => epsilon >= 0.0 && std_scale >= 0.0,
            Rule::Gamma { gamma } => gamma >= 0.0,
            Rule::ZBox { low, high } => low.is_finite() && high.is_finite() && low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRules(format!(
                "parameters out of range in {self:?}"
            )))
        }
    }
}

/// Rule assignment per layer kind. `input_layer` applies to the first dense or
/// conv layer and is the only slot that accepts [`Rule::ZBox`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub input_layer: Rule,
    pub conv: Rule,
    pub dense: Rule,
}

impl RuleConfig {
    /// Every layer uses the unstabilized basic rule.
    pub fn basic() -> Self {
        Self {
            input_layer: Rule::Basic,
            conv: Rule::Basic,
            dense: Rule::Basic,
        }
    }

    /// zB on the input layer with the given pixel range, gamma 0.25 on the
    /// remaining conv layers, epsilon on dense layers.
    pub fn composite(low: f64, high: f64) -> Self {
        Self {
            input_layer: Rule::ZBox { low, high },
            conv: Rule::Gamma { gamma: 0.25 },
            dense: Rule::Epsilon {
                epsilon: 1e-6,
                std_scale: 0.25,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (slot, rule) in [("conv", self.conv), ("dense", self.dense)] {
            if matches!(rule, Rule::ZBox { .. }) {
                return Err(Error::InvalidRules(format!(
                    "zB is only valid on the input layer, not the {slot} slot"
                )));
            }
        }
        self.input_layer.validate()?;
        self.conv.validate()?;
        self.dense.validate()
    }

    fn for_layer(&self, index: usize, first_param: Option<usize>, layer: &Layer) -> Rule {
        if Some(index) == first_param {
            return self.input_layer;
        }
        match layer {
            Layer::Conv2d(_) => self.conv,
            _ => self.dense,
        }
    }
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self::composite(0.0, 1.0)
    }
}

/// Pixel-wise relevance field aligned with the explained image.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "heatmap {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("heatmap"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Collapses an input-shaped relevance tensor: `[n]` becomes `1 x n`,
    /// `[h, w]` stays, `[c, h, w]` is summed over channels.
    pub fn from_input_relevance(r: &Tensor) -> Result<Self> {
        match *r.shape() {
            [n] => Self::new(1, n, r.data().to_vec()),
            [h, w] => Self::new(h, w, r.data().to_vec()),
            [c, h, w] => {
                let plane = h * w;
                let mut values = vec![0.0; plane];
                for ch in 0..c {
                    for (v, x) in values
                        .iter_mut()
                        .zip(&r.data()[ch * plane..(ch + 1) * plane])
                    {
                        *v += x;
                    }
                }
                Self::new(h, w, values)
            }
            ref other => Err(Error::DimensionMismatch(format!(
                "cannot map input shape {other:?} to a heatmap"
            ))),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Linear map seen as a set of output units, each with its taps `(input, weight)`.
trait LinearMap {
    fn outputs(&self) -> usize;
    fn bias(&self, k: usize) -> f64;
    fn for_each_tap(&self, k: usize, f: impl FnMut(usize, f64));
}

impl LinearMap for Dense {
    fn outputs(&self) -> usize {
        Dense::outputs(self)
    }

    fn bias(&self, k: usize) -> f64 {
        Dense::bias(self).data()[k]
    }

    fn for_each_tap(&self, k: usize, mut f: impl FnMut(usize, f64)) {
        let n = self.inputs();
        for (j, &w) in self.weights().data()[k * n..(k + 1) * n].iter().enumerate() {
            f(j, w);
        }
    }
}

struct ConvView<'a> {
    conv: &'a Conv2d,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl LinearMap for ConvView<'_> {
    fn outputs(&self) -> usize {
        self.conv.out_channels() * self.out_h * self.out_w
    }

    fn bias(&self, k: usize) -> f64 {
        self.conv.bias().data()[k / (self.out_h * self.out_w)]
    }

    fn for_each_tap(&self, k: usize, mut f: impl FnMut(usize, f64)) {
        let plane = self.out_h * self.out_w;
        let oc = k / plane;
        let (oy, ox) = ((k % plane) / self.out_w, k % self.out_w);
        let (h, w) = (self.in_h, self.in_w);
        let channels = self.conv.in_channels();
        self.conv.for_each_tap(oy, ox, h, w, |iy, ix, ky, kx| {
            for ic in 0..channels {
                f((ic * h + iy) * w + ix, self.conv.weight(oc, ic, ky, kx));
            }
        });
    }
}

/// Degenerate output unit index.
struct Degenerate(usize);

fn propagate_linear<L: LinearMap>(
    layer: &L,
    input: &[f64],
    upper: &[f64],
    rule: Rule,
) -> std::result::Result<Vec<f64>, Degenerate> {
    let contribution = |a: f64, w: f64| -> f64 {
        match rule {
            Rule::Basic | Rule::Epsilon { .. } => a * w,
            Rule::Gamma { gamma } => {
                let z = a * w;
                z + gamma * z.max(0.0)
            }
            Rule::ZBox { low, high } => a * w - low * w.max(0.0) - high * w.min(0.0),
        }
    };
    let bias_term = |b: f64| -> f64 {
        match rule {
            Rule::Gamma { gamma } => b + gamma * b.max(0.0),
            _ => b,
        }
    };

    let n_out = layer.outputs();
    let mut denominators: Vec<f64> = (0..n_out)
        .map(|k| {
            let mut z = bias_term(layer.bias(k));
            layer.for_each_tap(k, |j, w| z += contribution(input[j], w));
            z
        })
        .collect();

    if let Rule::Epsilon { epsilon, std_scale } = rule {
        let eps = epsilon + std_scale * std_of_magnitudes(&denominators);
        for z in &mut denominators {
            *z += if *z >= 0.0 { eps } else { -eps };
        }
    }

    let mut lower = vec![0.0; input.len()];
    for (k, (&r, &z)) in upper.iter().zip(&denominators).enumerate() {
        if r == 0.0 {
            continue;
        }
        if z == 0.0 {
            return Err(Degenerate(k));
        }
        let s = r / z;
        layer.for_each_tap(k, |j, w| lower[j] += contribution(input[j], w) * s);
    }
    Ok(lower)
}

fn std_of_magnitudes(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.abs()).sum::<f64>() / n;
    (values.iter().map(|v| (v.abs() - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn check_pair(
    expected_in: &[usize],
    input: &Tensor,
    expected_out: &[usize],
    upper: &Tensor,
) -> Result<()> {
    if input.shape() != expected_in || upper.shape() != expected_out {
        return Err(Error::TraceMismatch(format!(
            "layer expects input {expected_in:?} / relevance {expected_out:?}, got {:?} / {:?}",
            input.shape(),
            upper.shape()
        )));
    }
    Ok(())
}

fn degenerate(layer: usize) -> impl Fn(Degenerate) -> Error {
    move |Degenerate(unit)| Error::DegenerateDenominator { layer, unit }
}

/// Relevance of a dense layer's inputs. Degenerate-denominator errors report layer 0.
pub fn propagate_dense(
    layer: &Dense,
    input: &Tensor,
    upper: &Tensor,
    rule: Rule,
) -> Result<Tensor> {
    check_pair(&[layer.inputs()], input, &[layer.outputs()], upper)?;
    let lower = propagate_linear(layer, input.data(), upper.data(), rule).map_err(degenerate(0))?;
    Tensor::new(input.shape().to_vec(), lower)
}

pub fn propagate_conv(
    layer: &Conv2d,
    input: &Tensor,
    upper: &Tensor,
    rule: Rule,
) -> Result<Tensor> {
    let conv = Layer::Conv2d(layer.clone());
    let out_shape = conv
        .output_shape(input.shape())
        .map_err(Error::TraceMismatch)?;
    check_pair(input.shape(), input, &out_shape, upper)?;
    let view = ConvView {
        conv: layer,
        in_h: input.shape()[1],
        in_w: input.shape()[2],
        out_h: out_shape[1],
        out_w: out_shape[2],
    };
    let lower = propagate_linear(&view, input.data(), upper.data(), rule).map_err(degenerate(0))?;
    Tensor::new(input.shape().to_vec(), lower)
}

/// Max pooling routes each window's relevance to its maximum (ties share
/// equally); average pooling splits it in proportion to the inputs.
pub fn propagate_pool(layer: &Layer, input: &Tensor, upper: &Tensor) -> Result<Tensor> {
    let (pool, is_max): (&Pool, bool) = match layer {
        Layer::MaxPool(p) => (p, true),
        Layer::AvgPool(p) => (p, false),
        other => {
            return Err(Error::TraceMismatch(format!(
                "propagate_pool called on {} layer",
                other.kind()
            )))
        }
    };
    let out_shape = layer
        .output_shape(input.shape())
        .map_err(Error::TraceMismatch)?;
    check_pair(input.shape(), input, &out_shape, upper)?;
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let mut lower = vec![0.0; x.len()];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let k = (ch * oh + oy) * ow + ox;
                let r = upper.data()[k];
                if r == 0.0 {
                    continue;
                }
                let idx = pool.window_indices(ch, oy, ox, h, w);
                if is_max {
                    let m = pool
                        .window_indices(ch, oy, ox, h, w)
                        .map(|i| x[i])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let winners: Vec<usize> = idx.filter(|&i| x[i] == m).collect();
                    let share = r / winners.len() as f64;
                    for i in winners {
                        lower[i] += share;
                    }
                } else {
                    let total: f64 = pool.window_indices(ch, oy, ox, h, w).map(|i| x[i]).sum();
                    if total == 0.0 {
                        return Err(Error::DegenerateDenominator { layer: 0, unit: k });
                    }
                    for i in idx {
                        lower[i] += x[i] / total * r;
                    }
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), lower)
}

/// ReLU gating: relevance survives only on units whose input was positive.
pub fn propagate_relu(input: &Tensor, upper: &Tensor) -> Result<Tensor> {
    check_pair(input.shape(), input, input.shape(), upper)?;
    let lower = input
        .data()
        .iter()
        .zip(upper.data())
        .map(|(&a, &r)| if a > 0.0 { r } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), lower)
}

/// Relevance of layer `index`'s input given the relevance of its output.
pub fn propagate_layer(
    net: &Network,
    index: usize,
    input: &Tensor,
    upper: &Tensor,
    rule: Rule,
) -> Result<Tensor> {
    let relocate = |e: Error| match e {
        Error::DegenerateDenominator { unit, .. } => {
            Error::DegenerateDenominator { layer: index, unit }
        }
        other => other,
    };
    match &net.layers()[index] {
        Layer::Dense(d) => propagate_dense(d, input, upper, rule),
        Layer::Conv2d(c) => propagate_conv(c, input, upper, rule),
        Layer::Relu => propagate_relu(input, upper),
        pool @ (Layer::MaxPool(_) | Layer::AvgPool(_)) => propagate_pool(pool, input, upper),
        Layer::Flatten => upper.clone().reshape(input.shape().to_vec()),
    }
    .map_err(relocate)
}

fn check_trace(net: &Network, trace: &ActivationTrace) -> Result<()> {
    let n = net.layers().len();
    if trace.len() != n + 1 {
        return Err(Error::TraceMismatch(format!(
            "trace has {} activations, network needs {}",
            trace.len(),
            n + 1
        )));
    }
    for i in 0..=n {
        if trace.layer_input(i).shape() != net.shape_at(i) {
            return Err(Error::TraceMismatch(format!(
                "activation {i} has shape {:?}, expected {:?}",
                trace.layer_input(i).shape(),
                net.shape_at(i)
            )));
        }
    }
    Ok(())
}

/// Relevance of every input element (same shape as the network input) for
/// `target_class`, seeded with that class's logit.
pub fn input_relevance(
    net: &Network,
    trace: &ActivationTrace,
    target_class: usize,
    rules: &RuleConfig,
) -> Result<Tensor> {
    let num_classes = net.num_classes();
    if target_class >= num_classes {
        return Err(Error::ClassOutOfRange {
            class: target_class,
            num_classes,
        });
    }
    let mut seed = Tensor::zeros(vec![num_classes]);
    seed.data_mut()[target_class] = trace
        .logits()
        .data()
        .get(target_class)
        .copied()
        .unwrap_or(0.0);
    propagate_from(net, trace, seed, rules)
}

/// Backward pass from an arbitrary output relevance vector.
pub fn propagate_from(
    net: &Network,
    trace: &ActivationTrace,
    output_relevance: Tensor,
    rules: &RuleConfig,
) -> Result<Tensor> {
    rules.validate()?;
    check_trace(net, trace)?;
    if output_relevance.shape() != net.shape_at(net.layers().len()) {
        return Err(Error::TraceMismatch(format!(
            "output relevance shape {:?} does not match logits {:?}",
            output_relevance.shape(),
            net.shape_at(net.layers().len())
        )));
    }
    let first_param = net
        .layers()
        .iter()
        .position(|l| matches!(l, Layer::Dense(_) | Layer::Conv2d(_)));
    let mut r = output_relevance;
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let rule = rules.for_layer(i, first_param, layer);
        r = propagate_layer(net, i, trace.layer_input(i), &r, rule)?;
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("input relevance"));
    }
    Ok(r)
}

/// Pixel-wise heatmap for `target_class`; multi-channel relevance is summed per pixel.
pub fn relevance(
    net: &Network,
    trace: &ActivationTrace,
    target_class: usize,
    rules: &RuleConfig,
) -> Result<Heatmap> {
    Heatmap::from_input_relevance(&input_relevance(net, trace, target_class, rules)?)
}
