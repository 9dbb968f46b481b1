//! Feed-forward layer stack with traced inference.
//!
//! A [`Network`] is an immutable, validated list of layers. Shapes are fixed at
//! construction: dense layers consume rank-1 tensors, convolution and pooling
//! layers consume `[channels, height, width]`. Weights are held at `f32`
//! precision (the storage precision of the model format) while every
//! computation runs in `f64`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weights: Tensor,
    bias: Tensor,
}

impl Dense {
    /// `weights` is `[out, in]`, `bias` is `[out]`.
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 {
            return Err(Error::InvalidNetwork(format!(
                "dense weights must be rank 2, got {ws:?}"
            )));
        }
        if bias.shape() != [ws[0]] {
            return Err(Error::InvalidNetwork(format!(
                "dense bias shape {:?} does not match {} outputs",
                bias.shape(),
                ws[0]
            )));
        }
        if !weights.is_finite() || !bias.is_finite() {
            return Err(Error::NonFinite("dense parameters"));
        }
        Ok(Self {
            weights: weights.to_f32_precision(),
            bias: bias.to_f32_precision(),
        })
    }

    /// Dense layer with zero bias.
    pub fn without_bias(weights: Tensor) -> Result<Self> {
        let out = weights.shape().first().copied().unwrap_or(0);
        Self::new(weights, Tensor::zeros(vec![out]))
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights.data()[out * self.inputs() + inp]
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.inputs();
        let w = self.weights.data();
        self.bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    weights: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// `weights` is `[out_channels, in_channels, kernel_h, kernel_w]`.
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 4 {
            return Err(Error::InvalidNetwork(format!(
                "conv2d weights must be rank 4, got {ws:?}"
            )));
        }
        if ws.contains(&0) {
            return Err(Error::InvalidNetwork(
                "conv2d weights have a zero dimension".into(),
            ));
        }
        if bias.shape() != [ws[0]] {
            return Err(Error::InvalidNetwork(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                bias.shape(),
                ws[0]
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidNetwork(
                "conv2d stride must be at least 1".into(),
            ));
        }
        if !weights.is_finite() || !bias.is_finite() {
            return Err(Error::NonFinite("conv2d parameters"));
        }
        Ok(Self {
            weights: weights.to_f32_precision(),
            bias: bias.to_f32_precision(),
            stride,
            padding,
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    #[inline]
    pub fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        let (kh, kw) = self.kernel();
        self.weights.data()[((oc * self.in_channels() + ic) * kh + ky) * kw + kx]
    }

    fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// Visits every in-bounds tap of output position `(oy, ox)` as
    /// `(input_y, input_x, ky, kx)`. Taps landing in the zero padding are skipped.
    pub(crate) fn for_each_tap(
        &self,
        oy: usize,
        ox: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize),
    ) {
        let (kh, kw) = self.kernel();
        for ky in 0..kh {
            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for kx in 0..kw {
                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                if ix < 0 || ix >= w as isize {
                    continue;
                }
                f(iy as usize, ix as usize, ky, kx);
            }
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let (oh, ow) = self.output_hw(h, w).expect("validated shape");
        let oc_n = self.out_channels();
        let xd = x.data();
        let mut out = vec![0.0; oc_n * oh * ow];
        for oc in 0..oc_n {
            let b = self.bias.data()[oc];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    self.for_each_tap(oy, ox, h, w, |iy, ix, ky, kx| {
                        for ic in 0..c {
                            acc += self.weight(oc, ic, ky, kx) * xd[(ic * h + iy) * w + ix];
                        }
                    });
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(vec![oc_n, oh, ow], out).expect("consistent conv output")
    }
}

/// Pooling window. The stride defaults to the window size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub window: usize,
    pub stride: usize,
}

impl Pool {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            stride: window,
        }
    }

    pub fn with_stride(window: usize, stride: usize) -> Self {
        Self { window, stride }
    }

    pub(crate) fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.window == 0 || self.stride == 0 || h < self.window || w < self.window {
            return None;
        }
        Some((
            (h - self.window) / self.stride + 1,
            (w - self.window) / self.stride + 1,
        ))
    }

    /// Flat input indices of channel `ch` covered by output position `(oy, ox)`.
    pub(crate) fn window_indices(
        &self,
        ch: usize,
        oy: usize,
        ox: usize,
        h: usize,
        w: usize,
    ) -> impl Iterator<Item = usize> + '_ {
        let y0 = oy * self.stride;
        let x0 = ox * self.stride;
        (0..self.window)
            .flat_map(move |dy| (0..self.window).map(move |dx| (ch * h + y0 + dy) * w + x0 + dx))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool(Pool),
    AvgPool(Pool),
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::AvgPool(_) => "avgpool",
            Layer::Flatten => "flatten",
        }
    }

    /// Output shape for `input`, or a description of why the input is rejected.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(format!("dense expects [{}], got {input:?}", d.inputs()));
                }
                Ok(vec![d.outputs()])
            }
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[0] != c.in_channels() {
                    return Err(format!(
                        "conv2d expects [{}, h, w], got {input:?}",
                        c.in_channels()
                    ));
                }
                let (oh, ow) = c
                    .output_hw(input[1], input[2])
                    .ok_or_else(|| format!("conv2d kernel larger than padded input {input:?}"))?;
                Ok(vec![c.out_channels(), oh, ow])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool(p) | Layer::AvgPool(p) => {
                if input.len() != 3 {
                    return Err(format!("pooling expects [c, h, w], got {input:?}"));
                }
                let (oh, ow) = p
                    .output_hw(input[1], input[2])
                    .ok_or_else(|| format!("pool window {} invalid for {input:?}", p.window))?;
                Ok(vec![input[0], oh, ow])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Applies the layer to an input whose shape has already been checked.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense(d) => Tensor::vector(d.forward(x.data())),
            Layer::Conv2d(c) => c.forward(x),
            Layer::Relu => x.map(|v| v.max(0.0)),
            Layer::MaxPool(p) | Layer::AvgPool(p) => {
                let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
                let (oh, ow) = p.output_hw(h, w).expect("validated shape");
                let xd = x.data();
                let n = (p.window * p.window) as f64;
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let vals = p.window_indices(ch, oy, ox, h, w).map(|i| xd[i]);
                            out.push(match self {
                                Layer::MaxPool(_) => vals.fold(f64::NEG_INFINITY, f64::max),
                                _ => vals.sum::<f64>() / n,
                            });
                        }
                    }
                }
                Tensor::new(vec![c, oh, ow], out).expect("consistent pool output")
            }
            Layer::Flatten => Tensor::vector(x.data().to_vec()),
        }
    }
}

/// Per-layer inputs recorded during a forward pass; the last entry holds the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn new(activations: Vec<Tensor>) -> Self {
        Self { activations }
    }

    /// Input of layer `i`; `i == layers` yields the logits.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.activations[i]
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace is never empty")
    }

    /// Activation feeding the final layer.
    pub fn penultimate(&self) -> &Tensor {
        &self.activations[self.activations.len() - 2]
    }

    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Input shape of every layer plus the output shape.
    shapes: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "input shape {input_shape:?} must be non-empty with positive dimensions"
            )));
        }
        let Some(Layer::Dense(head)) = layers.last() else {
            return Err(Error::InvalidNetwork("final layer must be dense".into()));
        };
        if head.outputs() == 0 {
            return Err(Error::InvalidNetwork("network has zero classes".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|message| Error::Shape { layer: i, message })?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Input shape of layer `i` (`i == layers().len()` gives the logit shape).
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn num_classes(&self) -> usize {
        self.head().outputs()
    }

    pub fn head(&self) -> &Dense {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("validated at construction"),
        }
    }

    /// Width of the activation feeding the final dense layer.
    pub fn feature_width(&self) -> usize {
        self.head().inputs()
    }

    /// Returns a copy with the final dense layer swapped for `head`.
    pub(crate) fn with_head(&self, head: Dense) -> Result<Self> {
        let mut layers = self.layers.clone();
        *layers.last_mut().unwrap() = Layer::Dense(head);
        Self::new(self.input_shape.clone(), layers)
    }

    pub fn forward(
        &self,
        input: &Tensor,
        trace: bool,
    ) -> Result<(Tensor, Option<ActivationTrace>)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "network input expects {:?}, got {:?}",
                    self.input_shape,
                    input.shape()
                ),
            });
        }
        let mut activations = trace.then(|| Vec::with_capacity(self.layers.len() + 1));
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.apply(&x);
            if let Some(acts) = activations.as_mut() {
                acts.push(x);
            }
            x = y;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("logits"));
        }
        let trace = activations.map(|mut acts| {
            acts.push(x.clone());
            ActivationTrace::new(acts)
        });
        Ok((x, trace))
    }

    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.forward(input, false).map(|(l, _)| l)
    }

    pub fn trace(&self, input: &Tensor) -> Result<ActivationTrace> {
        self.forward(input, true)
            .map(|(_, t)| t.expect("trace requested"))
    }

    /// Argmax class (lowest index on ties) together with the logits.
    pub fn predict_class(&self, input: &Tensor) -> Result<(usize, Tensor)> {
        let logits = self.logits(input)?;
        let label = logits.argmax().expect("at least one class");
        Ok((label, logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dense() -> Layer {
        Layer::Dense(
            Dense::without_bias(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
                .unwrap(),
        )
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let net = Network::new(vec![2], vec![identity_dense()]).unwrap();
        let logits = net.logits(&Tensor::vector(vec![2.0, 3.0])).unwrap();
        assert_eq!(logits.data(), &[2.0, 3.0]);
    }

    #[test]
    fn relu_before_dense_clamps_negatives() {
        let net = Network::new(vec![2], vec![Layer::Relu, identity_dense()]).unwrap();
        let logits = net.logits(&Tensor::vector(vec![-1.0, 5.0])).unwrap();
        assert_eq!(logits.data(), &[0.0, 5.0]);
    }

    #[test]
    fn box_kernel_on_constant_image() {
        let conv = Conv2d::new(
            Tensor::new(vec![1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap(),
            Tensor::zeros(vec![1]),
            1,
            0,
        )
        .unwrap();
        let out = Layer::Conv2d(conv).apply(&Tensor::new(vec![1, 5, 5], vec![9.0; 25]).unwrap());
        assert_eq!(out.shape(), &[1, 3, 3]);
        // 1/9 rounds to f32, so compare against the stored weight.
        let w = (1.0f64 / 9.0) as f32 as f64;
        for v in out.data() {
            assert!((v - 81.0 * w).abs() < 1e-12 && (v - 9.0).abs() < 1e-6);
        }
    }

    #[test]
    fn input_mismatch_names_layer_zero() {
        let net = Network::new(vec![2], vec![identity_dense()]).unwrap();
        let err = net
            .logits(&Tensor::vector(vec![1.0, 2.0, 3.0]))
            .unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 0, .. }));
    }

    #[test]
    fn incompatible_layers_name_offending_index() {
        let err = Network::new(vec![3], vec![Layer::Relu, identity_dense()]).unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 1, .. }), "{err}");
    }

    #[test]
    fn final_layer_must_be_dense() {
        assert!(matches!(
            Network::new(vec![2], vec![identity_dense(), Layer::Relu]),
            Err(Error::InvalidNetwork(_))
        ));
    }

    #[test]
    fn predict_class_uses_forward_then_argmax() {
        let w = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let net =
            Network::new(vec![3], vec![Layer::Dense(Dense::without_bias(w).unwrap())]).unwrap();
        let (label, logits) = net
            .predict_class(&Tensor::vector(vec![3.0, 1.0, 2.0]))
            .unwrap();
        assert_eq!(label, 0);
        assert_eq!(logits.data(), &[3.0, 1.0, 2.0]);
    }

    #[test]
    fn maxpool_and_avgpool() {
        let x = Tensor::new(vec![1, 2, 2], vec![5.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(Layer::MaxPool(Pool::new(2)).apply(&x).data(), &[5.0]);
        assert_eq!(Layer::AvgPool(Pool::new(2)).apply(&x).data(), &[2.0]);
    }

    #[test]
    fn trace_has_one_entry_per_layer_plus_logits() {
        let net = Network::new(vec![2], vec![Layer::Relu, identity_dense()]).unwrap();
        let x = Tensor::vector(vec![-1.0, 4.0]);
        let trace = net.trace(&x).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.layer_input(0), &x);
        assert_eq!(trace.logits().data(), &[0.0, 4.0]);
    }
}
