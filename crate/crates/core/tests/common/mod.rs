//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use xai_triage::{Conv2d, Dense, Layer, Network, Pool, Tensor};

/// Every layer as an explicit affine map or an element-wise ReLU.
pub enum DenseOp {
    Affine { m: Vec<Vec<f64>>, b: Vec<f64> },
    Relu,
}

fn conv_matrix(c: &Conv2d, shape: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
    let (ic_n, h, w) = (shape[0], shape[1], shape[2]);
    let (kh, kw) = c.kernel();
    let (s, p) = (c.stride(), c.padding());
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (w + 2 * p - kw) / s + 1;
    let oc_n = c.out_channels();
    let mut m = vec![vec![0.0; ic_n * h * w]; oc_n * oh * ow];
    let mut b = vec![0.0; oc_n * oh * ow];
    for oc in 0..oc_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oc * oh + oy) * ow + ox;
                b[row] = c.bias().data()[oc];
                for ic in 0..ic_n {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                m[row][(ic * h + iy as usize) * w + ix as usize] +=
                                    c.weight(oc, ic, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    (m, b, vec![oc_n, oh, ow])
}

fn avgpool_matrix(pool: &Pool, shape: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let oh = (h - pool.window) / pool.stride + 1;
    let ow = (w - pool.window) / pool.stride + 1;
    let n = (pool.window * pool.window) as f64;
    let mut m = vec![vec![0.0; c * h * w]; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                for dy in 0..pool.window {
                    for dx in 0..pool.window {
                        let j = (ch * h + oy * pool.stride + dy) * w + ox * pool.stride + dx;
                        m[(ch * oh + oy) * ow + ox][j] = 1.0 / n;
                    }
                }
            }
        }
    }
    (m, vec![c, oh, ow])
}

/// Lowers `net` to dense operators. Max pooling has no affine form and is
/// rejected.
pub fn lower(net: &Network) -> Vec<DenseOp> {
    let mut shape = net.input_shape().to_vec();
    let mut ops = Vec::new();
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                let m = (0..d.outputs())
                    .map(|o| (0..d.inputs()).map(|i| d.weight(o, i)).collect())
                    .collect();
                ops.push(DenseOp::Affine {
                    m,
                    b: d.bias().data().to_vec(),
                });
                shape = vec![d.outputs()];
            }
            Layer::Conv2d(c) => {
                let (m, b, s) = conv_matrix(c, &shape);
                ops.push(DenseOp::Affine { m, b });
                shape = s;
            }
            Layer::AvgPool(p) => {
                let (m, s) = avgpool_matrix(p, &shape);
                let b = vec![0.0; m.len()];
                ops.push(DenseOp::Affine { m, b });
                shape = s;
            }
            Layer::Relu => ops.push(DenseOp::Relu),
            Layer::Flatten => shape = vec![shape.iter().product()],
            Layer::MaxPool(_) => panic!("max pooling has no dense form"),
        }
    }
    ops
}

/// Forward pass and basic-rule relevance computed with explicit matrices:
/// `R_j = sum_k a_j m_kj / (sum_j a_j m_kj + b_k) R_k`.
/// Returns the flat input relevance and the logits.
pub fn dense_lrp(net: &Network, x: &[f64], target: usize) -> (Vec<f64>, Vec<f64>) {
    let ops = lower(net);
    let mut acts = vec![x.to_vec()];
    for op in &ops {
        let a = acts.last().unwrap();
        let next = match op {
            DenseOp::Affine { m, b } => m
                .iter()
                .zip(b)
                .map(|(row, bk)| row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>() + bk)
                .collect(),
            DenseOp::Relu => a.iter().map(|v| v.max(0.0)).collect(),
        };
        acts.push(next);
    }
    let logits = acts.last().unwrap().clone();
    let mut r = vec![0.0; logits.len()];
    r[target] = logits[target];
    for (op, a) in ops.iter().zip(&acts).rev() {
        r = match op {
            DenseOp::Relu => a
                .iter()
                .zip(&r)
                .map(|(&v, &rk)| if v > 0.0 { rk } else { 0.0 })
                .collect(),
            DenseOp::Affine { m, b } => {
                let mut lower = vec![0.0; a.len()];
                for (k, (row, bk)) in m.iter().zip(b).enumerate() {
                    let z: f64 = row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>() + bk;
                    if r[k] == 0.0 {
                        continue;
                    }
                    for j in 0..a.len() {
                        lower[j] += a[j] * row[j] / z * r[k];
                    }
                }
                lower
            }
        };
    }
    (r, logits)
}

/// Smallest |z| over every affine unit, used to skip near-singular draws.
pub fn min_denominator(net: &Network, x: &[f64]) -> f64 {
    let ops = lower(net);
    let mut a = x.to_vec();
    let mut smallest = f64::INFINITY;
    for op in &ops {
        a = match op {
            DenseOp::Affine { m, b } => m
                .iter()
                .zip(b)
                .map(|(row, bk)| {
                    let z = row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + bk;
                    smallest = smallest.min(z.abs());
                    z
                })
                .collect(),
            DenseOp::Relu => a.iter().map(|v| v.max(0.0)).collect(),
        };
    }
    smallest
}

fn tensor(rng: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Bias-free network with non-negative weights, so every activation of a
/// positive input stays positive. Either an MLP or a small conv net; at most
/// four parametric layers and 64 units per layer.
pub fn positive_net(rng: &mut impl Rng) -> (Network, Tensor) {
    if rng.random_bool(0.5) {
        let depth = rng.random_range(1..=4);
        let mut widths = vec![rng.random_range(1..=64)];
        for _ in 0..depth {
            widths.push(rng.random_range(1..=64));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let scale = 2.0 / pair[0] as f64;
            let w = tensor(rng, vec![pair[1], pair[0]], 0.0, scale);
            layers.push(Layer::Dense(Dense::without_bias(w).unwrap()));
            if i + 2 < widths.len() {
                layers.push(Layer::Relu);
            }
        }
        let x = tensor(rng, vec![widths[0]], 0.01, 1.0);
        (Network::new(vec![widths[0]], layers).unwrap(), x)
    } else {
        let c_in = rng.random_range(1..=3);
        let c_mid = rng.random_range(1..=4);
        let side = rng.random_range(4..=8);
        let classes = rng.random_range(2..=5);
        let conv = Conv2d::new(
            tensor(rng, vec![c_mid, c_in, 3, 3], 0.0, 1.0),
            Tensor::zeros(vec![c_mid]),
            1,
            1,
        )
        .unwrap();
        let pool = if rng.random_bool(0.5) {
            Layer::MaxPool(Pool::new(2))
        } else {
            Layer::AvgPool(Pool::new(2))
        };
        let flat = c_mid * (side / 2) * (side / 2);
        let dense = Dense::without_bias(tensor(rng, vec![classes, flat], 0.0, 1.0)).unwrap();
        let net = Network::new(
            vec![c_in, side, side],
            vec![
                Layer::Conv2d(conv),
                Layer::Relu,
                pool,
                Layer::Flatten,
                Layer::Dense(dense),
            ],
        )
        .unwrap();
        let x = tensor(rng, vec![c_in, side, side], 0.01, 1.0);
        (net, x)
    }
}

/// Network with mixed-sign weights and biases and at most 20 neurons,
/// built only from layers that have a dense form.
pub fn small_signed_net(rng: &mut impl Rng) -> (Network, Tensor) {
    if rng.random_bool(0.5) {
        let i = rng.random_range(2..=6);
        let h = rng.random_range(2..=8);
        let o = rng.random_range(2..=4);
        let net = Network::new(
            vec![i],
            vec![
                Layer::Dense(
                    Dense::new(
                        tensor(rng, vec![h, i], -1.0, 1.0),
                        tensor(rng, vec![h], -0.3, 0.3),
                    )
                    .unwrap(),
                ),
                Layer::Relu,
                Layer::Dense(
                    Dense::new(
                        tensor(rng, vec![o, h], -1.0, 1.0),
                        tensor(rng, vec![o], -0.3, 0.3),
                    )
                    .unwrap(),
                ),
            ],
        )
        .unwrap();
        (net, tensor(rng, vec![i], -1.0, 1.0))
    } else {
        // conv to 3x3 (9 units), avgpool to 2x2, dense to 2..4
        let conv = Conv2d::new(
            tensor(rng, vec![1, 1, 2, 2], -1.0, 1.0),
            tensor(rng, vec![1], -0.2, 0.2),
            1,
            0,
        )
        .unwrap();
        let o = rng.random_range(2..=4);
        let net = Network::new(
            vec![1, 4, 4],
            vec![
                Layer::Conv2d(conv),
                Layer::Relu,
                Layer::AvgPool(Pool::with_stride(2, 1)),
                Layer::Flatten,
                Layer::Dense(
                    Dense::new(
                        tensor(rng, vec![o, 4], -1.0, 1.0),
                        tensor(rng, vec![o], -0.3, 0.3),
                    )
                    .unwrap(),
                ),
            ],
        )
        .unwrap();
        (net, tensor(rng, vec![1, 4, 4], 0.0, 1.0))
    }
}

/// Top-k intersection by sorting every pixel: descending value, ties by
/// ascending row-major index.
pub fn brute_tki(values: &[f64], mask: &[bool], k: usize) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx[..k].iter().filter(|&&i| mask[i]).count() as f64 / k as f64
}

/// Per-class accuracy by direct counting.
pub fn count_accuracy(labels: &[usize], preds: &[usize], classes: usize) -> Vec<Option<f64>> {
    (0..classes)
        .map(|c| {
            let n = labels.iter().filter(|&&y| y == c).count();
            let hit = labels
                .iter()
                .zip(preds)
                .filter(|(&y, &p)| y == c && p == c)
                .count();
            (n > 0).then(|| hit as f64 / n as f64)
        })
        .collect()
}
