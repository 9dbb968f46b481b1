//! Model file format.
//!
//! A text header describing the layer stack, terminated by a `weights <n>`
//! line, followed by exactly `n` little-endian `f32` values: for each
//! parametric layer in declaration order, its weights (row-major) then its
//! bias.
//!
//! ```text
//! xai-triage-model 1
//! input 3 24 24
//! layer conv2d out=6 in=3 kh=3 kw=3 stride=1 padding=1
//! layer relu
//! layer maxpool window=2 stride=2
//! layer flatten
//! layer dense out=3 in=864
//! weights 2763
//! <binary>
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Conv2d, Dense, Layer, Network, Pool};
use crate::tensor::Tensor;

const MAGIC: &str = "xai-triage-model 1";

pub fn save_model<W: Write>(net: &Network, mut sink: W) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str("input");
    for d in net.input_shape() {
        header.push_str(&format!(" {d}"));
    }
    header.push('\n');
    let mut floats: Vec<f64> = Vec::new();
    for layer in net.layers() {
        let line = match layer {
            Layer::Dense(d) => {
                floats.extend_from_slice(d.weights().data());
                floats.extend_from_slice(d.bias().data());
                format!("dense out={} in={}", d.outputs(), d.inputs())
            }
            Layer::Conv2d(c) => {
                floats.extend_from_slice(c.weights().data());
                floats.extend_from_slice(c.bias().data());
                let (kh, kw) = c.kernel();
                format!(
                    "conv2d out={} in={} kh={kh} kw={kw} stride={} padding={}",
                    c.out_channels(),
                    c.in_channels(),
                    c.stride(),
                    c.padding()
                )
            }
            Layer::Relu => "relu".to_string(),
            Layer::MaxPool(p) => format!("maxpool window={} stride={}", p.window, p.stride),
            Layer::AvgPool(p) => format!("avgpool window={} stride={}", p.window, p.stride),
            Layer::Flatten => "flatten".to_string(),
        };
        header.push_str("layer ");
        header.push_str(&line);
        header.push('\n');
    }
    header.push_str(&format!("weights {}\n", floats.len()));

    let mut bytes = header.into_bytes();
    bytes.reserve(floats.len() * 4);
    for v in floats {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    sink.write_all(&bytes)
        .map_err(|e| Error::io("<model sink>", e))
}

pub fn load_model<R: Read>(mut source: R) -> Result<Network> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<model source>", e))?;
    parse_model(&bytes)
}

pub fn save_model_file(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    save_model(net, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_model(&bytes)
}

/// Writes values as a bare little-endian `f32` block, the weight encoding of
/// the model format.
pub fn write_float_block<W: Write>(values: &[f64], mut sink: W) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    sink.write_all(&bytes)
}

pub fn read_float_block(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::ModelParse {
            offset: bytes.len() - bytes.len() % 4,
            message: "float block length is not a multiple of 4".into(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

enum Spec {
    Dense {
        out: usize,
        inp: usize,
    },
    Conv {
        out: usize,
        inp: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool(Pool),
    AvgPool(Pool),
    Flatten,
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Next header line and the byte offset where it starts.
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rel = self.bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(self.bytes.len(), "unterminated header line"))?;
        let line = std::str::from_utf8(&self.bytes[start..start + rel])
            .map_err(|_| parse_err(start, "header line is not UTF-8"))?;
        self.pos = start + rel + 1;
        Ok((start, line))
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::ModelParse {
        offset,
        message: message.into(),
    }
}

fn parse_usize(offset: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(offset, format!("expected an unsigned integer, got {s:?}")))
}

fn parse_layer(offset: usize, rest: &str) -> Result<Spec> {
    let mut parts = rest.split_whitespace();
    let kind = parts
        .next()
        .ok_or_else(|| parse_err(offset, "missing layer kind"))?;
    let mut fields = std::collections::BTreeMap::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| parse_err(offset, format!("malformed field {p:?}")))?;
        if fields.insert(k, parse_usize(offset, v)?).is_some() {
            return Err(parse_err(offset, format!("duplicate field {k:?}")));
        }
    }
    let take = |fields: &mut std::collections::BTreeMap<&str, usize>, key: &str| {
        fields
            .remove(key)
            .ok_or_else(|| parse_err(offset, format!("{kind} layer missing field {key:?}")))
    };
    let spec = match kind {
        "dense" => Spec::Dense {
            out: take(&mut fields, "out")?,
            inp: take(&mut fields, "in")?,
        },
        "conv2d" => Spec::Conv {
            out: take(&mut fields, "out")?,
            inp: take(&mut fields, "in")?,
            kh: take(&mut fields, "kh")?,
            kw: take(&mut fields, "kw")?,
            stride: take(&mut fields, "stride")?,
            padding: take(&mut fields, "padding")?,
        },
        "relu" => Spec::Relu,
        "flatten" => Spec::Flatten,
        "maxpool" | "avgpool" => {
            let pool =
                Pool::with_stride(take(&mut fields, "window")?, take(&mut fields, "stride")?);
            if kind == "maxpool" {
                Spec::MaxPool(pool)
            } else {
                Spec::AvgPool(pool)
            }
        }
        other => return Err(parse_err(offset, format!("unknown layer kind {other:?}"))),
    };
    if let Some(k) = fields.keys().next() {
        return Err(parse_err(
            offset,
            format!("unexpected field {k:?} for {kind}"),
        ));
    }
    Ok(spec)
}

fn parse_model(bytes: &[u8]) -> Result<Network> {
    let mut lines = Lines { bytes, pos: 0 };
    let (off, magic) = lines.next_line()?;
    if magic != MAGIC {
        return Err(parse_err(off, format!("expected {MAGIC:?}")));
    }
    let (off, input) = lines.next_line()?;
    let dims = input
        .strip_prefix("input ")
        .ok_or_else(|| parse_err(off, "expected input line"))?;
    let input_shape = dims
        .split_whitespace()
        .map(|d| parse_usize(off, d))
        .collect::<Result<Vec<_>>>()?;

    let mut specs = Vec::new();
    let declared = loop {
        let (off, line) = lines.next_line()?;
        if let Some(rest) = line.strip_prefix("layer ") {
            specs.push((off, parse_layer(off, rest)?));
        } else if let Some(n) = line.strip_prefix("weights ") {
            break (off, parse_usize(off, n.trim())?);
        } else {
            return Err(parse_err(off, format!("unexpected header line {line:?}")));
        }
    };

    let needed: usize = specs
        .iter()
        .map(|(_, s)| match *s {
            Spec::Dense { out, inp } => out * inp + out,
            Spec::Conv {
                out, inp, kh, kw, ..
            } => out * inp * kh * kw + out,
            _ => 0,
        })
        .sum();
    if needed != declared.1 {
        return Err(parse_err(
            declared.0,
            format!(
                "layers need {needed} weights, header declares {}",
                declared.1
            ),
        ));
    }
    let body = &bytes[lines.pos..];
    if body.len() < needed * 4 {
        return Err(parse_err(
            bytes.len(),
            format!(
                "truncated weight block: {} of {} bytes",
                body.len(),
                needed * 4
            ),
        ));
    }
    if body.len() > needed * 4 {
        return Err(parse_err(
            lines.pos + needed * 4,
            "trailing bytes after weight block",
        ));
    }
    let values = read_float_block(body)?;
    let mut cursor = values.into_iter();
    let mut take = |n: usize| -> Vec<f64> { cursor.by_ref().take(n).collect() };

    let mut layers = Vec::with_capacity(specs.len());
    for (off, spec) in specs {
        let layer = match spec {
            Spec::Dense { out, inp } => {
                let w = Tensor::new(vec![out, inp], take(out * inp))?;
                let b = Tensor::new(vec![out], take(out))?;
                Layer::Dense(Dense::new(w, b).map_err(|e| parse_err(off, e.to_string()))?)
            }
            Spec::Conv {
                out,
                inp,
                kh,
                kw,
                stride,
                padding,
            } => {
                let w = Tensor::new(vec![out, inp, kh, kw], take(out * inp * kh * kw))?;
                let b = Tensor::new(vec![out], take(out))?;
                Layer::Conv2d(
                    Conv2d::new(w, b, stride, padding)
                        .map_err(|e| parse_err(off, e.to_string()))?,
                )
            }
            Spec::Relu => Layer::Relu,
            Spec::MaxPool(p) => Layer::MaxPool(p),
            Spec::AvgPool(p) => Layer::AvgPool(p),
            Spec::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    Network::new(input_shape, layers)
}
