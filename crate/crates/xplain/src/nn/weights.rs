//! Portable model weights: a short text header followed by a raw
//! little-endian f32 payload.
//!
//! ```text
//! XBW 1 <layers> <channels> <height> <width> <classes> <mean...> <std...>
//! Conv2D <out> <in> <kh> <kw> <stride> <padding>
//! Dense <out> <in>
//! ReLU | MaxPool2D <w> <s> | AvgPool2D <w> <s> | Flatten | GlobalAvgPool
//! <payload: weights then bias per parameterized layer, declaration order>
//! ```
//!
//! Header floats print in shortest round-trip form, the payload keeps exact
//! bits, so save then load reproduces the model bit for bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{InputSpec, Layer, ModelGraph, Normalization};

const MAGIC: &str = "XBW";
const VERSION: usize = 1;

fn header_line(model: &ModelGraph) -> String {
    let mut parts = vec![
        MAGIC.to_string(),
        VERSION.to_string(),
        model.layers.len().to_string(),
        model.input.channels.to_string(),
        model.input.height.to_string(),
        model.input.width.to_string(),
        model.num_classes.to_string(),
    ];
    for m in &model.normalization.mean {
        parts.push(m.to_string());
    }
    for s in &model.normalization.std {
        parts.push(s.to_string());
    }
    parts.join(" ")
}

fn layer_line(layer: &Layer) -> String {
    match layer {
        Layer::Conv2D {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            ..
        } => format!("Conv2D {out_channels} {in_channels} {kernel_h} {kernel_w} {stride} {padding}"),
        Layer::Dense {
            out_features,
            in_features,
            ..
        } => format!("Dense {out_features} {in_features}"),
        Layer::ReLU => "ReLU".to_string(),
        Layer::MaxPool2D { window, stride } => format!("MaxPool2D {window} {stride}"),
        Layer::AvgPool2D { window, stride } => format!("AvgPool2D {window} {stride}"),
        Layer::Flatten => "Flatten".to_string(),
        Layer::GlobalAvgPool => "GlobalAvgPool".to_string(),
    }
}

/// Serialize a validated model to bytes.
pub fn model_to_bytes(model: &ModelGraph) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(header_line(model).as_bytes());
    out.push(b'\n');
    for layer in &model.layers {
        out.extend_from_slice(layer_line(layer).as_bytes());
        out.push(b'\n');
    }
    for layer in &model.layers {
        if let Layer::Conv2D { weights, bias, .. } | Layer::Dense { weights, bias, .. } = layer {
            for v in weights.iter().chain(bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_model(model: &ModelGraph, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

struct Tokens<'a> {
    line: usize,
    parts: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        Tokens {
            line,
            parts: text.split_whitespace(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.parts
            .next()
            .ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| self.err(format!("invalid {what} '{tok}'")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| self.err(format!("invalid {what} '{tok}'")))
    }

    fn finish(mut self) -> Result<()> {
        match self.parts.next() {
            Some(tok) => Err(self.err(format!("unexpected token '{tok}'"))),
            None => Ok(()),
        }
    }
}

/// Split off the next header line. The payload is binary, so this only ever
/// runs over the known number of text lines.
fn take_line<'a>(bytes: &'a [u8], pos: &mut usize, line: usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::ModelFormat {
            line,
            message: "unterminated header line".into(),
        })?;
    let text = std::str::from_utf8(&rest[..end]).map_err(|_| Error::ModelFormat {
        line,
        message: "header is not utf-8".into(),
    })?;
    *pos += end + 1;
    Ok(text)
}

/// Parse a model from bytes, validating it before returning.
pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    let mut pos = 0;
    let mut tok = Tokens::new(1, take_line(bytes, &mut pos, 1)?);
    let magic = tok.next("magic")?;
    if magic != MAGIC {
        return Err(tok.err(format!("bad magic '{magic}'")));
    }
    let version = tok.usize("version")?;
    if version != VERSION {
        return Err(tok.err(format!("unsupported version {version}")));
    }
    let num_layers = tok.usize("layer count")?;
    let channels = tok.usize("channels")?;
    let height = tok.usize("height")?;
    let width = tok.usize("width")?;
    let num_classes = tok.usize("class count")?;
    let mut mean = Vec::with_capacity(channels);
    for _ in 0..channels {
        mean.push(tok.f32("mean")?);
    }
    let mut std = Vec::with_capacity(channels);
    for _ in 0..channels {
        std.push(tok.f32("std")?);
    }
    tok.finish()?;

    let mut shapes = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let line = i + 2;
        let mut tok = Tokens::new(line, take_line(bytes, &mut pos, line)?);
        let kind = tok.next("layer kind")?;
        let layer = match kind {
            "Conv2D" => {
                let out_channels = tok.usize("out channels")?;
                let in_channels = tok.usize("in channels")?;
                let kernel_h = tok.usize("kernel height")?;
                let kernel_w = tok.usize("kernel width")?;
                let stride = tok.usize("stride")?;
                let padding = tok.usize("padding")?;
                Layer::Conv2D {
                    out_channels,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    weights: Vec::new(),
                    bias: Vec::new(),
                }
            }
            "Dense" => {
                let out_features = tok.usize("out features")?;
                let in_features = tok.usize("in features")?;
                Layer::Dense {
                    out_features,
                    in_features,
                    weights: Vec::new(),
                    bias: Vec::new(),
                }
            }
            "ReLU" => Layer::ReLU,
            "MaxPool2D" => Layer::MaxPool2D {
                window: tok.usize("window")?,
                stride: tok.usize("stride")?,
            },
            "AvgPool2D" => Layer::AvgPool2D {
                window: tok.usize("window")?,
                stride: tok.usize("stride")?,
            },
            "Flatten" => Layer::Flatten,
            "GlobalAvgPool" => Layer::GlobalAvgPool,
            other => return Err(tok.err(format!("unknown layer kind '{other}'"))),
        };
        tok.finish()?;
        shapes.push(layer);
    }

    let payload = &bytes[pos..];
    if payload.len() % 4 != 0 {
        return Err(Error::ModelFormat {
            line: num_layers + 2,
            message: format!("payload length {} is not a multiple of 4", payload.len()),
        });
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut remaining = payload.len() / 4;
    for (idx, layer) in shapes.iter_mut().enumerate() {
        let needed = layer.param_count();
        if needed > remaining {
            return Err(Error::TruncatedPayload {
                layer: idx,
                expected: needed,
                got: remaining,
            });
        }
        let n_bias = match layer {
            Layer::Conv2D { out_channels, .. } => *out_channels,
            Layer::Dense { out_features, .. } => *out_features,
            _ => 0,
        };
        if let Layer::Conv2D { weights, bias, .. } | Layer::Dense { weights, bias, .. } = layer {
            weights.extend(floats.by_ref().take(needed - n_bias));
            bias.extend(floats.by_ref().take(n_bias));
        }
        remaining -= needed;
    }
    if remaining != 0 {
        return Err(Error::ModelFormat {
            line: num_layers + 2,
            message: format!("{remaining} unused floats after the last layer"),
        });
    }

    let model = ModelGraph {
        input: InputSpec {
            channels,
            height,
            width,
        },
        normalization: Normalization { mean, std },
        layers: shapes,
        num_classes,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    model_from_bytes(&fs::read(path)?)
}
