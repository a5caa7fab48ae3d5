//! Model checkpoints: versioned plain text with f64 values stored as
//! 16-digit hex bit patterns, so save/load round-trips are bit exact
//! (see `docs/checkpoint-format.md`).

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tsa_core::gin::{GinLayer, Normalizer, Pooling, TsaModel};
use tsa_core::linalg::Mat;

const HEADER: &str = "tsa-checkpoint";
const VERSION: &str = "v1";

fn push_matrix(out: &mut String, tag: &str, m: &Mat) {
    let _ = writeln!(out, "{tag} {} {}", m.rows(), m.cols());
    for chunk in m.data().chunks(8) {
        let words: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        let _ = writeln!(out, "{}", words.join(" "));
    }
}

fn push_vector(out: &mut String, tag: &str, v: &[f64]) {
    let words: Vec<String> = v.iter().map(|x| format!("{:016x}", x.to_bits())).collect();
    let _ = writeln!(out, "{tag} {}", words.join(" "));
}

/// Serialize a model to checkpoint text.
pub fn encode_model(model: &TsaModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER} {VERSION}");
    let _ = writeln!(out, "pooling {}", model.pooling);
    let _ = writeln!(out, "layers {}", model.layers.len());
    push_vector(&mut out, "norm_mean", &model.normalizer.mean);
    push_vector(&mut out, "norm_std", &model.normalizer.std);
    for (i, layer) in model.layers.iter().enumerate() {
        let _ = writeln!(out, "layer {i}");
        push_vector(&mut out, "epsilon", &[layer.epsilon]);
        push_matrix(&mut out, "w1", &layer.w1);
        push_matrix(&mut out, "b1", &layer.b1);
        push_matrix(&mut out, "w2", &layer.w2);
        push_matrix(&mut out, "b2", &layer.b2);
    }
    push_matrix(&mut out, "fc_w", &model.fc_w);
    push_matrix(&mut out, "fc_b", &model.fc_b);
    out.push_str("end\n");
    out
}

struct Tokens<'a> {
    iter: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.iter.next().context("unexpected end of checkpoint")
    }
    fn expect(&mut self, tag: &str) -> Result<()> {
        let got = self.next()?;
        if got != tag {
            bail!("expected `{tag}`, found `{got}`");
        }
        Ok(())
    }
    fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse().with_context(|| format!("bad integer `{t}`"))
    }
    fn f64_bits(&mut self) -> Result<f64> {
        let t = self.next()?;
        let bits = u64::from_str_radix(t, 16).with_context(|| format!("bad hex f64 `{t}`"))?;
        Ok(f64::from_bits(bits))
    }
    fn matrix(&mut self, tag: &str) -> Result<Mat> {
        self.expect(tag)?;
        let rows = self.usize()?;
        let cols = self.usize()?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64_bits()?);
        }
        Ok(Mat::from_vec(rows, cols, data))
    }
    fn vector(&mut self, tag: &str, len: usize) -> Result<Vec<f64>> {
        self.expect(tag)?;
        (0..len).map(|_| self.f64_bits()).collect()
    }
}

/// Parse checkpoint text back into a model.
pub fn decode_model(text: &str) -> Result<TsaModel> {
    let mut t = Tokens {
        iter: text.split_whitespace(),
    };
    t.expect(HEADER).context("not a checkpoint file")?;
    let version = t.next()?;
    if version != VERSION {
        bail!("unsupported checkpoint version `{version}` (expected {VERSION})");
    }
    t.expect("pooling")?;
    let pooling: Pooling = t.next()?.parse().map_err(anyhow::Error::msg)?;
    t.expect("layers")?;
    let n_layers = t.usize()?;
    if n_layers == 0 {
        bail!("checkpoint has zero layers");
    }
    // the normalizer width is the first layer's input width, but it is
    // stored first; networks here are always two-feature, so read two
    let mean = t.vector("norm_mean", 2)?;
    let std = t.vector("norm_std", 2)?;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        t.expect("layer")?;
        let idx = t.usize()?;
        if idx != i {
            bail!("layer index {idx} out of order (expected {i})");
        }
        let epsilon = t.vector("epsilon", 1)?[0];
        layers.push(GinLayer {
            epsilon,
            w1: t.matrix("w1")?,
            b1: t.matrix("b1")?,
            w2: t.matrix("w2")?,
            b2: t.matrix("b2")?,
        });
    }
    let fc_w = t.matrix("fc_w")?;
    let fc_b = t.matrix("fc_b")?;
    t.expect("end")?;
    let model = TsaModel {
        layers,
        pooling,
        fc_w,
        fc_b,
        normalizer: Normalizer { mean, std },
    };
    if model.normalizer.std.iter().any(|&s| !(s > 0.0)) {
        bail!("checkpoint normalizer has non-positive std");
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &TsaModel) -> Result<()> {
    std::fs::write(path, encode_model(model))
        .with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<TsaModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    decode_model(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
}
