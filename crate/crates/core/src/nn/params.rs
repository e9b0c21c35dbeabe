use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::graph::Grads;
use super::tensor::Matrix;
use crate::error::{Error, Result};

/// Named parameter tensors in deterministic (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: &str, m: Matrix) {
        self.tensors.insert(name.to_owned(), m);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows, v.cols)))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, grads: &Grads, scale: f64) {
        for (name, g) in grads {
            if let Some(t) = self.tensors.get_mut(name) {
                t.add_scaled(g, scale);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|m| m.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Which parameter groups a model carries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    /// Encoder prefixes; the first is the primary encoder (`enc`).
    pub encoders: Vec<String>,
    pub decoder: bool,
    pub regression_head: bool,
}

pub const PRIMARY_ENCODER: &str = "enc";
pub const PASSAGE_ENCODER: &str = "penc";

impl ParamLayout {
    pub fn seq2seq() -> Self {
        ParamLayout {
            encoders: vec![PRIMARY_ENCODER.into()],
            decoder: true,
            regression_head: false,
        }
    }

    /// Single encoder with a scalar regression head.
    pub fn scorer() -> Self {
        ParamLayout {
            encoders: vec![PRIMARY_ENCODER.into()],
            decoder: false,
            regression_head: true,
        }
    }

    /// Query/passage encoders, shared when `tied`.
    pub fn dual(tied: bool) -> Self {
        let mut encoders = vec![PRIMARY_ENCODER.to_owned()];
        if !tied {
            encoders.push(PASSAGE_ENCODER.into());
        }
        ParamLayout {
            encoders,
            decoder: false,
            regression_head: false,
        }
    }

    pub fn passage_encoder(&self) -> &str {
        self.encoders.last().map_or(PRIMARY_ENCODER, String::as_str)
    }
}

/// Token embedding table used by an encoder. The primary encoder shares its
/// table with the decoder and output projection.
pub fn tok_emb_name(prefix: &str) -> String {
    if prefix == PRIMARY_ENCODER {
        "tok_emb".to_owned()
    } else {
        format!("{prefix}.tok_emb")
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Const(f64),
}

fn attn_shapes(out: &mut Vec<(String, usize, usize, Init)>, p: &str, d: usize) {
    let w = Init::Normal(1.0 / (d as f64).sqrt());
    for m in ["q", "k", "v", "o"] {
        out.push((format!("{p}.w{m}"), d, d, w));
        out.push((format!("{p}.b{m}"), 1, d, Init::Const(0.0)));
    }
}

fn ln_shapes(out: &mut Vec<(String, usize, usize, Init)>, p: &str, d: usize) {
    out.push((format!("{p}.g"), 1, d, Init::Const(1.0)));
    out.push((format!("{p}.b"), 1, d, Init::Const(0.0)));
}

fn ff_shapes(out: &mut Vec<(String, usize, usize, Init)>, p: &str, d: usize, f: usize) {
    out.push((format!("{p}.w1"), d, f, Init::Normal(1.0 / (d as f64).sqrt())));
    out.push((format!("{p}.b1"), 1, f, Init::Const(0.0)));
    out.push((format!("{p}.w2"), f, d, Init::Normal(1.0 / (f as f64).sqrt())));
    out.push((format!("{p}.b2"), 1, d, Init::Const(0.0)));
}

fn layout_spec(cfg: &ModelConfig, layout: &ParamLayout) -> Vec<(String, usize, usize, Init)> {
    let d = cfg.d_model;
    let emb = Init::Normal(1.0 / (d as f64).sqrt());
    let mut out = Vec::new();
    for enc in &layout.encoders {
        out.push((tok_emb_name(enc), cfg.vocab_size, d, emb));
        out.push((format!("{enc}.pos_emb"), cfg.max_positions, d, emb));
        ln_shapes(&mut out, &format!("{enc}.ln_emb"), d);
        for l in 0..cfg.n_enc_layers {
            attn_shapes(&mut out, &format!("{enc}.{l}.attn"), d);
            ln_shapes(&mut out, &format!("{enc}.{l}.ln1"), d);
            ff_shapes(&mut out, &format!("{enc}.{l}.ff"), d, cfg.d_ff);
            ln_shapes(&mut out, &format!("{enc}.{l}.ln2"), d);
        }
    }
    if layout.decoder {
        out.push(("dec.pos_emb".into(), cfg.max_positions, d, emb));
        ln_shapes(&mut out, "dec.ln_emb", d);
        for l in 0..cfg.n_dec_layers {
            attn_shapes(&mut out, &format!("dec.{l}.self"), d);
            ln_shapes(&mut out, &format!("dec.{l}.ln1"), d);
            attn_shapes(&mut out, &format!("dec.{l}.cross"), d);
            ln_shapes(&mut out, &format!("dec.{l}.ln2"), d);
            ff_shapes(&mut out, &format!("dec.{l}.ff"), d, cfg.d_ff);
            ln_shapes(&mut out, &format!("dec.{l}.ln3"), d);
        }
        out.push(("lm_bias".into(), 1, cfg.vocab_size, Init::Const(0.0)));
    }
    if layout.regression_head {
        out.push(("head.w".into(), d, 1, Init::Normal(1.0 / (d as f64).sqrt())));
        out.push(("head.b".into(), 1, 1, Init::Const(0.0)));
    }
    out
}

/// Expected `(name, rows, cols)` for a config and layout.
pub fn expected_shapes(cfg: &ModelConfig, layout: &ParamLayout) -> Vec<(String, usize, usize)> {
    layout_spec(cfg, layout)
        .into_iter()
        .map(|(n, r, c, _)| (n, r, c))
        .collect()
}

/// Scaled-normal initialization from a fixed seed.
pub fn init_params(cfg: &ModelConfig, layout: &ParamLayout, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    if layout.decoder && cfg.n_dec_layers == 0 {
        return Err(Error::invalid("decoder layout requires n_dec_layers >= 1"));
    }
    let mut spec = layout_spec(cfg, layout);
    spec.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::default();
    for (name, r, c, init) in spec {
        let data = match init {
            Init::Const(v) => vec![v; r * c],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..r * c).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        params.insert(&name, Matrix::from_vec(r, c, data));
    }
    Ok(params)
}

/// Checks names and shapes against the layout.
pub fn check_shapes(params: &ParamSet, cfg: &ModelConfig, layout: &ParamLayout) -> Result<()> {
    let expected = expected_shapes(cfg, layout);
    if expected.len() != params.len() {
        return Err(Error::Shape(format!(
            "expected {} tensors, found {}",
            expected.len(),
            params.len()
        )));
    }
    for (name, r, c) in expected {
        match params.get(&name) {
            Some(m) if m.shape() == (r, c) => {}
            Some(m) => {
                return Err(Error::Shape(format!(
                    "{name}: expected {r}x{c}, found {}x{}",
                    m.rows, m.cols
                )))
            }
            None => return Err(Error::Shape(format!("missing tensor {name}"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_shape_consistent() {
        let cfg = ModelConfig::tiny(20, 16);
        let a = init_params(&cfg, &ParamLayout::seq2seq(), 3).unwrap();
        let b = init_params(&cfg, &ParamLayout::seq2seq(), 3).unwrap();
        let c = init_params(&cfg, &ParamLayout::seq2seq(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        check_shapes(&a, &cfg, &ParamLayout::seq2seq()).unwrap();
        assert!(check_shapes(&a, &cfg, &ParamLayout::scorer()).is_err());
    }

    #[test]
    fn dual_layout_has_two_tables_when_untied() {
        let cfg = ModelConfig {
            n_dec_layers: 0,
            ..ModelConfig::tiny(20, 16)
        };
        let tied = init_params(&cfg, &ParamLayout::dual(true), 0).unwrap();
        let untied = init_params(&cfg, &ParamLayout::dual(false), 0).unwrap();
        assert!(tied.get("penc.tok_emb").is_none());
        assert!(untied.get("penc.tok_emb").is_some());
        assert_eq!(untied.num_scalars(), 2 * tied.num_scalars());
    }
}
