//! Transformer forward passes over a [`Graph`].
//!
//! Post-LN blocks, GELU feed-forward, learned absolute positions, and an
//! output projection tied to the shared token embedding.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AttentionWindow, ModelConfig};
use super::graph::{Graph, Var};
use super::mask::AttentionMask;
use super::params::{check_shapes, init_params, tok_emb_name, ParamLayout, ParamSet, PRIMARY_ENCODER};
use super::tensor::{softmax, Matrix};
use crate::error::{Error, Result};

/// Encoder input ids; the first `query_len` positions hold the query and
/// receive global attention when the config asks for it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub query_len: usize,
}

impl EncoderInput {
    pub fn new(ids: Vec<usize>, query_len: usize) -> Self {
        EncoderInput { ids, query_len }
    }

    /// `query SEP body`, with the query (and separator) as the global prefix.
    pub fn with_query(query: &[usize], sep: usize, body: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(query.len() + 1 + body.len());
        ids.extend_from_slice(query);
        ids.push(sep);
        ids.extend_from_slice(body);
        EncoderInput {
            ids,
            query_len: query.len() + 1,
        }
    }
}

/// Encoder self-attention mask implied by the config.
pub fn encoder_mask(cfg: &ModelConfig, input: &EncoderInput) -> Result<AttentionMask> {
    let n = input.ids.len();
    match cfg.attention_window {
        AttentionWindow::Dense => Ok(AttentionMask::dense(n, n)),
        AttentionWindow::Local(w) => {
            let globals: BTreeSet<usize> = if cfg.global_query_attention {
                (0..input.query_len.min(n)).collect()
            } else {
                BTreeSet::new()
            };
            AttentionMask::local_global(n, w, &globals)
        }
    }
}

/// Decoder output: final hidden states plus the cross-attention node of
/// every layer (for inspecting attention mass).
pub struct DecoderOut {
    pub hidden: Var,
    pub cross_attention: Vec<Var>,
}

/// One forward pass under construction.
pub struct Fwd<'a> {
    pub g: Graph,
    pub cfg: &'a ModelConfig,
    pub params: &'a ParamSet,
    dropout: Option<ChaCha8Rng>,
}

impl<'a> Fwd<'a> {
    /// Deterministic pass with dropout disabled.
    pub fn eval(cfg: &'a ModelConfig, params: &'a ParamSet) -> Self {
        Fwd {
            g: Graph::new(),
            cfg,
            params,
            dropout: None,
        }
    }

    /// Training pass; dropout masks are drawn from `seed`.
    pub fn train(cfg: &'a ModelConfig, params: &'a ParamSet, seed: u64) -> Self {
        let dropout = (cfg.dropout_rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed));
        Fwd {
            g: Graph::new(),
            cfg,
            params,
            dropout,
        }
    }

    fn p(&mut self, name: &str) -> Result<Var> {
        self.g.param(self.params, name)
    }

    fn linear(&mut self, x: Var, prefix: &str, w: &str, b: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.{w}"))?;
        let b = self.p(&format!("{prefix}.{b}"))?;
        let y = self.g.matmul(x, w);
        Ok(self.g.add_row(y, b))
    }

    fn drop(&mut self, x: Var) -> Var {
        let rate = self.cfg.dropout_rate;
        let Some(rng) = self.dropout.as_mut() else { return x };
        let (r, c) = self.g.value(x).shape();
        let keep = 1.0 / (1.0 - rate);
        let data = (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.g.mul_const(x, Matrix::from_vec(r, c, data))
    }

    fn ln(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        Ok(self.g.layer_norm(x, g, b))
    }

    /// Multi-head attention block; returns (projected output, attention node).
    fn mha(&mut self, prefix: &str, xq: Var, xkv: Var, mask: &AttentionMask) -> Result<(Var, Var)> {
        let q = self.linear(xq, prefix, "wq", "bq")?;
        let k = self.linear(xkv, prefix, "wk", "bk")?;
        let v = self.linear(xkv, prefix, "wv", "bv")?;
        let a = self.g.attention(q, k, v, self.cfg.n_heads, mask);
        let o = self.linear(a, prefix, "wo", "bo")?;
        Ok((o, a))
    }

    fn ff(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let h = self.linear(x, prefix, "w1", "b1")?;
        let h = self.g.gelu(h);
        self.linear(h, prefix, "w2", "b2")
    }

    fn check_ids(&self, ids: &[usize], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::invalid(format!("{what}: empty input")));
        }
        if ids.len() > self.cfg.max_positions {
            return Err(Error::invalid(format!(
                "{what}: length {} exceeds max_positions {}",
                ids.len(),
                self.cfg.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "{what}: token id {bad} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(&mut self, table: &str, pos_prefix: &str, ids: &[usize]) -> Result<Var> {
        let tok = self.p(table)?;
        let pos = self.p(&format!("{pos_prefix}.pos_emb"))?;
        let x = self.g.gather(tok, ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = self.g.gather(pos, &positions);
        let x = self.g.add(x, p);
        let x = self.ln(x, &format!("{pos_prefix}.ln_emb"))?;
        Ok(self.drop(x))
    }

    /// Encoder stack `prefix` over `ids`; one row per position.
    pub fn encoder(&mut self, prefix: &str, ids: &[usize], mask: &AttentionMask) -> Result<Var> {
        self.check_ids(ids, "encoder")?;
        if (mask.q_len(), mask.k_len()) != (ids.len(), ids.len()) {
            return Err(Error::Shape(format!(
                "encoder mask {}x{} for {} tokens",
                mask.q_len(),
                mask.k_len(),
                ids.len()
            )));
        }
        let mut x = self.embed(&tok_emb_name(prefix), prefix, ids)?;
        for l in 0..self.cfg.n_enc_layers {
            let lp = format!("{prefix}.{l}");
            let (a, _) = self.mha(&format!("{lp}.attn"), x, x, mask)?;
            let a = self.drop(a);
            let s = self.g.add(x, a);
            x = self.ln(s, &format!("{lp}.ln1"))?;
            let f = self.ff(&format!("{lp}.ff"), x)?;
            let f = self.drop(f);
            let s = self.g.add(x, f);
            x = self.ln(s, &format!("{lp}.ln2"))?;
        }
        Ok(x)
    }

    /// Primary encoder over one input using the config's mask.
    pub fn encode_input(&mut self, input: &EncoderInput) -> Result<Var> {
        let mask = encoder_mask(self.cfg, input)?;
        self.encoder(PRIMARY_ENCODER, &input.ids, &mask)
    }

    /// Encodes each input independently and concatenates the outputs.
    pub fn encode_segments(&mut self, inputs: &[EncoderInput]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("no encoder segments"));
        }
        let parts = inputs
            .iter()
            .map(|s| self.encode_input(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(if parts.len() == 1 {
            parts[0]
        } else {
            self.g.concat_rows(&parts)
        })
    }

    /// Causal decoder over `ids` cross-attending all rows of `memory`.
    pub fn decoder(&mut self, ids: &[usize], memory: Var) -> Result<DecoderOut> {
        self.check_ids(ids, "decoder")?;
        let n = ids.len();
        let m = self.g.value(memory).rows;
        let self_mask = AttentionMask::causal(n);
        let cross_mask = AttentionMask::dense(n, m);
        let mut x = self.embed("tok_emb", "dec", ids)?;
        let mut cross_attention = Vec::with_capacity(self.cfg.n_dec_layers);
        for l in 0..self.cfg.n_dec_layers {
            let lp = format!("dec.{l}");
            let (a, _) = self.mha(&format!("{lp}.self"), x, x, &self_mask)?;
            let a = self.drop(a);
            let s = self.g.add(x, a);
            x = self.ln(s, &format!("{lp}.ln1"))?;
            let (c, attn) = self.mha(&format!("{lp}.cross"), x, memory, &cross_mask)?;
            cross_attention.push(attn);
            let c = self.drop(c);
            let s = self.g.add(x, c);
            x = self.ln(s, &format!("{lp}.ln2"))?;
            let f = self.ff(&format!("{lp}.ff"), x)?;
            let f = self.drop(f);
            let s = self.g.add(x, f);
            x = self.ln(s, &format!("{lp}.ln3"))?;
        }
        Ok(DecoderOut {
            hidden: x,
            cross_attention,
        })
    }

    /// Vocabulary logits through the tied embedding.
    pub fn lm_logits(&mut self, hidden: Var) -> Result<Var> {
        let emb = self.p("tok_emb")?;
        let bias = self.p("lm_bias")?;
        let l = self.g.matmul_bt(hidden, emb);
        Ok(self.g.add_row(l, bias))
    }

    /// Scalar regression output (1x1) from mean-pooled encoder states.
    pub fn regression(&mut self, encoded: Var) -> Result<Var> {
        let pooled = self.g.mean_rows(encoded);
        self.linear(pooled, "head", "w", "b")
    }
}

/// Parameters plus the config and layout that shape them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layout: ParamLayout,
    pub params: ParamSet,
}

impl Model {
    pub fn init(cfg: ModelConfig, layout: ParamLayout, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, &layout, seed)?;
        Ok(Model { cfg, layout, params })
    }

    pub fn from_parts(cfg: ModelConfig, layout: ParamLayout, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        check_shapes(&params, &cfg, &layout)?;
        Ok(Model { cfg, layout, params })
    }

    fn fwd(&self) -> Fwd<'_> {
        Fwd::eval(&self.cfg, &self.params)
    }

    /// Primary-encoder states under an explicit mask.
    pub fn encode(&self, ids: &[usize], mask: &AttentionMask) -> Result<Matrix> {
        self.encode_with(PRIMARY_ENCODER, ids, mask)
    }

    pub fn encode_with(&self, prefix: &str, ids: &[usize], mask: &AttentionMask) -> Result<Matrix> {
        let mut f = self.fwd();
        let v = f.encoder(prefix, ids, mask)?;
        Ok(f.g.value(v).clone())
    }

    pub fn encode_input(&self, input: &EncoderInput) -> Result<Matrix> {
        let mut f = self.fwd();
        let v = f.encode_input(input)?;
        Ok(f.g.value(v).clone())
    }

    pub fn encode_segments(&self, inputs: &[EncoderInput]) -> Result<Matrix> {
        let mut f = self.fwd();
        let v = f.encode_segments(inputs)?;
        Ok(f.g.value(v).clone())
    }

    /// Logits at every decoder position (`|prefix| x V`).
    pub fn decoder_logits(&self, prefix: &[usize], memory: &Matrix) -> Result<Matrix> {
        if prefix.is_empty() {
            return Err(Error::invalid("decode_step: prefix must contain at least BOS"));
        }
        let mut f = self.fwd();
        let mem = f.g.input(memory.clone());
        let out = f.decoder(prefix, mem)?;
        let l = f.lm_logits(out.hidden)?;
        Ok(f.g.value(l).clone())
    }

    /// Cross-attention probabilities: per layer, per head, `|prefix| x |memory|`.
    pub fn cross_attention(&self, prefix: &[usize], memory: &Matrix) -> Result<Vec<Vec<Matrix>>> {
        let mut f = self.fwd();
        let mem = f.g.input(memory.clone());
        let out = f.decoder(prefix, mem)?;
        Ok(out
            .cross_attention
            .iter()
            .map(|&a| f.g.attention_probs(a).map(<[Matrix]>::to_vec).unwrap_or_default())
            .collect())
    }

    /// Next-token distribution after `prefix`.
    pub fn decode_step(&self, prefix: &[usize], memory: &Matrix) -> Result<Vec<f64>> {
        let l = self.decoder_logits(prefix, memory)?;
        Ok(softmax(l.row(l.rows - 1)))
    }

    /// Regression-head output for one encoder input.
    pub fn regress(&self, input: &EncoderInput) -> Result<f64> {
        let mut f = self.fwd();
        let e = f.encode_input(input)?;
        let r = f.regression(e)?;
        Ok(f.g.value(r).data[0])
    }

    /// Mean-pooled dense-attention states from encoder `prefix`.
    pub fn pooled(&self, prefix: &str, ids: &[usize]) -> Result<Vec<f64>> {
        let mut f = self.fwd();
        let e = f.encoder(prefix, ids, &AttentionMask::dense(ids.len(), ids.len()))?;
        let p = f.g.mean_rows(e);
        Ok(f.g.value(p).data.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::init(ModelConfig::tiny(12, 16), ParamLayout::seq2seq(), 5).unwrap()
    }

    #[test]
    fn encoder_shapes_and_errors() {
        let m = model();
        let ids = [1, 8, 9, 3, 10];
        let e = m.encode(&ids, &AttentionMask::dense(5, 5)).unwrap();
        assert_eq!(e.shape(), (5, 32));
        assert!(m.encode(&[1; 17], &AttentionMask::dense(17, 17)).is_err());
        assert!(m.encode(&[12], &AttentionMask::dense(1, 1)).is_err());
    }

    #[test]
    fn decode_step_is_causal_and_normalized() {
        let m = model();
        let mem = m.encode(&[8, 9, 10], &AttentionMask::dense(3, 3)).unwrap();
        let p = m.decode_step(&[1, 8], &mem).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let short = m.decoder_logits(&[1, 8], &mem).unwrap();
        let long = m.decoder_logits(&[1, 8, 11, 4], &mem).unwrap();
        assert!(short.max_abs_diff(&long.rows_slice(0, 2)) < 1e-12);
        assert!(m.decode_step(&[], &mem).is_err());
    }

    #[test]
    fn zeroed_cross_attention_ignores_memory() {
        let mut m = model();
        for n in ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"] {
            m.params.get_mut(&format!("dec.0.cross.{n}")).unwrap().scale(0.0);
        }
        let a = m.encode(&[8, 9, 10], &AttentionMask::dense(3, 3)).unwrap();
        let b = m.encode(&[11, 4], &AttentionMask::dense(2, 2)).unwrap();
        let pa = m.decoder_logits(&[1, 9, 9], &a).unwrap();
        let pb = m.decoder_logits(&[1, 9, 9], &b).unwrap();
        assert!(pa.max_abs_diff(&pb) < 1e-12);
    }

    #[test]
    fn disallowed_keys_do_not_leak() {
        let m = model();
        let mask = AttentionMask::local_global(6, 2, &BTreeSet::new()).unwrap();
        let a = m.encode(&[8, 9, 10, 11, 8, 9], &mask).unwrap();
        let b = m.encode(&[8, 9, 10, 11, 8, 4], &mask).unwrap();
        // one layer: position 0 only sees positions 0 and 1
        assert!((0..32).all(|c| a.get(0, c) == b.get(0, c)));
        assert!(a.max_abs_diff(&b) > 0.0);
    }
}
