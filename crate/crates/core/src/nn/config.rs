use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder self-attention pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "WindowRepr", try_from = "WindowRepr")]
pub enum AttentionWindow {
    Dense,
    /// Sliding window of this many tokens (half on each side).
    Local(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WindowRepr {
    Tokens(usize),
    Name(String),
}

impl From<AttentionWindow> for WindowRepr {
    fn from(w: AttentionWindow) -> Self {
        match w {
            AttentionWindow::Dense => WindowRepr::Name("dense".into()),
            AttentionWindow::Local(n) => WindowRepr::Tokens(n),
        }
    }
}

impl TryFrom<WindowRepr> for AttentionWindow {
    type Error = String;

    fn try_from(r: WindowRepr) -> std::result::Result<Self, String> {
        match r {
            WindowRepr::Tokens(n) => Ok(AttentionWindow::Local(n)),
            WindowRepr::Name(s) if s == "dense" => Ok(AttentionWindow::Dense),
            WindowRepr::Name(s) => Err(format!(
                "attention_window must be a token count or \"dense\", got {s:?}"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    /// Zero for encoder-only models (passage scorers).
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    pub attention_window: AttentionWindow,
    pub global_query_attention: bool,
}

impl ModelConfig {
    /// Small dense encoder-decoder suitable for desk-scale experiments.
    pub fn tiny(vocab_size: usize, max_positions: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 64,
            max_positions,
            dropout_rate: 0.0,
            attention_window: AttentionWindow::Dense,
            global_query_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("model config: {m}")));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("sizes must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_enc_layers == 0 || self.max_positions == 0 {
            return bad("need at least one encoder layer and one position".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if let AttentionWindow::Local(w) = self.attention_window {
            if w == 0 || w > self.max_positions {
                return bad(format!("attention window {w} must be in [1, max_positions]"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
