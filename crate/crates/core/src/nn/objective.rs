//! Training objectives and the optimizer step.

use serde::{Deserialize, Serialize};

use super::graph::{Grads, Var};
use super::model::{EncoderInput, Fwd, Model};
use super::params::{ParamSet, PRIMARY_ENCODER};
use super::tensor::Matrix;
use super::vocab::BOS;
use crate::error::{Error, Result};

/// One supervised example.
#[derive(Clone, Debug, PartialEq)]
pub enum Example {
    /// Token-level cross-entropy of `target` (ends with EOS, no BOS) given the
    /// concatenated encodings of `segments`.
    Seq2Seq {
        segments: Vec<EncoderInput>,
        target: Vec<usize>,
    },
    /// Squared error of the regression head.
    Regression { input: EncoderInput, target: f64 },
    /// Squared error of a scaled inner product of pooled query and passage
    /// encodings.
    PairRegression {
        query: Vec<usize>,
        passage: Vec<usize>,
        target: f64,
    },
    /// Softmax NLL of `positive` among the candidate passages.
    Contrastive {
        query: Vec<usize>,
        passages: Vec<Vec<usize>>,
        positive: usize,
    },
}

impl Example {
    /// Weight in the batch mean: target tokens for sequence losses, 1 otherwise.
    pub fn weight(&self) -> f64 {
        match self {
            Example::Seq2Seq { target, .. } => target.len() as f64,
            _ => 1.0,
        }
    }
}

/// Temperature applied to dual-encoder inner products: `1/sqrt(d_model)`.
pub fn dual_scale(d_model: usize) -> f64 {
    1.0 / (d_model as f64).sqrt()
}

fn pooled(f: &mut Fwd<'_>, prefix: &str, ids: &[usize]) -> Result<Var> {
    let mask = super::mask::AttentionMask::dense(ids.len(), ids.len());
    let e = f.encoder(prefix, ids, &mask)?;
    Ok(f.g.mean_rows(e))
}

/// Builds the loss node for one example.
pub fn example_loss(f: &mut Fwd<'_>, model: &Model, ex: &Example) -> Result<Var> {
    match ex {
        Example::Seq2Seq { segments, target } => {
            if target.is_empty() {
                return Err(Error::invalid("empty target sequence"));
            }
            let memory = f.encode_segments(segments)?;
            let mut input = Vec::with_capacity(target.len());
            input.push(BOS);
            input.extend_from_slice(&target[..target.len() - 1]);
            let out = f.decoder(&input, memory)?;
            let logits = f.lm_logits(out.hidden)?;
            Ok(f.g.cross_entropy(logits, target))
        }
        Example::Regression { input, target } => {
            let e = f.encode_input(input)?;
            let r = f.regression(e)?;
            Ok(f.g.squared_error(r, &[*target]))
        }
        Example::PairRegression { query, passage, target } => {
            let q = pooled(f, PRIMARY_ENCODER, query)?;
            let p = pooled(f, model.layout.passage_encoder(), passage)?;
            let s = f.g.matmul_bt(q, p);
            let s = f.g.scale(s, dual_scale(model.cfg.d_model));
            Ok(f.g.squared_error(s, &[*target]))
        }
        Example::Contrastive {
            query,
            passages,
            positive,
        } => {
            if *positive >= passages.len() {
                return Err(Error::invalid("contrastive positive index out of range"));
            }
            let q = pooled(f, PRIMARY_ENCODER, query)?;
            let penc = model.layout.passage_encoder().to_owned();
            let ps = passages
                .iter()
                .map(|p| pooled(f, &penc, p))
                .collect::<Result<Vec<_>>>()?;
            let pm = f.g.concat_rows(&ps);
            let s = f.g.matmul_bt(q, pm);
            let s = f.g.scale(s, dual_scale(model.cfg.d_model));
            Ok(f.g.cross_entropy(s, &[*positive]))
        }
    }
}

/// Seed for the dropout stream of example `index` at optimizer step `step`.
fn example_seed(seed: u64, step: u64, index: usize) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Weighted loss and gradients over `examples[range]`, where weights are
/// normalized by `total_weight` (the whole batch).
fn partial_loss_and_grads(
    model: &Model,
    examples: &[Example],
    offset: usize,
    total_weight: f64,
    seed: u64,
    step: u64,
) -> Result<(f64, Grads)> {
    let mut loss = 0.0;
    let mut grads = Grads::new();
    for (i, ex) in examples.iter().enumerate() {
        let mut f = Fwd::train(&model.cfg, &model.params, example_seed(seed, step, offset + i));
        let l = example_loss(&mut f, model, ex)?;
        let w = ex.weight() / total_weight;
        let lv = f.g.value(l).data[0];
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("example {} produced loss {lv}", offset + i),
            });
        }
        let scaled = f.g.scale(l, w);
        loss += w * lv;
        for (name, g) in f.g.backward(scaled) {
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    grads.insert(name, g);
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Batch-mean loss and its gradients (dropout off unless the config enables it).
pub fn loss_and_grads(model: &Model, batch: &[Example], seed: u64, step: u64) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let total: f64 = batch.iter().map(Example::weight).sum();
    partial_loss_and_grads(model, batch, 0, total, seed, step)
}

/// Batch-mean loss without gradients, dropout disabled.
pub fn eval_loss(model: &Model, batch: &[Example]) -> Result<f64> {
    let total: f64 = batch.iter().map(Example::weight).sum();
    let mut loss = 0.0;
    for ex in batch {
        let mut f = Fwd::eval(&model.cfg, &model.params);
        let l = example_loss(&mut f, model, ex)?;
        loss += ex.weight() / total * f.g.value(l).data[0];
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Model plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub opt: OptimizerConfig,
    pub seed: u64,
    step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl Trainer {
    pub fn new(model: Model, opt: OptimizerConfig, seed: u64) -> Self {
        let m = model.params.zeros_like();
        let v = model.params.zeros_like();
        Trainer {
            model,
            opt,
            seed,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One optimizer update on `batch`, accumulating gradients over
    /// `accumulation_steps` contiguous micro-batches. Returns the batch loss.
    pub fn train_step(&mut self, batch: &[Example], lr: f64, accumulation_steps: usize) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if accumulation_steps == 0 || accumulation_steps > batch.len() {
            return Err(Error::invalid(format!(
                "accumulation_steps {accumulation_steps} must be in [1, batch size {}]",
                batch.len()
            )));
        }
        let total: f64 = batch.iter().map(Example::weight).sum();
        let chunk = batch.len().div_ceil(accumulation_steps);
        let mut loss = 0.0;
        let mut grads = self.model.params.zeros_like();
        for (c, micro) in batch.chunks(chunk).enumerate() {
            let (l, g) = partial_loss_and_grads(&self.model, micro, c * chunk, total, self.seed, self.step)?;
            loss += l;
            grads.accumulate(&g, 1.0);
        }
        self.apply(grads, lr)?;
        Ok(loss)
    }

    fn apply(&mut self, mut grads: ParamSet, lr: f64) -> Result<()> {
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("gradient norm {norm}"),
            });
        }
        if let Some(c) = self.opt.clip_norm {
            if norm > c {
                for (_, g) in grads.iter_mut() {
                    g.scale(c / norm);
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let o = self.opt;
        let bc1 = 1.0 - o.beta1.powi(t);
        let bc2 = 1.0 - o.beta2.powi(t);
        let names: Vec<String> = grads.names().map(str::to_owned).collect();
        for name in names {
            let g: &Matrix = grads.get(&name).expect("gradient");
            let p = self.model.params.get_mut(&name).expect("param");
            match o.kind {
                OptimizerKind::Sgd => p.add_scaled(g, -lr),
                OptimizerKind::Adam => {
                    let m = self.m.get_mut(&name).expect("adam m");
                    let v = self.v.get_mut(&name).expect("adam v");
                    for i in 0..g.data.len() {
                        let gi = g.data[i];
                        m.data[i] = o.beta1 * m.data[i] + (1.0 - o.beta1) * gi;
                        v.data[i] = o.beta2 * v.data[i] + (1.0 - o.beta2) * gi * gi;
                        let mh = m.data[i] / bc1;
                        let vh = v.data[i] / bc2;
                        p.data[i] -= lr * mh / (vh.sqrt() + o.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::ModelConfig;
    use crate::nn::params::ParamLayout;
    use crate::nn::vocab::{EOS, SEP};

    fn seq_batch() -> Vec<Example> {
        vec![
            Example::Seq2Seq {
                segments: vec![EncoderInput::with_query(&[8, 9], SEP, &[10, 11, 12])],
                target: vec![10, 12, EOS],
            },
            Example::Seq2Seq {
                segments: vec![EncoderInput::with_query(&[9], SEP, &[13, 8])],
                target: vec![13, EOS],
            },
            Example::Seq2Seq {
                segments: vec![EncoderInput::with_query(&[8], SEP, &[11])],
                target: vec![11, 11, 9, EOS],
            },
        ]
    }

    #[test]
    fn overfits_a_fixed_batch() {
        let model = Model::init(ModelConfig::tiny(14, 16), ParamLayout::seq2seq(), 1).unwrap();
        let mut t = Trainer::new(model, OptimizerConfig::default(), 0);
        let batch = seq_batch();
        let first = eval_loss(&t.model, &batch).unwrap();
        for _ in 0..60 {
            t.train_step(&batch, 1e-2, 1).unwrap();
        }
        assert!(eval_loss(&t.model, &batch).unwrap() < 0.5 * first);
    }

    #[test]
    fn accumulation_matches_full_batch() {
        let model = Model::init(ModelConfig::tiny(14, 16), ParamLayout::seq2seq(), 2).unwrap();
        let batch = seq_batch();
        let mut a = Trainer::new(model.clone(), OptimizerConfig::default(), 0);
        let mut b = Trainer::new(model.clone(), OptimizerConfig::default(), 0);
        let la = a.train_step(&batch, 1e-3, 1).unwrap();
        let lb = b.train_step(&batch, 1e-3, 2).unwrap();
        assert!((la - lb).abs() < 1e-12);
        for (name, p) in a.model.params.iter() {
            assert!(p.max_abs_diff(b.model.params.get(name).unwrap()) < 1e-9, "{name}");
        }
    }

    #[test]
    fn rejects_bad_accumulation() {
        let model = Model::init(ModelConfig::tiny(14, 16), ParamLayout::seq2seq(), 2).unwrap();
        let mut t = Trainer::new(model, OptimizerConfig::default(), 0);
        assert!(t.train_step(&seq_batch(), 1e-3, 0).is_err());
        assert!(t.train_step(&seq_batch(), 1e-3, 4).is_err());
        assert!(t.train_step(&[], 1e-3, 1).is_err());
    }
}
