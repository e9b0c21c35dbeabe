//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "QFSCKPT1"
//! version   u32      FORMAT_VERSION
//! hdr_len   u64      byte length of the JSON header
//! header    hdr_len  UTF-8 JSON (see `Header`)
//! blob      rest     f64 LE values; tensor i occupies
//!                    [offset_i, offset_i + rows_i * cols_i) in f64 units
//! ```
//!
//! The header carries the model config, parameter layout, vocabulary,
//! provenance and a tensor manifest, so other implementations can read
//! everything but the weights without touching the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use super::params::{check_shapes, ParamLayout, ParamSet};
use super::tensor::Matrix;
use super::vocab::Vocab;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QFSCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SummarizerDense,
    SummarizerSegenc,
    SummarizerLocalglobal,
    ExtractorSingle,
    ExtractorDual,
    ExtractorDpr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::SummarizerDense,
        ModelKind::SummarizerSegenc,
        ModelKind::SummarizerLocalglobal,
        ModelKind::ExtractorSingle,
        ModelKind::ExtractorDual,
        ModelKind::ExtractorDpr,
    ];

    pub fn is_summarizer(self) -> bool {
        matches!(
            self,
            ModelKind::SummarizerDense | ModelKind::SummarizerSegenc | ModelKind::SummarizerLocalglobal
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SummarizerDense => "summarizer_dense",
            ModelKind::SummarizerSegenc => "summarizer_segenc",
            ModelKind::SummarizerLocalglobal => "summarizer_localglobal",
            ModelKind::ExtractorSingle => "extractor_single",
            ModelKind::ExtractorDual => "extractor_dual",
            ModelKind::ExtractorDpr => "extractor_dpr",
        }
    }
}

/// One fine-tuning stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceStage {
    pub dataset: String,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub model: Model,
    pub vocab: Vocab,
    pub provenance: Vec<ProvenanceStage>,
    /// Validation metric of the selected epoch, when trained.
    pub selection_metric: Option<f64>,
    /// Kind-specific settings (segment config, dual-encoder flavour, ...).
    pub settings: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    layout: ParamLayout,
    vocab: Vocab,
    provenance: Vec<ProvenanceStage>,
    selection_metric: Option<f64>,
    settings: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, model: Model, vocab: Vocab) -> Result<Self> {
        if vocab.len() != model.cfg.vocab_size {
            return Err(Error::Incompatible(format!(
                "vocabulary has {} entries but model expects {}",
                vocab.len(),
                model.cfg.vocab_size
            )));
        }
        Ok(Checkpoint {
            kind,
            model,
            vocab,
            provenance: Vec::new(),
            selection_metric: None,
            settings: serde_json::Value::Null,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.model.params.len());
        let mut offset = 0;
        for (name, m) in self.model.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_owned(),
                rows: m.rows,
                cols: m.cols,
                offset,
            });
            offset += m.len();
        }
        let header = Header {
            kind: self.kind,
            config: self.model.cfg.clone(),
            layout: self.model.layout.clone(),
            vocab: self.vocab.clone(),
            provenance: self.provenance.clone(),
            selection_metric: self.selection_metric,
            settings: self.settings.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in self.model.params.iter() {
            for x in &m.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        header.vocab.validate()?;
        let blob = &body[hlen..];
        if !blob.len().is_multiple_of(8) {
            return Err(bad("parameter blob is not a whole number of f64 values"));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut params = ParamSet::default();
        for t in &header.tensors {
            let end = t.offset + t.rows * t.cols;
            if end > values.len() {
                return Err(bad(&format!("tensor {} runs past the blob", t.name)));
            }
            params.insert(
                &t.name,
                Matrix::from_vec(t.rows, t.cols, values[t.offset..end].to_vec()),
            );
        }
        check_shapes(&params, &header.config, &header.layout)?;
        let model = Model::from_parts(header.config, header.layout, params)?;
        let mut ck = Checkpoint::new(header.kind, model, header.vocab)?;
        ck.provenance = header.provenance;
        ck.selection_metric = header.selection_metric;
        ck.settings = header.settings;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
