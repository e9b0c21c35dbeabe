//! From-scratch encoder-decoder transformer in `f64`.
//!
//! [`graph`] records a forward pass and differentiates it, [`model`] builds
//! encoder/decoder stacks on top, [`decode`] runs greedy and beam search,
//! [`objective`] holds the losses and the optimizer, and [`checkpoint`]
//! serializes everything.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod graph;
pub mod mask;
pub mod model;
pub mod objective;
pub mod params;
pub mod tensor;
pub mod vocab;

pub use checkpoint::{Checkpoint, ModelKind, ProvenanceStage};
pub use config::{AttentionWindow, ModelConfig};
pub use decode::{beam_search, greedy, BeamConfig, Hypothesis, MemoryDecoder, StepModel};
pub use graph::{Grads, Graph, Var};
pub use mask::AttentionMask;
pub use model::{encoder_mask, EncoderInput, Fwd, Model};
pub use objective::{Example, OptimizerConfig, OptimizerKind, Trainer};
pub use params::{ParamLayout, ParamSet};
pub use tensor::Matrix;
pub use vocab::Vocab;
