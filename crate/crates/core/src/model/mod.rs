//! Encoder-decoder translation model with gated graph context.

mod context;
mod layers;
mod transformer;

pub use context::{GraphContext, GraphState};
pub use layers::{gate, multi_head_attention, FeedForward, Fwd, Gate, LayerNorm, Linear, MultiHeadAttention};
pub use transformer::{positional_encoding, DecoderLayer, EncodedContext, EncoderLayer, Example, FrozenContext, Model, ModelInput};

use serde::{Deserialize, Serialize};

use crate::graph::GraphError;
use crate::graph_encoder::{Aggregation, GraphEncoderConfig, GraphEncoderError};
use crate::tensor::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Serial,
    Parallel,
    /// Serial integration in the encoder, parallel in the decoder.
    Hybrid,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Serial, Architecture::Parallel, Architecture::Hybrid];

    pub fn encoder_serial(self) -> bool {
        matches!(self, Architecture::Serial | Architecture::Hybrid)
    }

    pub fn decoder_serial(self) -> bool {
        matches!(self, Architecture::Serial)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Serial => "serial",
            Architecture::Parallel => "parallel",
            Architecture::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown architecture {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextScope {
    All,
    /// Current-sentence nodes and their immediate neighbours.
    Related,
    Current,
}

/// Translation model hyperparameters. Vocabulary sizes of zero are filled
/// from the BPE model before construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub dropout: f64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub architecture: Architecture,
    pub use_src_graph: bool,
    pub use_tgt_graph: bool,
    pub context_scope: ContextScope,
    pub graph_layers: usize,
    pub aggregation: Aggregation,
    pub tied_softmax: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            hidden: 64,
            ffn: 256,
            dropout: 0.2,
            src_vocab: 0,
            tgt_vocab: 0,
            architecture: Architecture::Hybrid,
            use_src_graph: true,
            use_tgt_graph: true,
            context_scope: ContextScope::Current,
            graph_layers: 2,
            aggregation: Aggregation::TypeAttention,
            tied_softmax: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ffn == 0 {
            return bad("layers, heads, hidden and ffn must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.src_vocab == 0 || self.tgt_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if self.tied_softmax && self.src_vocab != self.tgt_vocab {
            return bad("tied_softmax requires equal vocabulary sizes".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        self.graph_encoder().validate()?;
        Ok(())
    }

    pub fn graph_encoder(&self) -> GraphEncoderConfig {
        GraphEncoderConfig {
            num_layers: self.graph_layers,
            hidden: self.hidden,
            aggregation: self.aggregation,
            dropout: self.dropout,
        }
    }

    /// Same model with both graph sides switched off.
    pub fn sentence_level(&self) -> ModelConfig {
        ModelConfig {
            use_src_graph: false,
            use_tgt_graph: false,
            ..self.clone()
        }
    }

    /// Parse `key = value` lines (TOML syntax).
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{0} graph required by the config but not supplied")]
    MissingGraph(&'static str),
    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("empty {0} sequence")]
    EmptySequence(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    GraphEncoder(#[from] GraphEncoderError),
}
