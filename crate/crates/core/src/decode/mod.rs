//! Beam search, BLEU and document translation.

mod beam;
mod bleu;
mod translate;

pub use beam::{beam_search, greedy_search, length_penalty, BeamConfig, Hypothesis, StepScorer, TableScorer};
pub use bleu::{bleu, corpus_bleu, BleuError, BleuMode, BleuReport};
pub use translate::{
    default_target_relations, source_contexts, source_ids, target_context, target_contexts, translate_sentence, DecodeSettings,
    ModelScorer, TargetMode, Translator, DEFAULT_RADIUS,
};

use crate::graph::GraphError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown translation mode {0:?} (expected tgt, tgt-prev or no-tgt)")]
    UnknownMode(String),
    #[error("{0}: target-graph mode needs a pseudo-target document")]
    MissingPseudoTarget(String),
    #[error("{doc_id}: expected {expected} sentences, got {got}")]
    SentenceCount { doc_id: String, expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
}
