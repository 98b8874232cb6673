//! Corpus ingestion and byte-pair encoding.

mod bpe;
mod ingest;

pub use bpe::{join_subwords, learn_bpe, BpeModel, Vocab, BOS, BOS_ID, END_OF_WORD, EOS, EOS_ID, UNK, UNK_ID};
pub use ingest::{
    doc_id_for, documents_from_text, load_documents, parse_conllu, parse_coref, parse_corpus, AnnotatedDocument, ConlluWord, CorefRecord,
    Mention, Token,
};

use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizeError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("num_merges must be at least 1")]
    ZeroMerges,
    #[error("cannot segment an empty word")]
    EmptyWord,
    #[error("merge table line {line}: expected two symbols, got {content:?}")]
    MalformedMerge { line: usize, content: String },
    #[error("CoNLL-U line {line}: {reason}")]
    MalformedConllu { line: usize, reason: String },
    #[error("coreference line {line}: {reason}")]
    MalformedCoref { line: usize, reason: String },
    #[error("{doc_id} sentence {sentence_index}: corpus has {corpus} tokens but CoNLL-U has {conllu}")]
    TokenCountMismatch {
        doc_id: String,
        sentence_index: usize,
        corpus: usize,
        conllu: usize,
    },
    #[error("{doc_id}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl TokenizeError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        TokenizeError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
