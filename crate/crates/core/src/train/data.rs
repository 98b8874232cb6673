use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decode::{source_contexts, source_ids, target_contexts, TargetMode};
use crate::graph::{DocumentGraph, RelationSet};
use crate::model::{Example, ModelError};
use crate::tokenize::{documents_from_text, AnnotatedDocument, BpeModel, BOS_ID, EOS_ID};

use super::TrainError;

/// Source and reference target document with aligned sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelDocument {
    pub src: AnnotatedDocument,
    pub tgt: AnnotatedDocument,
}

impl ParallelDocument {
    pub fn new(src: AnnotatedDocument, tgt: AnnotatedDocument) -> Result<Self, TrainError> {
        if src.num_sentences() != tgt.num_sentences() {
            return Err(TrainError::SentenceCount {
                doc_id: src.doc_id.clone(),
                src: src.num_sentences(),
                tgt: tgt.num_sentences(),
            });
        }
        Ok(ParallelDocument { src, tgt })
    }

    pub fn num_sentences(&self) -> usize {
        self.src.num_sentences()
    }
}

/// Pair source and target corpus texts document by document. Annotation
/// texts apply to the source side.
pub fn parallel_from_text(
    src: &str,
    tgt: &str,
    src_conllu: Option<&str>,
    src_coref: Option<&str>,
    bpe: &BpeModel,
) -> Result<Vec<ParallelDocument>, TrainError> {
    let s = documents_from_text(src, src_conllu, src_coref, bpe)?;
    let t = documents_from_text(tgt, None, None, bpe)?;
    if s.len() != t.len() {
        return Err(TrainError::DocumentCount {
            src: s.len(),
            tgt: t.len(),
        });
    }
    s.into_iter().zip(t).map(|(s, t)| ParallelDocument::new(s, t)).collect()
}

pub fn load_parallel(
    src: &Path,
    tgt: &Path,
    src_conllu: Option<&Path>,
    src_coref: Option<&Path>,
    bpe: &BpeModel,
) -> Result<Vec<ParallelDocument>, TrainError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| TrainError::io(p, e));
    let conllu = src_conllu.map(read).transpose()?;
    let coref = src_coref.map(read).transpose()?;
    parallel_from_text(&read(src)?, &read(tgt)?, conllu.as_deref(), coref.as_deref(), bpe)
}

/// Teacher-forcing example for sentence `m` without graphs.
pub fn sentence_example(pair: &ParallelDocument, m: usize) -> Example {
    let tgt: Vec<usize> = pair.tgt.sentence_subwords(m).into_iter().map(|x| x as usize).collect();
    let mut tgt_in = vec![BOS_ID as usize];
    tgt_in.extend_from_slice(&tgt);
    let mut tgt_out = tgt;
    tgt_out.push(EOS_ID as usize);
    Example {
        src: source_ids(&pair.src, m),
        tgt_in,
        tgt_out,
        src_graph: None,
        tgt_graph: None,
    }
}

/// Examples of every sentence, grouped by document.
pub fn sentence_examples(corpus: &[ParallelDocument]) -> Vec<Vec<Example>> {
    corpus
        .iter()
        .map(|d| (0..d.num_sentences()).map(|m| sentence_example(d, m)).collect())
        .collect()
}

/// A parallel document with its precomputed source graph and the
/// pseudo-target translation its target graphs are built from.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDocument {
    pub pair: ParallelDocument,
    pub src_graph: DocumentGraph,
    pub pseudo: AnnotatedDocument,
}

/// Examples carrying pruned source and target graph contexts.
pub fn graph_examples(
    docs: &[GraphDocument],
    mode: TargetMode,
    relations: RelationSet,
    radius: usize,
) -> Result<Vec<Vec<Example>>, ModelError> {
    docs.iter()
        .map(|d| {
            let src = source_contexts(&d.pair.src, &d.src_graph, radius)?;
            let tgt = match mode {
                TargetMode::NoTgt => vec![None; d.pair.num_sentences()],
                _ => target_contexts(&d.pseudo, relations, mode, radius)?,
            };
            Ok((0..d.pair.num_sentences())
                .map(|m| Example {
                    src_graph: Some(src[m].clone()),
                    tgt_graph: tgt.get(m).cloned().flatten(),
                    ..sentence_example(&d.pair, m)
                })
                .collect())
        })
        .collect()
}

pub(crate) fn mix(a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 finalizer over a simple combination.
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ c.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream of batches: documents are shuffled per epoch and
/// their sentences taken in order until the target-token budget is reached.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchCursor {
    seed: u64,
    budget: usize,
    epoch: u64,
    order: Vec<(usize, usize)>,
    pos: usize,
}

impl BatchCursor {
    pub fn new(docs: &[Vec<Example>], seed: u64, budget: usize) -> Self {
        let mut c = BatchCursor {
            seed,
            budget: budget.max(1),
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        c.shuffle(docs);
        c
    }

    fn shuffle(&mut self, docs: &[Vec<Example>]) {
        let mut ids: Vec<usize> = (0..docs.len()).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.seed, self.epoch, 0xe90c)));
        self.order = ids.into_iter().flat_map(|d| (0..docs[d].len()).map(move |m| (d, m))).collect();
        self.pos = 0;
    }

    /// `(document, sentence)` indices of the next batch; never empty for a
    /// non-empty corpus.
    pub fn next_batch(&mut self, docs: &[Vec<Example>]) -> Vec<(usize, usize)> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.shuffle(docs);
        }
        let mut batch = Vec::new();
        let mut tokens = 0;
        while self.pos < self.order.len() {
            let (d, m) = self.order[self.pos];
            let n = docs[d][m].tgt_out.len();
            if !batch.is_empty() && tokens + n > self.budget {
                break;
            }
            batch.push((d, m));
            tokens += n;
            self.pos += 1;
        }
        batch
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}
