//! Synthetic corpora for behavioral checks.
//!
//! The context task plants a marker word next to a cue early in each
//! document and repeats the bare marker a few sentences later. The
//! translation of the repeat depends only on the earlier cue, so a
//! sentence-level model is at chance on it while a model that follows the
//! lexical edge between the two markers is not.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{default_target_relations, DecodeSettings};
use crate::model::{Example, Model, ModelConfig};
use crate::tensor::ParamStore;
use crate::tokenize::{learn_bpe, AnnotatedDocument, BpeModel, TokenizeError};
use crate::train::{
    graph_documents, graph_examples, predict, sentence_examples, train_stage1, train_stage2, ParallelDocument, TrainConfig, TrainError,
};

pub const MARKER: &str = "key";
pub const CUES: [&str; 2] = ["ca", "cb"];
pub const CUE_TRANSLATIONS: [&str; 2] = ["xa", "xb"];
pub const MARKER_TRANSLATIONS: [&str; 2] = ["ka", "kb"];

/// Word-level document pair: sentences of words on both sides.
pub type TextDocument = (Vec<Vec<String>>, Vec<Vec<String>>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextTaskConfig {
    pub train_docs: usize,
    pub heldout_docs: usize,
    pub fillers: usize,
    /// Inclusive range of sentences between the cue and the bare marker.
    pub min_gap: usize,
    pub max_gap: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Distinct bare-marker sentences. Each recurs with both senses, so a
    /// sentence-level model cannot memorize the answer.
    pub templates: usize,
    pub seed: u64,
}

impl Default for ContextTaskConfig {
    fn default() -> Self {
        ContextTaskConfig {
            train_docs: 120,
            heldout_docs: 40,
            fillers: 30,
            min_gap: 2,
            max_gap: 4,
            min_len: 2,
            max_len: 4,
            templates: 4,
            seed: 0,
        }
    }
}

fn filler(side: char, i: usize) -> String {
    format!("{side}{i}")
}

fn filler_sentence(rng: &mut ChaCha8Rng, c: &ContextTaskConfig) -> (Vec<String>, Vec<String>) {
    let n = rng.gen_range(c.min_len..=c.max_len);
    let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c.fillers)).collect();
    (
        ids.iter().map(|&i| filler('s', i)).collect(),
        ids.iter().map(|&i| filler('t', i)).collect(),
    )
}

/// Bare-marker sentence pairs with the marker translation left as sense 0.
fn marker_templates(rng: &mut ChaCha8Rng, c: &ContextTaskConfig) -> Vec<(Vec<String>, Vec<String>, usize)> {
    (0..c.templates.max(1))
        .map(|_| {
            let (mut s, mut t) = filler_sentence(rng, c);
            let at = rng.gen_range(0..=s.len());
            s.insert(at, MARKER.to_string());
            t.insert(at, MARKER_TRANSLATIONS[0].to_string());
            (s, t, at)
        })
        .collect()
}

/// One document: cue sentence, `gap - 1` fillers, a bare marker sentence
/// drawn from `templates`, then one trailing filler sentence.
fn context_document_from(rng: &mut ChaCha8Rng, c: &ContextTaskConfig, templates: &[(Vec<String>, Vec<String>, usize)]) -> TextDocument {
    let sense = rng.gen_range(0..2);
    let gap = rng.gen_range(c.min_gap..=c.max_gap);
    let (mut src, mut tgt) = (Vec::new(), Vec::new());

    let (mut s, mut t) = filler_sentence(rng, c);
    let at = rng.gen_range(0..=s.len());
    s.splice(at..at, [MARKER.to_string(), CUES[sense].to_string()]);
    t.splice(
        at..at,
        [MARKER_TRANSLATIONS[sense].to_string(), CUE_TRANSLATIONS[sense].to_string()],
    );
    src.push(s);
    tgt.push(t);

    for _ in 1..gap {
        let (s, t) = filler_sentence(rng, c);
        src.push(s);
        tgt.push(t);
    }

    let (s, mut t, at) = templates.choose(rng).expect("at least one template").clone();
    t[at] = MARKER_TRANSLATIONS[sense].to_string();
    src.push(s);
    tgt.push(t);

    let (s, t) = filler_sentence(rng, c);
    src.push(s);
    tgt.push(t);
    (src, tgt)
}

/// Training and held-out splits with a joint BPE model in which every word is
/// a single subword.
#[derive(Clone, Debug)]
pub struct ContextTask {
    pub bpe: BpeModel,
    pub train: Vec<ParallelDocument>,
    pub heldout: Vec<ParallelDocument>,
}

pub fn context_text(c: &ContextTaskConfig) -> (Vec<TextDocument>, Vec<TextDocument>) {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let templates = marker_templates(&mut rng, c);
    let train = (0..c.train_docs).map(|_| context_document_from(&mut rng, c, &templates)).collect();
    let heldout = (0..c.heldout_docs)
        .map(|_| context_document_from(&mut rng, c, &templates))
        .collect();
    (train, heldout)
}

/// Joint BPE over both sides of every document in which each distinct word
/// becomes one symbol.
pub fn word_level_bpe(docs: &[TextDocument]) -> Result<BpeModel, TokenizeError> {
    let words: BTreeSet<&String> = docs.iter().flat_map(|(s, t)| s.iter().chain(t).flatten()).collect();
    // Each word counted twice so every pair clears the merge threshold.
    let corpus: Vec<Vec<&String>> = vec![words.iter().flat_map(|&w| [w, w]).collect()];
    let chars: usize = words.iter().map(|w| w.chars().count()).sum();
    learn_bpe(&corpus, chars.max(1))
}

pub fn to_parallel(docs: &[TextDocument], prefix: &str, bpe: &BpeModel) -> Result<Vec<ParallelDocument>, TrainError> {
    docs.iter()
        .enumerate()
        .map(|(i, (s, t))| {
            let id = format!("{prefix}{i}");
            let src = AnnotatedDocument::from_sentences(id.clone(), s, bpe)?;
            let tgt = AnnotatedDocument::from_sentences(id, t, bpe)?;
            ParallelDocument::new(src, tgt)
        })
        .collect()
}

pub fn context_task(c: &ContextTaskConfig) -> Result<ContextTask, TrainError> {
    let (train, heldout) = context_text(c);
    let all: Vec<TextDocument> = train.iter().chain(&heldout).cloned().collect();
    let bpe = word_level_bpe(&all)?;
    Ok(ContextTask {
        train: to_parallel(&train, "train", &bpe)?,
        heldout: to_parallel(&heldout, "heldout", &bpe)?,
        bpe,
    })
}

/// `(sentence, target position)` of every bare marker translation, i.e.
/// those whose sentence carries no cue. Positions index the target subword
/// sequence of the sentence, which is also the `tgt_out` index.
pub fn marker_positions(doc: &ParallelDocument) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for m in 0..doc.num_sentences() {
        if doc.src.sentence_words(m).iter().any(|w| CUES.contains(w)) {
            continue;
        }
        let range = doc.tgt.sentence_range(m);
        let mut pos = 0;
        for g in range {
            let word = &doc.tgt.token(g).expect("token in range").surface;
            if MARKER_TRANSLATIONS.contains(&word.as_str()) {
                out.push((m, pos));
            }
            pos += doc.tgt.subword_map[g].len();
        }
    }
    out
}

/// Teacher-forced accuracy on bare marker translations. `examples` are
/// aligned with `docs` document by document.
pub fn marker_accuracy(model: &Model, store: &ParamStore, docs: &[ParallelDocument], examples: &[Vec<Example>]) -> Result<f64, TrainError> {
    let (mut correct, mut total) = (0usize, 0usize);
    for (doc, exs) in docs.iter().zip(examples) {
        let positions = marker_positions(doc);
        let mut sentences: Vec<usize> = positions.iter().map(|&(m, _)| m).collect();
        sentences.dedup();
        for m in sentences {
            let p = predict(model, store, &exs[m])?;
            for &(_, i) in positions.iter().filter(|&&(s, _)| s == m) {
                correct += usize::from(p[i] == exs[m].tgt_out[i]);
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Both training stages on the context task.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextExperiment {
    pub task: ContextTaskConfig,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

impl ContextExperiment {
    /// Desk-scale setup for a seed.
    pub fn desk(seed: u64) -> Self {
        ContextExperiment {
            task: ContextTaskConfig {
                seed,
                ..Default::default()
            },
            model: ModelConfig {
                layers: 1,
                heads: 4,
                hidden: 32,
                ffn: 64,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            stage1: TrainConfig {
                learning_rate: 3e-3,
                warmup_steps: 100,
                batch_tokens: 96,
                max_steps: 800,
                seed,
                ..TrainConfig::default()
            },
            // The cue reaches the marker through two sigmoid graph layers, so
            // its signal starts tiny; the default lr/10 needs far more steps.
            stage2: TrainConfig {
                learning_rate: 3e-3,
                stage2_learning_rate: Some(5e-3),
                warmup_steps: 100,
                batch_tokens: 96,
                max_steps: 3000,
                seed,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextResult {
    pub stage1_accuracy: f64,
    pub stage2_accuracy: f64,
    pub stage2_final_loss: f64,
}

pub fn run_context_experiment(e: &ContextExperiment) -> Result<ContextResult, TrainError> {
    let task = context_task(&e.task)?;
    let stage1 = train_stage1(&task.train, &task.bpe, e.model.clone(), e.stage1.clone(), |_| {})?;
    let (m1, s1) = stage1.restore()?;
    let stage1_accuracy = marker_accuracy(&m1, &s1, &task.heldout, &sentence_examples(&task.heldout))?;

    let settings = DecodeSettings::default();
    let relations = default_target_relations();
    let train_docs = graph_documents(&stage1, &task.train, settings, relations)?;
    let heldout_docs = graph_documents(&stage1, &task.heldout, settings, relations)?;
    let mut final_loss = f64::NAN;
    let model_config = ModelConfig {
        use_src_graph: true,
        use_tgt_graph: true,
        ..stage1.config().clone()
    };
    let stage2 = train_stage2(&stage1, model_config, &train_docs, e.stage2.clone(), |r| final_loss = r.loss)?;
    let (m2, s2) = stage2.restore()?;
    let examples = graph_examples(&heldout_docs, e.stage2.target_mode, e.stage2.target_relations, e.stage2.radius)?;
    let stage2_accuracy = marker_accuracy(&m2, &s2, &task.heldout, &examples)?;
    Ok(ContextResult {
        stage1_accuracy,
        stage2_accuracy,
        stage2_final_loss: final_loss,
    })
}

/// Documents of distinct filler words in which one word recurs at a chosen
/// sentence distance, so pruned graphs reach far in text while staying small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatCorpusConfig {
    pub docs: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    pub seed: u64,
}

impl Default for RepeatCorpusConfig {
    fn default() -> Self {
        RepeatCorpusConfig {
            docs: 40,
            sentences: 24,
            sentence_len: 6,
            seed: 0,
        }
    }
}

/// Each document repeats one word of sentence 0 in a later sentence; the
/// distances vary across documents. Every other word is unique in its
/// document.
pub fn repeat_corpus(c: &RepeatCorpusConfig) -> Vec<Vec<Vec<String>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    (0..c.docs)
        .map(|_| {
            let mut next = 0usize;
            let mut doc: Vec<Vec<String>> = (0..c.sentences)
                .map(|_| {
                    (0..c.sentence_len)
                        .map(|_| {
                            next += 1;
                            format!("w{next}")
                        })
                        .collect()
                })
                .collect();
            if c.sentences > 1 && c.sentence_len > 0 {
                let later = rng.gen_range(1..c.sentences);
                let word = doc[0].choose(&mut rng).expect("non-empty sentence").clone();
                let at = rng.gen_range(0..c.sentence_len);
                doc[later][at] = word;
            }
            doc
        })
        .collect()
}

/// Plain corpus text: one sentence per line, documents separated by a blank
/// line.
pub fn corpus_text(docs: &[Vec<Vec<String>>]) -> String {
    docs.iter()
        .map(|d| d.iter().map(|s| s.join(" ") + "\n").collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_document_graph, RelationType};
    use crate::tokenize::parse_corpus;

    #[test]
    fn documents_have_the_planted_structure() {
        let c = ContextTaskConfig {
            train_docs: 50,
            ..Default::default()
        };
        let (train, _) = context_text(&c);
        let bare: std::collections::BTreeSet<&Vec<String>> = train.iter().map(|(s, _)| &s[s.len() - 2]).collect();
        assert!(bare.len() <= c.templates);
        for (src, tgt) in &train {
            assert!((c.min_gap + 2..=c.max_gap + 2).contains(&src.len()));
            let cue_sense = CUES.iter().position(|q| src[0].iter().any(|w| w == q)).unwrap();
            let bare = src.len() - 2;
            let i = src[bare].iter().position(|w| w == MARKER).unwrap();
            assert_eq!(tgt[bare][i], MARKER_TRANSLATIONS[cue_sense]);
            for (s, t) in src.iter().zip(tgt) {
                assert_eq!(s.len(), t.len());
            }
        }
    }

    #[test]
    fn markers_are_linked_by_a_lexical_edge() {
        let task = context_task(&ContextTaskConfig {
            train_docs: 5,
            heldout_docs: 1,
            ..Default::default()
        })
        .unwrap();
        for d in &task.train {
            let g = build_document_graph(&d.src);
            let markers: Vec<usize> = d.src.tokens().filter(|t| t.surface == MARKER).map(|t| t.global_index).collect();
            assert_eq!(markers.len(), 2);
            assert!(g.has_edge(markers[0], markers[1], RelationType::Lexical));
            assert_eq!(marker_positions(d).len(), 1);
            assert!(d.src.subword_map.iter().all(|s| s.len() == 1));
        }
    }

    #[test]
    fn repeat_corpus_round_trips_as_text() {
        let c = RepeatCorpusConfig {
            docs: 3,
            sentences: 5,
            sentence_len: 4,
            seed: 1,
        };
        let docs = repeat_corpus(&c);
        assert_eq!(parse_corpus(&corpus_text(&docs)), docs);
        for d in &docs {
            let words: Vec<&String> = d.iter().flatten().collect();
            let mut unique = words.clone();
            unique.sort();
            unique.dedup();
            assert_eq!(unique.len(), words.len() - 1);
        }
    }
}
