use serde::{Deserialize, Serialize};

use crate::graph::{build_document_graph_with, prune_to_radius, DocumentGraph, PrunedGraph, RelationSet, RelationType};
use crate::model::{FrozenContext, Fwd, GraphContext, Model, ModelError, ModelInput};
use crate::tensor::{ParamStore, Tape};
use crate::tokenize::{AnnotatedDocument, BpeModel, BOS_ID, EOS_ID};

use super::beam::{beam_search, BeamConfig, StepScorer};
use super::DecodeError;

/// Radius used to prune graphs around the current sentence.
pub const DEFAULT_RADIUS: usize = 2;

/// Where the target-side graph comes from at translation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Graph over a pseudo-target translation of the whole document.
    Tgt,
    /// Graph over the translations already produced for sentences `< m`.
    TgtPrev,
    NoTgt,
}

impl TargetMode {
    pub const ALL: [TargetMode; 3] = [TargetMode::Tgt, TargetMode::TgtPrev, TargetMode::NoTgt];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::Tgt => "tgt",
            TargetMode::TgtPrev => "tgt-prev",
            TargetMode::NoTgt => "no-tgt",
        }
    }

    pub fn uses_target_graph(self) -> bool {
        self != TargetMode::NoTgt
    }
}

impl std::str::FromStr for TargetMode {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase().replace('_', "-");
        TargetMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or(DecodeError::UnknownMode(s))
    }
}

/// Relations used for target graphs when no target-side annotation exists.
pub fn default_target_relations() -> RelationSet {
    RelationSet::of(&[RelationType::Adjacency, RelationType::Lexical])
}

/// One context per sentence: the document graph pruned around it.
pub fn source_contexts(doc: &AnnotatedDocument, graph: &DocumentGraph, radius: usize) -> Result<Vec<GraphContext>, ModelError> {
    (0..doc.num_sentences())
        .map(|m| GraphContext::from_pruned(doc, &prune_to_radius(graph, doc, m, radius)?))
        .collect()
}

/// Target context for sentence `m` under `mode`. For [`TargetMode::Tgt`]
/// `target` covers the whole document; for [`TargetMode::TgtPrev`] only its
/// sentences before `m` are used and the graph is anchored on sentence
/// `m - 1`.
pub fn target_context(
    target: &AnnotatedDocument,
    relations: RelationSet,
    m: usize,
    mode: TargetMode,
    radius: usize,
) -> Result<Option<GraphContext>, ModelError> {
    match mode {
        TargetMode::NoTgt => Ok(None),
        TargetMode::Tgt => {
            if m >= target.num_sentences() {
                return Ok(Some(GraphContext::empty()));
            }
            let g = build_document_graph_with(target, relations);
            Ok(Some(GraphContext::from_pruned(target, &prune_to_radius(&g, target, m, radius)?)?))
        }
        TargetMode::TgtPrev => {
            if m == 0 {
                return Ok(Some(GraphContext::empty()));
            }
            let prev = target.prefix(m);
            if prev.num_sentences() < m {
                return Ok(Some(GraphContext::empty()));
            }
            let g = build_document_graph_with(&prev, relations);
            let pruned: PrunedGraph = prune_to_radius(&g, &prev, m - 1, radius)?;
            Ok(Some(GraphContext::from_pruned(&prev, &pruned)?))
        }
    }
}

/// Target contexts for every sentence of a fixed target document.
pub fn target_contexts(
    target: &AnnotatedDocument,
    relations: RelationSet,
    mode: TargetMode,
    radius: usize,
) -> Result<Vec<Option<GraphContext>>, ModelError> {
    if mode != TargetMode::Tgt {
        return (0..target.num_sentences())
            .map(|m| target_context(target, relations, m, mode, radius))
            .collect();
    }
    let g = build_document_graph_with(target, relations);
    (0..target.num_sentences())
        .map(|m| Ok(Some(GraphContext::from_pruned(target, &prune_to_radius(&g, target, m, radius)?)?)))
        .collect()
}

/// Source sentence ids followed by EOS.
pub fn source_ids(doc: &AnnotatedDocument, m: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = doc.sentence_subwords(m).into_iter().map(|x| x as usize).collect();
    ids.push(EOS_ID as usize);
    ids
}

/// Decoder-backed scorer over a fixed encoded source.
pub struct ModelScorer<'a> {
    model: &'a Model,
    store: &'a ParamStore,
    context: FrozenContext,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, store: &'a ParamStore, input: ModelInput<'_>) -> Result<Self, ModelError> {
        let tape = Tape::new();
        let fx = Fwd::eval(&tape, store);
        let context = model.encode(&fx, input)?.freeze();
        Ok(ModelScorer { model, store, context })
    }
}

impl StepScorer for ModelScorer<'_> {
    type Error = ModelError;

    fn vocab_size(&self) -> usize {
        self.model.config.tgt_vocab
    }

    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        let tape = Tape::new();
        let fx = Fwd::eval(&tape, self.store);
        let ctx = self.context.attach(&tape);
        let mut tgt_in = Vec::with_capacity(prefix.len() + 1);
        tgt_in.push(BOS_ID as usize);
        tgt_in.extend_from_slice(prefix);
        let lp = self.model.decode(&fx, &ctx, &tgt_in)?;
        let v = lp.value();
        Ok(v.row(v.rows() - 1).to_vec())
    }
}

/// Beam width and length-penalty exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeSettings {
    pub beam: usize,
    pub alpha: f64,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings { beam: 4, alpha: 0.6 }
    }
}

/// Translate one sentence; returns target subword ids without EOS.
pub fn translate_sentence(
    model: &Model,
    store: &ParamStore,
    input: ModelInput<'_>,
    settings: DecodeSettings,
) -> Result<Vec<u32>, ModelError> {
    let mut scorer = ModelScorer::new(model, store, input)?;
    let src_len = input.src.len().saturating_sub(1);
    let config = BeamConfig::new(settings.beam, settings.alpha, BeamConfig::cap_for(src_len), EOS_ID as usize);
    let h = beam_search(&mut scorer, &config)?;
    Ok(h.content(EOS_ID as usize).iter().map(|&t| t as u32).collect())
}

/// Everything fixed while translating a corpus.
#[derive(Clone, Copy)]
pub struct Translator<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore,
    pub bpe: &'a BpeModel,
    pub settings: DecodeSettings,
    pub radius: usize,
    pub target_relations: RelationSet,
}

impl<'a> Translator<'a> {
    pub fn new(model: &'a Model, store: &'a ParamStore, bpe: &'a BpeModel) -> Self {
        Translator {
            model,
            store,
            bpe,
            settings: DecodeSettings::default(),
            radius: DEFAULT_RADIUS,
            target_relations: default_target_relations(),
        }
    }

    /// Translate a document sentence by sentence in order. `pseudo` is the
    /// pseudo-target document required by [`TargetMode::Tgt`].
    pub fn translate_document(
        &self,
        doc: &AnnotatedDocument,
        graph: &DocumentGraph,
        mode: TargetMode,
        pseudo: Option<&AnnotatedDocument>,
    ) -> Result<Vec<Vec<u32>>, DecodeError> {
        let model = self.model.with_config(crate::model::ModelConfig {
            use_tgt_graph: self.model.config.use_tgt_graph && mode.uses_target_graph(),
            ..self.model.config.clone()
        })?;
        let src_ctx = if model.config.use_src_graph {
            source_contexts(doc, graph, self.radius)?
        } else {
            Vec::new()
        };
        let tgt_ctx: Vec<Option<GraphContext>> = match (mode, model.config.use_tgt_graph) {
            (_, false) | (TargetMode::NoTgt, _) => vec![None; doc.num_sentences()],
            (TargetMode::Tgt, true) => {
                let p = pseudo.ok_or(DecodeError::MissingPseudoTarget(doc.doc_id.clone()))?;
                if p.num_sentences() != doc.num_sentences() {
                    return Err(DecodeError::SentenceCount {
                        doc_id: doc.doc_id.clone(),
                        expected: doc.num_sentences(),
                        got: p.num_sentences(),
                    });
                }
                target_contexts(p, self.target_relations, TargetMode::Tgt, self.radius)?
            }
            (TargetMode::TgtPrev, true) => Vec::new(),
        };

        let mut out: Vec<Vec<u32>> = Vec::with_capacity(doc.num_sentences());
        for m in 0..doc.num_sentences() {
            let src = source_ids(doc, m);
            let tgt_graph = if mode == TargetMode::TgtPrev && model.config.use_tgt_graph {
                let prev = AnnotatedDocument::from_subwords(doc.doc_id.clone(), &out, self.bpe);
                target_context(&prev, self.target_relations, m, TargetMode::TgtPrev, self.radius)?
            } else {
                tgt_ctx[m].clone()
            };
            let input = ModelInput {
                src: &src,
                src_graph: src_ctx.get(m),
                tgt_graph: tgt_graph.as_ref(),
            };
            out.push(translate_sentence(&model, self.store, input, self.settings)?);
        }
        Ok(out)
    }

    /// Words of translated subword sentences.
    pub fn words(&self, sentences: &[Vec<u32>]) -> Vec<Vec<String>> {
        sentences
            .iter()
            .map(|s| self.bpe.decode_words(s).into_iter().map(|(w, _)| w).collect())
            .collect()
    }
}
