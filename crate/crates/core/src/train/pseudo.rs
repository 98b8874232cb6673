use crate::decode::{source_ids, translate_sentence, DecodeSettings};
use crate::graph::{build_document_graph, build_document_graph_with, DocumentGraph, RelationSet};
use crate::model::{Model, ModelInput};
use crate::tensor::ParamStore;
use crate::tokenize::{AnnotatedDocument, BpeModel};

use super::{Checkpoint, GraphDocument, ParallelDocument, TrainError};

/// Context-agnostic translation of a source document and its graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoTarget {
    pub doc: AnnotatedDocument,
    pub graph: DocumentGraph,
}

fn pseudo_target(
    model: &Model,
    store: &ParamStore,
    bpe: &BpeModel,
    doc: &AnnotatedDocument,
    settings: DecodeSettings,
    relations: RelationSet,
) -> Result<PseudoTarget, TrainError> {
    let mut sentences = Vec::with_capacity(doc.num_sentences());
    for m in 0..doc.num_sentences() {
        let src = source_ids(doc, m);
        let input = ModelInput {
            src: &src,
            src_graph: None,
            tgt_graph: None,
        };
        sentences.push(translate_sentence(model, store, input, settings)?);
    }
    let out = AnnotatedDocument::from_subwords(doc.doc_id.clone(), &sentences, bpe);
    let graph = build_document_graph_with(&out, relations);
    Ok(PseudoTarget { doc: out, graph })
}

/// Beam-decode every sentence of every document independently with the
/// sentence-level model and build target graphs over the results. A stage-2
/// checkpoint works too: its stage-1 parameters are the frozen originals.
pub fn generate_pseudo_targets(
    stage1: &Checkpoint,
    src_docs: &[AnnotatedDocument],
    settings: DecodeSettings,
    relations: RelationSet,
) -> Result<Vec<PseudoTarget>, TrainError> {
    let (model, store) = stage1.restore_with(stage1.config().sentence_level())?;
    let run = |doc: &AnnotatedDocument| pseudo_target(&model, &store, stage1.bpe(), doc, settings, relations);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        src_docs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        src_docs.iter().map(run).collect()
    }
}

/// Stage-2 inputs: source graphs built once and pseudo targets from the
/// stage-1 model.
pub fn graph_documents(
    stage1: &Checkpoint,
    docs: &[ParallelDocument],
    settings: DecodeSettings,
    relations: RelationSet,
) -> Result<Vec<GraphDocument>, TrainError> {
    let srcs: Vec<AnnotatedDocument> = docs.iter().map(|d| d.src.clone()).collect();
    let pseudo = generate_pseudo_targets(stage1, &srcs, settings, relations)?;
    Ok(docs
        .iter()
        .zip(pseudo)
        .map(|(pair, p)| GraphDocument {
            src_graph: build_document_graph(&pair.src),
            pair: pair.clone(),
            pseudo: p.doc,
        })
        .collect())
}
