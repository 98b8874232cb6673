//! WebAssembly bindings for the static demo page in `www/`. Every export
//! takes plain text and returns a JSON string; the JSON-producing functions
//! are ordinary Rust so they can be tested natively.

use std::collections::BTreeSet;

use docgraph::decode::{bleu, BleuMode};
use docgraph::graph::{build_document_graph_with, propagation_matrices, prune_to_radius, EdgeDirection, GraphRecord, RelationSet};
use docgraph::tokenize::{parse_corpus, AnnotatedDocument, BpeModel};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// One document from text with one sentence per line; blank lines are
/// ignored.
fn document(text: &str) -> Result<AnnotatedDocument, String> {
    let sentences: Vec<Vec<String>> = parse_corpus(text).concat();
    if sentences.is_empty() {
        return Err("enter at least one sentence".into());
    }
    let alphabet: BTreeSet<char> = sentences.iter().flatten().flat_map(|w| w.chars()).collect();
    let bpe = BpeModel::from_parts(alphabet, Vec::new());
    AnnotatedDocument::from_sentences("demo", &sentences, &bpe).map_err(|e| e.to_string())
}

fn relations(names: &str) -> Result<RelationSet, String> {
    names.parse().map_err(|e: docgraph::graph::GraphError| e.to_string())
}

#[derive(Serialize)]
struct GraphView {
    graph: GraphRecord,
    /// Global ids of words within `radius` of the chosen sentence.
    kept: Vec<usize>,
}

pub fn graph_json(text: &str, relation_names: &str, sentence: usize, radius: usize) -> Result<String, String> {
    let doc = document(text)?;
    let g = build_document_graph_with(&doc, relations(relation_names)?);
    let sentence = sentence.min(doc.num_sentences() - 1);
    let pruned = prune_to_radius(&g, &doc, sentence, radius).map_err(|e| e.to_string())?;
    let view = GraphView {
        graph: GraphRecord::from_graph(&doc, &g),
        kept: pruned.graph.nodes().to_vec(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct MatrixView {
    words: Vec<String>,
    adjacency: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    degree: Vec<f64>,
}

pub fn propagation_json(text: &str, relation_names: &str, direction: &str) -> Result<String, String> {
    let doc = document(text)?;
    let g = build_document_graph_with(&doc, relations(relation_names)?);
    let dir = EdgeDirection::ALL
        .into_iter()
        .find(|d| d.as_str() == direction)
        .ok_or_else(|| format!("unknown direction {direction:?} (expected in, out or self)"))?;
    let p = propagation_matrices(&g).map_err(|e| e.to_string())?;
    let m = p.get(dir);
    let rows = |t: &docgraph::tensor::Tensor| (0..t.rows()).map(|r| t.row(r).to_vec()).collect();
    let view = MatrixView {
        words: doc.tokens().map(|t| t.surface.clone()).collect(),
        adjacency: rows(&m.adjacency),
        normalized: rows(&m.normalized),
        degree: m.degree.clone(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// BLEU of hypothesis against reference text, aligned line by line; blank
/// lines separate documents.
pub fn bleu_json(hyp: &str, reference: &str, mode: &str, smooth: bool) -> Result<String, String> {
    let mode: BleuMode = mode.parse().map_err(|e| format!("{e}"))?;
    let report = bleu(&parse_corpus(hyp), &parse_corpus(reference), mode, smooth).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn build_graph(text: &str, relations: &str, sentence: usize, radius: usize) -> Result<String, JsError> {
    graph_json(text, relations, sentence, radius).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn propagation(text: &str, relations: &str, direction: &str) -> Result<String, JsError> {
    propagation_json(text, relations, direction).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn score_bleu(hyp: &str, reference: &str, mode: &str, smooth: bool) -> Result<String, JsError> {
    bleu_json(hyp, reference, mode, smooth).map_err(|e| JsError::new(&e))
}
