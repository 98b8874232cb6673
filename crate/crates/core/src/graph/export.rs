use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::tokenize::AnnotatedDocument;

use super::{DocumentGraph, Edge, GraphError, RelationType};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub sentence: usize,
    pub word: usize,
    pub surface: String,
    pub lemma: String,
}

/// Serializable graph of one document; one JSON object per line in graph files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub doc_id: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<(usize, usize, RelationType)>,
}

impl GraphRecord {
    pub fn from_graph(doc: &AnnotatedDocument, graph: &DocumentGraph) -> Self {
        let nodes = graph
            .nodes()
            .iter()
            .map(|&g| {
                let t = doc.token(g).expect("graph nodes index document words");
                NodeRecord {
                    id: g,
                    sentence: t.sentence_index,
                    word: t.word_index,
                    surface: t.surface.clone(),
                    lemma: t.lemma.clone(),
                }
            })
            .collect();
        let edges = graph.edges().iter().map(|e| (e.src, e.dst, e.label)).collect();
        GraphRecord {
            doc_id: doc.doc_id.clone(),
            nodes,
            edges,
        }
    }

    pub fn to_graph(&self) -> Result<DocumentGraph, GraphError> {
        DocumentGraph::from_parts(
            self.nodes.iter().map(|n| n.id),
            self.edges.iter().map(|&(src, dst, label)| Edge { src, dst, label }),
        )
    }

    /// Global index ranges of each sentence, recovered from node records.
    pub fn sentence_ranges(&self) -> Result<Vec<Range<usize>>, GraphError> {
        let mut ranges: Vec<Range<usize>> = Vec::new();
        let mut nodes: Vec<&NodeRecord> = self.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        for n in nodes {
            if n.sentence == ranges.len() && ranges.last().map_or(n.id == 0, |r| r.end == n.id) {
                ranges.push(n.id..n.id + 1);
            } else if n.sentence + 1 == ranges.len() && ranges[n.sentence].end == n.id {
                ranges[n.sentence].end += 1;
            } else {
                return Err(GraphError::Malformed(format!("node {} breaks sentence order", n.id)));
            }
        }
        Ok(ranges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph records always serialize")
    }

    pub fn from_json(line: &str) -> Result<Self, GraphError> {
        serde_json::from_str(line).map_err(|e| GraphError::Malformed(e.to_string()))
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering; nodes are clustered by sentence when `doc` is given.
pub fn to_dot(graph: &DocumentGraph, doc: Option<&AnnotatedDocument>) -> String {
    let mut out = String::from("digraph doc {\n  node [shape=box];\n");
    match doc {
        Some(doc) => {
            let mut current = usize::MAX;
            for &g in graph.nodes() {
                let t = doc.token(g).expect("graph nodes index document words");
                if t.sentence_index != current {
                    if current != usize::MAX {
                        out.push_str("  }\n");
                    }
                    current = t.sentence_index;
                    let _ = writeln!(out, "  subgraph cluster_{current} {{\n    label=\"s{current}\";");
                }
                let _ = writeln!(out, "    n{g} [label=\"{}\"];", escape(&t.surface));
            }
            if current != usize::MAX {
                out.push_str("  }\n");
            }
        }
        None => {
            for &g in graph.nodes() {
                let _ = writeln!(out, "  n{g};");
            }
        }
    }
    for e in graph.edges() {
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, e.label);
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_document_graph;
    use crate::tokenize::learn_bpe;

    fn doc() -> AnnotatedDocument {
        let bpe = learn_bpe(&[vec!["a"]], 1).unwrap();
        AnnotatedDocument::from_sentences("d7", &[vec!["the", "\"cat\""], vec!["the", "dog"]], &bpe).unwrap()
    }

    #[test]
    fn json_round_trip() {
        let d = doc();
        let g = build_document_graph(&d);
        let rec = GraphRecord::from_graph(&d, &g);
        let back = GraphRecord::from_json(&rec.to_json()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.to_graph().unwrap(), g);
        assert_eq!(back.sentence_ranges().unwrap(), vec![0..2, 2..4]);
        assert!(rec.to_json().contains("[0,2,\"lexical\"]"));
    }

    #[test]
    fn dot_has_every_edge() {
        let d = doc();
        let g = build_document_graph(&d);
        let dot = to_dot(&g, Some(&d));
        assert_eq!(dot.matches("->").count(), g.edge_count());
        assert!(dot.contains("cluster_1"));
        assert!(dot.contains("\\\"cat\\\""));
        assert!(to_dot(&g, None).contains("n3;"));
    }

    #[test]
    fn malformed_json_is_an_error() {
        assert!(matches!(GraphRecord::from_json("{"), Err(GraphError::Malformed(_))));
    }
}
