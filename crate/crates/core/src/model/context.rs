use crate::graph::{propagation_matrices, PropagationMatrices, PrunedGraph};
use crate::graph_encoder::GraphEncoderError;
use crate::tensor::Var;
use crate::tokenize::AnnotatedDocument;

use super::{ContextScope, ModelError};

/// Everything the model needs from one pruned graph, precomputed once.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphContext {
    /// Subword ids of each node, in local node order.
    pub node_subwords: Vec<Vec<usize>>,
    /// `None` iff the graph has no nodes.
    pub props: Option<PropagationMatrices>,
    /// Local indices of the anchor sentence's nodes.
    pub current: Vec<usize>,
    /// `current` plus immediate neighbours, sorted.
    pub related: Vec<usize>,
}

impl GraphContext {
    pub fn empty() -> Self {
        GraphContext {
            node_subwords: Vec::new(),
            props: None,
            current: Vec::new(),
            related: Vec::new(),
        }
    }

    pub fn from_pruned(doc: &AnnotatedDocument, pruned: &PrunedGraph) -> Result<Self, ModelError> {
        let graph = &pruned.graph;
        if graph.node_count() == 0 {
            return Ok(Self::empty());
        }
        let mut node_subwords = Vec::with_capacity(graph.node_count());
        for &g in graph.nodes() {
            let pieces = doc.subword_map.get(g).ok_or(GraphEncoderError::UnknownNode(g))?;
            if pieces.is_empty() {
                return Err(GraphEncoderError::MissingSubwords {
                    doc_id: doc.doc_id.clone(),
                    token: g,
                    surface: doc.token(g).map(|t| t.surface.clone()).unwrap_or_default(),
                }
                .into());
            }
            node_subwords.push(pieces.iter().map(|&p| p as usize).collect());
        }
        let mut related = pruned.current.clone();
        for e in graph.edges() {
            let (a, b) = (graph.local_index(e.src).unwrap(), graph.local_index(e.dst).unwrap());
            if pruned.current.contains(&a) {
                related.push(b);
            }
            if pruned.current.contains(&b) {
                related.push(a);
            }
        }
        related.sort_unstable();
        related.dedup();
        Ok(GraphContext {
            node_subwords,
            props: Some(propagation_matrices(graph)?),
            current: pruned.current.clone(),
            related,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_subwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_subwords.is_empty()
    }

    /// Node columns a query may attend to under `scope`.
    pub fn columns(&self, scope: ContextScope) -> Vec<bool> {
        let n = self.num_nodes();
        match scope {
            ContextScope::All => vec![true; n],
            ContextScope::Related | ContextScope::Current => {
                let keep = if scope == ContextScope::Related {
                    &self.related
                } else {
                    &self.current
                };
                let mut cols = vec![false; n];
                for &l in keep {
                    cols[l] = true;
                }
                cols
            }
        }
    }
}

/// Encoded graph nodes plus the admitted attention columns; only built when
/// at least one column is admitted.
#[derive(Clone, Debug)]
pub struct GraphState<'t> {
    pub repr: Var<'t>,
    pub columns: Vec<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_document_graph, prune_to_radius};
    use crate::tokenize::learn_bpe;

    #[test]
    fn scope_columns() {
        let bpe = learn_bpe(&[vec!["a"]], 1).unwrap();
        let doc = AnnotatedDocument::from_sentences("d", &[vec!["x", "y", "z"], vec!["q", "x"]], &bpe).unwrap();
        let g = build_document_graph(&doc);
        let pruned = prune_to_radius(&g, &doc, 1, 2).unwrap();
        let ctx = GraphContext::from_pruned(&doc, &pruned).unwrap();
        // x(0) -> x(4) lexical; y is 2 hops from the current sentence.
        assert_eq!(ctx.num_nodes(), 4);
        assert_eq!(ctx.columns(ContextScope::Current), vec![false, false, true, true]);
        assert_eq!(ctx.columns(ContextScope::Related), vec![true, false, true, true]);
        assert_eq!(ctx.columns(ContextScope::All), vec![true; 4]);
        assert!(GraphContext::empty().columns(ContextScope::All).is_empty());
    }
}
