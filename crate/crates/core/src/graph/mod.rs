//! Document graphs: construction from annotated documents, radius pruning,
//! direction-split propagation matrices, size statistics and export.

mod build;
mod export;
mod propagation;
mod prune;
mod stats;

pub use build::{build_document_graph, build_document_graph_with, mention_word};
pub use export::{to_dot, GraphRecord, NodeRecord};
pub use propagation::{propagation_matrices, DirectionMatrices, EdgeDirection, PropagationMatrices};
pub use prune::{prune_around, prune_to_radius, PrunedGraph};
pub use stats::{aggregate_stats, graph_stats, growth_ratio, sentence_stats, stats_csv, BucketRow, SentenceStat};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationType {
    Adjacency,
    Dependency,
    Lexical,
    Coreference,
}

impl RelationType {
    pub const ALL: [RelationType; 4] = [
        RelationType::Adjacency,
        RelationType::Dependency,
        RelationType::Lexical,
        RelationType::Coreference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::Adjacency => "adjacency",
            RelationType::Dependency => "dependency",
            RelationType::Lexical => "lexical",
            RelationType::Coreference => "coreference",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationType {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationType::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| GraphError::UnknownRelation(s.to_string()))
    }
}

/// Subset of relation types used when building a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationSet(u8);

impl RelationSet {
    pub fn all() -> Self {
        RelationSet(0b1111)
    }

    pub fn empty() -> Self {
        RelationSet(0)
    }

    pub fn of(relations: &[RelationType]) -> Self {
        RelationSet(relations.iter().fold(0, |acc, r| acc | r.bit()))
    }

    pub fn contains(self, r: RelationType) -> bool {
        self.0 & r.bit() != 0
    }

    pub fn with(self, r: RelationType) -> Self {
        RelationSet(self.0 | r.bit())
    }

    pub fn iter(self) -> impl Iterator<Item = RelationType> {
        RelationType::ALL.into_iter().filter(move |&r| self.contains(r))
    }
}

impl fmt::Display for RelationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == RelationSet::all() {
            return f.write_str("all");
        }
        let names: Vec<&str> = self.iter().map(RelationType::as_str).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for RelationSet {
    type Err = GraphError;

    /// `all`, or relation names joined with `+` (e.g. `adjacency+lexical`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "all" {
            return Ok(RelationSet::all());
        }
        s.split('+')
            .map(str::parse::<RelationType>)
            .try_fold(RelationSet::empty(), |acc, r| Ok(acc.with(r?)))
    }
}

/// Directed labelled edge between global word indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub label: RelationType,
}

/// Directed multi-relation graph over the words of a document.
///
/// Nodes are global word indices kept in ascending order, so a node's local
/// (dense) index is its position in [`DocumentGraph::nodes`]. Self-edges are
/// never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocumentGraph {
    nodes: Vec<usize>,
    edges: BTreeSet<Edge>,
}

impl DocumentGraph {
    pub fn from_parts(nodes: impl IntoIterator<Item = usize>, edges: impl IntoIterator<Item = Edge>) -> Result<Self, GraphError> {
        let nodes: BTreeSet<usize> = nodes.into_iter().collect();
        let mut g = DocumentGraph {
            nodes: nodes.into_iter().collect(),
            edges: BTreeSet::new(),
        };
        for e in edges {
            if e.src == e.dst {
                return Err(GraphError::SelfEdge(e.src));
            }
            if g.local_index(e.src).is_none() || g.local_index(e.dst).is_none() {
                return Err(GraphError::DanglingEdge(e.src, e.dst));
            }
            g.edges.insert(e);
        }
        Ok(g)
    }

    pub(crate) fn insert_edge(&mut self, src: usize, dst: usize, label: RelationType) {
        if src != dst {
            self.edges.insert(Edge { src, dst, label });
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges_with(&self, label: RelationType) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.label == label)
    }

    pub fn has_edge(&self, src: usize, dst: usize, label: RelationType) -> bool {
        self.edges.contains(&Edge { src, dst, label })
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("sentence index {index} out of range for a document of {count} sentences")]
    InvalidSentence { index: usize, count: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("self-edge on node {0}")]
    SelfEdge(usize),
    #[error("edge ({0}, {1}) references a node outside the graph")]
    DanglingEdge(usize, usize),
    #[error("unknown relation type {0:?}")]
    UnknownRelation(String),
    #[error("malformed graph record: {0}")]
    Malformed(String),
}
