use std::collections::{BTreeMap, VecDeque};

use crate::tokenize::AnnotatedDocument;

use super::{DocumentGraph, GraphError};

/// Subgraph retained around a current sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrunedGraph {
    pub graph: DocumentGraph,
    /// Local indices (into `graph.nodes()`) of the current sentence's words.
    pub current: Vec<usize>,
}

impl PrunedGraph {
    /// Global → dense local index for every retained node.
    pub fn remap(&self) -> BTreeMap<usize, usize> {
        self.graph.nodes().iter().enumerate().map(|(l, &g)| (g, l)).collect()
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.node_count() == 0
    }
}

/// Keep nodes within undirected distance `radius` of any word of sentence
/// `sentence_index`, and the edges between them.
pub fn prune_to_radius(
    graph: &DocumentGraph,
    doc: &AnnotatedDocument,
    sentence_index: usize,
    radius: usize,
) -> Result<PrunedGraph, GraphError> {
    if sentence_index >= doc.num_sentences() {
        return Err(GraphError::InvalidSentence {
            index: sentence_index,
            count: doc.num_sentences(),
        });
    }
    let current: Vec<usize> = doc.sentence_range(sentence_index).collect();
    Ok(prune_around(graph, &current, radius))
}

/// Multi-source breadth-first pruning from an arbitrary set of global nodes.
/// Seeds absent from `graph` are ignored.
pub fn prune_around(graph: &DocumentGraph, seeds: &[usize], radius: usize) -> PrunedGraph {
    let n = graph.node_count();
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in graph.edges() {
        let (a, b) = (graph.local_index(e.src).unwrap(), graph.local_index(e.dst).unwrap());
        neighbours[a].push(b);
        neighbours[b].push(a);
    }
    let mut dist: Vec<Option<usize>> = vec![None; n];
    let mut queue = VecDeque::new();
    for s in seeds {
        if let Some(l) = graph.local_index(*s) {
            if dist[l].is_none() {
                dist[l] = Some(0);
                queue.push_back(l);
            }
        }
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        if d == radius {
            continue;
        }
        for &v in &neighbours[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&l| dist[l].is_some()).map(|l| graph.nodes()[l]).collect();
    let edges = graph
        .edges()
        .iter()
        .filter(|e| dist[graph.local_index(e.src).unwrap()].is_some() && dist[graph.local_index(e.dst).unwrap()].is_some())
        .copied();
    let sub = DocumentGraph::from_parts(kept, edges).expect("subgraph of a valid graph");
    let mut current: Vec<usize> = seeds.iter().filter_map(|s| sub.local_index(*s)).collect();
    current.sort_unstable();
    current.dedup();
    PrunedGraph { graph: sub, current }
}
