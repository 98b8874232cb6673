//! Random annotated documents and brute-force reference implementations
//! shared by the property and acceptance suites. Nothing here calls into
//! the graph code under test.
#![allow(dead_code)]

use std::collections::BTreeSet;

use docgraph::graph::{DocumentGraph, Edge, RelationType};
use docgraph::tensor::Tensor;
use docgraph::tokenize::{AnnotatedDocument, Mention, Token};
use rand::seq::SliceRandom;
use rand::Rng;

const SURFACES: [&str; 10] = ["The", "the", "cat", "Cat", "sat", "SAT", "mat", "a", "A", "dog"];
const LEMMAS: [&str; 4] = ["be", "cat", "sit", "go"];

/// Document of at most `max_words` words with random surfaces (case
/// variants included), lemmas, dependency trees and coreference chains.
/// Subword ids fall in `3..vocab`.
pub fn random_document<R: Rng>(rng: &mut R, max_words: usize, vocab: u32) -> AnnotatedDocument {
    let total = rng.gen_range(1..=max_words);
    let mut lengths = Vec::new();
    let mut left = total;
    while left > 0 {
        let n = rng.gen_range(1..=left.min(8));
        lengths.push(n);
        left -= n;
    }

    let mut sentences = Vec::new();
    let mut dep_arcs = Vec::new();
    let mut subword_map = Vec::new();
    let mut global = 0;
    for (m, &n) in lengths.iter().enumerate() {
        let mut tokens = Vec::new();
        for i in 0..n {
            let surface = SURFACES[rng.gen_range(0..SURFACES.len())].to_string();
            let lemma = if rng.gen_bool(0.3) {
                LEMMAS[rng.gen_range(0..LEMMAS.len())].to_string()
            } else {
                surface.to_lowercase()
            };
            tokens.push(Token {
                surface,
                lemma,
                sentence_index: m,
                word_index: i,
                global_index: global + i,
            });
            let pieces = rng.gen_range(1..=2);
            subword_map.push((0..pieces).map(|_| rng.gen_range(3..vocab)).collect());
        }
        // A random tree: shuffle the words, attach each to an earlier one.
        if rng.gen_bool(0.8) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            for k in 1..n {
                let head = order[rng.gen_range(0..k)];
                dep_arcs.push((global + head, global + order[k]));
            }
        }
        sentences.push(tokens);
        global += n;
    }

    let mut coref_chains = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let mut chain = Vec::new();
        for _ in 0..rng.gen_range(1..=4) {
            let sentence = rng.gen_range(0..lengths.len());
            let start = rng.gen_range(0..lengths[sentence]);
            let end = rng.gen_range(start..lengths[sentence].min(start + 3));
            chain.push(Mention { sentence, start, end });
        }
        coref_chains.push(chain);
    }

    let doc = AnnotatedDocument {
        doc_id: "rand".into(),
        sentences,
        dep_arcs,
        coref_chains,
        subword_map,
    };
    doc.validate().expect("generator produces valid documents");
    doc
}

fn sentence_starts(doc: &AnnotatedDocument) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut acc = 0;
    for s in &doc.sentences {
        starts.push(acc);
        acc += s.len();
    }
    starts
}

/// First word of the span whose head is absent or outside the span; the
/// span start when its sentence has no arcs at all.
fn reference_mention_word(doc: &AnnotatedDocument, m: &Mention) -> usize {
    let start = sentence_starts(doc)[m.sentence];
    let len = doc.sentences[m.sentence].len();
    let n: usize = doc.sentences.iter().map(Vec::len).sum();
    let mut head: Vec<Option<usize>> = vec![None; n];
    for &(h, d) in &doc.dep_arcs {
        head[d] = Some(h);
    }
    let (lo, hi) = (start + m.start, start + m.end);
    if !(start..start + len).any(|w| head[w].is_some()) {
        return lo;
    }
    (lo..=hi)
        .find(|&w| !matches!(head[w], Some(h) if (lo..=hi).contains(&h)))
        .unwrap_or(lo)
}

/// Every directed labelled edge, found by testing each relation's
/// definition on every ordered pair of words.
pub fn scan_edges(doc: &AnnotatedDocument) -> BTreeSet<Edge> {
    let words: Vec<&Token> = doc.sentences.iter().flatten().collect();
    let n = words.len();
    let chain_words: Vec<Vec<(Mention, usize)>> = doc
        .coref_chains
        .iter()
        .map(|c| c.iter().map(|m| (*m, reference_mention_word(doc, m))).collect())
        .collect();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (words[i], words[j]);
            let mut add = |label| {
                edges.insert(Edge { src: i, dst: j, label });
            };
            if a.sentence_index == b.sentence_index && a.word_index.abs_diff(b.word_index) == 1 {
                add(RelationType::Adjacency);
            }
            if doc.dep_arcs.contains(&(i, j)) {
                add(RelationType::Dependency);
            }
            if i < j && (a.surface.to_lowercase() == b.surface.to_lowercase() || a.lemma == b.lemma) {
                add(RelationType::Lexical);
            }
            // Coreference: x < y are neighbours in the sorted chain when no
            // mention lies strictly between them; the edge runs from the
            // smaller word to the larger one.
            let linked = chain_words.iter().any(|chain| {
                chain.iter().any(|&(x, wx)| {
                    chain
                        .iter()
                        .any(|&(y, wy)| x < y && !chain.iter().any(|&(z, _)| x < z && z < y) && wx.min(wy) == i && wx.max(wy) == j)
                })
            });
            if linked {
                add(RelationType::Coreference);
            }
        }
    }
    edges
}

/// Nodes within undirected distance `radius` of `seeds`, by Floyd–Warshall.
pub fn nodes_within(n: usize, edges: &BTreeSet<Edge>, seeds: &[usize], radius: usize) -> Vec<usize> {
    const INF: usize = usize::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for e in edges {
        d[e.src][e.dst] = 1;
        d[e.dst][e.src] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    (0..n).filter(|&v| seeds.iter().any(|&s| d[s][v] <= radius)).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// `D^{-1/2} A D^{-1/2}` by explicit matrix products, with `D` the diagonal
/// of column sums and a zero degree giving a zero entry.
pub fn dense_normalized(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut d = vec![vec![0.0; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        let deg: f64 = (0..n).map(|j| a[j][i]).sum();
        row[i] = if deg > 0.0 { deg.powf(-0.5) } else { 0.0 };
    }
    matmul(&matmul(&d, a), &d)
}

/// Outgoing adjacency (`A[i][j] = 1` iff an edge `i → j`) over local indices.
pub fn dense_out_adjacency(graph: &DocumentGraph) -> Vec<Vec<f64>> {
    let n = graph.node_count();
    let mut a = vec![vec![0.0; n]; n];
    for e in graph.edges() {
        let i = graph.nodes().iter().position(|&g| g == e.src).unwrap();
        let j = graph.nodes().iter().position(|&g| g == e.dst).unwrap();
        a[i][j] = 1.0;
    }
    a
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect()
}

pub fn max_diff(t: &Tensor, a: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            worst = worst.max((t.get(i, j) - x).abs());
        }
    }
    worst
}

/// Random directed graph on `n` nodes with global ids spread out so local
/// and global indices differ.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, density: f64) -> DocumentGraph {
    let ids: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
    let labels = RelationType::ALL;
    let mut edges = Vec::new();
    for &a in &ids {
        for &b in &ids {
            if a != b && rng.gen_bool(density) {
                edges.push(Edge {
                    src: a,
                    dst: b,
                    label: labels[rng.gen_range(0..labels.len())],
                });
            }
        }
    }
    DocumentGraph::from_parts(ids, edges).unwrap()
}

/// Every sequence the decoder could emit under a length cap: some non-EOS
/// tokens then EOS (total length ≤ cap), or exactly `cap` non-EOS tokens.
pub fn all_outputs(vocab: usize, eos: usize, cap: usize) -> Vec<Vec<usize>> {
    let symbols: Vec<usize> = (0..vocab).filter(|&t| t != eos).collect();
    let mut out = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 0..=cap {
        for p in &layer {
            if len < cap {
                let mut s = p.clone();
                s.push(eos);
                out.push(s);
            } else {
                out.push(p.clone());
            }
        }
        if len < cap {
            layer = layer
                .iter()
                .flat_map(|p| {
                    symbols.iter().map(move |&t| {
                        let mut s = p.clone();
                        s.push(t);
                        s
                    })
                })
                .collect();
        }
    }
    out
}
