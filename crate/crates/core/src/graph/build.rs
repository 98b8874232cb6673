use crate::tokenize::{AnnotatedDocument, Mention};

use super::{DocumentGraph, RelationSet, RelationType};

pub fn build_document_graph(doc: &AnnotatedDocument) -> DocumentGraph {
    build_document_graph_with(doc, RelationSet::all())
}

/// Build the graph using only the relation types in `relations`.
///
/// - adjacency: each word links to its left and right neighbours;
/// - dependency: head → dependent;
/// - lexical: earlier → later word whenever lowercased surfaces or lemmas
///   agree, including repeats within one sentence;
/// - coreference: consecutive mentions of a chain, earlier → later.
pub fn build_document_graph_with(doc: &AnnotatedDocument, relations: RelationSet) -> DocumentGraph {
    let mut g = DocumentGraph {
        nodes: (0..doc.num_tokens()).collect(),
        edges: Default::default(),
    };

    if relations.contains(RelationType::Adjacency) {
        for m in 0..doc.num_sentences() {
            let r = doc.sentence_range(m);
            for i in r.start..r.end.saturating_sub(1) {
                g.insert_edge(i, i + 1, RelationType::Adjacency);
                g.insert_edge(i + 1, i, RelationType::Adjacency);
            }
        }
    }

    if relations.contains(RelationType::Dependency) {
        for &(head, dep) in &doc.dep_arcs {
            g.insert_edge(head, dep, RelationType::Dependency);
        }
    }

    if relations.contains(RelationType::Lexical) {
        let keys: Vec<(String, &str)> = doc.tokens().map(|t| (t.surface.to_lowercase(), t.lemma.as_str())).collect();
        for a in 0..keys.len() {
            for b in a + 1..keys.len() {
                if keys[a].0 == keys[b].0 || keys[a].1 == keys[b].1 {
                    g.insert_edge(a, b, RelationType::Lexical);
                }
            }
        }
    }

    if relations.contains(RelationType::Coreference) {
        for chain in &doc.coref_chains {
            let mut mentions = chain.clone();
            mentions.sort();
            let words: Vec<usize> = mentions.iter().map(|m| mention_word(doc, m)).collect();
            for pair in words.windows(2) {
                let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                g.insert_edge(a, b, RelationType::Coreference);
            }
        }
    }
    g
}

/// The word that stands for a (possibly multi-word) mention: its syntactic
/// head when the sentence carries dependency arcs, else its first word.
pub fn mention_word(doc: &AnnotatedDocument, mention: &Mention) -> usize {
    let range = doc.sentence_range(mention.sentence);
    let start = range.start + mention.start;
    let end = range.start + mention.end;
    let sentence_has_arcs = doc.dep_arcs.iter().any(|&(_, d)| range.contains(&d));
    if sentence_has_arcs {
        for w in start..=end {
            let head = doc.dep_arcs.iter().find(|&&(_, d)| d == w).map(|&(h, _)| h);
            match head {
                Some(h) if (start..=end).contains(&h) => continue,
                _ => return w,
            }
        }
    }
    start
}
