use std::fmt::Write as _;
use std::ops::Range;

use crate::tokenize::AnnotatedDocument;

use super::{prune_around, DocumentGraph};

/// Pruned-graph size and text distance for one current sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceStat {
    pub doc_id: String,
    pub sentence: usize,
    pub graph_size: usize,
    /// Largest word offset from the current sentence to any retained node;
    /// zero when every retained node lies inside the sentence.
    pub text_distance: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketRow {
    pub bucket_start: usize,
    pub bucket_end: usize,
    pub sentences: usize,
    pub mean_text_distance: f64,
    pub mean_graph_size: f64,
}

fn offset(range: &Range<usize>, node: usize) -> usize {
    if node < range.start {
        range.start - node
    } else if node >= range.end {
        node + 1 - range.end
    } else {
        0
    }
}

/// Statistics for every sentence of a document given its sentence ranges.
pub fn sentence_stats(doc_id: &str, graph: &DocumentGraph, ranges: &[Range<usize>], radius: usize) -> Vec<SentenceStat> {
    ranges
        .iter()
        .enumerate()
        .map(|(m, range)| {
            let seeds: Vec<usize> = range.clone().collect();
            let pruned = prune_around(graph, &seeds, radius);
            let text_distance = pruned.graph.nodes().iter().map(|&g| offset(range, g)).max().unwrap_or(0);
            SentenceStat {
                doc_id: doc_id.to_string(),
                sentence: m,
                graph_size: pruned.node_count(),
                text_distance,
            }
        })
        .collect()
}

pub fn graph_stats(doc: &AnnotatedDocument, graph: &DocumentGraph, radius: usize) -> Vec<SentenceStat> {
    let ranges: Vec<Range<usize>> = (0..doc.num_sentences()).map(|m| doc.sentence_range(m)).collect();
    sentence_stats(&doc.doc_id, graph, &ranges, radius)
}

/// Bucket sentences by text distance into `[k·width, (k+1)·width)` bins.
/// Empty bins are omitted. `width` must be positive.
pub fn aggregate_stats(stats: &[SentenceStat], width: usize) -> Vec<BucketRow> {
    assert!(width > 0, "bucket width must be positive");
    let mut bins: std::collections::BTreeMap<usize, (usize, usize, usize)> = Default::default();
    for s in stats {
        let b = bins.entry(s.text_distance / width).or_default();
        b.0 += 1;
        b.1 += s.text_distance;
        b.2 += s.graph_size;
    }
    bins.into_iter()
        .map(|(k, (n, dist, size))| BucketRow {
            bucket_start: k * width,
            bucket_end: (k + 1) * width,
            sentences: n,
            mean_text_distance: dist as f64 / n as f64,
            mean_graph_size: size as f64 / n as f64,
        })
        .collect()
}

pub fn stats_csv(rows: &[BucketRow]) -> String {
    let mut out = String::from("bucket_start,bucket_end,sentences,mean_text_distance,mean_graph_size\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4}",
            r.bucket_start, r.bucket_end, r.sentences, r.mean_text_distance, r.mean_graph_size
        );
    }
    out
}

/// Graph-size growth per unit of text distance between the first and last
/// buckets. `None` with fewer than two buckets or no distance spread.
pub fn growth_ratio(rows: &[BucketRow]) -> Option<f64> {
    let (first, last) = (rows.first()?, rows.last()?);
    let dd = last.mean_text_distance - first.mean_text_distance;
    if rows.len() < 2 || dd <= 0.0 {
        return None;
    }
    Some((last.mean_graph_size - first.mean_graph_size) / dd)
}
