use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuMode {
    Sentence,
    /// Each document is concatenated into one segment before counting.
    DocumentAsSentence,
}

impl std::str::FromStr for BleuMode {
    type Err = BleuError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "sentence" => Ok(BleuMode::Sentence),
            "document" | "document_as_sentence" => Ok(BleuMode::DocumentAsSentence),
            other => Err(BleuError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// In `[0, 100]`.
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub mode: BleuMode,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BleuError {
    #[error("{hyp} hypothesis {unit} but {reference} references")]
    CountMismatch { unit: &'static str, hyp: usize, reference: usize },
    #[error("unknown BLEU mode {0:?}")]
    UnknownMode(String),
}

fn ngram_counts<S: AsRef<str> + Eq + std::hash::Hash>(words: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *m.entry(g).or_default() += 1;
        }
    }
    m
}

/// Clipped n-gram matches and hypothesis n-gram totals for `n = 1..=4`.
fn segment_stats<S: AsRef<str> + Eq + std::hash::Hash>(hyp: &[S], reference: &[S]) -> ([usize; 4], [usize; 4]) {
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    for n in 1..=4 {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        totals[n - 1] = hyp.len().saturating_sub(n - 1);
        matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    }
    (matches, totals)
}

/// Corpus BLEU over aligned segments.
///
/// Unsmoothed: any zero n-gram precision gives a score of zero. With
/// `smooth`, orders `n >= 2` use `(matches + 1) / (total + 1)`.
pub fn corpus_bleu<S: AsRef<str> + Eq + std::hash::Hash>(hyps: &[Vec<S>], refs: &[Vec<S>], smooth: bool) -> Result<BleuReport, BleuError> {
    if hyps.len() != refs.len() {
        return Err(BleuError::CountMismatch {
            unit: "segments",
            hyp: hyps.len(),
            reference: refs.len(),
        });
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        let (m, t) = segment_stats(h, rf);
        for n in 0..4 {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        c += h.len();
        r += rf.len();
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if smooth && n > 0 {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        100.0 * brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len: c,
        ref_len: r,
        mode: BleuMode::Sentence,
    })
}

/// BLEU over documents of sentences of words.
pub fn bleu<S: AsRef<str> + Eq + std::hash::Hash + Clone>(
    hyp_docs: &[Vec<Vec<S>>],
    ref_docs: &[Vec<Vec<S>>],
    mode: BleuMode,
    smooth: bool,
) -> Result<BleuReport, BleuError> {
    if hyp_docs.len() != ref_docs.len() {
        return Err(BleuError::CountMismatch {
            unit: "documents",
            hyp: hyp_docs.len(),
            reference: ref_docs.len(),
        });
    }
    let (hyps, refs): (Vec<Vec<S>>, Vec<Vec<S>>) = match mode {
        BleuMode::Sentence => {
            for (h, r) in hyp_docs.iter().zip(ref_docs) {
                if h.len() != r.len() {
                    return Err(BleuError::CountMismatch {
                        unit: "sentences",
                        hyp: h.len(),
                        reference: r.len(),
                    });
                }
            }
            (hyp_docs.concat(), ref_docs.concat())
        }
        BleuMode::DocumentAsSentence => (
            hyp_docs.iter().map(|d| d.concat()).collect(),
            ref_docs.iter().map(|d| d.concat()).collect(),
        ),
    };
    let mut report = corpus_bleu(&hyps, &refs, smooth)?;
    report.mode = mode;
    Ok(report)
}
