use std::cmp::Ordering;
use std::convert::Infallible;

/// Next-token log-probabilities given the tokens generated so far.
pub trait StepScorer {
    type Error;

    fn vocab_size(&self) -> usize;

    /// Log-probabilities over the vocabulary after `prefix` (BOS excluded).
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>, Self::Error>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub alpha: f64,
    /// Hypotheses reaching this many tokens are force-finished.
    pub max_len: usize,
    pub eos: usize,
}

impl BeamConfig {
    pub fn new(beam: usize, alpha: f64, max_len: usize, eos: usize) -> Self {
        BeamConfig { beam, alpha, max_len, eos }
    }

    /// Default cap for a source of `src_len` tokens.
    pub fn cap_for(src_len: usize) -> usize {
        2 * src_len + 10
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends with EOS iff `finished` and not force-finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        self.log_prob / length_penalty(self.tokens.len(), alpha)
    }

    /// Tokens with a trailing EOS removed.
    pub fn content(&self, eos: usize) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if t == eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// `((5 + len) / 6)^alpha`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

fn better(a: &Hypothesis, b: &Hypothesis, alpha: f64) -> bool {
    // Ties keep the earlier (shorter, then lexicographically smaller) one.
    a.score(alpha) > b.score(alpha)
}

/// Beam search with length-normalized final selection.
///
/// Each step keeps the `beam` best unfinished extensions by cumulative
/// log-probability; the EOS extension of every live hypothesis is recorded
/// as a finished candidate. The result maximizes `log P / lp(|Y|)` over all
/// recorded candidates and the force-finished survivors at the cap, where
/// `|Y|` counts generated tokens including EOS. For `alpha >= 0` the search
/// stops once no live hypothesis can still beat the best finished one.
pub fn beam_search<S: StepScorer>(scorer: &mut S, config: &BeamConfig) -> Result<Hypothesis, S::Error> {
    let k = config.beam.max(1);
    let v = scorer.vocab_size();
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut best: Option<Hypothesis> = None;
    let consider = |h: Hypothesis, best: &mut Option<Hypothesis>| {
        if best.as_ref().is_none_or(|b| better(&h, b, config.alpha)) {
            *best = Some(h);
        }
    };

    while !alive.is_empty() {
        if alive[0].tokens.len() >= config.max_len {
            for mut h in alive.drain(..) {
                h.finished = true;
                consider(h, &mut best);
            }
            break;
        }
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * v);
        for (i, h) in alive.iter().enumerate() {
            let lp = scorer.next_log_probs(&h.tokens)?;
            for (t, &l) in lp.iter().enumerate().take(v) {
                let total = h.log_prob + l;
                if t == config.eos {
                    let mut tokens = h.tokens.clone();
                    tokens.push(t);
                    consider(
                        Hypothesis {
                            tokens,
                            log_prob: total,
                            finished: true,
                        },
                        &mut best,
                    );
                } else if total > f64::NEG_INFINITY {
                    candidates.push((total, i, t));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then((a.1, a.2).cmp(&(b.1, b.2))));
        candidates.truncate(k);
        alive = candidates
            .into_iter()
            .map(|(lp, i, t)| {
                let mut tokens = alive[i].tokens.clone();
                tokens.push(t);
                Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: false,
                }
            })
            .collect();

        if let (Some(b), Some(top)) = (&best, alive.first()) {
            // Extensions only lower log P (<= 0) and lp grows with length.
            if config.alpha >= 0.0 && top.log_prob <= 0.0 {
                let bound = top.log_prob / length_penalty(config.max_len, config.alpha);
                if b.score(config.alpha) >= bound {
                    break;
                }
            }
        }
    }
    Ok(best.expect("at least one candidate is produced before the loop ends"))
}

/// Argmax decoding: take the most probable token until EOS or the cap.
pub fn greedy_search<S: StepScorer>(scorer: &mut S, max_len: usize, eos: usize) -> Result<Hypothesis, S::Error> {
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while h.tokens.len() < max_len {
        let lp = scorer.next_log_probs(&h.tokens)?;
        let (t, l) = lp
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (t, l)| if l > acc.1 { (t, l) } else { acc });
        h.tokens.push(t);
        h.log_prob += l;
        if t == eos {
            break;
        }
    }
    h.finished = true;
    Ok(h)
}

/// Position-indexed distribution table: the next-token distribution depends
/// only on the number of tokens generated so far.
#[derive(Clone, Debug, PartialEq)]
pub struct TableScorer {
    /// `rows[position][token]` log-probabilities.
    pub rows: Vec<Vec<f64>>,
}

impl TableScorer {
    /// Normalize positive weights into log-probabilities per row.
    pub fn from_weights(weights: &[Vec<f64>]) -> Self {
        let rows = weights
            .iter()
            .map(|w| {
                let z: f64 = w.iter().sum();
                w.iter().map(|x| (x / z).ln()).collect()
            })
            .collect();
        TableScorer { rows }
    }
}

impl StepScorer for TableScorer {
    type Error = Infallible;

    fn vocab_size(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>, Infallible> {
        let i = prefix.len().min(self.rows.len() - 1);
        Ok(self.rows[i].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// All EOS-terminated sequences up to the cap plus the capped
    /// sequences without EOS, scored under the same penalty.
    fn exhaustive<S: StepScorer<Error = Infallible>>(s: &mut S, config: &BeamConfig) -> Hypothesis {
        fn rec<S: StepScorer<Error = Infallible>>(
            s: &mut S,
            c: &BeamConfig,
            prefix: &mut Vec<usize>,
            lp: f64,
            best: &mut Option<Hypothesis>,
        ) {
            fn offer(h: Hypothesis, alpha: f64, best: &mut Option<Hypothesis>) {
                if best.as_ref().is_none_or(|b| h.score(alpha) > b.score(alpha)) {
                    *best = Some(h);
                }
            }
            if prefix.len() == c.max_len {
                offer(
                    Hypothesis {
                        tokens: prefix.clone(),
                        log_prob: lp,
                        finished: true,
                    },
                    c.alpha,
                    best,
                );
                return;
            }
            let Ok(next) = s.next_log_probs(prefix);
            for (t, l) in next.into_iter().enumerate() {
                if t == c.eos {
                    let mut tokens = prefix.clone();
                    tokens.push(t);
                    offer(
                        Hypothesis {
                            tokens,
                            log_prob: lp + l,
                            finished: true,
                        },
                        c.alpha,
                        best,
                    );
                } else {
                    prefix.push(t);
                    rec(s, c, prefix, lp + l, best);
                    prefix.pop();
                }
            }
        }
        let mut best = None;
        rec(s, config, &mut Vec::new(), 0.0, &mut best);
        best.unwrap()
    }

    fn table() -> TableScorer {
        // Token 0 is EOS.
        TableScorer::from_weights(&[vec![0.1, 0.5, 0.4], vec![0.5, 0.3, 0.2], vec![0.2, 0.1, 0.7], vec![0.9, 0.05, 0.05]])
    }

    #[test]
    fn length_penalty_values() {
        assert_eq!(length_penalty(7, 0.0), 1.0);
        assert!((length_penalty(1, 1.0) - 1.0).abs() < 1e-15);
        assert!((length_penalty(7, 0.5) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hand_table_matches_exhaustive() {
        for alpha in [0.0, 0.6, 1.0, 2.0] {
            for cap in 1..=5 {
                let c = BeamConfig::new(4, alpha, cap, 0);
                let b = beam_search(&mut table(), &c).unwrap();
                let e = exhaustive(&mut table(), &c);
                assert_eq!(b.tokens, e.tokens, "alpha {alpha} cap {cap}");
            }
        }
    }

    #[test]
    fn hand_table_answer() {
        // alpha = 0: P([1, EOS]) = 0.25 beats every longer sequence.
        let h = beam_search(&mut table(), &BeamConfig::new(4, 0.0, 6, 0)).unwrap();
        assert_eq!(h.tokens, vec![1, 0]);
        assert!((h.log_prob - 0.25f64.ln()).abs() < 1e-12);
        // A strong length reward prefers [1, 1, 2, EOS]:
        // 0.5 * 0.3 * 0.7 * 0.9 = 0.0945.
        let h = beam_search(&mut table(), &BeamConfig::new(4, 3.0, 6, 0)).unwrap();
        assert_eq!(h.tokens, vec![1, 1, 2, 0]);
    }

    #[test]
    fn beam_one_is_greedy_when_eos_is_never_cheaper_later() {
        // Greedy stops at the first step where EOS is the argmax; beam 1
        // follows the same path and at alpha 0 can only prefer an earlier
        // EOS, which this table rules out by giving EOS tiny mass before.
        let t = TableScorer::from_weights(&[vec![0.01, 0.6, 0.39], vec![0.01, 0.2, 0.79], vec![0.8, 0.1, 0.1]]);
        let g = greedy_search(&mut t.clone(), 6, 0).unwrap();
        let b = beam_search(&mut t.clone(), &BeamConfig::new(1, 0.0, 6, 0)).unwrap();
        assert_eq!(g.tokens, vec![1, 2, 0]);
        assert_eq!(b.tokens, g.tokens);
    }

    #[test]
    fn beam_one_keeps_an_early_eos_that_greedy_passes_over() {
        let t = TableScorer::from_weights(&[vec![0.4, 0.6], vec![0.5, 0.5]]);
        let g = greedy_search(&mut t.clone(), 4, 0).unwrap();
        let b = beam_search(&mut t.clone(), &BeamConfig::new(1, 0.0, 4, 0)).unwrap();
        assert_eq!(g.tokens, vec![1, 0]);
        assert_eq!(b.tokens, vec![0]);
    }

    #[test]
    fn cap_force_finishes() {
        let t = TableScorer::from_weights(&[vec![0.01, 0.99]]);
        let h = beam_search(&mut t.clone(), &BeamConfig::new(2, 1.0, 3, 0)).unwrap();
        assert_eq!(h.tokens, vec![1, 1, 1]);
        assert!(h.finished);
        assert_eq!(h.content(0), &[1, 1, 1]);
        let g = greedy_search(&mut t.clone(), 3, 0).unwrap();
        assert_eq!(g.tokens, vec![1, 1, 1]);
    }

    #[test]
    fn alpha_zero_is_raw_log_probability() {
        let h = beam_search(&mut table(), &BeamConfig::new(4, 0.0, 6, 0)).unwrap();
        assert_eq!(h.score(0.0), h.log_prob);
    }
}
