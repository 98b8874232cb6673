//! Byte-pair encoding: learning a merge table and segmenting words with it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::TokenizeError;

/// Marker appended to the final subword of every word.
pub const END_OF_WORD: &str = "</w>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const UNK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;

/// Subword vocabulary: specials first, then the base alphabet (bare and
/// word-final forms), then merge results in learning order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn build(alphabet: &BTreeSet<char>, merges: &[(String, String)]) -> Self {
        let mut v = Vocab {
            symbols: Vec::new(),
            ids: HashMap::new(),
        };
        for s in [UNK, BOS, EOS] {
            v.insert(s.to_string());
        }
        for c in alphabet {
            v.insert(c.to_string());
            v.insert(format!("{c}{END_OF_WORD}"));
        }
        for (a, b) in merges {
            v.insert(format!("{a}{b}"));
        }
        v
    }

    fn insert(&mut self, s: String) {
        if !self.ids.contains_key(&s) {
            self.ids.insert(s.clone(), self.symbols.len() as u32);
            self.symbols.push(s);
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    alphabet: BTreeSet<char>,
    vocab: Vocab,
}

/// Split a word into characters with the end-of-word marker on the last.
fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learn up to `num_merges` merges from a tokenized corpus.
///
/// At each step the adjacent symbol pair with the highest frequency-weighted
/// count is merged; ties go to the lexicographically smallest pair. Learning
/// stops early once no pair occurs at least twice.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[Vec<S>], num_merges: usize) -> Result<BpeModel, TokenizeError> {
    if num_merges == 0 {
        return Err(TokenizeError::ZeroMerges);
    }
    let mut freqs: BTreeMap<&str, usize> = BTreeMap::new();
    for sentence in corpus {
        for w in sentence {
            let w = w.as_ref();
            if !w.is_empty() {
                *freqs.entry(w).or_default() += 1;
            }
        }
    }
    if freqs.is_empty() {
        return Err(TokenizeError::EmptyCorpus);
    }
    let alphabet: BTreeSet<char> = freqs.keys().flat_map(|w| w.chars()).collect();
    let mut words: Vec<(Vec<String>, usize)> = freqs.iter().map(|(w, &n)| (initial_symbols(w), n)).collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let counts = pair_counts(&words);
        // BTreeMap iterates pairs in lexicographic order, so keeping the first
        // maximum resolves ties toward the smallest pair.
        let mut best: Option<(&(String, String), usize)> = None;
        for (pair, &n) in &counts {
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((pair, n));
            }
        }
        let Some((pair, n)) = best else { break };
        if n < 2 {
            break;
        }
        let (a, b) = pair.clone();
        for (symbols, _) in &mut words {
            *symbols = merge_pair(symbols, &a, &b);
        }
        merges.push((a, b));
    }
    Ok(BpeModel::from_parts(alphabet, merges))
}

/// Frequency-weighted counts of adjacent symbol pairs.
pub(crate) fn pair_counts(words: &[(Vec<String>, usize)]) -> BTreeMap<(String, String), usize> {
    let mut counts = BTreeMap::new();
    for (symbols, n) in words {
        for w in symbols.windows(2) {
            *counts.entry((w[0].clone(), w[1].clone())).or_default() += n;
        }
    }
    counts
}

impl BpeModel {
    pub fn from_parts(alphabet: BTreeSet<char>, merges: Vec<(String, String)>) -> Self {
        let ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let vocab = Vocab::build(&alphabet, &merges);
        Self {
            merges,
            ranks,
            alphabet,
            vocab,
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Segment one word by applying merges greedily in priority order.
    pub fn apply(&self, word: &str) -> Result<Vec<String>, TokenizeError> {
        if word.is_empty() {
            return Err(TokenizeError::EmptyWord);
        }
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            symbols = merge_pair(&symbols, a, b);
        }
        Ok(symbols)
    }

    /// Segment a word and map each subword to its vocabulary id; symbols
    /// outside the vocabulary map to `<unk>`.
    pub fn encode_word(&self, word: &str) -> Result<Vec<u32>, TokenizeError> {
        Ok(self.apply(word)?.iter().map(|s| self.vocab.id(s).unwrap_or(UNK_ID)).collect())
    }

    /// Join subword ids back into words, splitting at end-of-word markers.
    /// Special tokens are dropped.
    pub fn decode_words(&self, ids: &[u32]) -> Vec<(String, Vec<u32>)> {
        let mut words = Vec::new();
        let mut current = String::new();
        let mut pieces = Vec::new();
        for &id in ids {
            if id == BOS_ID || id == EOS_ID {
                continue;
            }
            let sym = self.vocab.symbol(id).unwrap_or(UNK);
            pieces.push(id);
            if let Some(stem) = sym.strip_suffix(END_OF_WORD) {
                current.push_str(stem);
                words.push((std::mem::take(&mut current), std::mem::take(&mut pieces)));
            } else {
                current.push_str(sym);
            }
        }
        if !pieces.is_empty() {
            words.push((current, pieces));
        }
        words
    }

    /// Merge table, one space-separated pair per line, preceded by an
    /// `#alphabet` comment line carrying the base characters.
    pub fn to_merges_text(&self) -> String {
        let mut out = String::new();
        let alphabet: String = self.alphabet.iter().collect();
        let _ = writeln!(out, "#alphabet {alphabet}");
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    /// Parse a merge table. Lines starting with `#` are comments except the
    /// optional `#alphabet` line; characters seen in merges always join the
    /// alphabet.
    pub fn from_merges_text(text: &str) -> Result<Self, TokenizeError> {
        let mut alphabet = BTreeSet::new();
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("#alphabet ") {
                alphabet.extend(rest.chars());
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    for sym in [a, b] {
                        let stem = sym.strip_suffix(END_OF_WORD).unwrap_or(sym);
                        alphabet.extend(stem.chars());
                    }
                    merges.push((a.to_string(), b.to_string()));
                }
                _ => {
                    return Err(TokenizeError::MalformedMerge {
                        line: i + 1,
                        content: line.to_string(),
                    })
                }
            }
        }
        Ok(Self::from_parts(alphabet, merges))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        std::fs::write(path, self.to_merges_text()).map_err(|e| TokenizeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        let text = std::fs::read_to_string(path).map_err(|e| TokenizeError::io(path, e))?;
        Self::from_merges_text(&text)
    }
}

/// Concatenate subwords, dropping the end-of-word marker.
pub fn join_subwords(subwords: &[String]) -> String {
    subwords.iter().map(|s| s.strip_suffix(END_OF_WORD).unwrap_or(s)).collect()
}
