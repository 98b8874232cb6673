//! Loading annotated documents: plain corpus, CoNLL-U and coreference JSONL.

use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

use super::bpe::BpeModel;
use super::TokenizeError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Lowercased lemma; falls back to the lowercased surface form.
    pub lemma: String,
    pub sentence_index: usize,
    pub word_index: usize,
    pub global_index: usize,
}

/// Word span `[start, end]` (inclusive) inside one sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub sentences: Vec<Vec<Token>>,
    /// `(head, dependent)` pairs of global token indices.
    pub dep_arcs: Vec<(usize, usize)>,
    pub coref_chains: Vec<Vec<Mention>>,
    /// Subword vocabulary ids for each token, indexed by global index.
    pub subword_map: Vec<Vec<u32>>,
}

impl AnnotatedDocument {
    /// Document from pre-tokenized sentences without annotations.
    pub fn from_sentences<S: AsRef<str>>(doc_id: impl Into<String>, sentences: &[Vec<S>], bpe: &BpeModel) -> Result<Self, TokenizeError> {
        let mut out = Vec::with_capacity(sentences.len());
        let mut subword_map = Vec::new();
        let mut global = 0;
        for (m, words) in sentences.iter().enumerate() {
            let mut tokens = Vec::with_capacity(words.len());
            for (i, w) in words.iter().enumerate() {
                let w = w.as_ref();
                subword_map.push(bpe.encode_word(w)?);
                tokens.push(Token {
                    surface: w.to_string(),
                    lemma: w.to_lowercase(),
                    sentence_index: m,
                    word_index: i,
                    global_index: global,
                });
                global += 1;
            }
            out.push(tokens);
        }
        Ok(Self {
            doc_id: doc_id.into(),
            sentences: out,
            dep_arcs: Vec::new(),
            coref_chains: Vec::new(),
            subword_map,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flatten()
    }

    pub fn token(&self, global: usize) -> Option<&Token> {
        self.tokens().nth(global)
    }

    /// Global index range covered by sentence `m`.
    pub fn sentence_range(&self, m: usize) -> Range<usize> {
        let start: usize = self.sentences[..m].iter().map(Vec::len).sum();
        start..start + self.sentences[m].len()
    }

    /// Global index → sentence index, for every token.
    pub fn sentence_of(&self) -> Vec<usize> {
        self.tokens().map(|t| t.sentence_index).collect()
    }

    pub fn sentence_words(&self, m: usize) -> Vec<&str> {
        self.sentences[m].iter().map(|t| t.surface.as_str()).collect()
    }

    /// Subword ids of sentence `m`, concatenated in word order.
    pub fn sentence_subwords(&self, m: usize) -> Vec<u32> {
        self.sentence_range(m).flat_map(|g| self.subword_map[g].iter().copied()).collect()
    }

    /// Document built from subword ids per sentence, split into words at
    /// end-of-word markers. Special tokens are dropped.
    pub fn from_subwords(doc_id: impl Into<String>, sentences: &[Vec<u32>], bpe: &BpeModel) -> Self {
        let mut out = Vec::with_capacity(sentences.len());
        let mut subword_map = Vec::new();
        let mut global = 0;
        for (m, ids) in sentences.iter().enumerate() {
            let mut tokens = Vec::new();
            for (i, (word, pieces)) in bpe.decode_words(ids).into_iter().enumerate() {
                let word = if word.is_empty() { super::UNK.to_string() } else { word };
                tokens.push(Token {
                    lemma: word.to_lowercase(),
                    surface: word,
                    sentence_index: m,
                    word_index: i,
                    global_index: global,
                });
                subword_map.push(pieces);
                global += 1;
            }
            out.push(tokens);
        }
        Self {
            doc_id: doc_id.into(),
            sentences: out,
            dep_arcs: Vec::new(),
            coref_chains: Vec::new(),
            subword_map,
        }
    }

    /// The first `m` sentences with the annotations that lie inside them.
    pub fn prefix(&self, m: usize) -> AnnotatedDocument {
        let m = m.min(self.num_sentences());
        let end: usize = self.sentences[..m].iter().map(Vec::len).sum();
        AnnotatedDocument {
            doc_id: self.doc_id.clone(),
            sentences: self.sentences[..m].to_vec(),
            dep_arcs: self.dep_arcs.iter().copied().filter(|&(h, d)| h < end && d < end).collect(),
            coref_chains: self
                .coref_chains
                .iter()
                .map(|c| c.iter().copied().filter(|x| x.sentence < m).collect::<Vec<_>>())
                .filter(|c| !c.is_empty())
                .collect(),
            subword_map: self.subword_map[..end].to_vec(),
        }
    }

    /// Check the structural invariants of the document.
    pub fn validate(&self) -> Result<(), TokenizeError> {
        let bad = |reason: String| TokenizeError::InvalidDocument {
            doc_id: self.doc_id.clone(),
            reason,
        };
        let mut expected = 0;
        for (m, s) in self.sentences.iter().enumerate() {
            for (i, t) in s.iter().enumerate() {
                if t.global_index != expected || t.sentence_index != m || t.word_index != i {
                    return Err(bad(format!("token {expected} has inconsistent indices")));
                }
                if t.lemma.is_empty() {
                    return Err(bad(format!("token {expected} has an empty lemma")));
                }
                expected += 1;
            }
        }
        let sentence_of = self.sentence_of();
        for &(h, d) in &self.dep_arcs {
            if h >= expected || d >= expected || sentence_of[h] != sentence_of[d] {
                return Err(bad(format!("dependency arc ({h}, {d}) crosses sentences")));
            }
        }
        for chain in &self.coref_chains {
            for mention in chain {
                let len = self.sentences.get(mention.sentence).map_or(0, Vec::len);
                if mention.start > mention.end || mention.end >= len {
                    return Err(bad(format!("mention {mention:?} out of bounds")));
                }
            }
        }
        if self.subword_map.len() != expected || self.subword_map.iter().any(Vec::is_empty) {
            return Err(bad("subword map does not cover every token".into()));
        }
        Ok(())
    }
}

/// Split corpus text into documents of sentences of words. Blank lines
/// separate documents.
pub fn parse_corpus(text: &str) -> Vec<Vec<Vec<String>>> {
    let mut docs = Vec::new();
    let mut current: Vec<Vec<String>> = Vec::new();
    for line in text.lines() {
        let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if words.is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(words);
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

/// One word line of a CoNLL-U sentence: form, optional lemma, optional head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluWord {
    pub form: String,
    pub lemma: Option<String>,
    pub head: Option<usize>,
}

/// Parse CoNLL-U text into sentences. Multiword ranges (`1-2`) and empty
/// nodes (`1.1`) are skipped; comments are ignored.
pub fn parse_conllu(text: &str) -> Result<Vec<Vec<ConlluWord>>, TokenizeError> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let malformed = |reason: &str| TokenizeError::MalformedConllu {
            line: i + 1,
            reason: reason.to_string(),
        };
        if cols.len() != 10 {
            return Err(malformed("expected 10 tab-separated columns"));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| malformed("bad ID column"))?;
        if id != current.len() + 1 {
            return Err(malformed("word IDs must be consecutive from 1"));
        }
        let lemma = match cols[2] {
            "_" | "" => None,
            l => Some(l.to_lowercase()),
        };
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| malformed("bad HEAD column"))?),
        };
        current.push(ConlluWord {
            form: cols[1].to_string(),
            lemma,
            head,
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

#[derive(Deserialize)]
struct CorefLine {
    doc_id: String,
    chains: Vec<Vec<Vec<i64>>>,
}

/// `(line number, doc_id, chains)` from one coreference JSON line.
pub type CorefRecord = (usize, String, Vec<Vec<Mention>>);

/// Parse coreference JSON Lines.
pub fn parse_coref(text: &str) -> Result<Vec<CorefRecord>, TokenizeError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let parsed: CorefLine = serde_json::from_str(line).map_err(|e| TokenizeError::MalformedCoref {
            line: lineno,
            reason: e.to_string(),
        })?;
        let mut chains = Vec::with_capacity(parsed.chains.len());
        for chain in parsed.chains {
            let mut mentions = Vec::with_capacity(chain.len());
            for span in chain {
                let mention = match span.as_slice() {
                    &[s, a, b] if s >= 0 && a >= 0 && b >= a => Mention {
                        sentence: s as usize,
                        start: a as usize,
                        end: b as usize,
                    },
                    _ => {
                        return Err(TokenizeError::MalformedCoref {
                            line: lineno,
                            reason: format!("bad span {span:?}"),
                        })
                    }
                };
                mentions.push(mention);
            }
            chains.push(mentions);
        }
        out.push((lineno, parsed.doc_id, chains));
    }
    Ok(out)
}

pub fn doc_id_for(index: usize) -> String {
    format!("doc{index}")
}

/// Assemble documents from in-memory texts. Documents are named `doc0`,
/// `doc1`, … in corpus order.
pub fn documents_from_text(
    corpus: &str,
    conllu: Option<&str>,
    coref: Option<&str>,
    bpe: &BpeModel,
) -> Result<Vec<AnnotatedDocument>, TokenizeError> {
    let raw = parse_corpus(corpus);
    let mut docs = raw
        .iter()
        .enumerate()
        .map(|(d, sentences)| AnnotatedDocument::from_sentences(doc_id_for(d), sentences, bpe))
        .collect::<Result<Vec<_>, _>>()?;

    if let Some(conllu) = conllu {
        let parsed = parse_conllu(conllu)?;
        let mut it = parsed.into_iter();
        for doc in &mut docs {
            let mut arcs = Vec::new();
            for m in 0..doc.sentences.len() {
                let sentence = doc.sentences[m].len();
                let Some(words) = it.next() else {
                    return Err(TokenizeError::TokenCountMismatch {
                        doc_id: doc.doc_id.clone(),
                        sentence_index: m,
                        corpus: sentence,
                        conllu: 0,
                    });
                };
                if words.len() != sentence {
                    return Err(TokenizeError::TokenCountMismatch {
                        doc_id: doc.doc_id.clone(),
                        sentence_index: m,
                        corpus: sentence,
                        conllu: words.len(),
                    });
                }
                let offset = doc.sentence_range(m).start;
                for (i, w) in words.iter().enumerate() {
                    if let Some(lemma) = &w.lemma {
                        doc.sentences[m][i].lemma = lemma.clone();
                    }
                    match w.head {
                        None | Some(0) => {}
                        Some(h) if h <= sentence => arcs.push((offset + h - 1, offset + i)),
                        Some(h) => {
                            return Err(TokenizeError::InvalidDocument {
                                doc_id: doc.doc_id.clone(),
                                reason: format!("sentence {m}: HEAD {h} beyond sentence length {sentence}"),
                            })
                        }
                    }
                }
            }
            doc.dep_arcs = arcs;
        }
    }

    if let Some(coref) = coref {
        for (line, doc_id, chains) in parse_coref(coref)? {
            let doc = docs
                .iter_mut()
                .find(|d| d.doc_id == doc_id)
                .ok_or_else(|| TokenizeError::MalformedCoref {
                    line,
                    reason: format!("unknown doc_id {doc_id:?}"),
                })?;
            for mention in chains.iter().flatten() {
                let len = doc.sentences.get(mention.sentence).map_or(0, Vec::len);
                if mention.end >= len {
                    return Err(TokenizeError::MalformedCoref {
                        line,
                        reason: format!("span {mention:?} outside sentence bounds"),
                    });
                }
            }
            doc.coref_chains.extend(chains);
        }
    }

    for doc in &docs {
        doc.validate()?;
    }
    Ok(docs)
}

/// Load documents from files. Missing annotation paths yield documents
/// without dependency arcs or coreference chains.
pub fn load_documents(
    corpus_path: &Path,
    conllu_path: Option<&Path>,
    coref_path: Option<&Path>,
    bpe: &BpeModel,
) -> Result<Vec<AnnotatedDocument>, TokenizeError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| TokenizeError::io(p, e));
    let corpus = read(corpus_path)?;
    let conllu = conllu_path.map(read).transpose()?;
    let coref = coref_path.map(read).transpose()?;
    documents_from_text(&corpus, conllu.as_deref(), coref.as_deref(), bpe)
}
