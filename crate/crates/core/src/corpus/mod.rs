//! Annotated sentences, JSONL ingestion, episode sampling and the synthetic
//! corpus generator.

mod episode;
mod synth;
mod tags;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use episode::{episode_rng, sample_episode, sample_indexed_episode, Episode, EpisodeShape};
pub use synth::{generate_synthetic_corpus, RelationLexicon, SynthConfig};
pub use tags::{derive_bio_tags, Tag, TagSequence};

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SentenceError {
    #[error("sentence needs at least 2 tokens, got {0}")]
    TooShort(usize),
    #[error("{0} span out of range")]
    SpanOutOfRange(&'static str),
    #[error("{0} span is empty")]
    EmptySpan(&'static str),
    #[error("subject and object spans overlap")]
    Overlap,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed JSON, line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("{reason}, line {line}")]
    InvalidSentence { line: usize, reason: SentenceError },
    #[error("multiple triples are not supported, line {line}")]
    MultipleTriples { line: usize },
    #[error("empty corpus")]
    Empty,
    #[error("need {needed} relations, corpus has {available}")]
    NotEnoughRelations { needed: usize, available: usize },
    #[error("relation `{relation}` needs {needed} sentences, has {available}")]
    NotEnoughInstances {
        relation: String,
        needed: usize,
        available: usize,
    },
    #[error("invalid episode shape: {0}")]
    InvalidShape(String),
    #[error("infeasible synthetic corpus: {0}")]
    Infeasible(String),
}

/// A tokenized sentence with exactly one gold triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnotatedSentence {
    tokens: Vec<String>,
    relation: String,
    subject: Span,
    object: Span,
}

impl AnnotatedSentence {
    pub fn new(
        tokens: Vec<String>,
        relation: String,
        subject: Span,
        object: Span,
    ) -> Result<Self, SentenceError> {
        let n = tokens.len();
        if n < 2 {
            return Err(SentenceError::TooShort(n));
        }
        for (role, span) in [("subject", subject), ("object", object)] {
            if span.is_empty() {
                return Err(SentenceError::EmptySpan(role));
            }
            if span.end > n {
                return Err(SentenceError::SpanOutOfRange(role));
            }
        }
        if subject.overlaps(&object) {
            return Err(SentenceError::Overlap);
        }
        Ok(Self {
            tokens,
            relation,
            subject,
            object,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn subject(&self) -> Span {
        self.subject
    }

    pub fn object(&self) -> Span {
        self.object
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tags(&self) -> TagSequence {
        derive_bio_tags(self)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpanField {
    One([usize; 2]),
    Many(Vec<[usize; 2]>),
}

#[derive(Deserialize)]
struct LineIn {
    tokens: Vec<String>,
    relation: String,
    subject: SpanField,
    object: SpanField,
}

#[derive(Serialize)]
struct LineOut<'a> {
    tokens: &'a [String],
    relation: &'a str,
    subject: [usize; 2],
    object: [usize; 2],
}

/// Sentences grouped by relation id (groups iterate in id order).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    domain: String,
    groups: BTreeMap<String, Vec<AnnotatedSentence>>,
}

impl Corpus {
    pub fn from_sentences(
        domain: impl Into<String>,
        sentences: impl IntoIterator<Item = AnnotatedSentence>,
    ) -> Result<Self, CorpusError> {
        let mut groups: BTreeMap<String, Vec<AnnotatedSentence>> = BTreeMap::new();
        for s in sentences {
            groups.entry(s.relation.clone()).or_default().push(s);
        }
        if groups.is_empty() {
            return Err(CorpusError::Empty);
        }
        Ok(Self {
            domain: domain.into(),
            groups,
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn num_relations(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, relation: &str) -> Option<&[AnnotatedSentence]> {
        self.groups.get(relation).map(Vec::as_slice)
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &[AnnotatedSentence])> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn sentences(&self) -> impl Iterator<Item = &AnnotatedSentence> {
        self.groups.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Partitions the relation inventory: the first `n` relations in id order
    /// go left, the rest right.
    pub fn split_relations(&self, n: usize) -> Result<(Corpus, Corpus), CorpusError> {
        if n == 0 || n >= self.groups.len() {
            return Err(CorpusError::NotEnoughRelations {
                needed: n + 1,
                available: self.groups.len(),
            });
        }
        let mut left = BTreeMap::new();
        let mut right = BTreeMap::new();
        for (i, (k, v)) in self.groups.iter().enumerate() {
            if i < n {
                left.insert(k.clone(), v.clone());
            } else {
                right.insert(k.clone(), v.clone());
            }
        }
        Ok((
            Corpus {
                domain: self.domain.clone(),
                groups: left,
            },
            Corpus {
                domain: self.domain.clone(),
                groups: right,
            },
        ))
    }

    /// Splits every relation's sentences: the first `n` of each group go
    /// left, the rest right. Both sides keep the full relation inventory.
    pub fn split_sentences(&self, n: usize) -> Result<(Corpus, Corpus), CorpusError> {
        let mut left = BTreeMap::new();
        let mut right = BTreeMap::new();
        for (k, v) in &self.groups {
            if n == 0 || n >= v.len() {
                return Err(CorpusError::NotEnoughInstances {
                    relation: k.clone(),
                    needed: n + 1,
                    available: v.len(),
                });
            }
            left.insert(k.clone(), v[..n].to_vec());
            right.insert(k.clone(), v[n..].to_vec());
        }
        Ok((
            Corpus {
                domain: self.domain.clone(),
                groups: left,
            },
            Corpus {
                domain: self.domain.clone(),
                groups: right,
            },
        ))
    }

    pub fn shares_relations_with(&self, other: &Corpus) -> bool {
        self.groups.keys().any(|k| other.groups.contains_key(k))
    }

    /// One JSON object per line, groups in id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in self.sentences() {
            out.push_str(&sentence_to_json(s));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn sentence_to_json(s: &AnnotatedSentence) -> String {
    let line = LineOut {
        tokens: &s.tokens,
        relation: &s.relation,
        subject: [s.subject.start, s.subject.end],
        object: [s.object.start, s.object.end],
    };
    serde_json::to_string(&line).expect("sentence serializes")
}

fn parse_line(line_no: usize, text: &str) -> Result<AnnotatedSentence, CorpusError> {
    let raw: LineIn = serde_json::from_str(text).map_err(|e| CorpusError::Json {
        line: line_no,
        message: e.to_string(),
    })?;
    let span = |f: SpanField| match f {
        SpanField::One([s, e]) => Ok(Span::new(s, e)),
        SpanField::Many(v) if v.len() == 1 => Ok(Span::new(v[0][0], v[0][1])),
        SpanField::Many(_) => Err(CorpusError::MultipleTriples { line: line_no }),
    };
    let subject = span(raw.subject)?;
    let object = span(raw.object)?;
    AnnotatedSentence::new(raw.tokens, raw.relation, subject, object).map_err(|reason| {
        CorpusError::InvalidSentence {
            line: line_no,
            reason,
        }
    })
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus_str(domain: &str, text: &str) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        sentences.push(parse_line(i + 1, line)?);
    }
    Corpus::from_sentences(domain, sentences)
}

/// Loads a JSONL corpus; the domain label is the file stem.
pub fn parse_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let domain = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_corpus_str(&domain, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_relations_two_groups() {
        let text = concat!(
            r#"{"tokens":["a","b","c"],"relation":"r1","subject":[0,1],"object":[2,3]}"#,
            "\n",
            r#"{"tokens":["d","e"],"relation":"r2","subject":[1,2],"object":[0,1],"extra":7}"#,
            "\n"
        );
        let c = parse_corpus_str("t", text).unwrap();
        assert_eq!(c.num_relations(), 2);
        assert_eq!(c.group("r1").unwrap().len(), 1);
        assert_eq!(c.group("r2").unwrap().len(), 1);
    }

    #[test]
    fn span_out_of_range_names_line() {
        let text = concat!(
            r#"{"tokens":["a","b","c"],"relation":"r1","subject":[0,1],"object":[2,3]}"#,
            "\n",
            r#"{"tokens":["a","b","c","d","e"],"relation":"r1","subject":[3,9],"object":[0,1]}"#,
        );
        let err = parse_corpus_str("t", text).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidSentence { line: 2, .. }));
        assert_eq!(err.to_string(), "subject span out of range, line 2");
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(parse_corpus_str("t", ""), Err(CorpusError::Empty)));
    }

    #[test]
    fn malformed_json_and_overlap() {
        assert!(matches!(
            parse_corpus_str("t", "{not json"),
            Err(CorpusError::Json { line: 1, .. })
        ));
        let overlap = r#"{"tokens":["a","b","c"],"relation":"r","subject":[0,2],"object":[1,3]}"#;
        assert!(matches!(
            parse_corpus_str("t", overlap),
            Err(CorpusError::InvalidSentence {
                reason: SentenceError::Overlap,
                ..
            })
        ));
    }

    #[test]
    fn multi_triple_lines_are_rejected() {
        let line =
            r#"{"tokens":["a","b","c","d"],"relation":"r","subject":[[0,1],[2,3]],"object":[3,4]}"#;
        assert!(matches!(
            parse_corpus_str("t", line),
            Err(CorpusError::MultipleTriples { line: 1 })
        ));
    }

    #[test]
    fn one_token_sentence_is_rejected() {
        let err = AnnotatedSentence::new(
            vec!["x".into()],
            "r".into(),
            Span::new(0, 1),
            Span::new(0, 1),
        )
        .unwrap_err();
        assert_eq!(err, SentenceError::TooShort(1));
    }

    #[test]
    fn jsonl_round_trip() {
        let text = r#"{"tokens":["a","b","c"],"relation":"r1","subject":[0,1],"object":[2,3]}"#;
        let c = parse_corpus_str("t", text).unwrap();
        assert_eq!(c.to_jsonl().trim_end(), text);
    }
}
