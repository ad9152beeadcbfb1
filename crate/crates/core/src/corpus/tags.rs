use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Span};

/// Role-aware BIO tag. The discriminant is the tag's row in every
/// prototype matrix and emission table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    BS = 0,
    IS = 1,
    BO = 2,
    IO = 3,
    O = 4,
}

impl Tag {
    pub const COUNT: usize = 5;
    pub const ALL: [Tag; 5] = [Tag::BS, Tag::IS, Tag::BO, Tag::IO, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::BS => "BS",
            Tag::IS => "IS",
            Tag::BO => "BO",
            Tag::IO => "IO",
            Tag::O => "O",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown tag `{s}`"))
    }
}

/// One tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Tag] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.index()).collect()
    }

    /// True when every inside tag continues a span of the same role.
    pub fn is_well_formed(&self) -> bool {
        let mut prev: Option<Tag> = None;
        for &t in &self.0 {
            let ok = match t {
                Tag::IS => matches!(prev, Some(Tag::BS | Tag::IS)),
                Tag::IO => matches!(prev, Some(Tag::BO | Tag::IO)),
                _ => true,
            };
            if !ok {
                return false;
            }
            prev = Some(t);
        }
        true
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|t| t.name()).collect();
        write!(f, "[{}]", names.join(","))
    }
}

fn mark(tags: &mut [Tag], span: Span, begin: Tag, inside: Tag) {
    tags[span.start] = begin;
    for t in &mut tags[span.start + 1..span.end] {
        *t = inside;
    }
}

/// Gold BIO tags for a sentence's subject and object spans.
pub fn derive_bio_tags(sentence: &AnnotatedSentence) -> TagSequence {
    let mut tags = vec![Tag::O; sentence.tokens().len()];
    mark(&mut tags, sentence.subject(), Tag::BS, Tag::IS);
    mark(&mut tags, sentence.object(), Tag::BO, Tag::IO);
    TagSequence(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Tag::*;

    fn sentence(tokens: &[&str], subj: (usize, usize), obj: (usize, usize)) -> AnnotatedSentence {
        AnnotatedSentence::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            "r".into(),
            Span::new(subj.0, subj.1),
            Span::new(obj.0, obj.1),
        )
        .unwrap()
    }

    #[test]
    fn multi_token_entities() {
        let s = sentence(
            &["Tom", "Hanks", "starred", "in", "Forrest", "Gump"],
            (0, 2),
            (4, 6),
        );
        assert_eq!(derive_bio_tags(&s).0, vec![BS, IS, O, O, BO, IO]);
    }

    #[test]
    fn single_token_entities() {
        let s = sentence(&["a", "b", "c"], (0, 1), (2, 3));
        assert_eq!(derive_bio_tags(&s).0, vec![BS, O, BO]);
    }

    #[test]
    fn object_before_subject() {
        let s = sentence(&["a", "b", "c", "d"], (2, 4), (0, 1));
        assert_eq!(derive_bio_tags(&s).0, vec![BO, O, BS, IS]);
    }

    #[test]
    fn well_formedness() {
        assert!(TagSequence(vec![BS, IS, O, BO, IO, IO]).is_well_formed());
        assert!(!TagSequence(vec![O, IS]).is_well_formed());
        assert!(!TagSequence(vec![BS, IO]).is_well_formed());
        assert!(!TagSequence(vec![IO]).is_well_formed());
    }

    #[test]
    fn tag_names_round_trip() {
        for t in Tag::ALL {
            assert_eq!(t.name().parse::<Tag>().unwrap(), t);
            assert_eq!(Tag::from_index(t.index()), Some(t));
        }
    }
}
