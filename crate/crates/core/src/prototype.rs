//! Entity prototypes: per relation, the mean support representation of the
//! tokens carrying each tag.

use std::sync::Arc;

use crate::corpus::{AnnotatedSentence, Tag, TagSequence};
use crate::numeric::{Tape, Tensor, Var};
use crate::registry::Registry;
use crate::Error;

/// How the masked sum of support token vectors is normalized.
pub trait PrototypeNorm: Send + Sync {
    fn name(&self) -> &'static str;

    /// Divisor of the masked sum, given the number of support tokens
    /// carrying the tag (at least 1) and the shot count.
    fn divisor(&self, tag_count: usize, k_shot: usize) -> f64;
}

/// Divides by the number of matching tokens (the standard class mean).
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenMean;

impl PrototypeNorm for TokenMean {
    fn name(&self) -> &'static str {
        "token-mean"
    }

    fn divisor(&self, tag_count: usize, _k_shot: usize) -> f64 {
        tag_count as f64
    }
}

/// Divides the masked sum by the shot count K, so prototype magnitude grows
/// with entity length.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerShot;

impl PrototypeNorm for PerShot {
    fn name(&self) -> &'static str {
        "per-shot"
    }

    fn divisor(&self, _tag_count: usize, k_shot: usize) -> f64 {
        k_shot as f64
    }
}

pub fn prototype_norms() -> Registry<dyn PrototypeNorm> {
    Registry::<dyn PrototypeNorm>::new("prototype normalization")
        .with("token-mean", Arc::new(TokenMean))
        .with("per-shot", Arc::new(PerShot))
}

/// Per-relation `5 × d` prototype matrices (rows in [`Tag::ALL`] order)
/// with the number of support tokens behind each row.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Vec<Tensor>,
    pub counts: Vec<[usize; Tag::COUNT]>,
}

impl PrototypeSet {
    pub fn n_relations(&self) -> usize {
        self.prototypes.len()
    }
}

/// `5 × M` 0/1 selection matrix over the stacked support tokens.
fn selection_matrix(tags: &[TagSequence]) -> (Tensor, [usize; Tag::COUNT]) {
    let mut counts = [0usize; Tag::COUNT];
    let total: usize = tags.iter().map(TagSequence::len).sum();
    let mut a = Tensor::zeros(&[Tag::COUNT, total]);
    for (col, t) in tags.iter().flat_map(|s| s.as_slice()).enumerate() {
        counts[t.index()] += 1;
        a.data_mut()[t.index() * total + col] = 1.0;
    }
    (a, counts)
}

/// Records the prototype matrix of one relation from its encoded support
/// sentences.
pub fn relation_prototypes(
    tape: &mut Tape,
    encoded: &[Var],
    tags: &[TagSequence],
    norm: &dyn PrototypeNorm,
) -> Result<(Var, [usize; Tag::COUNT]), Error> {
    for (v, t) in encoded.iter().zip(tags) {
        let (rows, _) = tape.value(*v).dims2()?;
        if rows != t.len() {
            return Err(Error::Shape(format!(
                "support encoding has {rows} rows but {} tags",
                t.len()
            )));
        }
    }
    let stacked = tape.concat_rows(encoded)?;
    let (select, counts) = selection_matrix(tags);
    let select = tape.constant(select);
    let sums = tape.matmul(select, stacked)?;
    // Zero-count rows are all-zero sums; dividing by 1 keeps them zero.
    let divisors: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                norm.divisor(c, tags.len())
            }
        })
        .collect();
    Ok((tape.div_rows(sums, &divisors)?, counts))
}

/// Prototypes for every support group, given a function that encodes a
/// sentence into a `T × d` matrix.
pub fn compute_entity_prototypes<F>(
    support: &[Vec<AnnotatedSentence>],
    mut encode: F,
    norm: &dyn PrototypeNorm,
) -> Result<PrototypeSet, Error>
where
    F: FnMut(&AnnotatedSentence) -> Result<Tensor, Error>,
{
    let mut set = PrototypeSet {
        prototypes: Vec::with_capacity(support.len()),
        counts: Vec::with_capacity(support.len()),
    };
    for group in support {
        let mut tape = Tape::new();
        let mut encoded = Vec::with_capacity(group.len());
        for s in group {
            encoded.push(tape.constant(encode(s)?));
        }
        let tags: Vec<TagSequence> = group.iter().map(AnnotatedSentence::tags).collect();
        let (p, counts) = relation_prototypes(&mut tape, &encoded, &tags, norm)?;
        set.prototypes.push(tape.value(p).clone());
        set.counts.push(counts);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn sentence(n: usize, subj: (usize, usize), obj: (usize, usize)) -> AnnotatedSentence {
        AnnotatedSentence::new(
            (0..n).map(|i| format!("t{i}")).collect(),
            "r".into(),
            Span::new(subj.0, subj.1),
            Span::new(obj.0, obj.1),
        )
        .unwrap()
    }

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_bs_token_is_its_own_prototype() {
        let s = sentence(3, (0, 1), (2, 3));
        let enc = rows(&[&[0.5, -1.5], &[2.0, 2.0], &[9.0, 1.0]]);
        let set = compute_entity_prototypes(&[vec![s]], |_| Ok(enc.clone()), &TokenMean).unwrap();
        assert_eq!(set.prototypes[0].row(Tag::BS.index()), &[0.5, -1.5]);
        assert_eq!(set.counts[0], [1, 0, 1, 0, 1]);
        // Zero-count tags give a zero row.
        assert_eq!(set.prototypes[0].row(Tag::IS.index()), &[0.0, 0.0]);
    }

    #[test]
    fn duplicated_shots_match_single_shot() {
        let s = sentence(4, (0, 2), (3, 4));
        let enc = rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0, 8.0]]);
        let one =
            compute_entity_prototypes(&[vec![s.clone()]], |_| Ok(enc.clone()), &TokenMean).unwrap();
        let two = compute_entity_prototypes(&[vec![s.clone(), s]], |_| Ok(enc.clone()), &TokenMean)
            .unwrap();
        assert_eq!(one.prototypes, two.prototypes);
    }

    #[test]
    fn o_prototype_is_mean_over_both_shots() {
        // Each 4-token sentence has two O tokens at positions 1 and 3.
        let s = sentence(4, (0, 1), (2, 3));
        let first = rows(&[&[9.0, 9.0], &[1.0, 0.0], &[9.0, 9.0], &[0.0, 1.0]]);
        let second = rows(&[&[9.0, 9.0], &[1.0, 1.0], &[9.0, 9.0], &[0.0, 0.0]]);
        let mut calls = 0;
        let set = compute_entity_prototypes(
            &[vec![s.clone(), s]],
            |_| {
                calls += 1;
                Ok(if calls == 1 {
                    first.clone()
                } else {
                    second.clone()
                })
            },
            &TokenMean,
        )
        .unwrap();
        assert_eq!(set.prototypes[0].row(Tag::O.index()), &[0.5, 0.5]);
    }

    #[test]
    fn per_shot_divides_by_k() {
        let s = sentence(3, (0, 2), (2, 3));
        let enc = rows(&[&[2.0], &[4.0], &[6.0]]);
        let set = compute_entity_prototypes(&[vec![s.clone(), s]], |_| Ok(enc.clone()), &PerShot)
            .unwrap();
        // One IS token per shot: (4 + 4) / 2.
        assert_eq!(set.prototypes[0].row(Tag::IS.index()), &[4.0]);
        assert_eq!(set.prototypes[0].row(Tag::BS.index()), &[2.0]);
    }
}
