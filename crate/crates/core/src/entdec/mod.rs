//! Entity decoder: distance-based emissions against one relation's
//! prototypes, a CRF over the tag chain, and span recovery.

mod crf;
mod spans;

use std::sync::Arc;

pub use crf::{
    crf_log_partition, crf_marginals, crf_nll, crf_nll_on_tape, sequence_score, viterbi_decode,
    CrfMarginals, CrfParams, NUM_STATES, NUM_TAGS, START, STOP,
};
pub use spans::tags_to_spans;

use crate::corpus::TagSequence;
use crate::numeric::{ops, NumericError, ParamStore, Tape, Tensor, Var};
use crate::registry::Registry;
use crate::Error;

pub const CRF_TRANSITIONS: &str = "crf.transitions";

/// Transition table initialized to zero.
pub fn init_crf_params() -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(CRF_TRANSITIONS, Tensor::zeros(&[NUM_STATES, NUM_STATES]));
    p
}

/// `([Q; Q̂], [P; P̂])`, concatenated along the feature axis.
pub fn combined_reps(
    tape: &mut Tape,
    query: Var,
    query_fused: Var,
    prototypes: Var,
    prototypes_fused: Var,
) -> Result<(Var, Var), NumericError> {
    Ok((
        tape.concat_cols(&[query, query_fused])?,
        tape.concat_cols(&[prototypes, prototypes_fused])?,
    ))
}

/// `T × 5` emissions: negative squared distance from each token to each
/// prototype.
pub fn emission_scores(
    tape: &mut Tape,
    query_bar: Var,
    protos_bar: Var,
) -> Result<Var, NumericError> {
    tape.neg_sq_dist(query_bar, protos_bar)
}

/// Plain-value [`emission_scores`].
pub fn emission_matrix(query_bar: &Tensor, protos_bar: &Tensor) -> Result<Tensor, NumericError> {
    ops::neg_sq_dist(query_bar, protos_bar)
}

/// Viterbi output for the query under one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationDecode {
    pub tags: TagSequence,
    pub path_score: f64,
}

/// Chooses which relation's decoding supplies the entity spans.
pub trait EntityDecoding: Send + Sync {
    fn name(&self) -> &'static str;

    /// `decode(i)` runs the CRF under relation `i`. Returns the chosen
    /// relation index and its decoding.
    fn select(
        &self,
        predicted_relation: usize,
        n_relations: usize,
        decode: &mut dyn FnMut(usize) -> Result<RelationDecode, Error>,
    ) -> Result<(usize, RelationDecode), Error>;
}

/// Decodes under the relation chosen by the relation decoder.
#[derive(Debug, Clone, Copy, Default)]
pub struct RelationGuided;

/// Decodes under every relation and keeps the highest path score (ties go
/// to the lowest index).
#[derive(Debug, Clone, Copy, Default)]
pub struct AllRelations;

impl EntityDecoding for RelationGuided {
    fn name(&self) -> &'static str {
        "relation-guided"
    }

    fn select(
        &self,
        predicted_relation: usize,
        _n_relations: usize,
        decode: &mut dyn FnMut(usize) -> Result<RelationDecode, Error>,
    ) -> Result<(usize, RelationDecode), Error> {
        Ok((predicted_relation, decode(predicted_relation)?))
    }
}

impl EntityDecoding for AllRelations {
    fn name(&self) -> &'static str {
        "all-relations"
    }

    fn select(
        &self,
        _predicted_relation: usize,
        n_relations: usize,
        decode: &mut dyn FnMut(usize) -> Result<RelationDecode, Error>,
    ) -> Result<(usize, RelationDecode), Error> {
        let mut best: Option<(usize, RelationDecode)> = None;
        for i in 0..n_relations {
            let d = decode(i)?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| d.path_score > b.path_score)
            {
                best = Some((i, d));
            }
        }
        best.ok_or_else(|| Error::Shape("no relations to decode under".into()))
    }
}

pub fn entity_decoders() -> Registry<dyn EntityDecoding> {
    Registry::<dyn EntityDecoding>::new("entity decoding")
        .with("relation-guided", Arc::new(RelationGuided))
        .with("all-relations", Arc::new(AllRelations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;

    #[test]
    fn combined_width_and_order() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::new(vec![2, 8], (0..16).map(f64::from).collect()).unwrap());
        let p = tape.constant(Tensor::new(vec![5, 8], (0..40).map(f64::from).collect()).unwrap());
        let (qb, pb) = combined_reps(&mut tape, q, q, p, p).unwrap();
        assert_eq!(tape.value(qb).shape(), &[2, 16]);
        assert_eq!(tape.value(pb).shape(), &[5, 16]);
        let row = tape.value(qb).row(1);
        assert_eq!(&row[..8], tape.value(q).row(1));
        assert_eq!(&row[8..], tape.value(q).row(1));
    }

    #[test]
    fn emissions_are_negative_distances() {
        let q = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let p = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 2.0],
            vec![-1.0, 0.0],
            vec![3.0, 4.0],
        ])
        .unwrap();
        let e = emission_matrix(&q, &p).unwrap();
        assert_eq!(e.shape(), &[2, 5]);
        assert_eq!(e.get2(0, Tag::O.index()), -25.0);
        assert_eq!(e.get2(1, Tag::BS.index()), 0.0);
        assert!((1..5).all(|l| e.get2(1, l) < 0.0));
    }

    #[test]
    fn all_relations_keeps_best_path() {
        let mut calls = Vec::new();
        let mut decode = |i: usize| {
            calls.push(i);
            Ok(RelationDecode {
                tags: TagSequence(vec![Tag::O]),
                path_score: [1.0, 3.0, 3.0][i],
            })
        };
        let (i, d) = AllRelations.select(0, 3, &mut decode).unwrap();
        assert_eq!((i, d.path_score), (1, 3.0));
        let (i, _) = RelationGuided.select(2, 3, &mut decode).unwrap();
        assert_eq!(i, 2);
        assert_eq!(calls, vec![0, 1, 2, 2]);
    }
}
