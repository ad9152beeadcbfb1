//! Relation decoder: pools fused query and prototype features and scores
//! each episode relation with a one-hidden-layer MLP.

use rand_chacha::ChaCha8Rng;

use crate::encoder::uniform;
use crate::fusion::Fusion;
use crate::numeric::{ops, BoundParams, NumericError, ParamStore, Tape, Tensor, Var};
use crate::Error;

/// `4d × d` hidden weight.
pub const REL_HIDDEN: &str = "reldec.hidden";
/// `d × 1` output projection.
pub const REL_OUTPUT: &str = "reldec.output";

pub fn init_reldec_params(d: usize, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(
        REL_HIDDEN,
        uniform(&[4 * d, d], 1.0 / ((4 * d) as f64).sqrt(), rng),
    );
    p.insert(REL_OUTPUT, uniform(&[d, 1], 1.0 / (d as f64).sqrt(), rng));
    p
}

/// `[colmax(X); colmean(X)]` as a `1 × 2d` row.
pub fn pool_global(tape: &mut Tape, x: Var) -> Result<Var, NumericError> {
    let max = tape.max_pool(x)?;
    let mean = tape.mean_pool(x)?;
    tape.concat_cols(&[max, mean])
}

/// Plain-value [`pool_global`].
pub fn pool_global_tensor(x: &Tensor) -> Result<Tensor, NumericError> {
    ops::concat_cols(&[&ops::max_pool(x)?, &ops::mean_pool(x)?])
}

/// `Vᵀ relu([q̃; p̃] W)` as a `1 × 1` value.
pub fn relation_matching_score(
    tape: &mut Tape,
    params: &BoundParams,
    q_tilde: Var,
    p_tilde: Var,
) -> Result<Var, Error> {
    let joined = tape.concat_cols(&[q_tilde, p_tilde])?;
    let hidden = tape.matmul(joined, params.get(REL_HIDDEN)?)?;
    let hidden = tape.relu(hidden);
    Ok(tape.matmul(hidden, params.get(REL_OUTPUT)?)?)
}

/// What the query is fused with on the relation side.
#[derive(Debug, Clone)]
pub enum RelationEvidence {
    /// The relation's `5 × d` entity prototypes.
    Prototypes(Var),
    /// An already fused `(Q̂, P̂)` pair for the relation's prototypes.
    Fused { query: Var, prototypes: Var },
    /// Each support sentence's token matrix, fused one at a time; pooled
    /// features are averaged over the shots.
    SupportTokens(Vec<Var>),
}

/// Score of the query against one relation.
pub fn score_relation(
    tape: &mut Tape,
    params: &BoundParams,
    fusion: &dyn Fusion,
    query: Var,
    evidence: &RelationEvidence,
) -> Result<Var, Error> {
    let (q_tilde, p_tilde) = match evidence {
        RelationEvidence::Prototypes(p) => {
            let (q_hat, p_hat) = fusion.fuse(tape, params, query, *p)?;
            (pool_global(tape, q_hat)?, pool_global(tape, p_hat)?)
        }
        RelationEvidence::Fused { query, prototypes } => {
            (pool_global(tape, *query)?, pool_global(tape, *prototypes)?)
        }
        RelationEvidence::SupportTokens(shots) => {
            let mut q_hats = Vec::with_capacity(shots.len());
            let mut s_pooled = Vec::with_capacity(shots.len());
            for s in shots {
                let (q_hat, s_hat) = fusion.fuse(tape, params, query, *s)?;
                q_hats.push(q_hat);
                s_pooled.push(pool_global(tape, s_hat)?);
            }
            let q_mean = tape.mean_n(&q_hats)?;
            (pool_global(tape, q_mean)?, tape.mean_n(&s_pooled)?)
        }
    };
    relation_matching_score(tape, params, q_tilde, p_tilde)
}

/// Scores for every relation, as a `1 × N` row.
pub fn relation_scores(
    tape: &mut Tape,
    params: &BoundParams,
    fusion: &dyn Fusion,
    query: Var,
    evidence: &[RelationEvidence],
) -> Result<Var, Error> {
    let scores = evidence
        .iter()
        .map(|e| score_relation(tape, params, fusion, query, e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tape.concat_cols(&scores)?)
}

/// Cross-entropy of a softmax over the scores against `gold`.
pub fn relation_loss(tape: &mut Tape, scores: Var, gold: usize) -> Result<Var, Error> {
    let n = tape.value(scores).len();
    if gold >= n {
        return Err(Error::GoldOutOfRange { gold, n });
    }
    let lse = tape.logsumexp(scores)?;
    let picked = tape.pick(scores, gold)?;
    Ok(tape.sub(lse, picked)?)
}

/// Plain-value [`relation_loss`].
pub fn relation_loss_value(scores: &[f64], gold: usize) -> Result<f64, Error> {
    if gold >= scores.len() {
        return Err(Error::GoldOutOfRange {
            gold,
            n: scores.len(),
        });
    }
    Ok(ops::logsumexp(scores)? - scores[gold])
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_examples() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(
            pool_global_tensor(&x).unwrap().data(),
            &[3.0, 4.0, 2.0, 3.0]
        );
        let one = Tensor::from_rows(&[vec![-1.5, 7.0]]).unwrap();
        assert_eq!(
            pool_global_tensor(&one).unwrap().data(),
            &[-1.5, 7.0, -1.5, 7.0]
        );
        let c = Tensor::from_rows(&[vec![2.0, 2.0], vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(pool_global_tensor(&c).unwrap().data(), &[2.0; 4]);
        assert!(pool_global_tensor(&Tensor::zeros(&[0, 3])).is_err());
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.1, 2.3, -1.0]), Some(1));
        assert_eq!(argmax(&[1.0, 1.0]), Some(0));
        assert_eq!(argmax(&[-4.0]), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn loss_examples() {
        assert!((relation_loss_value(&[0.3; 5], 2).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(relation_loss_value(&[1e3, 0.0], 0).unwrap() < 1e-12);
        assert!(
            (relation_loss_value(&[1.0, 0.0], 0).unwrap() - 0.313_261_687_518_222_8).abs() < 1e-15
        );
        assert!(matches!(
            relation_loss_value(&[1.0, 0.0], 2),
            Err(Error::GoldOutOfRange { gold: 2, n: 2 })
        ));
    }

    fn score(q: &[f64], p: &[f64], w: Tensor, v: Tensor) -> f64 {
        let mut store = ParamStore::new();
        store.insert(REL_HIDDEN, w);
        store.insert(REL_OUTPUT, v);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let qv = tape.constant(Tensor::from_rows(&[q.to_vec()]).unwrap());
        let pv = tape.constant(Tensor::from_rows(&[p.to_vec()]).unwrap());
        let s = relation_matching_score(&mut tape, &bound, qv, pv).unwrap();
        tape.value(s).item()
    }

    #[test]
    fn zero_projection_scores_zero() {
        let w = Tensor::new(vec![8, 2], (0..16).map(|i| i as f64 * 0.1).collect()).unwrap();
        let s = score(
            &[1.0, 2.0, 3.0, 4.0],
            &[-1.0, 0.5, 2.0, 1.0],
            w,
            Tensor::zeros(&[2, 1]),
        );
        assert_eq!(s, 0.0);
    }

    #[test]
    fn constructed_all_ones_hidden_scores_d() {
        // Inputs [1,0,0,...]; the first row of W is all ones, so relu output is all ones.
        let d = 3;
        let mut w = Tensor::zeros(&[4 * d, d]);
        for c in 0..d {
            w.data_mut()[c] = 1.0;
        }
        let mut q = vec![0.0; 2 * d];
        q[0] = 1.0;
        let v = Tensor::new(vec![d, 1], vec![1.0; d]).unwrap();
        assert_eq!(score(&q, &[0.0; 6], w, v), d as f64);
    }
}
