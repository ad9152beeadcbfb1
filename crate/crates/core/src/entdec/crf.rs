//! Linear-chain CRF over the five entity tags with START/STOP boundary
//! states.

use crate::corpus::{Tag, TagSequence};
use crate::numeric::ops::logsumexp_unchecked;
use crate::numeric::{NumericError, Tape, Tensor, Var};
use crate::Error;

pub const NUM_TAGS: usize = Tag::COUNT;
pub const START: usize = NUM_TAGS;
pub const STOP: usize = NUM_TAGS + 1;
pub const NUM_STATES: usize = NUM_TAGS + 2;

/// Transition scores `table[from][to]` over the tags plus START and STOP.
///
/// The stored table is finite. Transitions into START and out of STOP are
/// treated as `-inf` regardless of the stored value and never receive a
/// gradient. With `constrained` set, BIO-invalid moves (an inside tag not
/// continuing a span of its role) are masked the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    table: Tensor,
    constrained: bool,
}

impl CrfParams {
    pub fn zeros() -> Self {
        Self {
            table: Tensor::zeros(&[NUM_STATES, NUM_STATES]),
            constrained: false,
        }
    }

    pub fn from_table(table: Tensor, constrained: bool) -> Result<Self, NumericError> {
        if table.shape() != [NUM_STATES, NUM_STATES] {
            return Err(NumericError::ShapeMismatch {
                op: "crf transitions",
                lhs: table.shape().to_vec(),
                rhs: vec![NUM_STATES, NUM_STATES],
            });
        }
        Ok(Self { table, constrained })
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn constrained(&self) -> bool {
        self.constrained
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        if to == START || from == STOP || (from == START && to == STOP) {
            return false;
        }
        if !self.constrained {
            return true;
        }
        let is_inside = |t: usize, role_b: Tag, role_i: Tag| {
            t == role_i.index() && from != role_b.index() && from != role_i.index()
        };
        !(is_inside(to, Tag::BS, Tag::IS) || is_inside(to, Tag::BO, Tag::IO))
    }

    /// Effective transition score, `-inf` where masked.
    pub fn score(&self, from: usize, to: usize) -> f64 {
        if self.allowed(from, to) {
            self.table.get2(from, to)
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn check_emissions(emissions: &Tensor) -> Result<usize, Error> {
    let (t, tags) = emissions.dims2()?;
    if tags != NUM_TAGS {
        return Err(Error::Shape(format!(
            "emissions need {NUM_TAGS} columns, got {tags}"
        )));
    }
    if t == 0 {
        return Err(Error::Shape("emissions for an empty sentence".into()));
    }
    Ok(t)
}

/// Forward log-messages `alpha[t][y]`.
fn forward(emissions: &Tensor, crf: &CrfParams) -> Vec<[f64; NUM_TAGS]> {
    let t_len = emissions.dims2().map_or(0, |d| d.0);
    let mut alpha = vec![[0.0; NUM_TAGS]; t_len];
    for (y, a) in alpha[0].iter_mut().enumerate() {
        *a = crf.score(START, y) + emissions.get2(0, y);
    }
    let mut buf = [0.0; NUM_TAGS];
    for t in 1..t_len {
        for y in 0..NUM_TAGS {
            for (p, slot) in buf.iter_mut().enumerate() {
                *slot = alpha[t - 1][p] + crf.score(p, y);
            }
            alpha[t][y] = logsumexp_unchecked(&buf) + emissions.get2(t, y);
        }
    }
    alpha
}

/// Backward log-messages `beta[t][y]` (score of everything after `t`).
fn backward(emissions: &Tensor, crf: &CrfParams) -> Vec<[f64; NUM_TAGS]> {
    let t_len = emissions.dims2().map_or(0, |d| d.0);
    let mut beta = vec![[0.0; NUM_TAGS]; t_len];
    for (y, b) in beta[t_len - 1].iter_mut().enumerate() {
        *b = crf.score(y, STOP);
    }
    let mut buf = [0.0; NUM_TAGS];
    for t in (0..t_len - 1).rev() {
        for y in 0..NUM_TAGS {
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = crf.score(y, n) + emissions.get2(t + 1, n) + beta[t + 1][n];
            }
            beta[t][y] = logsumexp_unchecked(&buf);
        }
    }
    beta
}

fn log_z(alpha: &[[f64; NUM_TAGS]], crf: &CrfParams) -> f64 {
    let last = alpha.last().expect("non-empty chain");
    let ends: Vec<f64> = (0..NUM_TAGS)
        .map(|y| last[y] + crf.score(y, STOP))
        .collect();
    logsumexp_unchecked(&ends)
}

/// `log Σ_y exp(score(y))` over all `5^T` tag sequences.
pub fn crf_log_partition(emissions: &Tensor, crf: &CrfParams) -> Result<f64, Error> {
    check_emissions(emissions)?;
    Ok(log_z(&forward(emissions, crf), crf))
}

/// Unnormalized score of one tag path, boundary transitions included.
pub fn sequence_score(emissions: &Tensor, crf: &CrfParams, tags: &[Tag]) -> Result<f64, Error> {
    let t_len = check_emissions(emissions)?;
    if tags.len() != t_len {
        return Err(Error::Shape(format!(
            "{} tags for {t_len} emission rows",
            tags.len()
        )));
    }
    let mut score = crf.score(START, tags[0].index());
    for (t, tag) in tags.iter().enumerate() {
        score += emissions.get2(t, tag.index());
        if t + 1 < t_len {
            score += crf.score(tag.index(), tags[t + 1].index());
        }
    }
    Ok(score + crf.score(tags[t_len - 1].index(), STOP))
}

/// Negative log-likelihood of `gold` under the CRF.
pub fn crf_nll(emissions: &Tensor, crf: &CrfParams, gold: &TagSequence) -> Result<f64, Error> {
    let gold_score = sequence_score(emissions, crf, gold.as_slice())?;
    Ok(crf_log_partition(emissions, crf)? - gold_score)
}

/// Posterior marginals of the CRF.
#[derive(Debug, Clone)]
pub struct CrfMarginals {
    pub log_partition: f64,
    /// `T × 5`: probability of tag `y` at position `t`.
    pub unary: Tensor,
    /// `7 × 7`: expected number of uses of each transition.
    pub transitions: Tensor,
}

pub fn crf_marginals(emissions: &Tensor, crf: &CrfParams) -> Result<CrfMarginals, Error> {
    let t_len = check_emissions(emissions)?;
    let alpha = forward(emissions, crf);
    let beta = backward(emissions, crf);
    let lz = log_z(&alpha, crf);
    let mut unary = Tensor::zeros(&[t_len, NUM_TAGS]);
    for t in 0..t_len {
        for y in 0..NUM_TAGS {
            unary.data_mut()[t * NUM_TAGS + y] = (alpha[t][y] + beta[t][y] - lz).exp();
        }
    }
    let mut trans = Tensor::zeros(&[NUM_STATES, NUM_STATES]);
    {
        let td = trans.data_mut();
        for y in 0..NUM_TAGS {
            td[START * NUM_STATES + y] = unary.get2(0, y);
            td[y * NUM_STATES + STOP] = unary.get2(t_len - 1, y);
        }
        for t in 0..t_len - 1 {
            for a in 0..NUM_TAGS {
                for b in 0..NUM_TAGS {
                    let s = crf.score(a, b);
                    if s == f64::NEG_INFINITY {
                        continue;
                    }
                    let lp = alpha[t][a] + s + emissions.get2(t + 1, b) + beta[t + 1][b] - lz;
                    td[a * NUM_STATES + b] += lp.exp();
                }
            }
        }
    }
    Ok(CrfMarginals {
        log_partition: lz,
        unary,
        transitions: trans,
    })
}

/// Records the gold NLL as a scalar on `tape`, with gradients
/// `marginal - indicator(gold)` for both emissions and transitions.
pub fn crf_nll_on_tape(
    tape: &mut Tape,
    emissions: Var,
    transitions: Var,
    gold: &TagSequence,
    constrained: bool,
) -> Result<Var, Error> {
    let e = tape.value(emissions).clone();
    let crf = CrfParams::from_table(tape.value(transitions).clone(), constrained)?;
    let gold_score = sequence_score(&e, &crf, gold.as_slice())?;
    let m = crf_marginals(&e, &crf)?;

    let mut d_e = m.unary;
    for (t, tag) in gold.as_slice().iter().enumerate() {
        d_e.data_mut()[t * NUM_TAGS + tag.index()] -= 1.0;
    }
    let mut d_t = m.transitions;
    {
        let idx = gold.indices();
        let td = d_t.data_mut();
        td[START * NUM_STATES + idx[0]] -= 1.0;
        td[idx[idx.len() - 1] * NUM_STATES + STOP] -= 1.0;
        for w in idx.windows(2) {
            td[w[0] * NUM_STATES + w[1]] -= 1.0;
        }
    }
    Ok(tape.precomputed(
        m.log_partition - gold_score,
        vec![(emissions, d_e), (transitions, d_t)],
    )?)
}

/// Highest-scoring tag path and its score. Exact ties resolve to the
/// lexicographically smallest path in tag order.
pub fn viterbi_decode(emissions: &Tensor, crf: &CrfParams) -> Result<(TagSequence, f64), Error> {
    let t_len = check_emissions(emissions)?;
    // suffix[t][y]: best score of positions t.. given y_t = y, STOP included.
    let mut suffix = vec![[0.0; NUM_TAGS]; t_len];
    for (y, v) in suffix[t_len - 1].iter_mut().enumerate() {
        *v = emissions.get2(t_len - 1, y) + crf.score(y, STOP);
    }
    for t in (0..t_len - 1).rev() {
        for y in 0..NUM_TAGS {
            let best = (0..NUM_TAGS)
                .map(|n| crf.score(y, n) + suffix[t + 1][n])
                .fold(f64::NEG_INFINITY, f64::max);
            suffix[t][y] = emissions.get2(t, y) + best;
        }
    }
    let first_best = |scores: [f64; NUM_TAGS]| {
        let mut best = 0;
        for y in 1..NUM_TAGS {
            if scores[y] > scores[best] {
                best = y;
            }
        }
        (best, scores[best])
    };
    let (mut prev, total) = first_best(std::array::from_fn(|y| crf.score(START, y) + suffix[0][y]));
    let mut path = Vec::with_capacity(t_len);
    path.push(prev);
    for next in suffix.iter().skip(1) {
        let (y, _) = first_best(std::array::from_fn(|n| crf.score(prev, n) + next[n]));
        path.push(y);
        prev = y;
    }
    let tags = path
        .into_iter()
        .map(|i| Tag::from_index(i).expect("tag index"))
        .collect();
    Ok((TagSequence(tags), total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::logsumexp;

    fn emissions(rows: &[[f64; 5]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_step_is_logsumexp_of_row() {
        let e = emissions(&[[0.5, -1.0, 2.0, 0.0, 1.5]]);
        let z = crf_log_partition(&e, &CrfParams::zeros()).unwrap();
        assert!((z - logsumexp(e.data()).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_factorizes() {
        let e = emissions(&[[0.5, -1.0, 2.0, 0.0, 1.5], [1.0, 1.0, -3.0, 0.25, 0.0]]);
        let z = crf_log_partition(&e, &CrfParams::zeros()).unwrap();
        let expected = logsumexp(e.row(0)).unwrap() + logsumexp(e.row(1)).unwrap();
        assert!((z - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_nll() {
        let t = 4;
        let e = Tensor::zeros(&[t, 5]);
        let gold = TagSequence(vec![Tag::BS, Tag::O, Tag::BO, Tag::IO]);
        let nll = crf_nll(&e, &CrfParams::zeros(), &gold).unwrap();
        assert!((nll - t as f64 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_nll_vanishes() {
        let gold = TagSequence(vec![Tag::BS, Tag::IS, Tag::O]);
        let mut e = Tensor::zeros(&[3, 5]);
        for (t, tag) in gold.as_slice().iter().enumerate() {
            e.data_mut()[t * 5 + tag.index()] = 40.0;
        }
        let nll = crf_nll(&e, &CrfParams::zeros(), &gold).unwrap();
        assert!((0.0..1e-12).contains(&nll), "{nll}");
    }

    #[test]
    fn zero_transitions_decode_per_position() {
        let e = emissions(&[[0.5, -1.0, 2.0, 0.0, 1.5], [1.0, 3.0, -3.0, 0.25, 0.0]]);
        let (path, _) = viterbi_decode(&e, &CrfParams::zeros()).unwrap();
        assert_eq!(path.0, vec![Tag::BO, Tag::IS]);
    }

    #[test]
    fn ties_pick_smallest_path() {
        let e = Tensor::zeros(&[3, 5]);
        let (path, score) = viterbi_decode(&e, &CrfParams::zeros()).unwrap();
        assert_eq!(path.0, vec![Tag::BS; 3]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn constrained_mask_forbids_dangling_inside() {
        let crf = CrfParams::from_table(Tensor::zeros(&[7, 7]), true).unwrap();
        assert!(!crf.allowed(START, Tag::IS.index()));
        assert!(!crf.allowed(Tag::O.index(), Tag::IO.index()));
        assert!(crf.allowed(Tag::BS.index(), Tag::IS.index()));
        assert!(crf.allowed(Tag::IO.index(), Tag::IO.index()));
        // An IS-favoring emission cannot start the path.
        let e = emissions(&[[0.0, 5.0, 0.0, 0.0, 0.0], [0.0; 5]]);
        let (path, _) = viterbi_decode(&e, &crf).unwrap();
        assert_ne!(path.0[0], Tag::IS);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let e = Tensor::zeros(&[2, 5]);
        let gold = TagSequence(vec![Tag::O]);
        assert!(crf_nll(&e, &CrfParams::zeros(), &gold).is_err());
    }
}
