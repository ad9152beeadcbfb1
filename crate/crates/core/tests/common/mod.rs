//! Independent reference implementations shared by the oracle and
//! acceptance suites.

#![allow(dead_code)]

use fewtrip::corpus::{AnnotatedSentence, Span, Tag, TagSequence};
use fewtrip::entdec::{
    crf_log_partition, crf_nll, viterbi_decode, CrfParams, NUM_STATES, NUM_TAGS, START, STOP,
};
use fewtrip::fusion::{fuse, fusion_attention};
use fewtrip::numeric::Tensor;
use fewtrip::prototype::{compute_entity_prototypes, TokenMean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Score of one tag path, written directly from the chain definition.
fn path_score(em: &Tensor, table: &Tensor, path: &[usize]) -> f64 {
    let mut s = table.get2(START, path[0]) + em.get2(0, path[0]);
    for t in 1..path.len() {
        s += table.get2(path[t - 1], path[t]) + em.get2(t, path[t]);
    }
    s + table.get2(path[path.len() - 1], STOP)
}

/// Every tag path of length `t` in lexicographic order.
fn all_paths(t: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..NUM_TAGS.pow(t as u32)).map(move |mut code| {
        let mut p = vec![0; t];
        for slot in p.iter_mut().rev() {
            *slot = code % NUM_TAGS;
            code /= NUM_TAGS;
        }
        p
    })
}

pub struct BruteForce {
    pub log_partition: f64,
    pub best_path: Vec<usize>,
    pub best_score: f64,
}

/// Exhaustive enumeration over all `5^T` unconstrained paths.
pub fn brute_force_crf(em: &Tensor, table: &Tensor) -> BruteForce {
    let t = em.shape()[0];
    let scores: Vec<(Vec<usize>, f64)> = all_paths(t)
        .map(|p| {
            let s = path_score(em, table, &p);
            (p, s)
        })
        .collect();
    let max = scores
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_partition = max
        + scores
            .iter()
            .map(|(_, s)| (s - max).exp())
            .sum::<f64>()
            .ln();
    // First maximum in lexicographic order.
    let (best_path, best_score) = scores
        .iter()
        .fold(None::<&(Vec<usize>, f64)>, |best, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
        .cloned()
        .unwrap();
    BruteForce {
        log_partition,
        best_path,
        best_score,
    }
}

/// Compares the CRF against brute force on `instances` random chains with
/// `T ∈ 1..=5`. Returns a description of the first mismatch.
pub fn crf_oracle(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let t = rng.random_range(1..=5);
        let em = random_tensor(&mut rng, t, NUM_TAGS, 3.0);
        let table = random_tensor(&mut rng, NUM_STATES, NUM_STATES, 2.0);
        let crf = CrfParams::from_table(table.clone(), false).unwrap();
        let gold: Vec<usize> = (0..t).map(|_| rng.random_range(0..NUM_TAGS)).collect();
        let gold_tags = TagSequence(gold.iter().map(|&i| Tag::from_index(i).unwrap()).collect());

        let reference = brute_force_crf(&em, &table);
        let z = crf_log_partition(&em, &crf).map_err(|e| e.to_string())?;
        if !rel_close(z, reference.log_partition, 1e-8) {
            return Err(format!(
                "case {case}: log Z {z} vs {}",
                reference.log_partition
            ));
        }
        let nll = crf_nll(&em, &crf, &gold_tags).map_err(|e| e.to_string())?;
        let want = reference.log_partition - path_score(&em, &table, &gold);
        if !rel_close(nll, want, 1e-8) {
            return Err(format!("case {case}: NLL {nll} vs {want}"));
        }
        let (path, score) = viterbi_decode(&em, &crf).map_err(|e| e.to_string())?;
        if path.indices() != reference.best_path {
            return Err(format!(
                "case {case}: Viterbi {:?} vs {:?}",
                path.indices(),
                reference.best_path
            ));
        }
        if !rel_close(score, reference.best_score, 1e-8) {
            return Err(format!(
                "case {case}: path score {score} vs {}",
                reference.best_score
            ));
        }
    }
    Ok(())
}

/// A random single-relation sentence of `len` tokens.
pub fn random_sentence(rng: &mut ChaCha8Rng, len: usize) -> AnnotatedSentence {
    loop {
        let s0 = rng.random_range(0..len);
        let s1 = rng.random_range(s0 + 1..=len.min(s0 + 3));
        let o0 = rng.random_range(0..len);
        let o1 = rng.random_range(o0 + 1..=len.min(o0 + 3));
        let (subj, obj) = (Span::new(s0, s1), Span::new(o0, o1));
        if subj.overlaps(&obj) {
            continue;
        }
        let tokens = (0..len).map(|i| format!("t{i}")).collect();
        return AnnotatedSentence::new(tokens, "r".into(), subj, obj).unwrap();
    }
}

/// Masked mean over support tokens: sum the vectors of every token with the
/// tag, in support order, then divide by their number.
pub fn masked_mean(encodings: &[Tensor], tags: &[TagSequence], d: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; d]; NUM_TAGS];
    for (l, row) in out.iter_mut().enumerate() {
        let mut count = 0usize;
        for (enc, seq) in encodings.iter().zip(tags) {
            for (t, tag) in seq.as_slice().iter().enumerate() {
                if tag.index() == l {
                    count += 1;
                    for (acc, v) in row.iter_mut().zip(enc.row(t)) {
                        *acc += v;
                    }
                }
            }
        }
        if count > 0 {
            for v in row.iter_mut() {
                *v /= count as f64;
            }
        }
    }
    out
}

/// Checks prototypes against [`masked_mean`] bit for bit on `sets` random
/// support sets.
pub fn prototype_oracle(sets: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..sets {
        let n_way = rng.random_range(1..=4);
        let k_shot = rng.random_range(1..=4);
        let d = rng.random_range(1..=6);
        let mut support = Vec::new();
        let mut encodings = Vec::new();
        for _ in 0..n_way {
            let group: Vec<AnnotatedSentence> = (0..k_shot)
                .map(|_| {
                    let len = rng.random_range(2..=9);
                    random_sentence(&mut rng, len)
                })
                .collect();
            let enc: Vec<Tensor> = group
                .iter()
                .map(|s| random_tensor(&mut rng, s.len(), d, 5.0))
                .collect();
            support.push(group);
            encodings.push(enc);
        }
        let mut next = encodings.iter().flatten();
        let set = compute_entity_prototypes(
            &support,
            |_| Ok(next.next().expect("one encoding per sentence").clone()),
            &TokenMean,
        )
        .map_err(|e| e.to_string())?;
        for (i, group) in support.iter().enumerate() {
            let tags: Vec<TagSequence> = group.iter().map(AnnotatedSentence::tags).collect();
            let want = masked_mean(&encodings[i], &tags, d);
            for (l, row) in want.iter().enumerate() {
                let got = set.prototypes[i].row(l);
                if got.iter().zip(row).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    return Err(format!(
                        "set {case}, relation {i}, tag {l}: {got:?} vs {row:?}"
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Hand-worked `d = 2` fusion case.
pub fn fusion_hand_case() -> (Tensor, Tensor, Tensor) {
    let q = Tensor::from_rows(&[vec![1.0, 0.5], vec![-0.5, 2.0]]).unwrap();
    let p = Tensor::from_rows(&[
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.5, 0.5],
        vec![-1.0, 0.2],
        vec![0.3, -0.7],
    ])
    .unwrap();
    let w = Tensor::from_rows(&[
        vec![0.1, -0.2],
        vec![0.3, 0.4],
        vec![-0.5, 0.2],
        vec![0.25, 0.15],
        vec![0.6, -0.1],
        vec![-0.3, 0.35],
        vec![0.05, 0.45],
        vec![-0.15, -0.25],
    ])
    .unwrap();
    (q, p, w)
}

pub const FUSION_HAND_Q_HAT: [[f64; 2]; 2] = [
    [0.33910214248555554, 0.33665114236004023],
    [0.4176185106102895, 1.075808642245192],
];

pub const FUSION_HAND_P_HAT: [[f64; 2]; 5] = [
    [0.0, 0.6315904285726164],
    [0.5037255428614189, 0.41368191428547685],
    [0.22499999999999998, 0.475],
    [0.46266095765559506, 1.0147787221194144],
    [0.0, 0.6279008457121952],
];

fn max_abs_diff(t: &Tensor, want: &[[f64; 2]]) -> f64 {
    want.iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, v)| (r, c, *v)))
        .map(|(r, c, v)| (t.get2(r, c) - v).abs())
        .fold(0.0, f64::max)
}

/// Normalization, convexity and the hand case. Returns the worst deviations
/// found, or a description of the first violation.
pub fn fusion_algebra(instances: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_sum: f64 = 0.0;
    for case in 0..instances {
        let t = rng.random_range(1..=8);
        let d = rng.random_range(1..=6);
        let q = random_tensor(&mut rng, t, d, 2.0);
        let p = random_tensor(&mut rng, NUM_TAGS, d, 2.0);
        let att = fusion_attention(&q, &p).map_err(|e| e.to_string())?;
        for r in 0..t {
            worst_sum = worst_sum.max((att.over_prototypes.row(r).iter().sum::<f64>() - 1.0).abs());
        }
        for c in 0..NUM_TAGS {
            let col: f64 = (0..t).map(|r| att.over_tokens.get2(r, c)).sum();
            worst_sum = worst_sum.max((col - 1.0).abs());
        }
        if worst_sum > 1e-9 {
            return Err(format!("case {case}: attention sums off by {worst_sum:e}"));
        }
        // Q' rows lie in the box spanned by P's rows, P' rows in Q's box,
        // with non-negative weights.
        let q_mixed = fewtrip::numeric::ops::matmul(&att.over_prototypes, &p).unwrap();
        let p_mixed = fewtrip::numeric::ops::matmul(
            &fewtrip::numeric::ops::transpose(&att.over_tokens).unwrap(),
            &q,
        )
        .unwrap();
        let in_hull = |mixed: &Tensor, weights: &dyn Fn(usize, usize) -> f64, base: &Tensor| {
            let (rows, cols) = mixed.dims2().unwrap();
            let (n, _) = base.dims2().unwrap();
            for r in 0..rows {
                for c in 0..cols {
                    let (lo, hi) = (0..n)
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| {
                            (lo.min(base.get2(j, c)), hi.max(base.get2(j, c)))
                        });
                    let v = mixed.get2(r, c);
                    if v < lo - 1e-12 || v > hi + 1e-12 {
                        return false;
                    }
                }
                if (0..n).any(|j| weights(r, j) < 0.0) {
                    return false;
                }
            }
            true
        };
        if !in_hull(&q_mixed, &|r, j| att.over_prototypes.get2(r, j), &p) {
            return Err(format!("case {case}: Q' is not a convex combination of P"));
        }
        if !in_hull(&p_mixed, &|r, j| att.over_tokens.get2(j, r), &q) {
            return Err(format!("case {case}: P' is not a convex combination of Q"));
        }
    }
    let (q, p, w) = fusion_hand_case();
    let (q_hat, p_hat) = fuse(&q, &p, &w).map_err(|e| e.to_string())?;
    let hand =
        max_abs_diff(&q_hat, &FUSION_HAND_Q_HAT).max(max_abs_diff(&p_hat, &FUSION_HAND_P_HAT));
    if hand > 1e-12 {
        return Err(format!("hand case off by {hand:e}"));
    }
    Ok(format!(
        "max |sum - 1| = {worst_sum:.1e}, hand case within {hand:.1e}"
    ))
}
