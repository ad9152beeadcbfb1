//! Cross-attention between query tokens and one relation's prototypes,
//! followed by a gated recombination shared by both sides.
//!
//! With `α = Q Pᵀ`:
//!
//! * `Q' = rowsoftmax(α) P`: each token attends over the prototypes,
//! * `P' = colsoftmax(α)ᵀ Q`: each prototype attends over the tokens,
//! * `X̂ = relu([X; X'; |X − X'|; X ⊙ X'] W)` for `X ∈ {P, Q}`.
//!
//! The prototype side accepts any number of rows, so the same module fuses
//! a query with raw support sentences.

use std::fmt::Write as _;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::corpus::Tag;
use crate::encoder::uniform;
use crate::numeric::{ops, Axis, BoundParams, NumericError, ParamStore, Tape, Tensor, Var};
use crate::registry::Registry;
use crate::Error;

pub const FUSION_WEIGHT: &str = "fusion.weight";
/// Present only when the query side has its own weight.
pub const FUSION_WEIGHT_QUERY: &str = "fusion.weight_query";

/// Initial fusion weights, `4d × d`, uniform in `±1/√(4d)`.
pub fn init_fusion_params(d: usize, unshared: bool, rng: &mut ChaCha8Rng) -> ParamStore {
    let bound = 1.0 / ((4 * d) as f64).sqrt();
    let mut p = ParamStore::new();
    p.insert(FUSION_WEIGHT, uniform(&[4 * d, d], bound, rng));
    if unshared {
        p.insert(FUSION_WEIGHT_QUERY, uniform(&[4 * d, d], bound, rng));
    }
    p
}

/// Produces `(Q̂, P̂)` from query tokens `Q` and prototype rows `P`.
pub trait Fusion: Send + Sync {
    fn name(&self) -> &'static str;

    fn fuse(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        query: Var,
        prototypes: Var,
    ) -> Result<(Var, Var), Error>;
}

/// Attention-based fusion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProtoLevelFusion;

/// Passes `(Q, P)` through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFusion;

fn check_widths(tape: &Tape, q: Var, p: Var) -> Result<(), NumericError> {
    let (_, dq) = tape.value(q).dims2()?;
    let (_, dp) = tape.value(p).dims2()?;
    if dq != dp {
        return Err(NumericError::ShapeMismatch {
            op: "fuse",
            lhs: tape.value(q).shape().to_vec(),
            rhs: tape.value(p).shape().to_vec(),
        });
    }
    Ok(())
}

fn gate(tape: &mut Tape, x: Var, mixed: Var, w: Var) -> Result<Var, NumericError> {
    let diff = tape.abs_diff(x, mixed)?;
    let prod = tape.mul(x, mixed)?;
    let features = tape.concat_cols(&[x, mixed, diff, prod])?;
    let lin = tape.matmul(features, w)?;
    Ok(tape.relu(lin))
}

impl Fusion for ProtoLevelFusion {
    fn name(&self) -> &'static str {
        "proto-level"
    }

    fn fuse(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        query: Var,
        prototypes: Var,
    ) -> Result<(Var, Var), Error> {
        check_widths(tape, query, prototypes)?;
        let w = params.get(FUSION_WEIGHT)?;
        let w_query = params.find(FUSION_WEIGHT_QUERY).unwrap_or(w);

        let pt = tape.transpose(prototypes)?;
        let alpha = tape.matmul(query, pt)?;
        let over_protos = tape.softmax(alpha, Axis::Rows)?;
        let over_tokens = tape.softmax(alpha, Axis::Cols)?;
        let q_mixed = tape.matmul(over_protos, prototypes)?;
        let over_tokens_t = tape.transpose(over_tokens)?;
        let p_mixed = tape.matmul(over_tokens_t, query)?;

        let q_hat = gate(tape, query, q_mixed, w_query)?;
        let p_hat = gate(tape, prototypes, p_mixed, w)?;
        Ok((q_hat, p_hat))
    }
}

impl Fusion for IdentityFusion {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn fuse(
        &self,
        tape: &mut Tape,
        _params: &BoundParams,
        query: Var,
        prototypes: Var,
    ) -> Result<(Var, Var), Error> {
        check_widths(tape, query, prototypes)?;
        Ok((query, prototypes))
    }
}

pub fn fusions() -> Registry<dyn Fusion> {
    Registry::<dyn Fusion>::new("fusion")
        .with("proto-level", Arc::new(ProtoLevelFusion))
        .with("identity", Arc::new(IdentityFusion))
}

/// Plain-value [`ProtoLevelFusion`] with a shared weight.
pub fn fuse(
    query: &Tensor,
    prototypes: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor), Error> {
    let mut tape = Tape::new();
    let q = tape.constant(query.clone());
    let p = tape.constant(prototypes.clone());
    let mut store = ParamStore::new();
    store.insert(FUSION_WEIGHT, weight.clone());
    let bound = store.bind(&mut tape);
    let (q_hat, p_hat) = ProtoLevelFusion.fuse(&mut tape, &bound, q, p)?;
    Ok((tape.value(q_hat).clone(), tape.value(p_hat).clone()))
}

/// Similarity matrix and both attention normalizations for one query and
/// one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionAttention {
    pub alpha: Tensor,
    /// Row-normalized: each token's distribution over prototypes.
    pub over_prototypes: Tensor,
    /// Column-normalized: each prototype's distribution over tokens.
    pub over_tokens: Tensor,
}

pub fn fusion_attention(query: &Tensor, prototypes: &Tensor) -> Result<FusionAttention, Error> {
    let alpha = ops::matmul(query, &ops::transpose(prototypes)?)?;
    Ok(FusionAttention {
        over_prototypes: ops::softmax_axis(&alpha, Axis::Rows)?,
        over_tokens: ops::softmax_axis(&alpha, Axis::Cols)?,
        alpha,
    })
}

/// Six-significant-digit rendering in the style of C's `%g`.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let sci = format!("{:.5e}", x);
    // Rounding may bump the exponent (9.999995 -> 1.00000e1).
    let exp = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (mantissa, e) = sci.split_once('e').expect("scientific format");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        let e: i32 = e.parse().expect("exponent");
        format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with a `token,BS,IS,BO,IO,O` header and one row per token.
pub fn attention_csv(tokens: &[String], matrix: &Tensor) -> Result<String, Error> {
    let (rows, cols) = matrix.dims2()?;
    if rows != tokens.len() || cols != Tag::COUNT {
        return Err(Error::Shape(format!(
            "expected {} × {} matrix, got {rows} × {cols}",
            tokens.len(),
            Tag::COUNT
        )));
    }
    let mut out = String::from("token");
    for t in Tag::ALL {
        out.push(',');
        out.push_str(t.name());
    }
    out.push('\n');
    for (r, tok) in tokens.iter().enumerate() {
        out.push_str(&csv_field(tok));
        for v in matrix.row(r) {
            let _ = write!(out, ",{}", format_sig6(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

/// CSV renderings of the three fusion matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionDump {
    pub alpha: String,
    pub over_prototypes: String,
    pub over_tokens: String,
}

pub fn dump_fusion_matrix(
    tokens: &[String],
    query: &Tensor,
    prototypes: &Tensor,
) -> Result<FusionDump, Error> {
    let att = fusion_attention(query, prototypes)?;
    Ok(FusionDump {
        alpha: attention_csv(tokens, &att.alpha)?,
        over_prototypes: attention_csv(tokens, &att.over_prototypes)?,
        over_tokens: attention_csv(tokens, &att.over_tokens)?,
    })
}
