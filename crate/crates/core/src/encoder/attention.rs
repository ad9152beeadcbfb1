use rand_chacha::ChaCha8Rng;

use super::{embed, embedding_params, uniform, Encoder, EncoderDims};
use crate::numeric::{Axis, BoundParams, ParamStore, Tape, Var};
use crate::Error;

const QUERY: &str = "encoder.attn_query";
const KEY: &str = "encoder.attn_key";
const VALUE: &str = "encoder.attn_value";
const OUTPUT: &str = "encoder.attn_output";

/// Embeddings followed by one residual single-head self-attention layer:
/// `x + softmax(x Wq (x Wk)ᵀ / √d) x Wv Wo`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttentionEncoder;

impl Encoder for AttentionEncoder {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn init(&self, dims: EncoderDims, rng: &mut ChaCha8Rng) -> ParamStore {
        let mut p = embedding_params(dims, rng);
        let bound = 1.0 / (dims.d as f64).sqrt();
        for name in [QUERY, KEY, VALUE, OUTPUT] {
            p.insert(name, uniform(&[dims.d, dims.d], bound, rng));
        }
        p
    }

    fn encode(&self, tape: &mut Tape, params: &BoundParams, ids: &[usize]) -> Result<Var, Error> {
        let x = embed(tape, params, ids)?;
        let d = tape.value(x).dims2()?.1;
        let q = tape.matmul(x, params.get(QUERY)?)?;
        let k = tape.matmul(x, params.get(KEY)?)?;
        let v = tape.matmul(x, params.get(VALUE)?)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
        let weights = tape.softmax(logits, Axis::Rows)?;
        let mixed = tape.matmul(weights, v)?;
        let projected = tape.matmul(mixed, params.get(OUTPUT)?)?;
        Ok(tape.add(x, projected)?)
    }
}
