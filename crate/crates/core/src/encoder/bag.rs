use rand_chacha::ChaCha8Rng;

use super::{embed, embedding_params, Encoder, EncoderDims};
use crate::numeric::{BoundParams, ParamStore, Tape, Var};
use crate::Error;

/// Token plus positional embedding with no context mixing.
#[derive(Debug, Clone, Copy, Default)]
pub struct PositionalBagEncoder;

impl Encoder for PositionalBagEncoder {
    fn name(&self) -> &'static str {
        "positional-bag"
    }

    fn init(&self, dims: EncoderDims, rng: &mut ChaCha8Rng) -> ParamStore {
        embedding_params(dims, rng)
    }

    fn encode(&self, tape: &mut Tape, params: &BoundParams, ids: &[usize]) -> Result<Var, Error> {
        embed(tape, params, ids)
    }
}
