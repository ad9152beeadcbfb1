//! Token encoders: differentiable maps from token ids to a `T × d` matrix.

mod attention;
mod bag;
mod vocab;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use attention::AttentionEncoder;
pub use bag::PositionalBagEncoder;
pub use vocab::Vocabulary;

use crate::numeric::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::registry::Registry;
use crate::Error;

pub const TOKEN_EMBEDDING: &str = "encoder.token_embedding";
pub const POSITION_EMBEDDING: &str = "encoder.position_embedding";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d: usize,
}

/// A trainable sentence encoder. Parameters live in the shared
/// [`ParamStore`] under names starting with `encoder.`.
pub trait Encoder: Send + Sync {
    fn name(&self) -> &'static str;

    fn init(&self, dims: EncoderDims, rng: &mut ChaCha8Rng) -> ParamStore;

    /// Encodes one sentence of token ids into a `T × d` matrix.
    fn encode(&self, tape: &mut Tape, params: &BoundParams, ids: &[usize]) -> Result<Var, Error>;
}

/// Uniform draw in `[-bound, bound]`.
pub(crate) fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub(crate) fn embedding_params(dims: EncoderDims, rng: &mut ChaCha8Rng) -> ParamStore {
    let bound = 1.0 / (dims.d as f64).sqrt();
    let mut p = ParamStore::new();
    p.insert(
        TOKEN_EMBEDDING,
        uniform(&[dims.vocab_size, dims.d], bound, rng),
    );
    p.insert(
        POSITION_EMBEDDING,
        uniform(&[dims.max_len, dims.d], bound, rng),
    );
    p
}

/// Token plus positional embedding, shared by the built-in encoders.
pub(crate) fn embed(tape: &mut Tape, params: &BoundParams, ids: &[usize]) -> Result<Var, Error> {
    let positions = params.get(POSITION_EMBEDDING)?;
    let (max_len, _) = tape.value(positions).dims2()?;
    if ids.is_empty() || ids.len() > max_len {
        return Err(Error::SentenceLength {
            len: ids.len(),
            max_len,
        });
    }
    let tokens = tape.gather_rows(params.get(TOKEN_EMBEDDING)?, ids)?;
    let order: Vec<usize> = (0..ids.len()).collect();
    let pos = tape.gather_rows(positions, &order)?;
    Ok(tape.add(tokens, pos)?)
}

/// Built-in encoders: `attention` (reference) and `positional-bag`.
pub fn encoders() -> Registry<dyn Encoder> {
    Registry::<dyn Encoder>::new("encoder")
        .with("attention", Arc::new(AttentionEncoder))
        .with("positional-bag", Arc::new(PositionalBagEncoder))
}

/// Encodes `tokens` outside of training and returns the plain matrix.
pub fn encode(
    encoder: &dyn Encoder,
    tokens: &[String],
    params: &ParamStore,
    vocab: &Vocabulary,
) -> Result<Tensor, Error> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = encoder.encode(&mut tape, &bound, &vocab.ids(tokens))?;
    Ok(tape.value(out).clone())
}
