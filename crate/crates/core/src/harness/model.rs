//! Parameters, strategy resolution, and the episode forward pass shared by
//! training and prediction.

use std::sync::Arc;

use crate::corpus::{episode_rng, AnnotatedSentence, Episode, Span, Tag, TagSequence};
use crate::encoder::{encoders, Encoder, EncoderDims, Vocabulary, POSITION_EMBEDDING};
use crate::entdec::{
    self, combined_reps, crf_nll_on_tape, emission_scores, tags_to_spans, viterbi_decode,
    CrfParams, EntityDecoding, RelationDecode, CRF_TRANSITIONS,
};
use crate::fusion::{fusions, init_fusion_params, Fusion};
use crate::numeric::{BoundParams, ParamStore, Tape, Var};
use crate::prototype::{prototype_norms, relation_prototypes, PrototypeNorm};
use crate::reldec::{self, argmax, init_reldec_params, relation_loss, RelationEvidence};
use crate::Error;

use super::config::ModelConfig;

/// All trainable tensors plus the metadata needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: String,
    pub d: usize,
    pub vocab_hash: String,
    pub store: ParamStore,
}

impl ModelParams {
    /// Seeded initialization for `vocab`. Transitions start at zero.
    pub fn init(config: &ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<Self, Error> {
        let encoder = encoders().get(&config.encoder)?;
        // Stream u64::MAX is never used by episode sampling.
        let mut rng = episode_rng(seed, u64::MAX);
        let dims = EncoderDims {
            vocab_size: vocab.len(),
            max_len: config.max_len,
            d: config.d,
        };
        let mut store = encoder.init(dims, &mut rng);
        let parts = [
            init_fusion_params(config.d, config.unshare_fusion, &mut rng),
            init_reldec_params(config.d, &mut rng),
            entdec::init_crf_params(),
        ];
        for part in parts {
            for (name, t) in part.iter() {
                store.insert(name, t.clone());
            }
        }
        Ok(Self {
            encoder: config.encoder.clone(),
            d: config.d,
            vocab_hash: vocab.hash(),
            store,
        })
    }

    pub fn max_len(&self) -> usize {
        self.store
            .get(POSITION_EMBEDDING)
            .and_then(|t| t.dims2().ok())
            .map_or(0, |(rows, _)| rows)
    }

    /// Errors unless the parameters were built for this vocabulary and width.
    pub fn check_compatible(&self, config: &ModelConfig, vocab: &Vocabulary) -> Result<(), Error> {
        if self.vocab_hash != vocab.hash() {
            return Err(Error::Vocabulary(
                "checkpoint was trained with a different vocabulary".into(),
            ));
        }
        if self.d != config.d {
            return Err(Error::Shape(format!(
                "checkpoint has d = {}, config has d = {}",
                self.d, config.d
            )));
        }
        if self.encoder != config.encoder {
            return Err(Error::Config(format!(
                "checkpoint encoder `{}` differs from configured `{}`",
                self.encoder, config.encoder
            )));
        }
        Ok(())
    }
}

/// Strategies resolved from a [`ModelConfig`].
#[derive(Clone)]
pub struct Pipeline {
    pub encoder: Arc<dyn Encoder>,
    pub norm: Arc<dyn PrototypeNorm>,
    pub fusion: Arc<dyn Fusion>,
    pub entity: Arc<dyn EntityDecoding>,
    /// Relation side fuses the query with raw support sentences.
    pub support_token_fusion: bool,
    pub constrained: bool,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("encoder", &self.encoder.name())
            .field("norm", &self.norm.name())
            .field("fusion", &self.fusion.name())
            .field("entity", &self.entity.name())
            .field("support_token_fusion", &self.support_token_fusion)
            .field("constrained", &self.constrained)
            .finish()
    }
}

impl Pipeline {
    pub fn from_config(config: &ModelConfig) -> Result<Self, Error> {
        Ok(Self {
            encoder: encoders().get(&config.encoder)?,
            norm: prototype_norms().get(&config.prototype_norm)?,
            fusion: fusions().get(config.fusion_name())?,
            entity: entdec::entity_decoders().get(config.entity_decoding_name())?,
            support_token_fusion: config.disable_egr,
            constrained: config.constrain_transitions,
        })
    }
}

/// A query with its gold labels removed. Prediction only ever sees these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryInput {
    tokens: Vec<String>,
}

impl QueryInput {
    pub fn new(tokens: Vec<String>) -> Result<Self, Error> {
        if tokens.len() < 2 {
            return Err(Error::Corpus(crate::CorpusError::InvalidSentence {
                line: 0,
                reason: crate::corpus::SentenceError::TooShort(tokens.len()),
            }));
        }
        Ok(Self { tokens })
    }

    pub fn strip(sentence: &AnnotatedSentence) -> Self {
        Self {
            tokens: sentence.tokens().to_vec(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Model output for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Episode-local relation index chosen by the relation decoder.
    pub relation: usize,
    pub relation_scores: Vec<f64>,
    /// Relation whose prototypes produced the entity tags.
    pub entity_relation: usize,
    pub tags: TagSequence,
    pub path_score: f64,
    pub subject: Option<Span>,
    pub object: Option<Span>,
}

/// Support-side values recorded on a tape.
pub(crate) struct SupportState {
    pub encodings: Vec<Vec<Var>>,
    pub prototypes: Vec<Var>,
}

pub(crate) struct Forward<'a> {
    pub pipeline: &'a Pipeline,
    pub params: &'a BoundParams,
    pub vocab: &'a Vocabulary,
}

impl Forward<'_> {
    pub fn encode(&self, tape: &mut Tape, tokens: &[String]) -> Result<Var, Error> {
        self.pipeline
            .encoder
            .encode(tape, self.params, &self.vocab.ids(tokens))
    }

    pub fn support(
        &self,
        tape: &mut Tape,
        support: &[Vec<AnnotatedSentence>],
    ) -> Result<SupportState, Error> {
        let mut encodings = Vec::with_capacity(support.len());
        let mut prototypes = Vec::with_capacity(support.len());
        for group in support {
            let enc = group
                .iter()
                .map(|s| self.encode(tape, s.tokens()))
                .collect::<Result<Vec<_>, _>>()?;
            let tags: Vec<TagSequence> = group.iter().map(AnnotatedSentence::tags).collect();
            let (p, _) = relation_prototypes(tape, &enc, &tags, self.pipeline.norm.as_ref())?;
            encodings.push(enc);
            prototypes.push(p);
        }
        Ok(SupportState {
            encodings,
            prototypes,
        })
    }
}

/// Per-query lazily fused `(Q̂_i, P̂_i)` pairs.
pub(crate) struct QueryState {
    pub query: Var,
    fused: Vec<Option<(Var, Var)>>,
}

impl QueryState {
    pub fn new(query: Var, n_relations: usize) -> Self {
        Self {
            query,
            fused: vec![None; n_relations],
        }
    }

    pub fn fused(
        &mut self,
        fwd: &Forward<'_>,
        tape: &mut Tape,
        support: &SupportState,
        i: usize,
    ) -> Result<(Var, Var), Error> {
        if let Some(pair) = self.fused[i] {
            return Ok(pair);
        }
        let pair = fwd
            .pipeline
            .fusion
            .fuse(tape, fwd.params, self.query, support.prototypes[i])?;
        self.fused[i] = Some(pair);
        Ok(pair)
    }

    /// `1 × N` relation scores.
    pub fn relation_scores(
        &mut self,
        fwd: &Forward<'_>,
        tape: &mut Tape,
        support: &SupportState,
    ) -> Result<Var, Error> {
        let n = support.prototypes.len();
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let evidence = if fwd.pipeline.support_token_fusion {
                RelationEvidence::SupportTokens(support.encodings[i].clone())
            } else {
                let (query, prototypes) = self.fused(fwd, tape, support, i)?;
                RelationEvidence::Fused { query, prototypes }
            };
            scores.push(reldec::score_relation(
                tape,
                fwd.params,
                fwd.pipeline.fusion.as_ref(),
                self.query,
                &evidence,
            )?);
        }
        Ok(tape.concat_cols(&scores)?)
    }

    /// `T × 5` emissions under relation `i`.
    pub fn emissions(
        &mut self,
        fwd: &Forward<'_>,
        tape: &mut Tape,
        support: &SupportState,
        i: usize,
    ) -> Result<Var, Error> {
        let (q_hat, p_hat) = self.fused(fwd, tape, support, i)?;
        let (q_bar, p_bar) = combined_reps(tape, self.query, q_hat, support.prototypes[i], p_hat)?;
        Ok(emission_scores(tape, q_bar, p_bar)?)
    }
}

/// Training objective for one episode: the mean over queries of the
/// relation cross-entropy plus `lambda_ent` times the CRF NLL, with the CRF
/// conditioned on the gold relation's prototypes.
pub fn episode_loss(
    tape: &mut Tape,
    params: &BoundParams,
    pipeline: &Pipeline,
    vocab: &Vocabulary,
    episode: &Episode,
    lambda_ent: f64,
) -> Result<Var, Error> {
    let fwd = Forward {
        pipeline,
        params,
        vocab,
    };
    let support = fwd.support(tape, &episode.support)?;
    let transitions = params.get(CRF_TRANSITIONS)?;
    let gold_relations = episode.query_labels();
    let mut losses = Vec::with_capacity(episode.query.len());
    for (query, &gold) in episode.query.iter().zip(&gold_relations) {
        let q = fwd.encode(tape, query.tokens())?;
        let mut state = QueryState::new(q, episode.n_way);
        let scores = state.relation_scores(&fwd, tape, &support)?;
        let rel = relation_loss(tape, scores, gold)?;
        if lambda_ent == 0.0 {
            losses.push(rel);
            continue;
        }
        let emissions = state.emissions(&fwd, tape, &support, gold)?;
        let nll = crf_nll_on_tape(
            tape,
            emissions,
            transitions,
            &query.tags(),
            pipeline.constrained,
        )?;
        let weighted = tape.scale(nll, lambda_ent);
        losses.push(tape.add(rel, weighted)?);
    }
    if losses.is_empty() {
        return Err(Error::Shape("episode has no queries".into()));
    }
    Ok(tape.mean_n(&losses)?)
}

/// Test-time inference: relation from the relation decoder, entity tags
/// from the CRF under the relation picked by the entity decoding strategy.
pub fn predict(
    model: &ModelParams,
    pipeline: &Pipeline,
    vocab: &Vocabulary,
    support: &[Vec<AnnotatedSentence>],
    queries: &[QueryInput],
) -> Result<Vec<Prediction>, Error> {
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape);
    let fwd = Forward {
        pipeline,
        params: &params,
        vocab,
    };
    let support_state = fwd.support(&mut tape, support)?;
    let table = model
        .store
        .get(CRF_TRANSITIONS)
        .ok_or_else(|| crate::NumericError::UnknownParam(CRF_TRANSITIONS.into()))?;
    let crf = CrfParams::from_table(table.clone(), pipeline.constrained)?;
    let n = support.len();

    let mut out = Vec::with_capacity(queries.len());
    for query in queries {
        let q = fwd.encode(&mut tape, query.tokens())?;
        let mut state = QueryState::new(q, n);
        let scores_var = state.relation_scores(&fwd, &mut tape, &support_state)?;
        let relation_scores = tape.value(scores_var).data().to_vec();
        let relation = argmax(&relation_scores).expect("at least one relation");

        let mut decode = |i: usize| -> Result<RelationDecode, Error> {
            let e = state.emissions(&fwd, &mut tape, &support_state, i)?;
            let (tags, path_score) = viterbi_decode(tape.value(e), &crf)?;
            Ok(RelationDecode { tags, path_score })
        };
        let (entity_relation, decoded) = pipeline.entity.select(relation, n, &mut decode)?;
        let (subject, object) = tags_to_spans(&decoded.tags);
        out.push(Prediction {
            relation,
            relation_scores,
            entity_relation,
            tags: decoded.tags,
            path_score: decoded.path_score,
            subject,
            object,
        });
    }
    Ok(out)
}

/// Prototype rows in tag order, for reporting.
pub fn tag_names() -> [&'static str; Tag::COUNT] {
    Tag::ALL.map(Tag::name)
}
