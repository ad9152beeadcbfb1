use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Corpus, Episode, Span, SynthConfig};
use crate::encoder::Vocabulary;
use crate::fusion::{dump_fusion_matrix, FusionDump};
use crate::numeric::{grad_check, GradCheckConfig, GradCheckReport, Tape};
use crate::Error;

use super::config::ModelConfig;
use super::model::{episode_loss, predict, Forward, ModelParams, Pipeline, QueryInput};

/// One extracted triple, in corpus relation ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub tokens: Vec<String>,
    pub relation: String,
    pub subject: Option<Span>,
    pub object: Option<Span>,
    pub relation_scores: Vec<f64>,
}

/// Support groups in relation id order; every relation must have the same
/// number of sentences.
pub fn support_groups(support: &Corpus) -> Result<Episode, Error> {
    let groups: Vec<Vec<AnnotatedSentence>> = support.groups().map(|(_, g)| g.to_vec()).collect();
    Ok(Episode::from_support(groups, Vec::new())?)
}

/// Predicts a triple for each query against the relations in `support`.
pub fn extract(
    model: &ModelParams,
    pipeline: &Pipeline,
    vocab: &Vocabulary,
    support: &Corpus,
    queries: &[QueryInput],
) -> Result<Vec<Extraction>, Error> {
    let episode = support_groups(support)?;
    let predictions = predict(model, pipeline, vocab, &episode.support, queries)?;
    Ok(queries
        .iter()
        .zip(predictions)
        .map(|(q, p)| Extraction {
            tokens: q.tokens().to_vec(),
            relation: episode.relations[p.relation].clone(),
            subject: p.subject,
            object: p.object,
            relation_scores: p.relation_scores,
        })
        .collect())
}

#[derive(Deserialize)]
struct QueryLine {
    tokens: Vec<String>,
}

/// Queries from JSON lines carrying a `tokens` array. Any other fields,
/// including annotations, are ignored.
pub fn parse_queries(text: &str) -> Result<Vec<QueryInput>, Error> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryLine = serde_json::from_str(line).map_err(|e| {
            Error::Corpus(crate::CorpusError::Json {
                line: i + 1,
                message: e.to_string(),
            })
        })?;
        out.push(QueryInput::new(q.tokens)?);
    }
    Ok(out)
}

/// Attention matrices between `query` and the prototypes of `relation`,
/// on encoded (pre-fusion) features.
pub fn dump_fusion(
    model: &ModelParams,
    pipeline: &Pipeline,
    vocab: &Vocabulary,
    support: &Corpus,
    relation: &str,
    query: &QueryInput,
) -> Result<FusionDump, Error> {
    let episode = support_groups(support)?;
    let index = episode
        .relation_index(relation)
        .ok_or_else(|| Error::Config(format!("relation `{relation}` is not in the support set")))?;
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape);
    let fwd = Forward {
        pipeline,
        params: &params,
        vocab,
    };
    let state = fwd.support(&mut tape, &episode.support[index..=index])?;
    let q = fwd.encode(&mut tape, query.tokens())?;
    dump_fusion_matrix(
        query.tokens(),
        tape.value(q),
        tape.value(state.prototypes[0]),
    )
}

/// Settings for the small-episode gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckSetup {
    pub n_way: usize,
    pub k_shot: usize,
    pub d: usize,
    pub max_tokens: usize,
    pub lambda_ent: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            n_way: 2,
            k_shot: 1,
            d: 8,
            max_tokens: 6,
            lambda_ent: 1.0,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

/// Finite-difference check of the full training loss on a tiny synthetic
/// episode with one query per relation.
pub fn gradcheck_episode(
    setup: &GradCheckSetup,
    check: &GradCheckConfig,
) -> Result<GradCheckReport, Error> {
    let synth = SynthConfig {
        n_relations: setup.n_way,
        sentences_per_relation: setup.k_shot + 1,
        vocab_size: setup.n_way * 11 + 8,
        length_range: (setup.max_tokens.clamp(3, 5), setup.max_tokens.max(3)),
        entity_length_range: (1, 1),
        seed: setup.seed,
        ..SynthConfig::default()
    };
    let corpus = crate::corpus::generate_synthetic_corpus(&synth)?;
    let episode = crate::corpus::sample_episode(
        &corpus,
        crate::corpus::EpisodeShape::new(setup.n_way, setup.k_shot, 1),
        setup.seed,
    )?;
    let vocab = super::train::build_vocabulary(&[&corpus]);
    let model_config = ModelConfig {
        d: setup.d,
        max_len: setup.max_tokens.max(3),
        ..setup.model.clone()
    };
    let pipeline = Pipeline::from_config(&model_config)?;
    let mut model = ModelParams::init(&model_config, &vocab, setup.seed)?;
    // Non-zero transitions so their gradient is exercised away from symmetry.
    if let Some(t) = model.store.get_mut(crate::entdec::CRF_TRANSITIONS) {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = ((i as f64) * 0.7).sin() * 0.3;
        }
    }
    grad_check(
        |tape, params| episode_loss(tape, params, &pipeline, &vocab, &episode, setup.lambda_ent),
        &model.store,
        check,
    )
}
