use std::fmt::Write as _;

use crate::corpus::{parse_corpus, sample_indexed_episode, Corpus, Episode, EpisodeShape};
use crate::encoder::Vocabulary;
use crate::Error;

use super::checkpoint;
use super::config::TrainConfig;
use super::metrics::{GoldTriple, Metrics, PredictedTriple};
use super::model::{predict, ModelParams, Pipeline, QueryInput};
use super::train::write_text;

/// Aggregate and per-episode metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub total: Metrics,
    pub episodes: Vec<Metrics>,
}

impl Evaluation {
    /// Unweighted mean of the per-episode triple F1.
    pub fn mean_triple_f1(&self) -> f64 {
        mean(self.episodes.iter().map(|m| m.triple.f1()))
    }

    pub fn mean_relation_f1(&self) -> f64 {
        mean(self.episodes.iter().map(|m| m.relation.f1()))
    }

    /// `episode,entity_f1,relation_f1,triple_f1` rows.
    pub fn episode_csv(&self) -> String {
        let mut out = String::from("episode,entity_f1,relation_f1,triple_f1\n");
        for (i, m) in self.episodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{}",
                m.entity.f1(),
                m.relation.f1(),
                m.triple.f1()
            );
        }
        out
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Scores one episode. The model only sees label-stripped queries; gold
/// annotations are read afterwards for scoring.
pub fn evaluate_episode(
    model: &ModelParams,
    pipeline: &Pipeline,
    vocab: &Vocabulary,
    episode: &Episode,
) -> Result<Metrics, Error> {
    let inputs: Vec<QueryInput> = episode.query.iter().map(QueryInput::strip).collect();
    let predictions = predict(model, pipeline, vocab, &episode.support, &inputs)?;
    let mut metrics = Metrics::default();
    for ((query, gold_relation), pred) in episode
        .query
        .iter()
        .zip(episode.query_labels())
        .zip(&predictions)
    {
        metrics.record(
            &GoldTriple {
                relation: gold_relation,
                subject: query.subject(),
                object: query.object(),
            },
            &PredictedTriple {
                relation: pred.relation,
                subject: pred.subject,
                object: pred.object,
            },
        );
    }
    Ok(metrics)
}

/// Evaluates `episodes` episodes drawn with `seed`.
pub fn evaluate(
    model: &ModelParams,
    pipeline: &Pipeline,
    vocab: &Vocabulary,
    corpus: &Corpus,
    shape: EpisodeShape,
    seed: u64,
    episodes: usize,
) -> Result<Evaluation, Error> {
    let per_episode = (0..episodes)
        .map(|i| {
            let episode = sample_indexed_episode(corpus, shape, seed, i as u64)?;
            evaluate_episode(model, pipeline, vocab, &episode)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut total = Metrics::default();
    for m in &per_episode {
        total.merge(m);
    }
    Ok(Evaluation {
        total,
        episodes: per_episode,
    })
}

/// Loads the checkpoint, vocabulary and eval corpus named in `config`,
/// evaluates, and writes the per-episode log if configured.
pub fn evaluate_config(config: &TrainConfig) -> Result<Evaluation, Error> {
    config.validate()?;
    let (model, vocab) = load_model(config)?;
    let corpus_path = config
        .eval_corpus
        .as_deref()
        .ok_or_else(|| Error::Config("eval_corpus is required".into()))?;
    let corpus = parse_corpus(corpus_path)?;
    let pipeline = Pipeline::from_config(&config.model)?;
    let result = evaluate(
        &model,
        &pipeline,
        &vocab,
        &corpus,
        config.shape(),
        config.eval_seed,
        config.eval_episodes,
    )?;
    if let Some(path) = &config.eval_log {
        write_text(path, &result.episode_csv())?;
    }
    Ok(result)
}

/// Checkpoint and vocabulary from `config`, checked against each other.
pub fn load_model(config: &TrainConfig) -> Result<(ModelParams, Vocabulary), Error> {
    let ckpt = config
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("checkpoint is required".into()))?;
    let model = checkpoint::load(ckpt)?;
    let vocab_path = config
        .vocab_path()
        .ok_or_else(|| Error::Config("vocab is required".into()))?;
    let vocab = Vocabulary::load(&vocab_path)?;
    model.check_compatible(&config.model, &vocab)?;
    Ok((model, vocab))
}
