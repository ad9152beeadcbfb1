use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{parse_corpus, sample_indexed_episode, Corpus};
use crate::encoder::Vocabulary;
use crate::numeric::{Tape, Tensor};
use crate::Error;

use super::checkpoint;
use super::config::TrainConfig;
use super::model::{episode_loss, ModelParams, Pipeline};
use super::optim::Adam;

/// Trained parameters and the loss of every episode before its update.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub losses: Vec<f64>,
}

/// Loss and gradients of one episode at the current parameters.
pub fn episode_gradients(
    model: &ModelParams,
    pipeline: &Pipeline,
    vocab: &Vocabulary,
    episode: &crate::corpus::Episode,
    lambda_ent: f64,
) -> Result<(f64, BTreeMap<String, Tensor>), Error> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let loss = episode_loss(&mut tape, &bound, pipeline, vocab, episode, lambda_ent)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, var) in bound.iter() {
        if let Some(g) = grads.get(var) {
            out.insert(name.to_string(), g.clone());
        }
    }
    Ok((value, out))
}

/// One Adam step per sampled episode. Episode `i` depends only on
/// `config.seed` and `i`.
pub fn train_model(
    config: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> Result<TrainOutcome, Error> {
    config.validate()?;
    let pipeline = Pipeline::from_config(&config.model)?;
    let mut model = ModelParams::init(&config.model, vocab, config.seed)?;
    let mut optimizer = Adam::new(config.learning_rate);
    let shape = config.shape();
    let mut losses = Vec::with_capacity(config.episodes);
    for i in 0..config.episodes {
        let episode = sample_indexed_episode(corpus, shape, config.seed, i as u64)?;
        let (loss, grads) =
            episode_gradients(&model, &pipeline, vocab, &episode, config.lambda_ent)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                param: None,
                index: i,
            });
        }
        if let Some((name, g)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            let index = g.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFiniteLoss {
                param: Some(name.clone()),
                index,
            });
        }
        optimizer.step(&mut model.store, &grads);
        losses.push(loss);
    }
    Ok(TrainOutcome { model, losses })
}

/// Vocabulary over every token in `corpora`.
pub fn build_vocabulary(corpora: &[&Corpus]) -> Vocabulary {
    Vocabulary::build(
        corpora
            .iter()
            .flat_map(|c| c.sentences())
            .flat_map(|s| s.tokens().iter().map(String::as_str)),
    )
}

/// `episode,loss` rows with shortest round-trip floats.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("episode,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{i},{l}");
    }
    out
}

/// Summary of a file-based training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub vocab: Vocabulary,
}

/// Loads the configured corpora, trains, and writes the checkpoint,
/// vocabulary and loss log where configured.
pub fn train(config: &TrainConfig) -> Result<TrainRun, Error> {
    config.validate()?;
    let train_path = config
        .train_corpus
        .as_deref()
        .ok_or_else(|| Error::Config("train_corpus is required".into()))?;
    let corpus = parse_corpus(train_path)?;
    // Eval tokens join the vocabulary so unseen test words get their own
    // (untrained) embeddings instead of collapsing onto <unk>.
    let eval = config
        .eval_corpus
        .as_deref()
        .map(parse_corpus)
        .transpose()?;
    if let Some(eval) = &eval {
        if config.cross_domain && corpus.shares_relations_with(eval) {
            return Err(Error::Config(
                "cross_domain is set but train and eval corpora share relations".into(),
            ));
        }
    }
    let mut corpora = vec![&corpus];
    corpora.extend(eval.as_ref());
    let vocab = match &config.vocab {
        Some(p) if p.exists() => Vocabulary::load(p)?,
        _ => build_vocabulary(&corpora),
    };
    let outcome = train_model(config, &corpus, &vocab)?;
    if let Some(path) = &config.checkpoint {
        checkpoint::save(&outcome.model, path)?;
    }
    if let Some(path) = config.vocab_path() {
        vocab.save(&path)?;
    }
    if let Some(path) = &config.loss_log {
        write_text(path, &loss_csv(&outcome.losses))?;
    }
    Ok(TrainRun { outcome, vocab })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
