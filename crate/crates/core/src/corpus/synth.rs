//! Deterministic synthetic corpora with learnable relation cues and
//! relation-specific entity vocabularies.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedSentence, Corpus, CorpusError, Span};

const CUES_PER_RELATION: usize = 3;
const ENTITY_TOKENS_PER_ROLE: usize = 4;
/// The first entity token comes from the first `ENTITY_HEADS` role tokens,
/// later ones from the rest, so span boundaries are visible from token
/// identity as with real names.
const ENTITY_HEADS: usize = 2;
const MIN_DISTRACTORS: usize = 8;
const TOKENS_PER_RELATION: usize = CUES_PER_RELATION + 2 * ENTITY_TOKENS_PER_ROLE;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_relations: usize,
    pub sentences_per_relation: usize,
    pub vocab_size: usize,
    /// Inclusive sentence length bounds.
    pub length_range: (usize, usize),
    /// Inclusive entity length bounds.
    pub entity_length_range: (usize, usize),
    pub seed: u64,
    /// Domain label; also prefixes relation ids and token strings so corpora
    /// from different domains never share either.
    pub domain: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_relations: 5,
            sentences_per_relation: 40,
            vocab_size: 200,
            length_range: (8, 14),
            entity_length_range: (1, 3),
            seed: 0,
            domain: "syn".into(),
        }
    }
}

/// Token inventory reserved for one relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationLexicon {
    pub relation: String,
    pub cues: Vec<String>,
    /// Subject tokens; the first two only ever start an entity, the last two
    /// only ever continue one.
    pub subjects: Vec<String>,
    /// Object tokens, split like `subjects`.
    pub objects: Vec<String>,
}

impl SynthConfig {
    fn token(&self, id: usize) -> String {
        format!("{}_w{id}", self.domain)
    }

    pub fn relation_id(&self, r: usize) -> String {
        format!("{}_R{r:02}", self.domain)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::Infeasible(m));
        if self.n_relations == 0 || self.sentences_per_relation == 0 {
            return fail("relation and sentence counts must be positive".into());
        }
        let (lo, hi) = self.length_range;
        let (elo, ehi) = self.entity_length_range;
        if elo == 0 || elo > ehi {
            return fail(format!("bad entity length range {elo}..={ehi}"));
        }
        if lo > hi {
            return fail(format!("bad sentence length range {lo}..={hi}"));
        }
        // Two longest entities plus one cue must always fit.
        if lo < 2 * ehi + 1 {
            return fail(format!(
                "sentences of {lo} tokens cannot hold two {ehi}-token entities and a cue"
            ));
        }
        let reserved = self.n_relations * TOKENS_PER_RELATION;
        if self.vocab_size < reserved + MIN_DISTRACTORS {
            return fail(format!(
                "vocab_size {} < {} relation-specific tokens + {MIN_DISTRACTORS} distractors",
                self.vocab_size, reserved
            ));
        }
        Ok(())
    }

    /// Relation-specific token partition. Does not depend on the seed.
    pub fn lexicon(&self) -> Vec<RelationLexicon> {
        (0..self.n_relations)
            .map(|r| {
                let base = r * TOKENS_PER_RELATION;
                let ids = |from: usize, n: usize| (from..from + n).map(|i| self.token(i)).collect();
                RelationLexicon {
                    relation: self.relation_id(r),
                    cues: ids(base, CUES_PER_RELATION),
                    subjects: ids(base + CUES_PER_RELATION, ENTITY_TOKENS_PER_ROLE),
                    objects: ids(
                        base + CUES_PER_RELATION + ENTITY_TOKENS_PER_ROLE,
                        ENTITY_TOKENS_PER_ROLE,
                    ),
                }
            })
            .collect()
    }

    /// Tokens shared by every relation.
    pub fn distractors(&self) -> Vec<String> {
        (self.n_relations * TOKENS_PER_RELATION..self.vocab_size)
            .map(|i| self.token(i))
            .collect()
    }
}

enum Segment {
    Subject(usize),
    Object(usize),
    Cue,
    Filler,
}

fn sentence(
    config: &SynthConfig,
    lex: &RelationLexicon,
    distractors: &[String],
    rng: &mut ChaCha8Rng,
) -> AnnotatedSentence {
    let (lo, hi) = config.length_range;
    let (elo, ehi) = config.entity_length_range;
    let len = rng.random_range(lo..=hi);
    let subj_len = rng.random_range(elo..=ehi);
    let obj_len = rng.random_range(elo..=ehi);
    let room = len - subj_len - obj_len;
    let cues = rng.random_range(1..=room.min(2));

    let mut segments = vec![Segment::Subject(subj_len), Segment::Object(obj_len)];
    segments.extend((0..cues).map(|_| Segment::Cue));
    segments.extend((0..room - cues).map(|_| Segment::Filler));
    segments.shuffle(rng);

    let mut tokens = Vec::with_capacity(len);
    let mut subject = Span::new(0, 0);
    let mut object = Span::new(0, 0);
    let pick =
        |pool: &[String], rng: &mut ChaCha8Rng| pool[rng.random_range(0..pool.len())].clone();
    let entity = |pool: &[String], n: usize, tokens: &mut Vec<String>, rng: &mut ChaCha8Rng| {
        let (heads, tails) = pool.split_at(ENTITY_HEADS);
        tokens.push(pick(heads, rng));
        for _ in 1..n {
            tokens.push(pick(tails, rng));
        }
    };
    for seg in segments {
        match seg {
            Segment::Subject(n) => {
                subject = Span::new(tokens.len(), tokens.len() + n);
                entity(&lex.subjects, n, &mut tokens, rng);
            }
            Segment::Object(n) => {
                object = Span::new(tokens.len(), tokens.len() + n);
                entity(&lex.objects, n, &mut tokens, rng);
            }
            Segment::Cue => tokens.push(pick(&lex.cues, rng)),
            Segment::Filler => tokens.push(pick(distractors, rng)),
        }
    }
    AnnotatedSentence::new(tokens, lex.relation.clone(), subject, object)
        .expect("generator respects sentence invariants")
}

/// Builds a corpus where each relation has private cue tokens and private
/// subject/object vocabularies mixed with shared distractors.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let distractors = config.distractors();
    let mut sentences = Vec::with_capacity(config.n_relations * config.sentences_per_relation);
    for lex in config.lexicon() {
        for _ in 0..config.sentences_per_relation {
            sentences.push(sentence(config, &lex, &distractors, &mut rng));
        }
    }
    Corpus::from_sentences(config.domain.clone(), sentences)
}
