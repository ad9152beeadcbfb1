use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedSentence, Corpus, CorpusError};

/// N-way K-shot episode dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_relation: usize,
}

impl EpisodeShape {
    pub fn new(n_way: usize, k_shot: usize, queries_per_relation: usize) -> Self {
        Self {
            n_way,
            k_shot,
            queries_per_relation,
        }
    }
}

/// One few-shot task: `n_way` support groups of `k_shot` sentences plus
/// queries drawn from the same relations.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    /// Relation id for each episode-local index.
    pub relations: Vec<String>,
    /// `support[i]` holds the K sentences of `relations[i]`.
    pub support: Vec<Vec<AnnotatedSentence>>,
    pub query: Vec<AnnotatedSentence>,
}

impl Episode {
    /// Builds an episode from explicit support groups (ordered as given).
    pub fn from_support(
        support: Vec<Vec<AnnotatedSentence>>,
        query: Vec<AnnotatedSentence>,
    ) -> Result<Self, CorpusError> {
        let k_shot = support.first().map_or(0, Vec::len);
        if support.is_empty() || k_shot == 0 {
            return Err(CorpusError::InvalidShape("empty support".into()));
        }
        let mut relations = Vec::with_capacity(support.len());
        for group in &support {
            if group.len() != k_shot {
                return Err(CorpusError::InvalidShape(
                    "support groups differ in size".into(),
                ));
            }
            let rel = group[0].relation();
            if group.iter().any(|s| s.relation() != rel) {
                return Err(CorpusError::InvalidShape(format!(
                    "support group for `{rel}` mixes relations"
                )));
            }
            if relations.iter().any(|r: &String| r == rel) {
                return Err(CorpusError::InvalidShape(format!(
                    "relation `{rel}` appears in two support groups"
                )));
            }
            relations.push(rel.to_string());
        }
        let episode = Self {
            n_way: support.len(),
            k_shot,
            relations,
            support,
            query,
        };
        if let Some(q) = episode
            .query
            .iter()
            .find(|q| episode.relation_index(q.relation()).is_none())
        {
            return Err(CorpusError::InvalidShape(format!(
                "query relation `{}` is not in the support set",
                q.relation()
            )));
        }
        Ok(episode)
    }

    pub fn relation_index(&self, relation: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == relation)
    }

    /// Gold episode-local relation index of every query.
    pub fn query_labels(&self) -> Vec<usize> {
        self.query
            .iter()
            .map(|q| {
                self.relation_index(q.relation())
                    .expect("episode invariant: query relations are in the support")
            })
            .collect()
    }
}

/// Generator for episode `index` under `master_seed`. Each index gets its own
/// ChaCha stream, so episodes can be drawn in any order.
pub fn episode_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn draw(
    corpus: &Corpus,
    shape: EpisodeShape,
    rng: &mut ChaCha8Rng,
) -> Result<Episode, CorpusError> {
    if shape.n_way == 0 || shape.k_shot == 0 {
        return Err(CorpusError::InvalidShape(
            "n_way and k_shot must be positive".into(),
        ));
    }
    let available = corpus.num_relations();
    if available < shape.n_way {
        return Err(CorpusError::NotEnoughRelations {
            needed: shape.n_way,
            available,
        });
    }
    let per_relation = shape.k_shot + shape.queries_per_relation;
    // Relations too small for one support group plus queries never enter the draw.
    let eligible: Vec<(&str, &[AnnotatedSentence])> = corpus
        .groups()
        .filter(|(_, g)| g.len() >= per_relation)
        .collect();
    if eligible.len() < shape.n_way {
        let (rel, g) = corpus
            .groups()
            .find(|(_, g)| g.len() < per_relation)
            .expect("some relation is short");
        return Err(CorpusError::NotEnoughInstances {
            relation: rel.to_string(),
            needed: per_relation,
            available: g.len(),
        });
    }

    let chosen = index::sample(rng, eligible.len(), shape.n_way).into_vec();
    let mut relations = Vec::with_capacity(shape.n_way);
    let mut support = Vec::with_capacity(shape.n_way);
    let mut query = Vec::with_capacity(shape.n_way * shape.queries_per_relation);
    for &c in &chosen {
        let (rel, group) = eligible[c];
        let picks = index::sample(rng, group.len(), per_relation).into_vec();
        relations.push(rel.to_string());
        support.push(
            picks[..shape.k_shot]
                .iter()
                .map(|&i| group[i].clone())
                .collect(),
        );
        query.extend(picks[shape.k_shot..].iter().map(|&i| group[i].clone()));
    }
    Ok(Episode {
        n_way: shape.n_way,
        k_shot: shape.k_shot,
        relations,
        support,
        query,
    })
}

/// Samples one episode. Relations are drawn without replacement and support
/// and query sentences are disjoint; the result depends only on the inputs.
pub fn sample_episode(
    corpus: &Corpus,
    shape: EpisodeShape,
    seed: u64,
) -> Result<Episode, CorpusError> {
    draw(corpus, shape, &mut episode_rng(seed, 0))
}

/// Samples the `index`-th episode of the run seeded by `master_seed`.
pub fn sample_indexed_episode(
    corpus: &Corpus,
    shape: EpisodeShape,
    master_seed: u64,
    index: u64,
) -> Result<Episode, CorpusError> {
    draw(corpus, shape, &mut episode_rng(master_seed, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn corpus(relations: usize, per: usize) -> Corpus {
        let mut sentences = Vec::new();
        for r in 0..relations {
            for i in 0..per {
                sentences.push(
                    AnnotatedSentence::new(
                        vec![format!("r{r}s{i}"), "x".into(), "y".into()],
                        format!("r{r}"),
                        Span::new(0, 1),
                        Span::new(2, 3),
                    )
                    .unwrap(),
                );
            }
        }
        Corpus::from_sentences("t", sentences).unwrap()
    }

    #[test]
    fn two_way_one_shot() {
        let c = corpus(2, 3);
        let ep = sample_episode(&c, EpisodeShape::new(2, 1, 1), 7).unwrap();
        assert_eq!(ep.support.iter().map(Vec::len).sum::<usize>(), 2);
        assert_eq!(ep.query.len(), 2);
        for q in &ep.query {
            assert!(ep.support.iter().flatten().all(|s| s != q));
        }
        for (i, g) in ep.support.iter().enumerate() {
            assert!(g.iter().all(|s| s.relation() == ep.relations[i]));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let c = corpus(4, 6);
        let shape = EpisodeShape::new(3, 2, 2);
        assert_eq!(
            sample_episode(&c, shape, 11).unwrap(),
            sample_episode(&c, shape, 11).unwrap()
        );
        assert_eq!(
            sample_indexed_episode(&c, shape, 5, 3).unwrap(),
            sample_indexed_episode(&c, shape, 5, 3).unwrap()
        );
    }

    #[test]
    fn too_many_ways() {
        let c = corpus(3, 5);
        assert!(matches!(
            sample_episode(&c, EpisodeShape::new(5, 1, 1), 0),
            Err(CorpusError::NotEnoughRelations {
                needed: 5,
                available: 3
            })
        ));
    }

    #[test]
    fn too_few_instances() {
        let c = corpus(2, 2);
        assert!(matches!(
            sample_episode(&c, EpisodeShape::new(2, 2, 1), 0),
            Err(CorpusError::NotEnoughInstances { .. })
        ));
    }

    #[test]
    fn from_support_rejects_foreign_query() {
        let c = corpus(3, 2);
        let g0 = c.group("r0").unwrap();
        let g2 = c.group("r2").unwrap();
        let err = Episode::from_support(vec![vec![g0[0].clone()]], vec![g2[0].clone()]);
        assert!(err.is_err());
    }
}
