use serde::{Deserialize, Serialize};

use crate::corpus::Span;

/// True positive, false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Zero when precision and recall are both zero.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Scores one predicted item against one gold item.
    fn match_one<T: PartialEq>(&mut self, predicted: Option<T>, gold: T) {
        match predicted {
            Some(p) if p == gold => self.tp += 1,
            Some(_) => {
                self.fp += 1;
                self.fn_ += 1;
            }
            None => self.fn_ += 1,
        }
    }

    fn summary(&self) -> Score {
        Score {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            counts: *self,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Gold annotation of a query, in episode-local relation ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldTriple {
    pub relation: usize,
    pub subject: Span,
    pub object: Span,
}

/// A model output reduced to what is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictedTriple {
    pub relation: usize,
    pub subject: Option<Span>,
    pub object: Option<Span>,
}

/// Entity, relation and triple counts, accumulated over queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metrics {
    pub entity: Counts,
    pub relation: Counts,
    pub triple: Counts,
    pub queries: u64,
}

impl Metrics {
    /// Entities are matched per role; a triple exists only when both spans
    /// were predicted.
    pub fn record(&mut self, gold: &GoldTriple, predicted: &PredictedTriple) {
        self.queries += 1;
        self.entity.match_one(predicted.subject, gold.subject);
        self.entity.match_one(predicted.object, gold.object);
        self.relation
            .match_one(Some(predicted.relation), gold.relation);
        let triple = match (predicted.subject, predicted.object) {
            (Some(s), Some(o)) => Some((predicted.relation, s, o)),
            _ => None,
        };
        self.triple
            .match_one(triple, (gold.relation, gold.subject, gold.object));
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.entity.add(&other.entity);
        self.relation.add(&other.relation);
        self.triple.add(&other.triple);
        self.queries += other.queries;
    }

    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            queries: self.queries,
            entity: self.entity.summary(),
            relation: self.relation.summary(),
            triple: self.triple.summary(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

/// JSON-facing view of [`Metrics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub queries: u64,
    pub entity: Score,
    pub relation: Score,
    pub triple: Score,
}
