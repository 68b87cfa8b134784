//! Ranking metrics, TREC run files and paired significance testing.

mod run;
mod sigtest;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use run::{format_run, read_run, read_run_str, write_run, Run, RunEntry};
pub use sigtest::{
    randomization_test, randomization_test_exact, randomization_test_sampled, SignificanceResult,
    DEFAULT_PERMUTATIONS, EXACT_CUTOFF,
};

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// Average precision of a ranking against all relevant documents of the
/// topic; `None` when the topic has no relevant judgments.
pub fn ap_of<'a>(topic: &str, ranking: impl IntoIterator<Item = &'a str>, qrels: &Qrels) -> Option<f64> {
    let total = qrels.relevant_count(topic);
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.into_iter().enumerate() {
        if qrels.is_relevant(topic, doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Fraction of the first `k` positions holding relevant documents; short
/// rankings are padded with non-relevant ones.
pub fn precision_of<'a>(topic: &str, ranking: impl IntoIterator<Item = &'a str>, qrels: &Qrels, k: usize) -> f64 {
    let hits = ranking
        .into_iter()
        .take(k)
        .filter(|doc| qrels.is_relevant(topic, doc))
        .count();
    hits as f64 / k as f64
}

pub fn average_precision(list: &RankedList, qrels: &Qrels) -> Option<f64> {
    ap_of(&list.topic_id, list.doc_ids(), qrels)
}

pub fn precision_at_k(list: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    precision_of(&list.topic_id, list.doc_ids(), qrels, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    P15,
    P30,
    P100,
    Ap,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Self::P15, Self::P30, Self::P100, Self::Ap];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ap => "ap",
            Self::P15 => "p15",
            Self::P30 => "p30",
            Self::P100 => "p100",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Ap => "AP",
            Self::P15 => "P15",
            Self::P30 => "P30",
            Self::P100 => "P100",
        }
    }

    /// Parses a comma-separated list such as `ap,p30`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        s.split(',').map(|m| m.trim().parse()).collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub topic_id: String,
    pub ap: f64,
    pub p15: f64,
    pub p30: f64,
    pub p100: f64,
}

impl TopicMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Ap => self.ap,
            Metric::P15 => self.p15,
            Metric::P30 => self.p30,
            Metric::P100 => self.p100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_topic: Vec<TopicMetrics>,
}

impl Evaluation {
    pub fn mean(&self, m: Metric) -> f64 {
        if self.per_topic.is_empty() {
            return 0.0;
        }
        self.per_topic.iter().map(|t| t.get(m)).sum::<f64>() / self.per_topic.len() as f64
    }

    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.per_topic.iter().map(|t| t.get(m)).collect()
    }

    pub fn topic_ids(&self) -> Vec<&str> {
        self.per_topic.iter().map(|t| t.topic_id.as_str()).collect()
    }
}

/// Scores `run` on `topics`, in the given order. A topic absent from the run
/// scores zero; topics without relevant judgments are skipped with a warning.
pub fn evaluate_topics(run: &Run, qrels: &Qrels, topics: &[String]) -> Evaluation {
    let mut per_topic = Vec::with_capacity(topics.len());
    for topic in topics {
        let ids = run.doc_ids(topic);
        let Some(ap) = ap_of(topic, ids.iter().copied(), qrels) else {
            log::warn!("topic {topic}: no relevant judgments; excluded from evaluation");
            continue;
        };
        per_topic.push(TopicMetrics {
            topic_id: topic.clone(),
            ap,
            p15: precision_of(topic, ids.iter().copied(), qrels, 15),
            p30: precision_of(topic, ids.iter().copied(), qrels, 30),
            p100: precision_of(topic, ids.iter().copied(), qrels, 100),
        });
    }
    Evaluation { per_topic }
}

/// Scores every topic of `run`.
pub fn evaluate(run: &Run, qrels: &Qrels) -> Evaluation {
    let topics: Vec<String> = run.topics.keys().cloned().collect();
    evaluate_topics(run, qrels, &topics)
}

/// Topics of either run, sorted, for paired comparisons.
pub fn union_topics(a: &Run, b: &Run) -> Vec<String> {
    a.topics
        .keys()
        .chain(b.topics.keys())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
