//! Inverted index and Dirichlet-smoothed query-likelihood retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{to_days, DocumentStore, Topic};
use crate::error::{Error, Result};

/// Default Dirichlet prior.
pub const DEFAULT_MU: f64 = 2500.0;
/// Default retrieval depth.
pub const DEFAULT_DEPTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedDoc {
    pub doc_id: String,
    pub timestamp: i64,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    docs: Vec<IndexedDoc>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    collection_frequency: BTreeMap<String, u64>,
    total_tokens: u64,
    #[serde(skip)]
    by_id: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn build(store: &DocumentStore) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::invalid("cannot index an empty document store"));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut collection_frequency: BTreeMap<String, u64> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(store.len());
        let mut docs = Vec::with_capacity(store.len());
        let mut total_tokens = 0u64;

        for (internal, doc) in store.docs().iter().enumerate() {
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for tok in &doc.tokens {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: internal as u32,
                    tf,
                });
                *collection_frequency.entry(term.to_string()).or_default() += u64::from(tf);
            }
            doc_lengths.push(doc.tokens.len() as u32);
            total_tokens += doc.tokens.len() as u64;
            docs.push(IndexedDoc {
                doc_id: doc.doc_id.clone(),
                timestamp: doc.timestamp,
                tokens: doc.tokens.clone(),
            });
        }

        let mut index = Self {
            docs,
            postings,
            doc_lengths,
            collection_frequency,
            total_tokens,
            by_id: HashMap::new(),
        };
        index.rebuild_lookup();
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.by_id = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i as u32))
            .collect();
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut index: Self = serde_json::from_slice(&bytes)?;
        index.rebuild_lookup();
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc(&self, internal: u32) -> &IndexedDoc {
        &self.docs[internal as usize]
    }

    pub fn docs(&self) -> &[IndexedDoc] {
        &self.docs
    }

    pub fn lookup(&self, doc_id: &str) -> Option<u32> {
        self.by_id.get(doc_id).copied()
    }

    pub fn doc_by_id(&self, doc_id: &str) -> Option<&IndexedDoc> {
        self.lookup(doc_id).map(|i| self.doc(i))
    }

    /// Indexed terms in sorted order.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_length(&self, internal: u32) -> u32 {
        self.doc_lengths[internal as usize]
    }

    pub fn collection_frequency(&self, term: &str) -> u64 {
        self.collection_frequency.get(term).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn term_frequency(&self, term: &str, internal: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&internal, |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    /// `ln(N / df)`; zero for terms absent from the collection.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.document_frequency(term);
        if df == 0 {
            0.0
        } else {
            (self.docs.len() as f64 / df as f64).ln()
        }
    }

    pub fn idf_map(&self) -> BTreeMap<String, f64> {
        self.postings
            .keys()
            .map(|t| (t.clone(), self.idf(t)))
            .collect()
    }

    /// Earliest timestamp in the collection, the origin for day offsets.
    pub fn min_timestamp(&self) -> i64 {
        self.docs.iter().map(|d| d.timestamp).min().unwrap_or(0)
    }

    pub fn days(&self, timestamp: i64) -> f64 {
        to_days(timestamp, self.min_timestamp())
    }

    /// Attaches timestamps to externally produced `(doc_id, score)` rankings.
    /// Documents unknown to the index are rejected.
    pub fn ranked_list(&self, topic_id: &str, entries: &[(String, f64)]) -> Result<RankedList> {
        let mut out = Vec::with_capacity(entries.len());
        for (rank, (doc_id, score)) in entries.iter().enumerate() {
            let doc = self.doc_by_id(doc_id).ok_or_else(|| {
                Error::invalid(format!("topic {topic_id}: document {doc_id} is not in the index"))
            })?;
            out.push(RankedEntry {
                doc_id: doc_id.clone(),
                score: *score,
                rank: rank + 1,
                timestamp: doc.timestamp,
            });
        }
        Ok(RankedList {
            topic_id: topic_id.to_string(),
            entries: out,
        })
    }
}

/// Query log-likelihood of a document under Dirichlet smoothing.
///
/// Query terms that never occur in the collection contribute nothing.
pub fn ql_score(index: &InvertedIndex, query_tokens: &[String], doc: u32, mu: f64) -> f64 {
    let collection = index.total_tokens() as f64;
    let doc_len = f64::from(index.doc_length(doc));
    query_tokens
        .iter()
        .filter_map(|q| {
            let cf = index.collection_frequency(q);
            if cf == 0 {
                return None;
            }
            let tf = f64::from(index.term_frequency(q, doc));
            let background = cf as f64 / collection;
            Some(((tf + mu * background) / (doc_len + mu)).ln())
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub topic_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts by score descending, breaking ties by doc id, and assigns ranks.
    pub fn from_scored(topic_id: impl Into<String>, mut scored: Vec<(String, f64, i64)>) -> Self {
        scored.sort_by(|a, b| cmp_score_desc(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score, timestamp))| RankedEntry {
                doc_id,
                score,
                rank: i + 1,
                timestamp,
            })
            .collect();
        Self {
            topic_id: topic_id.into(),
            entries,
        }
    }

    /// Re-sorts by new scores, breaking ties by the current rank.
    pub fn rescored(&self, scores: &[f64]) -> Self {
        assert_eq!(scores.len(), self.entries.len(), "one score per entry");
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| {
            cmp_score_desc(scores[a], scores[b]).then_with(|| self.entries[a].rank.cmp(&self.entries[b].rank))
        });
        let entries = order
            .into_iter()
            .enumerate()
            .map(|(i, src)| RankedEntry {
                doc_id: self.entries[src].doc_id.clone(),
                score: scores[src],
                rank: i + 1,
                timestamp: self.entries[src].timestamp,
            })
            .collect();
        Self {
            topic_id: self.topic_id.clone(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// Ranks contiguous from 1 and scores non-increasing.
    pub fn is_well_formed(&self) -> bool {
        self.entries.iter().enumerate().all(|(i, e)| e.rank == i + 1)
            && self.entries.windows(2).all(|w| w[0].score >= w[1].score)
    }
}

/// Descending order for scores; NaN sorts last.
pub(crate) fn cmp_score_desc(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => b.partial_cmp(&a).unwrap_or(Ordering::Equal),
    }
}

/// Top-`k` documents containing at least one query term, by query likelihood.
pub fn search(index: &InvertedIndex, topic: &Topic, k: usize, mu: f64) -> RankedList {
    let mut candidates: Vec<u32> = topic
        .query_tokens
        .iter()
        .flat_map(|q| index.postings(q).iter().map(|p| p.doc))
        .collect();
    candidates.sort_unstable();
    candidates.dedup();

    let scored = candidates
        .into_iter()
        .map(|doc| {
            let d = index.doc(doc);
            (d.doc_id.clone(), ql_score(index, &topic.query_tokens, doc, mu), d.timestamp)
        })
        .collect();
    let mut list = RankedList::from_scored(topic.topic_id.clone(), scored);
    list.entries.truncate(k.max(1));
    list
}
