//! Lexical rankers: Siamese models that map a query and a document to a
//! fixed-width similarity vector, each with its own two-way softmax head.
//!
//! Models implement [`LexicalRanker`]; [`LexicalModel`] wraps the concrete
//! architectures so callers can pick one from configuration.

mod dssm;
mod embeddings;
mod features;
mod sm;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dssm::{build_trigram_vocab, dssm_hash, DssmInput, DssmModel};
pub use embeddings::{load_embeddings, EmbeddingTable, DEFAULT_EMBEDDING_DIM, OOV_SCALE};
pub use features::overlap_features;
pub use sm::{SmInput, SmModel};

use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::retrieval::InvertedIndex;
use crate::sub_seed;
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

/// Class index of "relevant" in every two-way softmax.
pub const RELEVANT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Sm,
    Dssm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sm => "sm",
            Self::Dssm => "dssm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Sm => "SM",
            Self::Dssm => "DSSM",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sm" => Ok(Self::Sm),
            "dssm" => Ok(Self::Dssm),
            _ => Err(Error::invalid(format!("unknown lexical model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexicalConfig {
    pub model: ModelKind,
    pub embedding_dim: usize,
    pub filters: usize,
    pub filter_width: usize,
    pub max_len: usize,
    pub share_filters: bool,
    pub dssm_layers: Vec<usize>,
    pub max_trigrams: usize,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Sm,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            filters: 100,
            filter_width: 5,
            max_len: 70,
            share_filters: true,
            dssm_layers: vec![300, 300, 128],
            max_trigrams: 50_000,
        }
    }
}

impl LexicalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("filters", self.filters),
            ("filter_width", self.filter_width),
            ("max_len", self.max_len),
            ("max_trigrams", self.max_trigrams),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("lexical.{name} must be positive")));
            }
        }
        if self.dssm_layers.is_empty() || self.dssm_layers.contains(&0) {
            return Err(Error::Config("lexical.dssm_layers must be nonempty and positive".into()));
        }
        Ok(())
    }
}

/// Encoded query–document pair, ready for a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum PairInput {
    Sm(SmInput),
    Dssm(DssmInput),
}

/// Output of a lexical ranker for one pair, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub values: Vec<f64>,
    pub model: ModelKind,
    pub query_id: String,
    pub doc_id: String,
    pub timestamp: i64,
}

/// A Siamese lexical model with a two-way classification head.
pub trait LexicalRanker {
    fn kind(&self) -> ModelKind;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Width of the similarity vector.
    fn width(&self) -> usize;
    /// `(weights [width × 2], bias [2])` of the classification head.
    fn head(&self) -> (ParamId, ParamId);
    fn encode(&self, query: &[String], doc: &[String]) -> Result<PairInput>;
    fn similarity(&self, g: &mut Graph, input: &PairInput) -> Result<Var>;

    /// Softmax head over a similarity vector.
    fn head_probs(&self, g: &mut Graph, sim: Var) -> Result<Var> {
        let (w, b) = self.head();
        let wv = g.param(self.params(), w);
        let bv = g.param(self.params(), b);
        let logits = g.matmul(sim, wv)?;
        let logits = g.add(logits, bv)?;
        g.softmax(logits)
    }

    /// Negative log-likelihood of `label` for one pair.
    fn pair_loss(&self, g: &mut Graph, input: &PairInput, label: usize) -> Result<Var> {
        let sim = self.similarity(g, input)?;
        let probs = self.head_probs(g, sim)?;
        g.nll_loss(probs, label)
    }

    fn similarity_vector(&self, input: &PairInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let sim = self.similarity(&mut g, input)?;
        Ok(g.value(sim).data().to_vec())
    }

    /// `(P(not relevant), P(relevant))` for a precomputed similarity vector.
    fn lexical_predict(&self, simvec: &[f64]) -> Result<[f64; 2]> {
        if simvec.len() != self.width() {
            return Err(Error::shape(
                "lexical_predict",
                format!("similarity width {} vs model width {}", simvec.len(), self.width()),
            ));
        }
        let mut g = Graph::new();
        let sim = g.constant(Tensor::vector(simvec.to_vec()));
        let probs = self.head_probs(&mut g, sim)?;
        let p = g.value(probs).data();
        Ok([p[0], p[1]])
    }

    fn predict(&self, input: &PairInput) -> Result<[f64; 2]> {
        let mut g = Graph::new();
        let sim = self.similarity(&mut g, input)?;
        let probs = self.head_probs(&mut g, sim)?;
        let p = g.value(probs).data();
        Ok([p[0], p[1]])
    }
}

/// Either lexical architecture behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum LexicalModel {
    Sm(SmModel),
    Dssm(DssmModel),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            LexicalModel::Sm($m) => $e,
            LexicalModel::Dssm($m) => $e,
        }
    };
}

impl LexicalRanker for LexicalModel {
    fn kind(&self) -> ModelKind {
        dispatch!(self, m => m.kind())
    }

    fn params(&self) -> &ParamSet {
        dispatch!(self, m => m.params())
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        dispatch!(self, m => m.params_mut())
    }

    fn width(&self) -> usize {
        dispatch!(self, m => m.width())
    }

    fn head(&self) -> (ParamId, ParamId) {
        dispatch!(self, m => m.head())
    }

    fn encode(&self, query: &[String], doc: &[String]) -> Result<PairInput> {
        dispatch!(self, m => m.encode(query, doc))
    }

    fn similarity(&self, g: &mut Graph, input: &PairInput) -> Result<Var> {
        dispatch!(self, m => m.similarity(g, input))
    }
}

/// Every index term plus every query token, sorted and deduplicated.
pub fn build_vocabulary(index: &InvertedIndex, topics: &[Topic]) -> Vec<String> {
    let mut v: BTreeSet<String> = index.terms().map(str::to_string).collect();
    v.extend(topics.iter().flat_map(|t| t.query_tokens.iter().cloned()));
    v.into_iter().collect()
}

impl LexicalModel {
    /// Builds a freshly initialized model over the vocabulary of `index` and
    /// `topics`. Everything random derives from `seed`.
    pub fn build(
        config: &LexicalConfig,
        index: &InvertedIndex,
        topics: &[Topic],
        embeddings: Option<&Path>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "lexical.init"));
        match config.model {
            ModelKind::Sm => {
                let vocab = build_vocabulary(index, topics);
                let table = load_embeddings(embeddings, &vocab, config.embedding_dim, sub_seed(seed, "embeddings"))?;
                let idf: BTreeMap<String, f64> = index.idf_map();
                Ok(Self::Sm(SmModel::new(config, Arc::new(table), Arc::new(idf), &mut rng)))
            }
            ModelKind::Dssm => {
                let mut counts: BTreeMap<&str, u64> = index.terms().map(|t| (t, index.collection_frequency(t))).collect();
                for t in topics {
                    for q in &t.query_tokens {
                        *counts.entry(q.as_str()).or_default() += 1;
                    }
                }
                let trigrams = build_trigram_vocab(counts, config.max_trigrams);
                Ok(Self::Dssm(DssmModel::new(config, Arc::new(trigrams), &mut rng)))
            }
        }
    }
}

/// Glorot-uniform half-width.
pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
