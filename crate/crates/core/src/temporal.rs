//! Bi-LSTM over chronologically ordered similarity vectors, with a shared
//! two-layer head predicting relevance at every step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::ranker::{glorot, LexicalRanker, RELEVANT};
use crate::retrieval::{InvertedIndex, RankedList};
use crate::tensor::{Graph, LstmCell, ParamId, ParamSet, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    /// Hidden size of each direction; the concatenated output is twice this.
    pub hidden: usize,
    pub head_hidden: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            hidden: 200,
            head_hidden: 150,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// `g = σ(h·Wm + bm)`, `y = softmax(g·Wp + bp)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalHead {
    pub wm: ParamId,
    pub bm: ParamId,
    pub wp: ParamId,
    pub bp: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModel {
    input: usize,
    params: ParamSet,
    pub bilstm: BiLstm,
    pub head: TemporalHead,
}

impl TemporalModel {
    pub fn new<R: Rng>(input: usize, config: &TemporalConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let h = config.hidden;
        let bilstm = BiLstm {
            forward: LstmCell::new(&mut params, "temporal.fwd", input, h, rng),
            backward: LstmCell::new(&mut params, "temporal.bwd", input, h, rng),
        };
        let k = config.head_hidden;
        let head = TemporalHead {
            wm: params.add_uniform("temporal.head.wm", &[2 * h, k], glorot(2 * h, k), rng),
            bm: params.add_zeros("temporal.head.bm", &[k]),
            wp: params.add_uniform("temporal.head.wp", &[k, 2], glorot(k, 2), rng),
            bp: params.add_zeros("temporal.head.bp", &[2]),
        };
        Self {
            input,
            params,
            bilstm,
            head,
        }
    }

    /// Same structure with every parameter zero.
    pub fn zeros(input: usize, config: &TemporalConfig) -> Self {
        let mut params = ParamSet::new();
        let h = config.hidden;
        let bilstm = BiLstm {
            forward: LstmCell::zeros(&mut params, "temporal.fwd", input, h),
            backward: LstmCell::zeros(&mut params, "temporal.bwd", input, h),
        };
        let k = config.head_hidden;
        let head = TemporalHead {
            wm: params.add_zeros("temporal.head.wm", &[2 * h, k]),
            bm: params.add_zeros("temporal.head.bm", &[k]),
            wp: params.add_zeros("temporal.head.wp", &[k, 2]),
            bp: params.add_zeros("temporal.head.bp", &[2]),
        };
        Self {
            input,
            params,
            bilstm,
            head,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn output_width(&self) -> usize {
        2 * self.bilstm.forward.hidden
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Stacks equal-width vectors into a `[T × width]` matrix.
    pub fn sequence_tensor(&self, vectors: &[Vec<f64>]) -> Result<Tensor> {
        if vectors.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != self.input) {
            return Err(Error::shape(
                "bilstm",
                format!("vector width {} vs model input {}", v.len(), self.input),
            ));
        }
        Tensor::from_rows(vectors)
    }

    /// `h_bi_t = [h_for_t; h_back_t]` for every step of `xs` (`T × input`).
    pub fn bilstm_forward(&self, g: &mut Graph, xs: Var) -> Result<Vec<Var>> {
        let fwd = self.bilstm.forward.run(g, &self.params, xs, false)?;
        let bwd = self.bilstm.backward.run(g, &self.params, xs, true)?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| g.concat(&[f, b]))
            .collect()
    }

    pub fn predict_head(&self, g: &mut Graph, h_bi: Var) -> Result<Var> {
        if g.shape(h_bi) != [self.output_width()] {
            return Err(Error::shape(
                "predict_head",
                format!("{:?} vs [{}]", g.shape(h_bi), self.output_width()),
            ));
        }
        let p = &self.params;
        let (wm, bm, wp, bp) = (
            g.param(p, self.head.wm),
            g.param(p, self.head.bm),
            g.param(p, self.head.wp),
            g.param(p, self.head.bp),
        );
        let z = g.matmul(h_bi, wm)?;
        let z = g.add(z, bm)?;
        let hidden = g.sigmoid(z);
        let logits = g.matmul(hidden, wp)?;
        let logits = g.add(logits, bp)?;
        g.softmax(logits)
    }

    /// Per-step probability vectors.
    pub fn forward(&self, g: &mut Graph, xs: Var) -> Result<Vec<Var>> {
        let hs = self.bilstm_forward(g, xs)?;
        hs.into_iter().map(|h| self.predict_head(g, h)).collect()
    }

    /// Summed per-step NLL of `labels` over the sequence.
    pub fn sequence_loss(&self, g: &mut Graph, vectors: &[Vec<f64>], labels: &[usize]) -> Result<Var> {
        if vectors.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let xs = g.constant(self.sequence_tensor(vectors)?);
        let probs = self.forward(g, xs)?;
        let losses = probs
            .into_iter()
            .zip(labels)
            .map(|(p, &y)| g.nll_loss(p, y))
            .collect::<Result<Vec<_>>>()?;
        g.add_all(&losses)
    }

    /// `P(relevant)` at every step.
    pub fn score_sequence(&self, vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let xs = g.constant(self.sequence_tensor(vectors)?);
        let probs = self.forward(&mut g, xs)?;
        Ok(probs.into_iter().map(|p| g.value(p).data()[RELEVANT]).collect())
    }
}

/// Entry positions sorted by timestamp, ties by doc id.
pub fn chronological_order(list: &RankedList) -> Vec<usize> {
    let mut order: Vec<usize> = (0..list.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&list.entries[a], &list.entries[b]);
        ea.timestamp
            .cmp(&eb.timestamp)
            .then_with(|| ea.doc_id.cmp(&eb.doc_id))
    });
    order
}

/// Similarity vectors of `list` entries in chronological order, with the
/// matching entry positions.
pub fn chronological_vectors(
    lexical: &impl LexicalRanker,
    list: &RankedList,
    topic: &Topic,
    index: &InvertedIndex,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let order = chronological_order(list);
    let vectors = order
        .iter()
        .map(|&i| {
            let doc_id = &list.entries[i].doc_id;
            let doc = index
                .doc_by_id(doc_id)
                .ok_or_else(|| Error::invalid(format!("document {doc_id} is not in the index")))?;
            let input = lexical.encode(&topic.query_tokens, &doc.tokens)?;
            lexical.similarity_vector(&input)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((order, vectors))
}

/// Scores every entry with the temporal model run over the list in time
/// order, then sorts by that score; ties keep the lexical order.
pub fn rerank_neural(
    lexical: &impl LexicalRanker,
    temporal: &TemporalModel,
    list: &RankedList,
    topic: &Topic,
    index: &InvertedIndex,
) -> Result<RankedList> {
    if list.is_empty() {
        return Ok(list.clone());
    }
    let (order, vectors) = chronological_vectors(lexical, list, topic, index)?;
    let probs = temporal.score_sequence(&vectors)?;
    let mut scores = vec![0.0; list.len()];
    for (&pos, p) in order.iter().zip(probs) {
        scores[pos] = p;
    }
    Ok(list.rescored(&scores))
}

/// Orders the entries of `list` by the lexical model's own relevance
/// probability; ties keep the input order.
pub fn rerank_lexical(lexical: &impl LexicalRanker, list: &RankedList, topic: &Topic, index: &InvertedIndex) -> Result<RankedList> {
    let scores = list
        .entries
        .iter()
        .map(|e| {
            let doc = index
                .doc_by_id(&e.doc_id)
                .ok_or_else(|| Error::invalid(format!("document {} is not in the index", e.doc_id)))?;
            let input = lexical.encode(&topic.query_tokens, &doc.tokens)?;
            Ok(lexical.predict(&input)?[RELEVANT])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(list.rescored(&scores))
}
