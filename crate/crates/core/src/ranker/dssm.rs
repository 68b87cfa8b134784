use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::{glorot, LexicalConfig, LexicalRanker, ModelKind, PairInput};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

/// Letter trigrams of `#token#`, in order, with repeats.
pub fn dssm_hash(token: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('#')
        .chain(token.chars())
        .chain(std::iter::once('#'))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Assigns ids to the `cap` most frequent trigrams of the weighted token
/// counts; ties go to the lexicographically smaller trigram.
pub fn build_trigram_vocab<'a>(token_counts: impl IntoIterator<Item = (&'a str, u64)>, cap: usize) -> BTreeMap<String, usize> {
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for (tok, n) in token_counts {
        for tri in dssm_hash(tok) {
            *freq.entry(tri).or_default() += n;
        }
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cap);
    ranked.into_iter().enumerate().map(|(i, (t, _))| (t, i)).collect()
}

/// Trigram ids of each side, one entry per occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct DssmInput {
    pub query: Vec<usize>,
    pub doc: Vec<usize>,
}

/// Word-hashing MLP shared by query and document; the similarity vector is
/// `[y_q; y_d; cos(y_q, y_d)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DssmModel {
    trigrams: Arc<BTreeMap<String, usize>>,
    layers: Vec<(ParamId, ParamId)>,
    out_dim: usize,
    params: ParamSet,
    head_w: ParamId,
    head_b: ParamId,
}

impl DssmModel {
    pub fn new<R: Rng>(config: &LexicalConfig, trigrams: Arc<BTreeMap<String, usize>>, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut layers = Vec::with_capacity(config.dssm_layers.len());
        let mut fan_in = trigrams.len().max(1);
        for (i, &fan_out) in config.dssm_layers.iter().enumerate() {
            let w = params.add_uniform(format!("dssm.l{i}.w"), &[fan_in, fan_out], glorot(fan_in, fan_out), rng);
            let b = params.add_zeros(format!("dssm.l{i}.b"), &[fan_out]);
            layers.push((w, b));
            fan_in = fan_out;
        }
        let out_dim = fan_in;
        let width = 2 * out_dim + 1;
        let head_w = params.add_uniform("head.w", &[width, 2], glorot(width, 2), rng);
        let head_b = params.add_zeros("head.b", &[2]);
        Self {
            trigrams,
            layers,
            out_dim,
            params,
            head_w,
            head_b,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.trigrams.len()
    }

    fn hash_side(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .flat_map(|t| dssm_hash(t))
            .filter_map(|tri| self.trigrams.get(&tri).copied())
            .collect()
    }

    /// Semantic vector of one side.
    pub fn side(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let (w0, b0) = self.layers[0];
        let w = g.param(&self.params, w0);
        let first = if ids.is_empty() {
            let width = self.params.get(w0).shape()[1];
            g.constant(Tensor::zeros(&[width]))
        } else {
            // Trigram counts times W: one row per occurrence, then summed.
            let rows = g.embedding_lookup(w, ids)?;
            g.sum_rows(rows)?
        };
        let b = g.param(&self.params, b0);
        let mut h = g.add(first, b)?;
        h = g.tanh(h);
        for &(wi, bi) in &self.layers[1..] {
            let w = g.param(&self.params, wi);
            let b = g.param(&self.params, bi);
            let z = g.matmul(h, w)?;
            let z = g.add(z, b)?;
            h = g.tanh(z);
        }
        Ok(h)
    }
}

impl LexicalRanker for DssmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Dssm
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn width(&self) -> usize {
        2 * self.out_dim + 1
    }

    fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    fn encode(&self, query: &[String], doc: &[String]) -> Result<PairInput> {
        Ok(PairInput::Dssm(DssmInput {
            query: self.hash_side(query),
            doc: self.hash_side(doc),
        }))
    }

    fn similarity(&self, g: &mut Graph, input: &PairInput) -> Result<Var> {
        let PairInput::Dssm(input) = input else {
            return Err(Error::invalid("DSSM model given a non-DSSM input"));
        };
        let yq = self.side(g, &input.query)?;
        let yd = self.side(g, &input.doc)?;
        let cos = g.cosine(yq, yd)?;
        g.concat(&[yq, yd, cos])
    }
}
