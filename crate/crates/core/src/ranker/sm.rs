use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::{glorot, overlap_features, EmbeddingTable, LexicalConfig, LexicalRanker, ModelKind, PairInput};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

/// Token rows of one side; `None` marks a token without an embedding, which
/// contributes a zero row like padding does.
#[derive(Debug, Clone, PartialEq)]
pub struct SmInput {
    pub query: Vec<Option<usize>>,
    pub doc: Vec<Option<usize>>,
    pub features: [f64; 4],
}

/// Convolutional Siamese model with a bilinear similarity and a join layer
/// `[x_q; x_sim; x_d; x_feat]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmModel {
    filters: usize,
    width: usize,
    max_len: usize,
    embeddings: Arc<EmbeddingTable>,
    idf: Arc<BTreeMap<String, f64>>,
    params: ParamSet,
    conv_q: (ParamId, ParamId),
    conv_d: (ParamId, ParamId),
    bilinear: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl SmModel {
    pub fn new<R: Rng>(
        config: &LexicalConfig,
        embeddings: Arc<EmbeddingTable>,
        idf: Arc<BTreeMap<String, f64>>,
        rng: &mut R,
    ) -> Self {
        let (f, w, d) = (config.filters, config.filter_width, embeddings.dim());
        let mut params = ParamSet::new();
        let conv_scale = glorot(w * d, f);
        let conv_q = (
            params.add_uniform("sm.conv_q.w", &[f, w * d], conv_scale, rng),
            params.add_zeros("sm.conv_q.b", &[f]),
        );
        let conv_d = if config.share_filters {
            conv_q
        } else {
            (
                params.add_uniform("sm.conv_d.w", &[f, w * d], conv_scale, rng),
                params.add_zeros("sm.conv_d.b", &[f]),
            )
        };
        let bilinear = params.add_uniform("sm.m", &[f, f], glorot(f, f), rng);
        let width = 2 * f + 5;
        let head_w = params.add_uniform("head.w", &[width, 2], glorot(width, 2), rng);
        let head_b = params.add_zeros("head.b", &[2]);
        Self {
            filters: f,
            width: w,
            max_len: config.max_len,
            embeddings,
            idf,
            params,
            conv_q,
            conv_d,
            bilinear,
            head_w,
            head_b,
        }
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    /// Parameter ids of the query and document convolutions.
    pub fn conv_ids(&self) -> [(ParamId, ParamId); 2] {
        [self.conv_q, self.conv_d]
    }

    pub fn bilinear_id(&self) -> ParamId {
        self.bilinear
    }

    fn rows(&self, tokens: &[String]) -> Vec<Option<usize>> {
        tokens
            .iter()
            .take(self.max_len)
            .map(|t| self.embeddings.index(t))
            .collect()
    }

    /// `[max(T, width) × d]` embedding matrix, zero rows for padding.
    fn embed(&self, rows: &[Option<usize>]) -> Tensor {
        let d = self.embeddings.dim();
        let len = rows.len().max(self.width);
        let mut data = vec![0.0; len * d];
        for (i, row) in rows.iter().enumerate() {
            if let Some(r) = row {
                data[i * d..(i + 1) * d].copy_from_slice(self.embeddings.row(*r));
            }
        }
        Tensor::matrix(len, d, data).expect("sized above")
    }

    /// Convolution, ReLU and max-pooling over time for one side.
    pub fn side(&self, g: &mut Graph, rows: &[Option<usize>], conv: (ParamId, ParamId)) -> Result<Var> {
        let x = g.constant(self.embed(rows));
        let w = g.param(&self.params, conv.0);
        let b = g.param(&self.params, conv.1);
        let c = g.conv1d(x, w, self.width)?;
        let c = g.add(c, b)?;
        let r = g.relu(c);
        g.maxpool_over_time(r)
    }
}

impl LexicalRanker for SmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Sm
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn width(&self) -> usize {
        2 * self.filters + 5
    }

    fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    fn encode(&self, query: &[String], doc: &[String]) -> Result<PairInput> {
        if query.is_empty() {
            return Err(Error::invalid("empty query"));
        }
        Ok(PairInput::Sm(SmInput {
            query: self.rows(query),
            doc: self.rows(doc),
            features: overlap_features(query, doc, &self.idf),
        }))
    }

    fn similarity(&self, g: &mut Graph, input: &PairInput) -> Result<Var> {
        let PairInput::Sm(input) = input else {
            return Err(Error::invalid("SM model given a non-SM input"));
        };
        let xq = self.side(g, &input.query, self.conv_q)?;
        let xd = self.side(g, &input.doc, self.conv_d)?;
        let m = g.param(&self.params, self.bilinear);
        let sim = g.bilinear(xq, m, xd)?;
        let feat = g.constant(Tensor::vector(input.features.to_vec()));
        g.concat(&[xq, sim, xd, feat])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::load_embeddings;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn model(filters: usize, share: bool) -> SmModel {
        let vocab = toks("a b c d e f g");
        let table = load_embeddings(None, &vocab, 3, 5).unwrap();
        let idf = vocab.iter().map(|t| (t.clone(), 1.0)).collect();
        let config = LexicalConfig {
            embedding_dim: 3,
            filters,
            filter_width: 3,
            share_filters: share,
            ..LexicalConfig::default()
        };
        SmModel::new(&config, Arc::new(table), Arc::new(idf), &mut ChaCha8Rng::seed_from_u64(1))
    }

    fn simvec(m: &SmModel, q: &str, d: &str) -> Vec<f64> {
        m.similarity_vector(&m.encode(&toks(q), &toks(d)).unwrap()).unwrap()
    }

    #[test]
    fn width_is_two_f_plus_five() {
        let m = model(2, true);
        assert_eq!(m.width(), 9);
        assert_eq!(simvec(&m, "a b c", "c d e f").len(), 9);
    }

    #[test]
    fn short_doc_is_padded() {
        let m = model(4, true);
        let v = simvec(&m, "a b c d", "e");
        assert!(v.iter().all(|x| x.is_finite()));
        let empty = simvec(&m, "a b c d", "");
        assert!(empty.iter().all(|x| x.is_finite()));
        assert!(m.encode(&[], &toks("a")).is_err());
    }

    #[test]
    fn identical_sides_with_identity_bilinear() {
        let mut m = model(3, true);
        let id = m.bilinear_id();
        m.params_mut()
            .set(id, Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let v = simvec(&m, "a b c d", "a b c d");
        let xq = &v[..3];
        let norm2: f64 = xq.iter().map(|x| x * x).sum();
        assert_relative_eq!(v[3], norm2, epsilon = 1e-14);
        assert_eq!(&v[4..7], xq);
        assert_eq!(&v[7..], &[1.0; 4]);
    }

    #[test]
    fn siamese_slices_share_parameters() {
        let shared = model(3, true);
        let [q, d] = shared.conv_ids();
        assert_eq!(q, d);
        let separate = model(3, false);
        let [q, d] = separate.conv_ids();
        assert_ne!(q, d);
        assert_eq!(separate.params().len(), shared.params().len() + 2);
    }

    #[test]
    fn extending_a_sequence_never_lowers_pooled_values() {
        let m = model(4, true);
        let base = toks("a b c d");
        let ext = toks("a b c d e f");
        let mut g = Graph::new();
        let conv = m.conv_ids()[1];
        let x0 = m.side(&mut g, &m.rows(&base), conv).unwrap();
        let x1 = m.side(&mut g, &m.rows(&ext), conv).unwrap();
        for (a, b) in g.value(x0).data().iter().zip(g.value(x1).data()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn truncates_long_sequences() {
        let m = model(2, true);
        let long: Vec<String> = (0..200).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
        let PairInput::Sm(input) = m.encode(&toks("a"), &long).unwrap() else { unreachable!() };
        assert_eq!(input.doc.len(), 70);
    }
}
