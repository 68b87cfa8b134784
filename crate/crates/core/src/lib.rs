//! Temporal reranking for microblog search.
//!
//! The crate covers the whole retrieval pipeline: corpus ingestion and TREC
//! formats ([`corpus`]), query-likelihood retrieval ([`retrieval`]), kernel
//! density reranking ([`kde`]), a small autodiff core ([`tensor`]), neural
//! lexical rankers ([`ranker`]), the Bi-LSTM temporal model ([`temporal`]),
//! two-stage training ([`train`]), evaluation ([`eval`]), synthetic data
//! ([`synth`]) and the end-to-end experiment driver ([`pipeline`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod eval;
pub mod kde;
pub mod pipeline;
pub mod ranker;
pub mod retrieval;
pub mod synth;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use corpus::{Document, DocumentStore, Qrels, Topic};
pub use error::{Error, Result};
pub use eval::{Run, SignificanceResult};
pub use kde::{KdeModel, WeightScheme};
pub use pipeline::{PipelineConfig, PipelineSummary};
pub use ranker::{LexicalConfig, LexicalModel, LexicalRanker, ModelKind, SimilarityVector};
pub use retrieval::{InvertedIndex, RankedEntry, RankedList};
pub use synth::{SynthConfig, SynthData};
pub use tensor::{Graph, ParamSet, Tensor};
pub use train::{EpochReport, TrainConfig, TrainOutcome};

/// Derives an independent seed for the named consumer from a master seed.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded into the seed with a SplitMix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::sub_seed;

    #[test]
    fn sub_seeds_differ_by_name_and_seed() {
        assert_eq!(sub_seed(7, "a"), sub_seed(7, "a"));
        assert_ne!(sub_seed(7, "a"), sub_seed(7, "b"));
        assert_ne!(sub_seed(7, "a"), sub_seed(8, "a"));
    }
}
