//! Shared fixtures for the benchmarks in `benches/`.

use chronorank::synth::{generate, SynthConfig};
use chronorank::{DocumentStore, InvertedIndex, Qrels, Topic};

/// An indexed synthetic collection.
pub struct Fixture {
    pub index: InvertedIndex,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
}

/// `n_topics` synthetic topics with `pool_size` documents each.
pub fn fixture(n_topics: usize, pool_size: usize, seed: u64) -> Fixture {
    let data = generate(&SynthConfig {
        n_topics,
        n_train_topics: n_topics / 2,
        pool_size,
        n_relevant: (pool_size / 10).max(1),
        seed,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config");
    let (store, _) = DocumentStore::from_documents(data.documents);
    Fixture {
        index: InvertedIndex::build(&store).expect("non-empty corpus"),
        topics: data.topics,
        qrels: data.qrels,
    }
}
