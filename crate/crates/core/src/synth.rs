//! Synthetic corpora whose relevant documents cluster in time.
//!
//! Every topic owns a small set of topic terms and a pool of documents.
//! Relevant documents carry more topic terms and most of them sit in one or
//! more Gaussian bursts; the rest of the pool is spread uniformly over the
//! horizon. The query is a prefix of the topic terms.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_qrels, write_topics, Document, Qrels, Topic, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::sub_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_topics: usize,
    /// The first `n_train_topics` topics form the training split.
    pub n_train_topics: usize,
    pub pool_size: usize,
    pub n_relevant: usize,
    /// Inclusive range of bursts per topic.
    pub burst_count: [usize; 2],
    /// Burst standard deviation in days.
    pub burst_width: f64,
    pub time_horizon: f64,
    pub topic_terms: usize,
    pub query_terms: usize,
    pub background_terms: usize,
    /// Inclusive ranges of distinct topic terms per document.
    pub relevant_topic_terms: [usize; 2],
    pub nonrelevant_topic_terms: [usize; 2],
    /// Inclusive range of background tokens per document.
    pub background_length: [usize; 2],
    /// Fraction of relevant documents placed uniformly instead of in a burst.
    pub noise: f64,
    /// Draw burst members from a uniform window with the same standard
    /// deviation instead of a Gaussian.
    pub uniform_bursts: bool,
    /// Width of the generated word vectors; 0 writes no embedding file.
    pub embedding_dim: usize,
    /// Spread of a topic term's vector around its topic direction, relative
    /// to the direction's own scale.
    pub embedding_spread: f64,
    /// Scale of background-word vectors relative to topic directions.
    pub background_embedding_scale: f64,
    pub start_timestamp: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_topics: 100,
            n_train_topics: 50,
            pool_size: 500,
            n_relevant: 20,
            burst_count: [1, 2],
            burst_width: 0.25,
            time_horizon: 30.0,
            topic_terms: 8,
            query_terms: 3,
            background_terms: 2000,
            relevant_topic_terms: [2, 4],
            nonrelevant_topic_terms: [1, 2],
            background_length: [6, 14],
            noise: 0.1,
            uniform_bursts: false,
            embedding_dim: 32,
            embedding_spread: 0.5,
            background_embedding_scale: 0.1,
            start_timestamp: 1_296_518_400,
            seed: 42,
        }
    }
}

fn check_range(name: &str, r: [usize; 2]) -> Result<()> {
    if r[0] > r[1] {
        return Err(Error::Config(format!("synth.{name} range {r:?} is reversed")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 || self.pool_size == 0 {
            return Err(Error::Config("synth needs at least one topic and a non-empty pool".into()));
        }
        if self.n_train_topics > self.n_topics {
            return Err(Error::Config("synth.n_train_topics exceeds n_topics".into()));
        }
        if self.n_relevant > self.pool_size {
            return Err(Error::Config(format!(
                "synth.n_relevant ({}) exceeds the pool size ({})",
                self.n_relevant, self.pool_size
            )));
        }
        if !(self.time_horizon > 0.0 && self.burst_width > 0.0 && self.burst_width < self.time_horizon) {
            return Err(Error::Config("synth requires 0 < burst_width < time_horizon".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config("synth.noise must lie in [0, 1]".into()));
        }
        if self.query_terms == 0 || self.query_terms > self.topic_terms {
            return Err(Error::Config("synth requires 1 ≤ query_terms ≤ topic_terms".into()));
        }
        if self.background_terms == 0 || self.burst_count[0] == 0 {
            return Err(Error::Config("synth needs background terms and at least one burst".into()));
        }
        check_range("burst_count", self.burst_count)?;
        check_range("relevant_topic_terms", self.relevant_topic_terms)?;
        check_range("nonrelevant_topic_terms", self.nonrelevant_topic_terms)?;
        check_range("background_length", self.background_length)?;
        if !(self.embedding_spread >= 0.0 && self.background_embedding_scale >= 0.0) {
            return Err(Error::Config("synth embedding scales must be non-negative".into()));
        }
        if self.relevant_topic_terms[1].max(self.nonrelevant_topic_terms[1]) > self.topic_terms {
            return Err(Error::Config("synth documents cannot hold more distinct topic terms than exist".into()));
        }
        if self.nonrelevant_topic_terms[0] == 0 {
            return Err(Error::Config("synth non-relevant documents need a topic term".into()));
        }
        if self.relevant_topic_terms[0] < 2 {
            return Err(Error::Config("synth relevant documents need at least two topic terms".into()));
        }
        Ok(())
    }
}

/// A generated collection with its topic split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub documents: Vec<Document>,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
    /// Burst centers per topic, in days from the start.
    pub bursts: Vec<Vec<f64>>,
    pub n_train_topics: usize,
    /// Word vectors in which each topic's terms share a direction.
    pub embeddings: Vec<(String, Vec<f64>)>,
}

impl SynthData {
    pub fn train_topics(&self) -> &[Topic] {
        &self.topics[..self.n_train_topics]
    }

    pub fn test_topics(&self) -> &[Topic] {
        &self.topics[self.n_train_topics..]
    }
}

fn topic_id(t: usize) -> String {
    format!("{}", t + 1)
}

fn topic_term(t: usize, j: usize) -> String {
    format!("t{t:03}k{j}")
}

fn background_term(i: usize) -> String {
    format!("w{i:05}")
}

fn draw(rng: &mut impl Rng, r: [usize; 2]) -> usize {
    rng.gen_range(r[0]..=r[1])
}

fn doc_text(config: &SynthConfig, t: usize, n_topic: usize, rng: &mut impl Rng) -> String {
    let mut words: Vec<String> = rand::seq::index::sample(rng, config.topic_terms, n_topic)
        .into_iter()
        .map(|j| topic_term(t, j))
        .collect();
    let n_bg = draw(rng, config.background_length);
    words.extend((0..n_bg).map(|_| background_term(rng.gen_range(0..config.background_terms))));
    words.shuffle(rng);
    words.join(" ")
}

/// Offset in days of one burst member around `center`.
fn burst_time(config: &SynthConfig, center: f64, rng: &mut impl Rng) -> f64 {
    if config.uniform_bursts {
        let half = config.burst_width * 3f64.sqrt();
        center + rng.gen_range(-half..=half)
    } else {
        let normal = Normal::new(center, config.burst_width).expect("burst width validated positive");
        normal.sample(rng)
    }
}

fn to_timestamp(config: &SynthConfig, days: f64) -> i64 {
    config.start_timestamp + (days * SECONDS_PER_DAY).round() as i64
}

fn embeddings(config: &SynthConfig) -> Vec<(String, Vec<f64>)> {
    let d = config.embedding_dim;
    if d == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "synth.embeddings"));
    let scale = 1.0 / (d as f64).sqrt();
    let unit = Normal::new(0.0, scale).expect("positive scale");
    let spread = Normal::new(0.0, scale * config.embedding_spread).expect("finite scale");
    let background = Normal::new(0.0, scale * config.background_embedding_scale).expect("finite scale");
    let mut out = Vec::with_capacity(config.n_topics * config.topic_terms + config.background_terms);
    for t in 0..config.n_topics {
        let center: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng)).collect();
        for j in 0..config.topic_terms {
            let v = center.iter().map(|c| c + spread.sample(&mut rng)).collect();
            out.push((topic_term(t, j), v));
        }
    }
    for i in 0..config.background_terms {
        out.push((background_term(i), (0..d).map(|_| background.sample(&mut rng)).collect()));
    }
    out
}

/// Generates the collection; identical configs give identical data.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut documents = Vec::with_capacity(config.n_topics * config.pool_size);
    let mut topics = Vec::with_capacity(config.n_topics);
    let mut qrels = Qrels::new();
    let mut bursts = Vec::with_capacity(config.n_topics);
    let n_noise = (config.noise * config.n_relevant as f64).round() as usize;

    for t in 0..config.n_topics {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, &format!("synth.topic{t}")));
        let id = topic_id(t);
        let query: Vec<String> = (0..config.query_terms).map(|j| topic_term(t, j)).collect();
        topics.push(Topic {
            topic_id: id.clone(),
            query_tokens: query,
            query_time: Some(to_timestamp(config, config.time_horizon)),
        });

        let centers: Vec<f64> = (0..draw(&mut rng, config.burst_count))
            .map(|_| rng.gen_range(0.0..config.time_horizon))
            .collect();

        for i in 0..config.pool_size {
            let relevant = i < config.n_relevant;
            let (n_topic, days) = if relevant {
                let days = if i < n_noise {
                    rng.gen_range(0.0..config.time_horizon)
                } else {
                    let c = centers[rng.gen_range(0..centers.len())];
                    burst_time(config, c, &mut rng)
                };
                (draw(&mut rng, config.relevant_topic_terms), days)
            } else {
                (
                    draw(&mut rng, config.nonrelevant_topic_terms),
                    rng.gen_range(0.0..config.time_horizon),
                )
            };
            let text = doc_text(config, t, n_topic, &mut rng);
            let doc_id = format!("{:03}{:04}", t + 1, i);
            qrels.insert(id.clone(), doc_id.clone(), u8::from(relevant))?;
            documents.push(Document::new(doc_id, to_timestamp(config, days), text));
        }
        bursts.push(centers);
    }
    Ok(SynthData {
        documents,
        topics,
        qrels,
        bursts,
        n_train_topics: config.n_train_topics,
        embeddings: embeddings(config),
    })
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    id: &'a str,
    timestamp: i64,
    text: &'a str,
}

/// Paths of the files written by [`write_synth`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub corpus: PathBuf,
    pub topics: PathBuf,
    pub train_topics: PathBuf,
    pub test_topics: PathBuf,
    pub qrels: PathBuf,
    pub embeddings: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            corpus: dir.join("corpus.jsonl"),
            topics: dir.join("topics.tsv"),
            train_topics: dir.join("topics-train.tsv"),
            test_topics: dir.join("topics-test.tsv"),
            qrels: dir.join("qrels.txt"),
            embeddings: dir.join("embeddings.txt"),
        }
    }
}

/// Writes corpus JSONL, topic files, qrels and, when generated, word vectors
/// into `dir`.
pub fn write_synth(data: &SynthData, dir: &Path) -> Result<SynthPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SynthPaths::in_dir(dir);
    let mut out = Vec::new();
    for d in &data.documents {
        serde_json::to_writer(
            &mut out,
            &JsonRecord {
                id: &d.doc_id,
                timestamp: d.timestamp,
                text: &d.text,
            },
        )?;
        out.push(b'\n');
    }
    fs::write(&paths.corpus, out).map_err(|e| Error::io(&paths.corpus, e))?;
    write_topics(&data.topics, &paths.topics)?;
    write_topics(data.train_topics(), &paths.train_topics)?;
    write_topics(data.test_topics(), &paths.test_topics)?;
    write_qrels(&data.qrels, &paths.qrels)?;
    if !data.embeddings.is_empty() {
        let mut text = String::new();
        for (word, v) in &data.embeddings {
            text.push_str(word);
            for x in v {
                text.push(' ');
                text.push_str(&x.to_string());
            }
            text.push('\n');
        }
        fs::write(&paths.embeddings, text).map_err(|e| Error::io(&paths.embeddings, e))?;
    }
    Ok(paths)
}
