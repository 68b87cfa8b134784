//! Two-stage training: per epoch, the lexical model is trained on labeled
//! pairs through its own head, then the temporal model is trained on
//! chronological per-topic sequences with the lexical model frozen.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Qrels, Topic};
use crate::error::{Error, Result};
use crate::ranker::{LexicalConfig, LexicalModel, LexicalRanker, PairInput};
use crate::retrieval::{search, InvertedIndex, DEFAULT_DEPTH, DEFAULT_MU};
use crate::sub_seed;
use crate::temporal::{TemporalConfig, TemporalModel};
use crate::tensor::{clip_global_norm, load_params, save_params, Graph, RmsProp};

/// Minimum number of labeled pairs for a train/dev split.
pub const MIN_PAIRS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub dev_fraction: f64,
    pub seed: u64,
    /// Pairs per stage-A update.
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Retrieval depth used to collect judged training documents.
    pub depth: usize,
    pub mu: f64,
    pub lexical: LexicalConfig,
    pub temporal: TemporalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            lr_decay: 3.0,
            patience: 3,
            min_delta: 1e-6,
            max_epochs: 25,
            dev_fraction: 0.05,
            seed: 0,
            batch_size: 32,
            clip_norm: 5.0,
            depth: DEFAULT_DEPTH,
            mu: DEFAULT_MU,
            lexical: LexicalConfig::default(),
            temporal: TemporalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config("train.lr0 must be positive".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config("train.dev_fraction must lie in (0, 1)".into()));
        }
        if !(self.lr_decay >= 1.0) || self.patience == 0 || self.batch_size == 0 || self.depth == 0 {
            return Err(Error::Config(
                "train.lr_decay must be ≥ 1 and patience, batch_size, depth positive".into(),
            ));
        }
        if !(self.mu > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("train.mu and train.clip_norm must be positive".into()));
        }
        self.lexical.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub topic_id: String,
    pub doc_id: String,
    /// 1 for judged relevant, 0 for judged non-relevant.
    pub label: usize,
}

/// Seeded split into `(train, dev)` with `|dev| = round(fraction·n)`. Both
/// halves keep the input order.
pub fn split_dev(pairs: &[LabeledPair], fraction: f64, seed: u64) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>)> {
    if pairs.len() < MIN_PAIRS {
        return Err(Error::invalid(format!(
            "need at least {MIN_PAIRS} labeled pairs for a dev split, got {}",
            pairs.len()
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("dev fraction must lie in (0, 1), got {fraction}")));
    }
    let n_dev = (fraction * pairs.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; pairs.len()];
    for &i in &idx[..n_dev] {
        is_dev[i] = true;
    }
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (p, d) in pairs.iter().zip(is_dev) {
        if d { dev.push(p.clone()) } else { train.push(p.clone()) }
    }
    Ok((train, dev))
}

/// Learning rate divided by `decay` whenever the dev loss fails to improve
/// on its best by `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub best: f64,
    pub stalls: usize,
    pub decay: f64,
    pub patience: usize,
    pub min_delta: f64,
}

impl LrSchedule {
    pub fn new(lr0: f64, decay: f64, patience: usize, min_delta: f64) -> Self {
        Self {
            lr: lr0,
            best: f64::INFINITY,
            stalls: 0,
            decay,
            patience,
            min_delta,
        }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Self::new(c.lr0, c.lr_decay, c.patience, c.min_delta)
    }

    /// Records one epoch's dev loss; returns whether it was an improvement.
    pub fn observe(&mut self, dev_loss: f64) -> Result<bool> {
        if dev_loss.is_nan() {
            return Err(Error::Diverged(format!("dev loss is NaN at lr {}", self.lr)));
        }
        if dev_loss < self.best - self.min_delta {
            self.best = dev_loss;
            self.stalls = 0;
            return Ok(true);
        }
        self.stalls += 1;
        if self.stalls >= self.patience {
            self.lr /= self.decay;
            self.stalls = 0;
        }
        Ok(false)
    }
}

/// One topic's judged training documents in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicSequence {
    pub topic_id: String,
    pub inputs: Vec<PairInput>,
    pub labels: Vec<usize>,
}

/// Encoded training material.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub train: Vec<(LabeledPair, PairInput)>,
    pub dev: Vec<(LabeledPair, PairInput)>,
    pub sequences: Vec<TopicSequence>,
}

impl TrainingData {
    /// Judged documents among the top `depth` results of each topic become
    /// labeled pairs; a seeded fraction is held out for the dev loss. Stage-B
    /// sequences are built from the training pairs only.
    pub fn prepare(
        config: &TrainConfig,
        lexical: &impl LexicalRanker,
        index: &InvertedIndex,
        topics: &[Topic],
        qrels: &Qrels,
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut timestamps = BTreeMap::new();
        for topic in topics {
            let list = search(index, topic, config.depth, config.mu);
            for e in &list.entries {
                if let Some(grade) = qrels.grade(&topic.topic_id, &e.doc_id) {
                    pairs.push(LabeledPair {
                        topic_id: topic.topic_id.clone(),
                        doc_id: e.doc_id.clone(),
                        label: usize::from(grade >= 1),
                    });
                    timestamps.insert((topic.topic_id.clone(), e.doc_id.clone()), e.timestamp);
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::invalid("no judged documents are retrievable for any training topic"));
        }
        let (train, dev) = split_dev(&pairs, config.dev_fraction, sub_seed(config.seed, "dev-split"))?;

        let by_id: BTreeMap<&str, &Topic> = topics.iter().map(|t| (t.topic_id.as_str(), t)).collect();
        let encode = |p: &LabeledPair| -> Result<PairInput> {
            let doc = index
                .doc_by_id(&p.doc_id)
                .ok_or_else(|| Error::invalid(format!("document {} is not in the index", p.doc_id)))?;
            lexical.encode(&by_id[p.topic_id.as_str()].query_tokens, &doc.tokens)
        };
        let train: Vec<_> = train
            .into_iter()
            .map(|p| encode(&p).map(|x| (p, x)))
            .collect::<Result<_>>()?;
        let dev: Vec<_> = dev
            .into_iter()
            .map(|p| encode(&p).map(|x| (p, x)))
            .collect::<Result<_>>()?;

        let mut grouped: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, (p, _)) in train.iter().enumerate() {
            grouped.entry(p.topic_id.as_str()).or_default().push(i);
        }
        let mut sequences = Vec::new();
        for topic in topics {
            let Some(members) = grouped.get(topic.topic_id.as_str()) else { continue };
            let mut members = members.clone();
            members.sort_by(|&a, &b| {
                let (pa, pb) = (&train[a].0, &train[b].0);
                timestamps[&(pa.topic_id.clone(), pa.doc_id.clone())]
                    .cmp(&timestamps[&(pb.topic_id.clone(), pb.doc_id.clone())])
                    .then_with(|| pa.doc_id.cmp(&pb.doc_id))
            });
            sequences.push(TopicSequence {
                topic_id: topic.topic_id.clone(),
                inputs: members.iter().map(|&i| train[i].1.clone()).collect(),
                labels: members.iter().map(|&i| train[i].0.label).collect(),
            });
        }
        Ok(Self { train, dev, sequences })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss_lex: f64,
    pub train_loss_temporal: f64,
    pub dev_loss: f64,
}

/// Models, optimizer accumulators and schedule of a run in progress.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub schedule: LrSchedule,
    pub lexical: LexicalModel,
    pub temporal: TemporalModel,
    opt_lex: RmsProp,
    opt_temporal: RmsProp,
    config: TrainConfig,
}

impl TrainState {
    pub fn new(config: &TrainConfig, lexical: LexicalModel, temporal: TemporalModel) -> Self {
        let schedule = LrSchedule::from_config(config);
        Self {
            epoch: 0,
            opt_lex: RmsProp::new(lexical.params(), schedule.lr),
            opt_temporal: RmsProp::new(temporal.params(), schedule.lr),
            schedule,
            lexical,
            temporal,
            config: config.clone(),
        }
    }

    /// Fresh models for `config`, built over `index` and `topics`.
    pub fn initialize(config: &TrainConfig, index: &InvertedIndex, topics: &[Topic], embeddings: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let lexical = LexicalModel::build(&config.lexical, index, topics, embeddings, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "temporal.init"));
        let temporal = TemporalModel::new(lexical.width(), &config.temporal, &mut rng);
        Ok(Self::new(config, lexical, temporal))
    }

    fn epoch_rng(&self, stage: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(sub_seed(self.config.seed, &format!("epoch{}.{stage}", self.epoch)))
    }

    /// One pass of NLL minimization over the training pairs; returns the mean
    /// per-pair loss.
    pub fn stage_a(&mut self, data: &TrainingData) -> Result<f64> {
        if data.train.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        self.opt_lex.lr = self.schedule.lr;
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut self.epoch_rng("a"));
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let mut g = Graph::new();
            let losses = batch
                .iter()
                .map(|&i| {
                    let (pair, input) = &data.train[i];
                    self.lexical.pair_loss(&mut g, input, pair.label)
                })
                .collect::<Result<Vec<_>>>()?;
            let sum = g.add_all(&losses)?;
            let loss_value = g.value(sum).item();
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!("stage-A loss {loss_value} at epoch {}", self.epoch)));
            }
            total += loss_value;
            let mean = g.scale(sum, 1.0 / batch.len() as f64);
            let grads = g.backward(mean)?;
            let mut pg = g.param_grads(&grads, self.lexical.params());
            drop(g);
            clip_global_norm(&mut pg, self.config.clip_norm);
            self.opt_lex.step(self.lexical.params_mut(), &pg)?;
        }
        Ok(total / data.train.len() as f64)
    }

    /// One pass over the topic sequences updating only the temporal model;
    /// returns the mean per-document loss. Fails if the lexical parameters
    /// changed.
    pub fn stage_b(&mut self, data: &TrainingData) -> Result<f64> {
        if data.sequences.is_empty() {
            return Err(Error::invalid("no training sequences"));
        }
        self.opt_temporal.lr = self.schedule.lr;
        let frozen = self.lexical.params().bit_snapshot();
        let vectors: Vec<Vec<Vec<f64>>> = data
            .sequences
            .iter()
            .map(|s| s.inputs.iter().map(|x| self.lexical.similarity_vector(x)).collect())
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..data.sequences.len()).collect();
        order.shuffle(&mut self.epoch_rng("b"));
        let (mut total, mut steps) = (0.0, 0usize);
        for i in order {
            let seq = &data.sequences[i];
            let mut g = Graph::new();
            let loss = self.temporal.sequence_loss(&mut g, &vectors[i], &seq.labels)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!("stage-B loss {value} at epoch {}", self.epoch)));
            }
            total += value;
            steps += seq.labels.len();
            let grads = g.backward(loss)?;
            let mut pg = g.param_grads(&grads, self.temporal.params());
            drop(g);
            clip_global_norm(&mut pg, self.config.clip_norm);
            self.opt_temporal.step(self.temporal.params_mut(), &pg)?;
        }
        if self.lexical.params().bit_snapshot() != frozen {
            return Err(Error::Diverged("lexical parameters changed during stage B".into()));
        }
        Ok(total / steps as f64)
    }

    /// Mean stage-A NLL over the dev pairs.
    pub fn dev_loss(&self, data: &TrainingData) -> Result<f64> {
        if data.dev.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (pair, input) in &data.dev {
            let mut g = Graph::new();
            let loss = self.lexical.pair_loss(&mut g, input, pair.label)?;
            total += g.value(loss).item();
        }
        Ok(total / data.dev.len() as f64)
    }
}

/// Stage A then stage B; returns `(lexical loss, temporal loss)`.
pub fn train_epoch_two_stage(state: &mut TrainState, data: &TrainingData) -> Result<(f64, f64)> {
    let lex = state.stage_a(data)?;
    let temporal = state.stage_b(data)?;
    Ok((lex, temporal))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Models from the epoch with the lowest dev loss.
    pub lexical: LexicalModel,
    pub temporal: TemporalModel,
    pub best_epoch: usize,
    pub report: Vec<EpochReport>,
}

/// Runs `max_epochs` two-stage epochs, adjusting the learning rate from the
/// dev loss and keeping the best-dev models.
pub fn train_state(mut state: TrainState, data: &TrainingData, max_epochs: usize) -> Result<TrainOutcome> {
    let mut report = Vec::with_capacity(max_epochs);
    let mut best = (state.lexical.clone(), state.temporal.clone(), 0usize);
    for epoch in 1..=max_epochs {
        state.epoch = epoch;
        let lr = state.schedule.lr;
        let (lex, temporal) = train_epoch_two_stage(&mut state, data)?;
        let dev = state.dev_loss(data)?;
        let improved = state.schedule.observe(dev)?;
        if improved {
            best = (state.lexical.clone(), state.temporal.clone(), epoch);
        }
        log::info!("epoch {epoch}: lr {lr:.3e} lexical {lex:.4} temporal {temporal:.4} dev {dev:.4}");
        report.push(EpochReport {
            epoch,
            lr,
            train_loss_lex: lex,
            train_loss_temporal: temporal,
            dev_loss: dev,
        });
    }
    Ok(TrainOutcome {
        lexical: best.0,
        temporal: best.1,
        best_epoch: best.2,
        report,
    })
}

/// Builds models and data from the inputs and trains them.
pub fn train(
    config: &TrainConfig,
    index: &InvertedIndex,
    topics: &[Topic],
    qrels: &Qrels,
    embeddings: Option<&Path>,
) -> Result<TrainOutcome> {
    let state = TrainState::initialize(config, index, topics, embeddings)?;
    let data = TrainingData::prepare(config, &state.lexical, index, topics, qrels)?;
    log::info!(
        "training on {} pairs ({} dev) over {} topic sequences",
        data.train.len(),
        data.dev.len(),
        data.sequences.len()
    );
    train_state(state, &data, config.max_epochs)
}

/// Everything besides the weights needed to rebuild trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: TrainConfig,
    /// Query tokens of the training topics, in order, with repeats.
    pub query_tokens: Vec<String>,
    pub embeddings: Option<PathBuf>,
    pub best_epoch: usize,
}

impl ModelManifest {
    pub fn new(config: &TrainConfig, topics: &[Topic], embeddings: Option<&Path>, best_epoch: usize) -> Self {
        Self {
            config: config.clone(),
            query_tokens: topics.iter().flat_map(|t| t.query_tokens.iter().cloned()).collect(),
            embeddings: embeddings.map(Path::to_path_buf),
            best_epoch,
        }
    }
}

const MANIFEST_FILE: &str = "model.json";

/// Writes `model.json` plus the lexical and temporal checkpoints into `dir`.
pub fn save_models(dir: &Path, manifest: &ModelManifest, lexical: &LexicalModel, temporal: &TemporalModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    save_params(lexical.params(), dir, "lexical")?;
    save_params(temporal.params(), dir, "temporal")
}

/// Rebuilds the models saved by [`save_models`] over the same index.
pub fn load_models(dir: &Path, index: &InvertedIndex) -> Result<(ModelManifest, LexicalModel, TemporalModel)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    let vocab_topic = Topic {
        topic_id: String::new(),
        query_tokens: manifest.query_tokens.clone(),
        query_time: None,
    };
    let mut lexical = LexicalModel::build(
        &manifest.config.lexical,
        index,
        &[vocab_topic],
        manifest.embeddings.as_deref(),
        manifest.config.seed,
    )?;
    load_params(lexical.params_mut(), dir, "lexical")?;
    let mut temporal = TemporalModel::zeros(lexical.width(), &manifest.config.temporal);
    load_params(temporal.params_mut(), dir, "temporal")?;
    Ok((manifest, lexical, temporal))
}

/// Writes the report as one JSON object per line.
pub fn write_report(report: &[EpochReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in report {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, DocumentStore};
    use crate::ranker::ModelKind;
    use std::collections::BTreeSet;

    fn pairs(n: usize) -> Vec<LabeledPair> {
        (0..n)
            .map(|i| LabeledPair {
                topic_id: format!("t{}", i % 3),
                doc_id: format!("d{i}"),
                label: i % 2,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_partition() {
        let p = pairs(100);
        let (train, dev) = split_dev(&p, 0.05, 1).unwrap();
        assert_eq!((train.len(), dev.len()), (95, 5));
        let a: BTreeSet<_> = train.iter().collect();
        let b: BTreeSet<_> = dev.iter().collect();
        assert!(a.is_disjoint(&b));
        let all: BTreeSet<_> = a.union(&b).copied().collect();
        assert_eq!(all, p.iter().collect());
        assert_eq!(split_dev(&p, 0.05, 1).unwrap(), (train, dev));
        assert!(split_dev(&pairs(19), 0.05, 1).is_err());
    }

    #[test]
    fn schedule_improvement_and_stalls() {
        let mut s = LrSchedule::new(0.001, 3.0, 3, 1e-6);
        s.observe(1.0).unwrap();
        s.observe(0.9).unwrap();
        assert_eq!(s.lr, 0.001);

        let mut s = LrSchedule::new(0.001, 3.0, 3, 1e-6);
        for _ in 0..3 {
            s.observe(1.0).unwrap();
        }
        assert_eq!(s.lr, 0.001);
        s.observe(1.0).unwrap();
        assert!((s.lr - 0.001 / 3.0).abs() < 1e-18);
        for _ in 0..3 {
            s.observe(1.0).unwrap();
        }
        assert!((s.lr - 0.001 / 9.0).abs() < 1e-18);
        assert!(s.observe(f64::NAN).is_err());
    }

    fn corpus() -> (InvertedIndex, Vec<Topic>, Qrels) {
        let mut docs = Vec::new();
        let mut qrels = Qrels::new();
        let topics: Vec<Topic> = (0..3)
            .map(|t| Topic {
                topic_id: format!("{t}"),
                query_tokens: vec![format!("alpha{t}"), format!("beta{t}")],
                query_time: None,
            })
            .collect();
        for t in 0..3 {
            for i in 0..12 {
                let rel = i % 3 == 0;
                let text = if rel {
                    format!("alpha{t} beta{t} news{i} report")
                } else {
                    format!("alpha{t} noise{i} chatter filler")
                };
                let id = format!("t{t}d{i:02}");
                docs.push(Document::new(id.clone(), 1000 * i64::from(i) + 7 * t, text));
                qrels.insert(format!("{t}"), id, u8::from(rel)).unwrap();
            }
        }
        let (store, _) = DocumentStore::from_documents(docs);
        (InvertedIndex::build(&store).unwrap(), topics, qrels)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            lr0: 0.01,
            max_epochs: 3,
            dev_fraction: 0.1,
            seed: 5,
            lexical: LexicalConfig {
                model: ModelKind::Sm,
                embedding_dim: 6,
                filters: 4,
                filter_width: 2,
                ..LexicalConfig::default()
            },
            temporal: TemporalConfig { hidden: 4, head_hidden: 5 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn prepare_collects_judged_pairs() {
        let (index, topics, qrels) = corpus();
        let config = tiny_config();
        let state = TrainState::initialize(&config, &index, &topics, None).unwrap();
        let data = TrainingData::prepare(&config, &state.lexical, &index, &topics, &qrels).unwrap();
        assert_eq!(data.train.len() + data.dev.len(), 36);
        assert_eq!(data.dev.len(), 4);
        assert_eq!(data.sequences.len(), 3);
        assert_eq!(data.sequences.iter().map(|s| s.labels.len()).sum::<usize>(), data.train.len());
    }

    #[test]
    fn stage_b_leaves_lexical_bits_alone() {
        let (index, topics, qrels) = corpus();
        let config = tiny_config();
        let mut state = TrainState::initialize(&config, &index, &topics, None).unwrap();
        let data = TrainingData::prepare(&config, &state.lexical, &index, &topics, &qrels).unwrap();
        state.stage_a(&data).unwrap();
        let before = state.lexical.params().bit_snapshot();
        let temporal_before = state.temporal.params().bit_snapshot();
        state.stage_b(&data).unwrap();
        assert_eq!(state.lexical.params().bit_snapshot(), before);
        assert_ne!(state.temporal.params().bit_snapshot(), temporal_before);
    }

    #[test]
    fn one_epoch_bound_and_determinism() {
        let (index, topics, qrels) = corpus();
        let mut config = tiny_config();
        config.max_epochs = 1;
        let a = train(&config, &index, &topics, &qrels, None).unwrap();
        assert_eq!(a.report.len(), 1);
        let b = train(&config, &index, &topics, &qrels, None).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.lexical.params().bit_snapshot(), b.lexical.params().bit_snapshot());
        assert_eq!(a.temporal.params().bit_snapshot(), b.temporal.params().bit_snapshot());
    }

    #[test]
    fn saved_models_reload_bit_exact() {
        let (index, topics, qrels) = corpus();
        let mut config = tiny_config();
        config.max_epochs = 1;
        let out = train(&config, &index, &topics, &qrels, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = ModelManifest::new(&config, &topics, None, out.best_epoch);
        save_models(dir.path(), &manifest, &out.lexical, &out.temporal).unwrap();
        let (m, lexical, temporal) = load_models(dir.path(), &index).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(lexical, out.lexical);
        assert_eq!(temporal.params().bit_snapshot(), out.temporal.params().bit_snapshot());
    }

    #[test]
    fn report_lr_is_non_increasing_power_of_decay() {
        let (index, topics, qrels) = corpus();
        let mut config = tiny_config();
        config.max_epochs = 6;
        config.patience = 1;
        let out = train(&config, &index, &topics, &qrels, None).unwrap();
        for w in out.report.windows(2) {
            assert!(w[1].lr <= w[0].lr);
        }
        for r in &out.report {
            let k = (config.lr0 / r.lr).ln() / config.lr_decay.ln();
            assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
