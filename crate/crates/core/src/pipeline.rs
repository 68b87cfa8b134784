//! End-to-end experiment: retrieval, density reranking, neural training and
//! reranking, evaluation and a results table with significance marks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{ingest_corpus, parse_qrels, parse_topics, CorpusFormat, Qrels, Topic};
use crate::error::{Error, Result};
use crate::eval::{evaluate_topics, randomization_test, write_run, Evaluation, Metric, Run, DEFAULT_PERMUTATIONS};
use crate::kde::{alpha_grid, fit_topic, interpolate, log_densities, tune_alpha, WeightScheme, DEFAULT_GAMMA};
use crate::ranker::{LexicalModel, LexicalRanker};
use crate::retrieval::{search, InvertedIndex, RankedList, DEFAULT_DEPTH, DEFAULT_MU};
use crate::sub_seed;
use crate::temporal::{rerank_lexical, rerank_neural, TemporalModel};
use crate::train::{save_models, train, write_report, ModelManifest, TrainConfig};

/// Significance threshold for the table superscripts.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeSettings {
    pub gamma: f64,
    /// Fixed bandwidth in days; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    /// Fixed interpolation weight; tuned on the training topics when absent.
    pub alpha: Option<f64>,
}

impl Default for KdeSettings {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            bandwidth: None,
            alpha: None,
        }
    }
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

fn default_mu() -> f64 {
    DEFAULT_MU
}

fn default_permutations() -> u64 {
    DEFAULT_PERMUTATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub topics_train: PathBuf,
    pub topics_test: PathBuf,
    pub qrels: PathBuf,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub kde: KdeSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_permutations")]
    pub permutations: u64,
}

impl PipelineConfig {
    /// Reads a YAML config; relative paths are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self =
            serde_yaml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.topics_train);
        fix(&mut self.topics_test);
        fix(&mut self.qrels);
        fix(&mut self.output);
        if let Some(e) = self.embeddings.as_mut() {
            fix(e);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.corpus, &self.topics_train, &self.topics_test, &self.qrels]
            .into_iter()
            .chain(self.embeddings.as_ref())
        {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.depth == 0 || !(self.mu > 0.0) {
            return Err(Error::Config("depth must be at least 1 and mu positive".into()));
        }
        if !(self.kde.gamma >= 0.0) {
            return Err(Error::Config("kde.gamma must be non-negative".into()));
        }
        if self.kde.alpha.is_some_and(|a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::Config("kde.alpha must lie in [0, 1]".into()));
        }
        if self.permutations == 0 {
            return Err(Error::Config("permutations must be positive".into()));
        }
        self.train_config().validate()
    }

    /// The training config with the pipeline's seed, depth and smoothing.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            depth: self.depth,
            mu: self.mu,
            ..self.train.clone()
        }
    }
}

/// Loaded collection, topics and judgments.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub index: InvertedIndex,
    pub train_topics: Vec<Topic>,
    pub test_topics: Vec<Topic>,
    pub qrels: Qrels,
}

impl Inputs {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let (store, report) = ingest_corpus(&config.corpus, CorpusFormat::from_path(&config.corpus))?;
        log::info!("ingested {} documents ({} malformed)", store.len(), report.malformed);
        Ok(Self {
            index: InvertedIndex::build(&store)?,
            train_topics: parse_topics(&config.topics_train)?,
            test_topics: parse_topics(&config.topics_test)?,
            qrels: parse_qrels(&config.qrels)?,
        })
    }
}

pub fn retrieve(index: &InvertedIndex, topics: &[Topic], depth: usize, mu: f64) -> Vec<RankedList> {
    topics.iter().map(|t| search(index, t, depth, mu)).collect()
}

/// Per-entry log-densities of one topic's feedback model. A topic without a
/// retrieved relevant document under the oracle scheme gets zeros, which
/// leaves its ranking unchanged at every alpha.
pub fn topic_log_densities(
    list: &RankedList,
    scheme: WeightScheme,
    settings: &KdeSettings,
    qrels: &Qrels,
    origin: i64,
) -> Result<Vec<f64>> {
    if list.is_empty() {
        return Ok(Vec::new());
    }
    match fit_topic(list, scheme, settings.gamma, Some(qrels), settings.bandwidth, origin) {
        Ok(model) => Ok(log_densities(list, &model, origin)),
        Err(Error::OracleDegenerate(topic)) => {
            log::warn!("topic {topic}: no relevant document retrieved; oracle density skipped");
            Ok(vec![0.0; list.len()])
        }
        Err(e) => Err(e),
    }
}

/// Density-reranked test lists for one scheme, with the alpha used.
pub fn kde_rerank(
    train_lists: &[RankedList],
    test_lists: &[RankedList],
    scheme: WeightScheme,
    settings: &KdeSettings,
    qrels: &Qrels,
    origin: i64,
) -> Result<(f64, Vec<RankedList>)> {
    let alpha = match settings.alpha {
        Some(a) => a,
        None => {
            let tuning = train_lists
                .iter()
                .map(|l| Ok((l.clone(), topic_log_densities(l, scheme, settings, qrels, origin)?)))
                .collect::<Result<Vec<_>>>()?;
            tune_alpha(&tuning, qrels, &alpha_grid()).0
        }
    };
    let lists = test_lists
        .iter()
        .map(|l| Ok(interpolate(l, &topic_log_densities(l, scheme, settings, qrels, origin)?, alpha)))
        .collect::<Result<Vec<_>>>()?;
    Ok((alpha, lists))
}

/// Test lists reranked by the lexical model alone and with the temporal
/// model on top.
pub fn neural_rerank(
    lexical: &LexicalModel,
    temporal: &TemporalModel,
    lists: &[RankedList],
    topics: &[Topic],
    index: &InvertedIndex,
) -> Result<(Vec<RankedList>, Vec<RankedList>)> {
    let mut lex = Vec::with_capacity(lists.len());
    let mut both = Vec::with_capacity(lists.len());
    for (list, topic) in lists.iter().zip(topics) {
        lex.push(rerank_lexical(lexical, list, topic, index)?);
        both.push(rerank_neural(lexical, temporal, list, topic, index)?);
    }
    Ok((lex, both))
}

/// One method of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub row: usize,
    pub method: String,
    pub run: String,
    pub means: BTreeMap<String, f64>,
    /// Metric → compared row → p-value.
    pub p_values: BTreeMap<String, BTreeMap<usize, f64>>,
}

impl ReportRow {
    pub fn mean(&self, m: Metric) -> f64 {
        self.means[m.name()]
    }

    pub fn p_value(&self, m: Metric, other: usize) -> Option<f64> {
        self.p_values.get(m.name())?.get(&other).copied()
    }

    /// Rows this one differs from significantly on `m`.
    pub fn significant_rows(&self, m: Metric) -> Vec<usize> {
        self.p_values
            .get(m.name())
            .map(|ps| ps.iter().filter(|(_, &p)| p < SIGNIFICANCE_LEVEL).map(|(&r, _)| r).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub seed: u64,
    pub topics_evaluated: usize,
    pub alphas: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub rows: Vec<ReportRow>,
}

impl PipelineSummary {
    pub fn row(&self, row: usize) -> &ReportRow {
        &self.rows[row - 1]
    }
}

/// Rows compared against each row: the baseline, the rank-weighted density
/// row, and for the temporal row also its lexical-only counterpart.
pub fn comparison_rows(row: usize, n_rows: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [1, 4].into_iter().filter(|&r| r != row && r < row).collect();
    if row == n_rows && n_rows > 1 {
        out.push(n_rows - 1);
    }
    out
}

/// Evaluates the named runs on `topics` and attaches significance tests.
pub fn build_rows(
    runs: &[(String, String, Run)],
    qrels: &Qrels,
    topics: &[String],
    permutations: u64,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let evals: Vec<Evaluation> = runs.iter().map(|(_, _, r)| evaluate_topics(r, qrels, topics)).collect();
    let mut rows = Vec::with_capacity(runs.len());
    for (i, (method, tag, _)) in runs.iter().enumerate() {
        let row = i + 1;
        let means = Metric::ALL.iter().map(|&m| (m.name().to_string(), evals[i].mean(m))).collect();
        let mut p_values = BTreeMap::new();
        for m in Metric::ALL {
            let mut ps = BTreeMap::new();
            for other in comparison_rows(row, runs.len()) {
                let (a, b) = (evals[i].values(m), evals[other - 1].values(m));
                if a.len() < 2 {
                    continue;
                }
                let name = format!("sigtest.{row}.{other}.{}", m.name());
                let r = randomization_test(&a, &b, permutations, sub_seed(seed, &name))?;
                ps.insert(other, r.p_value);
            }
            p_values.insert(m.name().to_string(), ps);
        }
        rows.push(ReportRow {
            row,
            method: method.clone(),
            run: tag.clone(),
            means,
            p_values,
        });
    }
    Ok(rows)
}

/// Markdown table of methods × metrics with significance superscripts.
pub fn format_report(summary: &PipelineSummary) -> String {
    let mut out = String::from("# Results\n\n");
    let _ = writeln!(out, "Topics evaluated: {}\n", summary.topics_evaluated);
    out.push_str("| # | Method |");
    for m in Metric::ALL {
        let _ = write!(out, " {} |", m.label());
    }
    out.push_str("\n|---|---|");
    for _ in Metric::ALL {
        out.push_str("---|");
    }
    out.push('\n');
    for r in &summary.rows {
        let _ = write!(out, "| {} | {} |", r.row, r.method);
        for m in Metric::ALL {
            let sig = r.significant_rows(m);
            let _ = write!(out, " {:.4}", r.mean(m));
            if !sig.is_empty() {
                let marks: Vec<String> = sig.iter().map(usize::to_string).collect();
                let _ = write!(out, "<sup>{}</sup>", marks.join(","));
            }
            out.push_str(" |");
        }
        out.push('\n');
    }
    let _ = write!(
        out,
        "\nSuperscripts list the rows whose difference is significant at p < {SIGNIFICANCE_LEVEL} \
         (two-sided paired randomization test).\n"
    );
    if !summary.alphas.is_empty() {
        out.push_str("\nDensity interpolation weights:");
        for (scheme, a) in &summary.alphas {
            let _ = write!(out, " {scheme} {a:.1};");
        }
        out.pop();
        out.push('\n');
    }
    let _ = writeln!(out, "\nBest dev epoch: {}", summary.best_epoch);
    out
}

/// Output locations under the configured directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub runs: PathBuf,
    pub model: PathBuf,
    pub training: PathBuf,
    pub report: PathBuf,
    pub summary: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            runs: dir.join("runs"),
            model: dir.join("model"),
            training: dir.join("training.jsonl"),
            report: dir.join("report.md"),
            summary: dir.join("summary.json"),
        }
    }
}

/// Runs every stage and writes runs, checkpoints, the training log, the
/// Markdown report and a JSON summary.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary> {
    config.validate()?;
    let inputs = Inputs::load(config)?;
    run_with_inputs(config, &inputs)
}

pub fn run_with_inputs(config: &PipelineConfig, inputs: &Inputs) -> Result<PipelineSummary> {
    let paths = OutputPaths::in_dir(&config.output);
    fs::create_dir_all(&paths.runs).map_err(|e| Error::io(&paths.runs, e))?;
    let Inputs {
        index,
        train_topics,
        test_topics,
        qrels,
    } = inputs;
    let origin = index.min_timestamp();

    let train_lists = retrieve(index, train_topics, config.depth, config.mu);
    let test_lists = retrieve(index, test_topics, config.depth, config.mu);
    let mut runs: Vec<(String, String, Run)> = vec![("QL".into(), "ql".into(), Run::from_lists(&test_lists, "ql"))];

    let mut alphas = BTreeMap::new();
    for scheme in WeightScheme::ALL {
        let (alpha, lists) = kde_rerank(&train_lists, &test_lists, scheme, &config.kde, qrels, origin)?;
        log::info!("kde {scheme}: alpha {alpha:.1}");
        alphas.insert(scheme.name().to_string(), alpha);
        let tag = format!("kde-{}", scheme.name());
        runs.push((format!("KDE {}", scheme.name()), tag.clone(), Run::from_lists(&lists, &tag)));
    }

    let train_config = config.train_config();
    let outcome = train(&train_config, index, train_topics, qrels, config.embeddings.as_deref())?;
    write_report(&outcome.report, &paths.training)?;
    let manifest = ModelManifest::new(&train_config, train_topics, config.embeddings.as_deref(), outcome.best_epoch);
    save_models(&paths.model, &manifest, &outcome.lexical, &outcome.temporal)?;

    let (lex, both) = neural_rerank(&outcome.lexical, &outcome.temporal, &test_lists, test_topics, index)?;
    let kind = outcome.lexical.kind();
    runs.push((kind.label().to_string(), kind.name().to_string(), Run::from_lists(&lex, kind.name())));
    let tag = format!("{}-temporal", kind.name());
    runs.push((format!("{} + Temporal", kind.label()), tag.clone(), Run::from_lists(&both, &tag)));

    for (_, tag, run) in &runs {
        write_run(run, &paths.runs.join(format!("{tag}.run")))?;
    }

    let topic_ids: Vec<String> = test_topics
        .iter()
        .map(|t| t.topic_id.clone())
        .filter(|t| qrels.relevant_count(t) > 0)
        .collect();
    let rows = build_rows(&runs, qrels, &topic_ids, config.permutations, config.seed)?;
    let summary = PipelineSummary {
        seed: config.seed,
        topics_evaluated: topic_ids.len(),
        alphas,
        best_epoch: outcome.best_epoch,
        rows,
    };
    fs::write(&paths.report, format_report(&summary)).map_err(|e| Error::io(&paths.report, e))?;
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(&paths.summary, json).map_err(|e| Error::io(&paths.summary, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::RunEntry;

    #[test]
    fn comparisons_follow_the_table_layout() {
        assert_eq!(comparison_rows(1, 7), Vec::<usize>::new());
        assert_eq!(comparison_rows(2, 7), vec![1]);
        assert_eq!(comparison_rows(4, 7), vec![1]);
        assert_eq!(comparison_rows(5, 7), vec![1, 4]);
        assert_eq!(comparison_rows(6, 7), vec![1, 4]);
        assert_eq!(comparison_rows(7, 7), vec![1, 4, 6]);
    }

    fn run(topics: &[(&str, &[&str])]) -> Run {
        let mut r = Run::default();
        for (t, docs) in topics {
            r.topics.insert(
                t.to_string(),
                docs.iter()
                    .enumerate()
                    .map(|(i, d)| RunEntry {
                        doc_id: d.to_string(),
                        rank: i + 1,
                        score: -(i as f64),
                        tag: "x".into(),
                    })
                    .collect(),
            );
        }
        r
    }

    #[test]
    fn report_marks_significant_rows() {
        let mut qrels = Qrels::new();
        let topics: Vec<String> = (0..12).map(|i| format!("{i}")).collect();
        let good: Vec<(&str, &[&str])> = topics.iter().map(|t| (t.as_str(), &["r", "n"][..])).collect();
        let bad: Vec<(&str, &[&str])> = topics.iter().map(|t| (t.as_str(), &["n", "r"][..])).collect();
        for t in &topics {
            qrels.insert(t.clone(), "r", 1).unwrap();
            qrels.insert(t.clone(), "n", 0).unwrap();
        }
        let runs = vec![
            ("Base".to_string(), "base".to_string(), run(&bad)),
            ("Better".to_string(), "better".to_string(), run(&good)),
        ];
        let rows = build_rows(&runs, &qrels, &topics, 1000, 3).unwrap();
        assert_eq!(rows[0].mean(Metric::Ap), 0.5);
        assert_eq!(rows[1].mean(Metric::Ap), 1.0);
        assert_eq!(rows[1].significant_rows(Metric::Ap), vec![1]);
        assert!(rows[1].p_value(Metric::P30, 1).unwrap() > 0.5);
        let summary = PipelineSummary {
            seed: 3,
            topics_evaluated: 12,
            alphas: BTreeMap::new(),
            best_epoch: 1,
            rows,
        };
        let md = format_report(&summary);
        assert!(md.contains("| 2 | Better | 0.0667 | 0.0333 | 0.0100 | 1.0000<sup>1</sup> |"), "{md}");
    }

    #[test]
    fn yaml_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.yaml");
        fs::write(
            &path,
            "corpus: data/c.jsonl\ntopics_train: t1.tsv\ntopics_test: /abs/t2.tsv\nqrels: q.txt\noutput: out\n\
             seed: 9\ntrain:\n  max_epochs: 2\n  lexical:\n    filters: 8\n",
        )
        .unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.corpus, dir.path().join("data/c.jsonl"));
        assert_eq!(c.topics_test, PathBuf::from("/abs/t2.tsv"));
        assert_eq!((c.depth, c.seed, c.train.max_epochs, c.train.lexical.filters), (1000, 9, 2, 8));
        assert_eq!(c.train_config().seed, 9);
        assert!(c.validate().is_err());
        fs::write(&path, "corpus: c\nbogus: 1\n").unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }
}
