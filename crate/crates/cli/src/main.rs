//! Command-line driver: every pipeline stage as a subcommand that reads and
//! writes plain files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use chronorank::corpus::{ingest_corpus, parse_qrels, parse_topics, CorpusFormat, Topic};
use chronorank::eval::{evaluate_topics, randomization_test, read_run, union_topics, write_run, Metric, Run};
use chronorank::kde::{fit_topic, rerank_kde, WeightScheme, DEFAULT_GAMMA};
use chronorank::pipeline::{format_report, run_pipeline, PipelineConfig};
use chronorank::ranker::ModelKind;
use chronorank::retrieval::{search, InvertedIndex, RankedList, DEFAULT_DEPTH, DEFAULT_MU};
use chronorank::synth::{generate, write_synth, SynthConfig};
use chronorank::temporal::{rerank_lexical, rerank_neural};
use chronorank::train::{load_models, save_models, train, write_report, ModelManifest};

#[derive(Debug, Parser)]
#[command(name = "chronorank", version, about = "Temporal reranking for timestamped short-document search")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an inverted index from a JSONL or TSV corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query-likelihood retrieval for every topic.
    Search {
        #[command(flatten)]
        collection: Collection,
        #[arg(long)]
        topics: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long, default_value_t = DEFAULT_MU)]
        mu: f64,
        #[arg(long, default_value = "ql")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerank a run with a per-topic weighted kernel density over time.
    RerankKde {
        #[command(flatten)]
        collection: Collection,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "uniform")]
        scheme: WeightScheme,
        /// Judgments; required by the oracle scheme.
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        /// Bandwidth in days; Silverman's rule when omitted.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage training on the training topics of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Model directory; defaults to `<output>/model`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerank a run with trained lexical and temporal models.
    RerankNeural {
        #[command(flatten)]
        collection: Collection,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Skip the temporal model and rank by the lexical model alone.
        #[arg(long)]
        lexical_only: bool,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-topic and mean metrics of a run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "ap,p15,p30,p100")]
        metrics: String,
        /// Second run to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, requires = "compare")]
        sigtest: bool,
        #[command(flatten)]
        perm: Permutations,
        /// Write the summary JSON here instead of standard output.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Paired randomization test between two runs on one metric.
    Sigtest {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "p30")]
        metric: Metric,
        #[command(flatten)]
        perm: Permutations,
    },
    /// Generate a synthetic corpus, topics, judgments and embeddings.
    Synth {
        /// YAML generator settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage and write a results table.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
}

/// A saved index or a corpus to index on the fly.
#[derive(Debug, Args)]
struct Collection {
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    index: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

impl Collection {
    fn load(&self) -> Result<InvertedIndex> {
        match (&self.index, &self.corpus) {
            (Some(path), _) => Ok(InvertedIndex::load(path)?),
            (None, Some(path)) => build_index(path, None),
            (None, None) => bail!("either --index or --corpus is required"),
        }
    }
}

#[derive(Debug, Args)]
struct Permutations {
    #[arg(long, default_value_t = chronorank::eval::DEFAULT_PERMUTATIONS)]
    permutations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn build_index(corpus: &Path, format: Option<CorpusFormat>) -> Result<InvertedIndex> {
    let format = format.unwrap_or_else(|| CorpusFormat::from_path(corpus));
    let (store, report) = ingest_corpus(corpus, format)?;
    log::info!(
        "{}: {} documents, {} malformed, {} duplicates",
        corpus.display(),
        store.len(),
        report.malformed,
        report.duplicates
    );
    Ok(InvertedIndex::build(&store)?)
}

/// Ranked lists of `run` with timestamps from the index, in topic order.
fn lists_of(run: &Run, index: &InvertedIndex) -> Result<Vec<RankedList>> {
    run.topics
        .iter()
        .map(|(topic, entries)| {
            let scored: Vec<(String, f64)> = entries.iter().map(|e| (e.doc_id.clone(), e.score)).collect();
            Ok(index.ranked_list(topic, &scored)?)
        })
        .collect()
}

fn topic_map(topics: Vec<Topic>) -> BTreeMap<String, Topic> {
    topics.into_iter().map(|t| (t.topic_id.clone(), t)).collect()
}

fn load_pipeline_config(path: &Path, seed: Option<u64>, output: Option<PathBuf>, max_epochs: Option<usize>) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(output) = output {
        config.output = output;
    }
    if let Some(n) = max_epochs {
        config.train.max_epochs = n;
    }
    Ok(config)
}

fn format_eval(per_topic: &[(String, Vec<(Metric, f64)>)], means: &[(Metric, f64)]) -> String {
    let mut out = String::new();
    for (topic, values) in per_topic {
        for (m, v) in values {
            let _ = writeln!(out, "{topic}\t{}\t{v:.4}", m.name());
        }
    }
    for (m, v) in means {
        let _ = writeln!(out, "all\t{}\t{v:.4}", m.name());
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { corpus, format, out } => {
            let index = build_index(&corpus, format)?;
            index.save(&out)?;
            println!("indexed {} documents into {}", index.num_docs(), out.display());
        }
        Command::Search {
            collection,
            topics,
            depth,
            mu,
            tag,
            out,
        } => {
            if depth == 0 {
                bail!("--depth must be at least 1");
            }
            let index = collection.load()?;
            let topics = parse_topics(&topics)?;
            let lists: Vec<RankedList> = topics.iter().map(|t| search(&index, t, depth, mu)).collect();
            write_run(&Run::from_lists(&lists, &tag), &out)?;
        }
        Command::RerankKde {
            collection,
            run,
            scheme,
            qrels,
            gamma,
            bandwidth,
            alpha,
            tag,
            out,
        } => {
            if !(0.0..=1.0).contains(&alpha) {
                bail!("--alpha must lie in [0, 1]");
            }
            let index = collection.load()?;
            let qrels = qrels.map(|p| parse_qrels(&p)).transpose()?;
            if scheme == WeightScheme::Oracle && qrels.is_none() {
                bail!("the oracle scheme needs --qrels");
            }
            let origin = index.min_timestamp();
            let mut reranked = Vec::new();
            for list in lists_of(&read_run(&run)?, &index)? {
                let model = fit_topic(&list, scheme, gamma, qrels.as_ref(), bandwidth, origin)?;
                reranked.push(rerank_kde(&list, &model, alpha, origin));
            }
            let tag = tag.unwrap_or_else(|| format!("kde-{}", scheme.name()));
            write_run(&Run::from_lists(&reranked, &tag), &out)?;
        }
        Command::Train {
            config,
            model,
            seed,
            max_epochs,
            out,
        } => {
            let mut config = load_pipeline_config(&config, seed, None, max_epochs)?;
            if let Some(kind) = model {
                config.train.lexical.model = kind;
            }
            let train_config = config.train_config();
            train_config.validate()?;
            let index = build_index(&config.corpus, None)?;
            let topics = parse_topics(&config.topics_train)?;
            let qrels = parse_qrels(&config.qrels)?;
            let outcome = train(&train_config, &index, &topics, &qrels, config.embeddings.as_deref())?;
            let dir = out.unwrap_or_else(|| config.output.join("model"));
            let manifest = ModelManifest::new(&train_config, &topics, config.embeddings.as_deref(), outcome.best_epoch);
            save_models(&dir, &manifest, &outcome.lexical, &outcome.temporal)?;
            write_report(&outcome.report, &dir.join("training.jsonl"))?;
            println!("best dev epoch {} of {}; model saved to {}", outcome.best_epoch, outcome.report.len(), dir.display());
        }
        Command::RerankNeural {
            collection,
            model_dir,
            topics,
            run,
            lexical_only,
            tag,
            out,
        } => {
            let index = collection.load()?;
            let (manifest, lexical, temporal) = load_models(&model_dir, &index)?;
            let topics = topic_map(parse_topics(&topics)?);
            let mut reranked = Vec::new();
            for list in lists_of(&read_run(&run)?, &index)? {
                let topic = topics
                    .get(&list.topic_id)
                    .with_context(|| format!("run topic {} is not in the topics file", list.topic_id))?;
                reranked.push(if lexical_only {
                    rerank_lexical(&lexical, &list, topic, &index)?
                } else {
                    rerank_neural(&lexical, &temporal, &list, topic, &index)?
                });
            }
            let kind = manifest.config.lexical.model.name();
            let tag = tag.unwrap_or_else(|| if lexical_only { kind.to_string() } else { format!("{kind}-temporal") });
            write_run(&Run::from_lists(&reranked, &tag), &out)?;
        }
        Command::Eval {
            run,
            qrels,
            metrics,
            compare,
            sigtest,
            perm,
            summary,
        } => {
            let metrics = Metric::parse_list(&metrics)?;
            let qrels = parse_qrels(&qrels)?;
            let run = read_run(&run)?;
            let other = compare.map(|p| read_run(&p)).transpose()?;
            let topics = match &other {
                Some(o) => union_topics(&run, o),
                None => run.topics.keys().cloned().collect(),
            };
            let eval = evaluate_topics(&run, &qrels, &topics);
            let per_topic: Vec<(String, Vec<(Metric, f64)>)> = eval
                .per_topic
                .iter()
                .map(|t| (t.topic_id.clone(), metrics.iter().map(|&m| (m, t.get(m))).collect()))
                .collect();
            let means: Vec<(Metric, f64)> = metrics.iter().map(|&m| (m, eval.mean(m))).collect();
            print!("{}", format_eval(&per_topic, &means));

            let mut json = serde_json::Map::new();
            json.insert("topics".into(), eval.per_topic.len().into());
            json.insert(
                "means".into(),
                means.iter().map(|(m, v)| (m.name().to_string(), (*v).into())).collect::<serde_json::Map<_, _>>().into(),
            );
            if let Some(other) = &other {
                let other_eval = evaluate_topics(other, &qrels, &topics);
                let mut cmp = serde_json::Map::new();
                for &m in &metrics {
                    let mut entry = serde_json::Map::new();
                    entry.insert("other_mean".into(), other_eval.mean(m).into());
                    if sigtest {
                        let r = randomization_test(&eval.values(m), &other_eval.values(m), perm.permutations, perm.seed)?;
                        entry.insert("p_value".into(), r.p_value.into());
                        entry.insert("mean_difference".into(), r.mean_difference.into());
                    }
                    cmp.insert(m.name().to_string(), entry.into());
                }
                json.insert("compare".into(), cmp.into());
            }
            let text = serde_json::to_string_pretty(&json)? + "\n";
            match summary {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Sigtest {
            run_a,
            run_b,
            qrels,
            metric,
            perm,
        } => {
            let qrels = parse_qrels(&qrels)?;
            let (a, b) = (read_run(&run_a)?, read_run(&run_b)?);
            let topics = union_topics(&a, &b);
            let (ea, eb) = (evaluate_topics(&a, &qrels, &topics), evaluate_topics(&b, &qrels, &topics));
            let r = randomization_test(&ea.values(metric), &eb.values(metric), perm.permutations, perm.seed)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Synth { config, seed, out } => {
            let mut config = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_yaml::from_str::<SynthConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let data = generate(&config)?;
            let paths = write_synth(&data, &out)?;
            println!(
                "{} documents, {} topics written to {}",
                data.documents.len(),
                data.topics.len(),
                paths.corpus.parent().unwrap_or(Path::new(".")).display()
            );
        }
        Command::Pipeline {
            config,
            seed,
            output,
            max_epochs,
        } => {
            let config = load_pipeline_config(&config, seed, output, max_epochs)?;
            let summary = run_pipeline(&config)?;
            print!("{}", format_report(&summary));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
