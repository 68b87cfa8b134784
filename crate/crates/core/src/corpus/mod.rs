//! Timestamped short-document corpora, TREC topics and relevance judgments.

mod tokenize;
mod trec;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::Deserialize;

pub use tokenize::tokenize;
pub use trec::{parse_qrels, parse_topics, read_qrels_str, read_topics_str, write_qrels, write_topics, Qrels, Topic};

use crate::error::{Error, Result};

/// Seconds in one day; all temporal math works in fractional days.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    /// Seconds since the epoch.
    pub timestamp: i64,
    pub text: String,
    pub tokens: Vec<String>,
    pub is_retweet: bool,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, timestamp: i64, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            doc_id: doc_id.into(),
            timestamp,
            tokens: tokenize(&text),
            text,
            is_retweet: false,
        }
    }

    pub fn with_retweet_flag(mut self, is_retweet: bool) -> Self {
        self.is_retweet = is_retweet;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" => Ok(Self::Jsonl),
            "tsv" => Ok(Self::Tsv),
            other => Err(Error::invalid(format!("unknown corpus format {other:?}"))),
        }
    }
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => Self::Tsv,
            _ => Self::Jsonl,
        }
    }
}

/// Counts of records that were skipped or overwritten during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub records: usize,
    pub duplicates: usize,
    pub malformed: usize,
}

/// Immutable collection of documents, addressed by position or by id.
#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a store; a later document with an already seen id replaces the
    /// earlier one in place. Returns the number of replacements.
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> (Self, usize) {
        let mut store = Self::new();
        let mut duplicates = 0;
        for doc in docs {
            if store.insert(doc) {
                duplicates += 1;
            }
        }
        (store, duplicates)
    }

    fn insert(&mut self, doc: Document) -> bool {
        match self.by_id.get(&doc.doc_id) {
            Some(&pos) => {
                self.docs[pos] = doc;
                true
            }
            None => {
                self.by_id.insert(doc.doc_id.clone(), self.docs.len());
                self.docs.push(doc);
                false
            }
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn min_timestamp(&self) -> Option<i64> {
        self.docs.iter().map(|d| d.timestamp).min()
    }

    /// Drops retweets: documents flagged as such or whose first token is `rt`.
    pub fn filter_retweets(&self) -> Self {
        let kept = self.docs.iter().filter(|d| !is_retweet(d)).cloned();
        Self::from_documents(kept).0
    }
}

pub fn is_retweet(doc: &Document) -> bool {
    doc.is_retweet || doc.tokens.first().is_some_and(|t| t == "rt")
}

/// Converts a timestamp to fractional days after `origin`.
pub fn to_days(timestamp: i64, origin: i64) -> f64 {
    (timestamp - origin) as f64 / SECONDS_PER_DAY
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Str(String),
    Int(i64),
}

#[derive(Deserialize)]
struct JsonRecord {
    id: RawId,
    timestamp: i64,
    text: String,
    #[serde(default)]
    retweet: bool,
}

/// Reads a JSONL or TSV corpus.
///
/// Malformed records are skipped and counted; more than half of the records
/// being malformed is an error. Blank lines are ignored.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<(DocumentStore, IngestReport)> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    let mut docs = Vec::new();

    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let parsed = match format {
            CorpusFormat::Jsonl => parse_json_record(line),
            CorpusFormat::Tsv => parse_tsv_record(line),
        };
        match parsed {
            Ok(doc) => docs.push(doc),
            Err(msg) => {
                report.malformed += 1;
                warn!("{}:{}: skipping malformed record: {msg}", path.display(), lineno + 1);
            }
        }
    }

    if report.malformed * 2 > report.records {
        return Err(Error::parse(
            path,
            0,
            format!("{} of {} records malformed", report.malformed, report.records),
        ));
    }

    let (store, duplicates) = DocumentStore::from_documents(docs);
    report.duplicates = duplicates;
    if duplicates > 0 {
        warn!("{}: {duplicates} duplicate document ids (last record kept)", path.display());
    }
    Ok((store, report))
}

fn parse_json_record(line: &str) -> std::result::Result<Document, String> {
    let rec: JsonRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.timestamp < 0 {
        return Err(format!("negative timestamp {}", rec.timestamp));
    }
    let id = match rec.id {
        RawId::Str(s) => s,
        RawId::Int(i) => i.to_string(),
    };
    if id.is_empty() {
        return Err("empty id".into());
    }
    Ok(Document::new(id, rec.timestamp, rec.text).with_retweet_flag(rec.retweet))
}

fn parse_tsv_record(line: &str) -> std::result::Result<Document, String> {
    let mut fields = line.splitn(3, '\t');
    let (Some(id), Some(ts), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
        return Err("expected id<TAB>timestamp<TAB>text".into());
    };
    let ts: i64 = ts.trim().parse().map_err(|e| format!("timestamp: {e}"))?;
    if ts < 0 {
        return Err(format!("negative timestamp {ts}"));
    }
    let id = id.trim();
    if id.is_empty() {
        return Err("empty id".into());
    }
    Ok(Document::new(id, ts, text))
}
