use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Per-topic rankings in TREC run form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub topics: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn from_lists<'a>(lists: impl IntoIterator<Item = &'a RankedList>, tag: &str) -> Self {
        let topics = lists
            .into_iter()
            .map(|l| {
                let entries = l
                    .entries
                    .iter()
                    .map(|e| RunEntry {
                        doc_id: e.doc_id.clone(),
                        rank: e.rank,
                        score: e.score,
                        tag: tag.to_string(),
                    })
                    .collect();
                (l.topic_id.clone(), entries)
            })
            .collect();
        Self { topics }
    }

    pub fn doc_ids(&self, topic: &str) -> Vec<&str> {
        self.topics
            .get(topic)
            .map(|es| es.iter().map(|e| e.doc_id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.topics.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_run(path: &Path) -> Result<Run> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_run_str(&content, path)
}

/// Parses `topic Q0 docid rank score tag` lines. Ranks of each topic must run
/// 1..n without gaps and no document may appear twice in a topic.
pub fn read_run_str(content: &str, origin: &Path) -> Result<Run> {
    let mut raw: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(Error::parse(origin, lineno, format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad score {:?}", fields[4])))?;
        raw.entry(fields[0].to_string()).or_default().push((
            lineno,
            RunEntry {
                doc_id: fields[2].to_string(),
                rank,
                score,
                tag: fields[5].to_string(),
            },
        ));
    }

    let mut run = Run::default();
    for (topic, mut entries) in raw {
        entries.sort_by_key(|(line, e)| (e.rank, *line));
        let mut seen = std::collections::HashSet::new();
        for (expected, (line, e)) in entries.iter().enumerate() {
            if e.rank != expected + 1 {
                return Err(Error::parse(
                    origin,
                    *line,
                    format!("topic {topic}: rank {} where {} was expected", e.rank, expected + 1),
                ));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::parse(origin, *line, format!("topic {topic}: duplicate document {}", e.doc_id)));
            }
        }
        run.topics.insert(topic, entries.into_iter().map(|(_, e)| e).collect());
    }
    Ok(run)
}

/// Renders a run sorted by topic then rank.
pub fn format_run(run: &Run) -> String {
    let mut out = String::new();
    for (topic, entries) in &run.topics {
        let mut sorted: Vec<&RunEntry> = entries.iter().collect();
        sorted.sort_by_key(|e| e.rank);
        for e in sorted {
            let _ = writeln!(out, "{topic} Q0 {} {} {} {}", e.doc_id, e.rank, e.score, e.tag);
        }
    }
    out
}

pub fn write_run(run: &Run, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format_run(run)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin() -> &'static Path {
        Path::new("run.txt")
    }

    #[test]
    fn single_line() {
        let run = read_run_str("31 Q0 d1 1 2.5 tag\n", origin()).unwrap();
        let e = &run.topics["31"][0];
        assert_eq!((e.doc_id.as_str(), e.rank, e.score, e.tag.as_str()), ("d1", 1, 2.5, "tag"));
    }

    #[test]
    fn rank_gap_is_an_error() {
        let err = read_run_str("1 Q0 a 1 2 x\n1 Q0 b 3 1 x\n", origin()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(read_run_str("1 Q0 a 1 2 x\n1 Q0 a 2 1 x\n", origin()).is_err());
        assert!(read_run_str("1 Q0 a 1\n", origin()).is_err());
    }

    #[test]
    fn write_sorts_by_topic_then_rank() {
        let run = read_run_str("2 Q0 b 2 1 x\n1 Q0 c 1 5 x\n2 Q0 a 1 3 x\n", origin()).unwrap();
        assert_eq!(format_run(&run), "1 Q0 c 1 5 x\n2 Q0 a 1 3 x\n2 Q0 b 2 1 x\n");
    }

    fn run_strategy() -> impl Strategy<Value = Run> {
        prop::collection::btree_map(
            "[0-9]{1,3}",
            prop::collection::vec((any::<f64>().prop_filter("finite", |v| v.is_finite()), "[a-z]{1,4}"), 1..8),
            0..5,
        )
        .prop_map(|topics| Run {
            topics: topics
                .into_iter()
                .map(|(t, rows)| {
                    let entries = rows
                        .into_iter()
                        .enumerate()
                        .map(|(i, (score, tag))| RunEntry {
                            doc_id: format!("doc{i}"),
                            rank: i + 1,
                            score,
                            tag,
                        })
                        .collect();
                    (t, entries)
                })
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn round_trip(run in run_strategy()) {
            let back = read_run_str(&format_run(&run), origin()).unwrap();
            prop_assert_eq!(back, run);
        }
    }
}
