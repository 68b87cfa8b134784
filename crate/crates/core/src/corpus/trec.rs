use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::DateTime;

use super::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub topic_id: String,
    pub query_tokens: Vec<String>,
    /// Seconds since the epoch, when the topic carries one.
    pub query_time: Option<i64>,
}

/// Graded relevance judgments keyed by topic, then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u8>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment. Grades outside `{0, 1, 2}` are rejected.
    pub fn insert(&mut self, topic: impl Into<String>, doc: impl Into<String>, grade: u8) -> Result<()> {
        if grade > 2 {
            return Err(Error::invalid(format!("relevance grade {grade} outside 0..=2")));
        }
        self.judgments
            .entry(topic.into())
            .or_default()
            .insert(doc.into(), grade);
        Ok(())
    }

    pub fn grade(&self, topic: &str, doc: &str) -> Option<u8> {
        self.judgments.get(topic)?.get(doc).copied()
    }

    /// Binarized relevance: both non-zero grades count as relevant.
    pub fn is_relevant(&self, topic: &str, doc: &str) -> bool {
        self.grade(topic, doc).is_some_and(|g| g >= 1)
    }

    pub fn is_judged(&self, topic: &str, doc: &str) -> bool {
        self.grade(topic, doc).is_some()
    }

    pub fn relevant_count(&self, topic: &str) -> usize {
        self.judgments
            .get(topic)
            .map_or(0, |docs| docs.values().filter(|&&g| g >= 1).count())
    }

    pub fn topic(&self, topic: &str) -> Option<&BTreeMap<String, u8>> {
        self.judgments.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All judgments in `topic doc grade` order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u8)> {
        self.judgments.iter().flat_map(|(t, docs)| {
            docs.iter().map(move |(d, &g)| (t.as_str(), d.as_str(), g))
        })
    }
}

pub fn parse_qrels(path: &Path) -> Result<Qrels> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_qrels_str(&content, path)
}

/// Parses `topic iteration docid grade` lines; `origin` names the source in errors.
pub fn read_qrels_str(content: &str, origin: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [topic, _iter, doc, grade] = fields[..] else {
            return Err(Error::parse(origin, lineno, format!("expected 4 fields, got {}", fields.len())));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad grade {grade:?}")))?;
        if !(0..=2).contains(&grade) {
            return Err(Error::parse(origin, lineno, format!("grade {grade} outside 0..=2")));
        }
        qrels.insert(topic, doc, grade as u8)?;
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (topic, doc, grade) in qrels.iter() {
        let _ = writeln!(out, "{topic} 0 {doc} {grade}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn parse_topics(path: &Path) -> Result<Vec<Topic>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_topics_str(&content, path)
}

/// Parses either TREC `<top>` blocks or `id<TAB>query[<TAB>query_time]` lines.
pub fn read_topics_str(content: &str, origin: &Path) -> Result<Vec<Topic>> {
    if content.contains("<top>") {
        read_tagged_topics(content, origin)
    } else {
        read_tabbed_topics(content, origin)
    }
}

fn read_tabbed_topics(content: &str, origin: &Path) -> Result<Vec<Topic>> {
    let mut topics = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or("").trim();
        let query = fields
            .next()
            .ok_or_else(|| Error::parse(origin, lineno, "expected id<TAB>query"))?;
        let query_time = match fields.next().map(str::trim) {
            None | Some("") => None,
            Some(t) => Some(
                t.parse::<i64>()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad query time {t:?}")))?,
            ),
        };
        topics.push(make_topic(id, query, query_time, origin, lineno)?);
    }
    Ok(topics)
}

fn read_tagged_topics(content: &str, origin: &Path) -> Result<Vec<Topic>> {
    let mut topics = Vec::new();
    let mut rest = content;
    while let Some(start) = rest.find("<top>") {
        let lineno = line_of(content, content.len() - rest.len() + start);
        let block_end = rest[start..]
            .find("</top>")
            .ok_or_else(|| Error::parse(origin, lineno, "unterminated <top> block"))?;
        let block = &rest[start..start + block_end];
        rest = &rest[start + block_end + "</top>".len()..];

        let num = tag_body(block, "num")
            .ok_or_else(|| Error::parse(origin, lineno, "missing <num>"))?;
        let id = num.trim().trim_start_matches("Number:").trim();
        let title = tag_body(block, "title")
            .ok_or_else(|| Error::parse(origin, lineno, "missing <title>"))?;
        let query_time = match tag_body(block, "querytime").map(str::trim) {
            None | Some("") => None,
            Some(t) => Some(parse_query_time(t).ok_or_else(|| {
                Error::parse(origin, lineno, format!("bad <querytime> {t:?}"))
            })?),
        };
        topics.push(make_topic(id, title, query_time, origin, lineno)?);
    }
    Ok(topics)
}

fn make_topic(id: &str, query: &str, query_time: Option<i64>, origin: &Path, lineno: usize) -> Result<Topic> {
    if id.is_empty() {
        return Err(Error::parse(origin, lineno, "empty topic id"));
    }
    let query_tokens = tokenize(query);
    if query_tokens.is_empty() {
        return Err(Error::parse(origin, lineno, format!("topic {id} has an empty query")));
    }
    Ok(Topic {
        topic_id: id.to_string(),
        query_tokens,
        query_time,
    })
}

/// Text between `<tag>` and `</tag>`, or up to the next `<` when unclosed.
fn tag_body<'a>(block: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let start = block.find(&open)? + open.len();
    let tail = &block[start..];
    let end = tail.find('<').unwrap_or(tail.len());
    Some(&tail[..end])
}

fn line_of(content: &str, byte: usize) -> usize {
    content[..byte].matches('\n').count() + 1
}

/// Accepts epoch seconds or the `Tue Feb 08 12:30:27 +0000 2011` form.
fn parse_query_time(t: &str) -> Option<i64> {
    if let Ok(secs) = t.parse::<i64>() {
        return Some(secs);
    }
    DateTime::parse_from_str(t, "%a %b %d %H:%M:%S %z %Y")
        .ok()
        .map(|dt| dt.timestamp())
}

pub fn write_topics(topics: &[Topic], path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in topics {
        let _ = write!(out, "{}\t{}", t.topic_id, t.query_tokens.join(" "));
        if let Some(qt) = t.query_time {
            let _ = write!(out, "\t{qt}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn qrels_line_and_binarization() {
        let q = read_qrels_str("31 0 d7 2\n31 0 d8 0\n", p()).unwrap();
        assert_eq!(q.grade("31", "d7"), Some(2));
        assert!(q.is_relevant("31", "d7"));
        assert!(!q.is_relevant("31", "d8"));
        assert!(q.is_judged("31", "d8"));
        assert!(!q.is_judged("31", "d9"));
        assert_eq!(q.relevant_count("31"), 1);
    }

    #[test]
    fn qrels_out_of_range_grade_reports_line() {
        let err = read_qrels_str("31 0 d1 1\n31 0 d7 3\n", p()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_qrels_str("31 0 d7\n", p()).is_err());
        assert!(read_qrels_str("31 0 d7 -1\n", p()).is_err());
    }

    #[test]
    fn tabbed_topic_line() {
        let topics = read_topics_str("31\tegyptian protests\n", p()).unwrap();
        assert_eq!(
            topics,
            vec![Topic {
                topic_id: "31".into(),
                query_tokens: vec!["egyptian".into(), "protests".into()],
                query_time: None
            }]
        );
        let topics = read_topics_str("7\tq\t1296000000\n", p()).unwrap();
        assert_eq!(topics[0].query_time, Some(1_296_000_000));
        assert!(read_topics_str("8\t!!!\n", p()).is_err());
    }

    #[test]
    fn tagged_topic_blocks() {
        let src = "<top>\n<num> Number: MB001 </num>\n<title> BBC World Service staff cuts </title>\n\
                   <querytime> Tue Feb 08 12:30:27 +0000 2011 </querytime>\n</top>\n\n\
                   <top>\n<num> Number: MB002 </num>\n<title> 2022 FIFA soccer </title>\n</top>\n";
        let topics = read_topics_str(src, p()).unwrap();
        assert_eq!(topics.len(), 2);
        assert_eq!(topics[0].topic_id, "MB001");
        assert_eq!(topics[0].query_tokens, vec!["bbc", "world", "service", "staff", "cuts"]);
        assert_eq!(topics[0].query_time, Some(1_297_168_227));
        assert_eq!(topics[1].query_time, None);
        assert!(read_topics_str("<top><num>1</num>", p()).is_err());
    }

    fn qrels_strategy() -> impl Strategy<Value = Qrels> {
        prop::collection::vec(("[0-9]{1,3}", "[a-z0-9]{1,6}", 0u8..=2), 0..40).prop_map(|rows| {
            let mut q = Qrels::new();
            for (t, d, g) in rows {
                q.insert(t, d, g).unwrap();
            }
            q
        })
    }

    proptest! {
        #[test]
        fn qrels_round_trip(q in qrels_strategy()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("qrels");
            write_qrels(&q, &path).unwrap();
            prop_assert_eq!(parse_qrels(&path).unwrap(), q);
        }
    }
}
