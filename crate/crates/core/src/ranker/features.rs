use std::collections::{BTreeMap, BTreeSet};

/// Four word-overlap measures between a query and a document:
/// overlap count over query-set size, over doc-set size, then the same two
/// with idf-weighted mass. Zero denominators yield zero.
pub fn overlap_features(query: &[String], doc: &[String], idf: &BTreeMap<String, f64>) -> [f64; 4] {
    let q: BTreeSet<&str> = query.iter().map(String::as_str).collect();
    let d: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
    let weight = |t: &&str| idf.get(*t).copied().unwrap_or(0.0);
    let common: Vec<&str> = q.intersection(&d).copied().collect();
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };

    let overlap = common.len() as f64;
    let overlap_idf: f64 = common.iter().map(weight).sum();
    let q_idf: f64 = q.iter().map(weight).sum();
    let d_idf: f64 = d.iter().map(weight).sum();
    [
        ratio(overlap, q.len() as f64),
        ratio(overlap, d.len() as f64),
        ratio(overlap_idf, q_idf),
        ratio(overlap_idf, d_idf),
    ]
}
