//! Temporal reranking with a weighted Gaussian kernel density over result
//! timestamps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{to_days, Qrels};
use crate::error::{Error, Result};
use crate::eval::precision_at_k;
use crate::retrieval::RankedList;

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const MIN_BANDWIDTH: f64 = 1e-3;
/// Added to the density before taking its log.
pub const DENSITY_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    Uniform,
    Score,
    Rank,
    Oracle,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 4] = [Self::Uniform, Self::Score, Self::Rank, Self::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Score => "score",
            Self::Rank => "rank",
            Self::Oracle => "oracle",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown weighting scheme {s:?}")))
    }
}

/// Feedback weights for the entries of `list`, summing to one.
///
/// `gamma` is the geometric decay of the rank scheme. The oracle scheme needs
/// `qrels` and spreads its mass over the judged-relevant entries.
pub fn estimate_weights(list: &RankedList, scheme: WeightScheme, gamma: f64, qrels: Option<&Qrels>) -> Result<Vec<f64>> {
    if list.is_empty() {
        return Err(Error::invalid(format!("topic {}: empty ranked list", list.topic_id)));
    }
    let n = list.len();
    let raw: Vec<f64> = match scheme {
        WeightScheme::Uniform => vec![1.0; n],
        WeightScheme::Score => {
            let max = list.entries.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max);
            list.entries.iter().map(|e| (e.score - max).exp()).collect()
        }
        WeightScheme::Rank => {
            if !(0.0..1.0).contains(&gamma) {
                return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
            }
            list.entries
                .iter()
                .map(|e| (1.0 - gamma).powi(e.rank as i32 - 1))
                .collect()
        }
        WeightScheme::Oracle => {
            let qrels = qrels.ok_or_else(|| Error::invalid("the oracle scheme requires relevance judgments"))?;
            let raw: Vec<f64> = list
                .entries
                .iter()
                .map(|e| f64::from(u8::from(qrels.is_relevant(&list.topic_id, &e.doc_id))))
                .collect();
            if raw.iter().all(|&w| w == 0.0) {
                return Err(Error::OracleDegenerate(list.topic_id.clone()));
            }
            raw
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted Gaussian kernel density over time in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    /// `(time, weight)` pairs with positive weights summing to one.
    pub samples: Vec<(f64, f64)>,
    pub bandwidth: f64,
}

/// `max(1.06·σ_w·n^(−1/5), 1e-3)` over the positively weighted samples.
pub fn silverman_bandwidth(times: &[f64], weights: &[f64]) -> f64 {
    let mut n = 0usize;
    let mut mean = 0.0;
    for (&t, &w) in times.iter().zip(weights) {
        if w > 0.0 {
            n += 1;
            mean += w * t;
        }
    }
    if n == 0 {
        return MIN_BANDWIDTH;
    }
    let var: f64 = times
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&t, &w)| w * (t - mean).powi(2))
        .sum();
    (1.06 * var.sqrt() * (n as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Fits a density to `times` with `weights`; without `bandwidth` the
/// Silverman rule is used. Zero-weight samples are dropped.
pub fn fit_kde(times: &[f64], weights: &[f64], bandwidth: Option<f64>) -> Result<KdeModel> {
    if times.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} timestamps but {} weights",
            times.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {total}, not 1")));
    }
    let samples: Vec<(f64, f64)> = times
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&t, &w)| (t, w))
        .collect();
    if samples.is_empty() {
        return Err(Error::invalid("no samples with positive weight"));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::invalid(format!("bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(times, weights),
    };
    Ok(KdeModel { samples, bandwidth: h })
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl KdeModel {
    /// `f(t) = Σ w_i·φ((t − t_i)/h)/h`
    pub fn density(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        self.samples
            .iter()
            .map(|&(ti, w)| {
                let z = (t - ti) / h;
                w * INV_SQRT_2PI * (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            / h
    }

    pub fn support(&self) -> (f64, f64) {
        let lo = self.samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = self.samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

pub fn density(model: &KdeModel, t: f64) -> f64 {
    model.density(t)
}

/// Log-density of each entry's time, in days since `origin`.
pub fn log_densities(list: &RankedList, model: &KdeModel, origin: i64) -> Vec<f64> {
    list.entries
        .iter()
        .map(|e| (model.density(to_days(e.timestamp, origin)) + DENSITY_EPS).ln())
        .collect()
}

/// Interpolates lexical and temporal evidence:
/// `(1 − α)·s + α·log(f(t) + ε)`. Ties keep the input order.
pub fn rerank_kde(list: &RankedList, model: &KdeModel, alpha: f64, origin: i64) -> RankedList {
    let logf = log_densities(list, model, origin);
    interpolate(list, &logf, alpha)
}

pub(crate) fn interpolate(list: &RankedList, log_density: &[f64], alpha: f64) -> RankedList {
    let scores: Vec<f64> = list
        .entries
        .iter()
        .zip(log_density)
        .map(|(e, &lf)| (1.0 - alpha) * e.score + alpha * lf)
        .collect();
    list.rescored(&scores)
}

/// Fits the feedback density of one topic from its own ranked list.
pub fn fit_topic(
    list: &RankedList,
    scheme: WeightScheme,
    gamma: f64,
    qrels: Option<&Qrels>,
    bandwidth: Option<f64>,
    origin: i64,
) -> Result<KdeModel> {
    let weights = estimate_weights(list, scheme, gamma, qrels)?;
    let times: Vec<f64> = list.entries.iter().map(|e| to_days(e.timestamp, origin)).collect();
    fit_kde(&times, &weights, bandwidth)
}

/// The interpolation grid `{0.0, 0.1, …, 1.0}`.
pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Picks the grid value maximizing mean P30 over `topics`, each given as a
/// ranked list with its per-entry log-densities. Ties go to the smaller alpha.
pub fn tune_alpha(topics: &[(RankedList, Vec<f64>)], qrels: &Qrels, grid: &[f64]) -> (f64, f64) {
    let mut best = (grid.first().copied().unwrap_or(0.0), f64::NEG_INFINITY);
    for &alpha in grid {
        let mean = if topics.is_empty() {
            0.0
        } else {
            topics
                .iter()
                .map(|(list, logf)| {
                    let reranked = interpolate(list, logf, alpha);
                    precision_at_k(&reranked, qrels, 30)
                })
                .sum::<f64>()
                / topics.len() as f64
        };
        if mean > best.1 {
            best = (alpha, mean);
        }
    }
    best
}
