//! Rank fusion of the Phase-II lists into one final ranking.
//!
//! | scheme         | per-candidate score                       | better |
//! |----------------|-------------------------------------------|--------|
//! | `wavg_rank`    | `sum w_i * rank_i`                        | lower  |
//! | `harm_mean`    | `sum w_i / sum (w_i / rank_i)`            | lower  |
//! | `wavg_minmax`  | `sum w_i * (x - min) / (max - min)`       | higher |
//! | `wavg_zscore`  | `sum w_i * (x - mean) / std`              | higher |
//! | `wavg_softmax` | `sum w_i * softmax(x)`                    | higher |
//! | `borda`        | `sum (n - rank_i)`                        | higher |
//! | `rrf`          | `sum 1 / (k + rank_i)`                    | higher |
//!
//! Ties fall back to Phase-I similarity (descending), then posting id.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rerank::{tie_break_cmp, Method, RankEntry, RankList};

pub const DEFAULT_RRF_K: u32 = 60;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
/// Fused scores are snapped to this grid before ordering so that rounding
/// noise in weighted sums cannot split exact ties.
const SCORE_GRID: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("no input lists")]
    NoLists,
    #[error("{lists} lists but {weights} weights")]
    ArityMismatch { lists: usize, weights: usize },
    #[error("weights must be non-negative and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("rrf_k must be at least 1")]
    BadRrfK,
    #[error("candidate sets differ between input lists")]
    CandidateMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    WavgRank,
    HarmMean,
    WavgMinmax,
    WavgZscore,
    WavgSoftmax,
    Borda,
    Rrf,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::WavgRank,
        Scheme::HarmMean,
        Scheme::WavgMinmax,
        Scheme::WavgZscore,
        Scheme::WavgSoftmax,
        Scheme::Borda,
        Scheme::Rrf,
    ];

    fn lower_is_better(self) -> bool {
        matches!(self, Scheme::WavgRank | Scheme::HarmMean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub scheme: Scheme,
    pub weights: Vec<f64>,
    pub rrf_k: u32,
    /// Fuse the Phase-I list as an extra leading input (weights then need
    /// one more entry).
    pub include_phase1: bool,
}

impl Default for EnsembleConfig {
    /// Weighted average rank over (embed2, soft_align, llm_pairwise) at
    /// 0.60 / 0.25 / 0.15.
    fn default() -> Self {
        EnsembleConfig {
            scheme: Scheme::WavgRank,
            weights: vec![0.60, 0.25, 0.15],
            rrf_k: DEFAULT_RRF_K,
            include_phase1: false,
        }
    }
}

impl EnsembleConfig {
    pub fn new(scheme: Scheme, weights: Vec<f64>) -> Self {
        EnsembleConfig { scheme, weights, ..EnsembleConfig::default() }
    }

    /// The sweep of aggregation settings evaluated side by side.
    pub fn sweep() -> Vec<(String, EnsembleConfig)> {
        vec![
            ("WAvg Rank (60/25/15)".into(), EnsembleConfig::new(Scheme::WavgRank, vec![0.60, 0.25, 0.15])),
            ("HarmMean (75/15/10)".into(), EnsembleConfig::new(Scheme::HarmMean, vec![0.75, 0.15, 0.10])),
            ("WAvg MinMax (90/5/5)".into(), EnsembleConfig::new(Scheme::WavgMinmax, vec![0.90, 0.05, 0.05])),
            ("WAvg Z-Score (80/10/10)".into(), EnsembleConfig::new(Scheme::WavgZscore, vec![0.80, 0.10, 0.10])),
            ("WAvg Softmax (70/15/15)".into(), EnsembleConfig::new(Scheme::WavgSoftmax, vec![0.70, 0.15, 0.15])),
            ("Borda Count".into(), EnsembleConfig::new(Scheme::Borda, vec![1.0 / 3.0; 3])),
            ("Reciprocal Ranking (k=60)".into(), EnsembleConfig::new(Scheme::Rrf, vec![1.0 / 3.0; 3])),
        ]
    }

    pub fn validate(&self, lists: usize) -> Result<(), EnsembleError> {
        if self.weights.len() != lists {
            return Err(EnsembleError::ArityMismatch { lists, weights: self.weights.len() });
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(EnsembleError::BadWeights(sum));
        }
        if self.rrf_k < 1 {
            return Err(EnsembleError::BadRrfK);
        }
        Ok(())
    }
}

/// Per-list view aligned to a shared candidate order.
struct Aligned {
    ranks: Vec<f64>,
    scores: Vec<f64>,
}

fn align(list: &RankList, position: &HashMap<&str, usize>) -> Result<Aligned, EnsembleError> {
    let n = position.len();
    if list.len() != n {
        return Err(EnsembleError::CandidateMismatch);
    }
    let mut ranks = vec![f64::NAN; n];
    let mut scores = vec![f64::NAN; n];
    for e in &list.entries {
        let &i = position.get(e.posting_id.as_str()).ok_or(EnsembleError::CandidateMismatch)?;
        if !ranks[i].is_nan() {
            return Err(EnsembleError::CandidateMismatch);
        }
        ranks[i] = e.rank as f64;
        scores[i] = e.raw_score;
    }
    Ok(Aligned { ranks, scores })
}

fn min_max(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![0.5; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

fn z_score(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / std).collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fused score per candidate, oriented so that higher is better.
fn fused_scores(aligned: &[Aligned], config: &EnsembleConfig, n: usize) -> Vec<f64> {
    let weighted = |transform: &dyn Fn(&Aligned) -> Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; n];
        for (list, w) in aligned.iter().zip(&config.weights) {
            for (a, v) in acc.iter_mut().zip(transform(list)) {
                *a += w * v;
            }
        }
        acc
    };
    let raw = match config.scheme {
        Scheme::WavgRank => weighted(&|l| l.ranks.clone()),
        Scheme::HarmMean => {
            let denom = weighted(&|l| l.ranks.iter().map(|r| 1.0 / r).collect());
            let total: f64 = config.weights.iter().sum();
            denom.into_iter().map(|d| if d > 0.0 { total / d } else { f64::INFINITY }).collect()
        }
        Scheme::WavgMinmax => weighted(&|l| min_max(&l.scores)),
        Scheme::WavgZscore => weighted(&|l| z_score(&l.scores)),
        Scheme::WavgSoftmax => weighted(&|l| softmax(&l.scores)),
        Scheme::Borda => (0..n)
            .map(|i| aligned.iter().map(|l| n as f64 - l.ranks[i]).sum())
            .collect(),
        Scheme::Rrf => {
            let k = config.rrf_k as f64;
            (0..n).map(|i| aligned.iter().map(|l| 1.0 / (k + l.ranks[i])).sum()).collect()
        }
    };
    raw.into_iter()
        .map(|s| {
            let oriented = if config.scheme.lower_is_better() { -s } else { s };
            snap(oriented)
        })
        .collect()
}

fn snap(x: f64) -> f64 {
    if x.is_finite() {
        (x / SCORE_GRID).round() * SCORE_GRID
    } else {
        x
    }
}

/// Fuses `lists` (and `phase1` when configured) into a [`Method::Ensemble`]
/// list. `raw_score` holds the oriented fused score, so higher is always
/// better; rank-average schemes therefore report negated averages.
pub fn fuse_rankings(
    lists: &[RankList],
    phase1: &RankList,
    config: &EnsembleConfig,
) -> Result<RankList, EnsembleError> {
    let inputs: Vec<&RankList> = if config.include_phase1 {
        std::iter::once(phase1).chain(lists).collect()
    } else {
        lists.iter().collect()
    };
    if inputs.is_empty() {
        return Err(EnsembleError::NoLists);
    }
    config.validate(inputs.len())?;

    let ids: Vec<&str> = phase1.ids();
    let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    if position.len() != ids.len() {
        return Err(EnsembleError::CandidateMismatch);
    }
    let aligned = inputs
        .iter()
        .map(|l| align(l, &position))
        .collect::<Result<Vec<_>, _>>()?;
    let phase1_sim = align(phase1, &position)?.scores;
    let scores = fused_scores(&aligned, config, ids.len());

    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| tie_break_cmp((scores[a], phase1_sim[a], ids[a]), (scores[b], phase1_sim[b], ids[b])));
    Ok(RankList {
        method: Method::Ensemble,
        entries: order
            .into_iter()
            .enumerate()
            .map(|(rank, i)| RankEntry { posting_id: ids[i].to_string(), raw_score: scores[i], rank: rank + 1 })
            .collect(),
    })
}
