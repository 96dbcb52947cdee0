//! Ranking metrics over held-out group-item interactions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerOutputs, Variant};
use crate::numerics::{dot, RngStream};
use crate::training::{sample_negatives, Split};

pub const NUM_EVAL_NEGATIVES: usize = 100;
pub const DEFAULT_CUTOFFS: [usize; 2] = [5, 10];

/// One held-out item and the negatives it is ranked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub group: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Evaluation cases for a split. Sampled once so that different models can
/// be compared on identical candidate lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSet {
    pub cases: Vec<EvalCase>,
}

impl EvalSet {
    /// Negatives exclude every item the group has in the full graph.
    pub fn sample(split: &Split, num_negatives: usize, rng: &mut RngStream) -> Result<Self> {
        let cases = split
            .test_cases
            .iter()
            .map(|&(group, positive)| {
                Ok(EvalCase {
                    group,
                    positive,
                    negatives: sample_negatives(&split.full_graph, group, num_negatives, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalSet { cases })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCase {
    pub group: usize,
    pub positive: usize,
    /// Candidates best first.
    pub ranking: Vec<usize>,
    /// 1-based position of the positive in `ranking`.
    pub rank: usize,
}

/// Ranks the positive against the negatives by descending score. Equal
/// scores are ordered by ascending item index.
pub fn rank_case(
    outputs: &LayerOutputs,
    group: usize,
    positive: usize,
    negatives: &[usize],
) -> Result<RankedCase> {
    if negatives.contains(&positive) {
        return Err(Error::usage(format!(
            "positive item {positive} also listed as a negative for group {group}"
        )));
    }
    let e3 = &outputs.e3;
    if group >= e3.groups.rows() {
        return Err(Error::usage(format!("group {group} out of range")));
    }
    let g = e3.groups.row(group);
    let mut scored = Vec::with_capacity(negatives.len() + 1);
    for &t in std::iter::once(&positive).chain(negatives) {
        if t >= e3.items.rows() {
            return Err(Error::usage(format!("item {t} out of range")));
        }
        scored.push((dot(g, e3.items.row(t))?, t));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let ranking: Vec<usize> = scored.into_iter().map(|(_, t)| t).collect();
    let rank = ranking.iter().position(|&t| t == positive).unwrap() + 1;
    Ok(RankedCase {
        group,
        positive,
        ranking,
        rank,
    })
}

fn check_ranks(ranks: &[usize], n: usize) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::usage("no evaluation cases"));
    }
    if n == 0 {
        return Err(Error::usage("cutoff N must be at least 1"));
    }
    Ok(())
}

/// Fraction of cases whose positive ranks within the top `n`.
pub fn hr_at_n(ranks: &[usize], n: usize) -> Result<f64> {
    check_ranks(ranks, n)?;
    Ok(ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64)
}

/// Mean of `1 / log2(rank + 1)` over cases, counting ranks beyond `n` as 0.
pub fn ndcg_at_n(ranks: &[usize], n: usize) -> Result<f64> {
    check_ranks(ranks, n)?;
    let sum: f64 = ranks
        .iter()
        .filter(|&&r| r <= n)
        .map(|&r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    Ok(sum / ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub num_cases: usize,
}

pub const METRICS_CSV_HEADER: &str = "variant,seed,N,HR,NDCG";

impl MetricReport {
    /// One CSV row per cutoff, without header.
    pub fn csv_rows(&self, variant: Variant, seed: u64) -> String {
        self.hr
            .iter()
            .map(|(n, hr)| format!("{variant},{seed},{n},{hr},{}\n", self.ndcg[n]))
            .collect()
    }

    pub fn from_ranks(ranks: &[usize], cutoffs: &[usize]) -> Result<Self> {
        let mut hr = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        for &n in cutoffs {
            hr.insert(n, hr_at_n(ranks, n)?);
            ndcg.insert(n, ndcg_at_n(ranks, n)?);
        }
        Ok(MetricReport {
            hr,
            ndcg,
            num_cases: ranks.len(),
        })
    }
}

/// Ranks every case of `set` and aggregates HR and NDCG at each cutoff.
pub fn evaluate_set(outputs: &LayerOutputs, set: &EvalSet, cutoffs: &[usize]) -> Result<MetricReport> {
    let ranks = set
        .cases
        .par_iter()
        .map(|c| rank_case(outputs, c.group, c.positive, &c.negatives).map(|r| r.rank))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_ranks(&ranks, cutoffs)
}

/// Samples [`NUM_EVAL_NEGATIVES`] negatives per held-out item from `rng`
/// and evaluates.
pub fn evaluate(
    outputs: &LayerOutputs,
    split: &Split,
    cutoffs: &[usize],
    rng: &mut RngStream,
) -> Result<MetricReport> {
    let set = EvalSet::sample(split, NUM_EVAL_NEGATIVES, rng)?;
    evaluate_set(outputs, &set, cutoffs)
}
