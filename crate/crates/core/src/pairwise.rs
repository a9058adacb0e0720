//! Pairwise true/false positive rate matrices.
//!
//! Every ordered class pair `(i, j)` is a binary problem: observations of
//! class `i` are positives, those of class `j` negatives, and the score is
//! the predicted probability of class `i`. Thresholds for a pair are
//! quantiles of that score over the observations of both classes, taken at a
//! shared decreasing grid of levels, so row `t` of every column corresponds to
//! the same quantile level.

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_real, ScoredDataset};
use crate::error::{Error, Result};

/// An ordered class pair and its position in the flat pair enumeration.
///
/// The enumeration is row-major over `pos` skipping the diagonal:
/// `(0,1), (0,2), ..., (0,k-1), (1,0), (1,2), ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairIndex {
    pub pos: usize,
    pub neg: usize,
    pub flat: usize,
}

impl PairIndex {
    pub fn new(pos: usize, neg: usize, k: usize) -> Result<Self> {
        if pos == neg || pos >= k || neg >= k {
            return Err(Error::InvalidArgument(format!("({pos},{neg}) is not an ordered pair of distinct classes < {k}")));
        }
        let flat = pos * (k - 1) + if neg < pos { neg } else { neg - 1 };
        Ok(Self { pos, neg, flat })
    }

    /// Column header used in exported tables, e.g. `0>2`.
    pub fn label(&self) -> String {
        format!("{}>{}", self.pos, self.neg)
    }
}

/// All k(k-1) ordered pairs.
pub fn enumerate_pairs(k: usize) -> Result<Vec<PairIndex>> {
    if k < 2 {
        return Err(Error::InvalidK { k });
    }
    let mut pairs = Vec::with_capacity(k * (k - 1));
    for pos in 0..k {
        for neg in (0..k).filter(|&n| n != pos) {
            pairs.push(PairIndex { pos, neg, flat: pairs.len() });
        }
    }
    Ok(pairs)
}

/// `t` levels evenly spaced from 1 down to 0 inclusive.
pub fn default_levels(t: usize) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::InvalidLevels(format!("need at least 2 threshold levels, got {t}")));
    }
    Ok((0..t).map(|i| 1.0 - i as f64 / (t - 1) as f64).collect())
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidLevels("no levels".into()));
    }
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::InvalidLevels("levels must lie in [0, 1]".into()));
    }
    if levels.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidLevels("levels must be strictly decreasing".into()));
    }
    Ok(())
}

/// Quantile of sorted data by linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical quantiles of `scores` at `levels`, in the order given.
pub fn threshold_grid(scores: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    check_levels(levels)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(levels.iter().map(|&l| quantile_sorted(&sorted, l)).collect())
}

/// Number of entries of ascending `sorted` strictly greater than `t`.
fn count_above(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&x| x <= t)
}

/// Stacked pairwise rates over a shared quantile-level grid.
///
/// `mtp[[t, l]]` is the fraction of class `pairs[l].pos` observations whose
/// score exceeds `thresholds[[t, l]]`; `mfp[[t, l]]` is the same fraction for
/// class `pairs[l].neg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRates {
    pub k: usize,
    pub pairs: Vec<PairIndex>,
    pub levels: Vec<f64>,
    pub thresholds: Array2<f64>,
    pub mtp: Array2<f64>,
    pub mfp: Array2<f64>,
    pub n_pos: Vec<u64>,
    pub n_neg: Vec<u64>,
    /// Columns whose pooled scores were constant; their thresholds fall back
    /// to the raw levels, which makes the rates a 0/1 step.
    pub degenerate: Vec<usize>,
}

struct Column {
    thresholds: Vec<f64>,
    tp: Vec<f64>,
    fp: Vec<f64>,
    n_pos: u64,
    n_neg: u64,
    degenerate: bool,
}

fn sorted_scores(scores: ArrayView1<'_, f64>, labels: &[usize], class: usize) -> Vec<f64> {
    let mut v: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == class)
        .map(|(&s, _)| s)
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

fn pair_column(dataset: &ScoredDataset, pair: PairIndex, levels: &[f64]) -> Result<Column> {
    let scores = dataset.scores(pair.pos);
    let pos = sorted_scores(scores, dataset.labels(), pair.pos);
    let neg = sorted_scores(scores, dataset.labels(), pair.neg);
    if pos.is_empty() {
        return Err(Error::EmptyClass { class: pair.pos });
    }
    if neg.is_empty() {
        return Err(Error::EmptyClass { class: pair.neg });
    }
    let mut pooled = Vec::with_capacity(pos.len() + neg.len());
    pooled.extend_from_slice(&pos);
    pooled.extend_from_slice(&neg);
    pooled.sort_by(f64::total_cmp);
    let degenerate = pooled[0] == pooled[pooled.len() - 1];
    let thresholds: Vec<f64> = if degenerate {
        log::debug!(
            "pair {}: scores are constant ({}); using the raw level grid as thresholds",
            pair.label(),
            pooled[0]
        );
        levels.to_vec()
    } else {
        levels.iter().map(|&l| quantile_sorted(&pooled, l)).collect()
    };
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let tp = thresholds.iter().map(|&t| count_above(&pos, t) as f64 / np).collect();
    let fp = thresholds.iter().map(|&t| count_above(&neg, t) as f64 / nn).collect();
    Ok(Column {
        thresholds,
        tp,
        fp,
        n_pos: pos.len() as u64,
        n_neg: neg.len() as u64,
        degenerate,
    })
}

/// Builds the T x K true- and false-positive rate matrices.
pub fn rate_matrices(dataset: &ScoredDataset, levels: &[f64]) -> Result<PairwiseRates> {
    check_levels(levels)?;
    if levels.len() < 2 {
        return Err(Error::InvalidLevels("need at least 2 threshold levels".into()));
    }
    let pairs = enumerate_pairs(dataset.k())?;
    let columns = pairs
        .par_iter()
        .map(|&p| pair_column(dataset, p, levels))
        .collect::<Result<Vec<_>>>()?;

    let (t, kk) = (levels.len(), pairs.len());
    let mut thresholds = Array2::zeros((t, kk));
    let mut mtp = Array2::zeros((t, kk));
    let mut mfp = Array2::zeros((t, kk));
    let mut n_pos = Vec::with_capacity(kk);
    let mut n_neg = Vec::with_capacity(kk);
    let mut degenerate = Vec::new();
    for (l, col) in columns.into_iter().enumerate() {
        for r in 0..t {
            thresholds[[r, l]] = col.thresholds[r];
            mtp[[r, l]] = col.tp[r];
            mfp[[r, l]] = col.fp[r];
        }
        n_pos.push(col.n_pos);
        n_neg.push(col.n_neg);
        if col.degenerate {
            degenerate.push(l);
        }
    }
    if !degenerate.is_empty() {
        let names: Vec<String> = degenerate.iter().map(|&l| pairs[l].label()).collect();
        log::warn!(
            "{} of {kk} pairs have constant scores ({}); their thresholds fall back to the raw levels",
            degenerate.len(),
            if names.len() <= 6 { names.join(", ") } else { format!("{}, ...", names[..6].join(", ")) }
        );
    }
    Ok(PairwiseRates {
        k: dataset.k(),
        pairs,
        levels: levels.to_vec(),
        thresholds,
        mtp,
        mfp,
        n_pos,
        n_neg,
        degenerate,
    })
}

/// TPR and FPR of one pair at an arbitrary threshold (strict `>` rule).
pub fn pair_rates_at(dataset: &ScoredDataset, pair: PairIndex, threshold: f64) -> (f64, f64) {
    let (mut tp, mut np, mut fp, mut nn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in dataset.scores(pair.pos).iter().zip(dataset.labels()) {
        if l == pair.pos {
            np += 1;
            tp += usize::from(s > threshold);
        } else if l == pair.neg {
            nn += 1;
            fp += usize::from(s > threshold);
        }
    }
    (tp as f64 / np as f64, fp as f64 / nn as f64)
}

impl PairwiseRates {
    /// Number of threshold rows T.
    pub fn t(&self) -> usize {
        self.levels.len()
    }

    /// Number of pair columns K.
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// The 2T x K stacked matrix: TPR rows then FPR rows.
    pub fn stacked(&self) -> Array2<f64> {
        ndarray::concatenate(ndarray::Axis(0), &[self.mtp.view(), self.mfp.view()])
            .expect("mtp and mfp share a shape")
    }

    /// Binomial trial count for every cell of the stacked matrix.
    pub fn trials(&self) -> Array2<f64> {
        let t = self.t();
        Array2::from_shape_fn((2 * t, self.n_pairs()), |(r, c)| {
            if r < t {
                self.n_pos[c] as f64
            } else {
                self.n_neg[c] as f64
            }
        })
    }

    pub fn max_trials(&self) -> u64 {
        self.n_pos.iter().chain(&self.n_neg).copied().max().unwrap_or(1)
    }

    /// Same grid and cardinalities with a different stacked rate matrix.
    pub fn with_stacked(&self, stacked: &Array2<f64>) -> Result<Self> {
        let t = self.t();
        if stacked.dim() != (2 * t, self.n_pairs()) {
            return Err(Error::DimensionMismatch(format!(
                "stacked rates are {:?}, expected {:?}",
                stacked.dim(),
                (2 * t, self.n_pairs())
            )));
        }
        let mut out = self.clone();
        out.mtp = stacked.slice(ndarray::s![..t, ..]).to_owned();
        out.mfp = stacked.slice(ndarray::s![t.., ..]).to_owned();
        Ok(out)
    }

    /// The rates restricted to the given pair columns, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.n_pairs()) {
            return Err(Error::InvalidArgument(format!("pair column {c} out of range (K = {})", self.n_pairs())));
        }
        let axis = ndarray::Axis(1);
        Ok(Self {
            k: self.k,
            pairs: cols.iter().map(|&c| self.pairs[c]).collect(),
            levels: self.levels.clone(),
            thresholds: self.thresholds.select(axis, cols),
            mtp: self.mtp.select(axis, cols),
            mfp: self.mfp.select(axis, cols),
            n_pos: cols.iter().map(|&c| self.n_pos[c]).collect(),
            n_neg: cols.iter().map(|&c| self.n_neg[c]).collect(),
            degenerate: cols
                .iter()
                .enumerate()
                .filter(|(_, c)| self.degenerate.contains(c))
                .map(|(i, _)| i)
                .collect(),
        })
    }

    /// Writes one matrix (`tp` or `fp`) as CSV with `i>j` column headers.
    pub fn write_csv<W: Write>(&self, mut w: W, which: RateKind) -> Result<()> {
        let m = match which {
            RateKind::TruePositive => &self.mtp,
            RateKind::FalsePositive => &self.mfp,
        };
        let header: Vec<String> = std::iter::once("level".to_string())
            .chain(self.pairs.iter().map(PairIndex::label))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (r, row) in m.rows().into_iter().enumerate() {
            let cells: Vec<String> = std::iter::once(fmt_real(self.levels[r]))
                .chain(row.iter().map(|x| fmt_real(*x)))
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&RatesJson::from(self))?)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RateKind {
    TruePositive,
    FalsePositive,
}

#[derive(Serialize)]
struct RatesJson {
    pairs: Vec<String>,
    levels: Vec<f64>,
    thresholds: Vec<Vec<f64>>,
    mtp: Vec<Vec<f64>>,
    mfp: Vec<Vec<f64>>,
    n_pos: Vec<u64>,
    n_neg: Vec<u64>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl From<&PairwiseRates> for RatesJson {
    fn from(r: &PairwiseRates) -> Self {
        Self {
            pairs: r.pairs.iter().map(PairIndex::label).collect(),
            levels: r.levels.clone(),
            thresholds: rows_of(&r.thresholds),
            mtp: rows_of(&r.mtp),
            mfp: rows_of(&r.mfp),
            n_pos: r.n_pos.clone(),
            n_neg: r.n_neg.clone(),
        }
    }
}
