//! End-to-end evaluation: rates -> fit -> center -> curve -> D.

use ndarray::Array2;
use serde::Serialize;

use crate::data::ScoredDataset;
use crate::error::Result;
use crate::factorize::{self, CenteredComponents, CostWeights, FactorizationFit, FitOptions, WeightMode};
use crate::pairwise::{self, PairwiseRates};
use crate::roc::{self, DStatistic, RocCurve};

#[derive(Debug, Clone)]
pub struct EvaluationOptions {
    /// Number of threshold levels T, evenly spaced from 1 to 0.
    pub thresholds: usize,
    pub weights: WeightMode,
    pub fit: FitOptions,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            thresholds: 50,
            weights: WeightMode::Weighted,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    #[serde(skip)]
    pub rates: PairwiseRates,
    #[serde(skip)]
    pub costs: CostWeights,
    /// 2T x K weights used to collapse `eta` rows into threshold effects.
    #[serde(skip)]
    pub centering: Array2<f64>,
    pub fit: FactorizationFit,
    pub centered: CenteredComponents,
    pub curve: RocCurve,
    pub d: DStatistic,
}

pub fn evaluate(dataset: &ScoredDataset, opts: &EvaluationOptions) -> Result<Evaluation> {
    let levels = pairwise::default_levels(opts.thresholds)?;
    let rates = pairwise::rate_matrices(dataset, &levels)?;
    let costs = factorize::cardinality_weights(&rates, &opts.weights)?;
    let centering = factorize::centering_weights(&rates, &opts.weights)?;
    evaluate_rates(rates, costs, centering, &opts.fit)
}

/// Evaluation from precomputed rates, cost weights and centering weights.
///
/// With two classes the pairs `0>1` and `1>0` carry the same information
/// (one column is the other with TPR and FPR swapped), so only the first
/// column is kept.
pub fn evaluate_rates(rates: PairwiseRates, costs: CostWeights, centering: Array2<f64>, fit_opts: &FitOptions) -> Result<Evaluation> {
    let (rates, costs, centering) = if rates.k == 2 && rates.n_pairs() == 2 {
        (
            rates.select_columns(&[0])?,
            costs.select_columns(&[0])?,
            centering.select(ndarray::Axis(1), &[0]),
        )
    } else {
        (rates, costs, centering)
    };
    let fit = factorize::fit(&rates, &costs, fit_opts)?;
    summarize(rates, costs, centering, fit)
}

pub(crate) fn summarize(rates: PairwiseRates, costs: CostWeights, centering: Array2<f64>, fit: FactorizationFit) -> Result<Evaluation> {
    let centered = factorize::center_weighted(&fit, &centering)?;
    let curve = roc::summary_curve(&centered, Some(&rates.levels));
    let d = roc::d_statistic(&curve);
    Ok(Evaluation {
        rates,
        costs,
        centering,
        fit,
        centered,
        curve,
        d,
    })
}
