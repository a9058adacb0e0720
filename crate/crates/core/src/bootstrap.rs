//! Parametric bootstrap of a fitted factorization.
//!
//! Each replicate redraws every cell of the stacked rate matrix as
//! `Bin(trials, logistic(eta))`, refits with the original cost weights and
//! options, and recomputes `D`. Replicate `b` uses its own ChaCha stream
//! `(seed, b)`, so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::fmt_real;
use crate::error::{Error, Result};
use crate::factorize::{self, CostWeights, FactorizationFit, FitOptions};
use crate::pairwise::PairwiseRates;
use crate::pipeline::Evaluation;
use crate::roc::{self, RocCurve};

/// Share of replicates allowed to fail before the whole run is rejected.
const MAX_DROP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub fit: FitOptions,
    pub keep_curves: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 100,
            level: 0.95,
            seed: 0,
            fit: FitOptions::default(),
            keep_curves: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub d_samples: Vec<f64>,
    /// Replicate index of each entry of `d_samples`.
    pub replicate_ids: Vec<usize>,
    pub ci: (f64, f64),
    pub level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves: Option<Vec<RocCurve>>,
    pub seed: u64,
    pub replicates: usize,
    pub dropped: usize,
}

/// Deterministic generator for replicate `index` under `seed`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One resampled stacked rate matrix.
pub fn resample_rates(eta: &Array2<f64>, trials: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(eta.dim());
    for ((idx, &e), &n) in eta.indexed_iter().zip(trials.iter()) {
        let n = n as u64;
        let dist = Binomial::new(n, logistic(e))
            .map_err(|err| Error::NumericalDegeneracy(format!("binomial draw at {idx:?}: {err}")))?;
        out[idx] = dist.sample(rng) as f64 / n as f64;
    }
    Ok(out)
}

/// Percentile interval of `samples` at coverage `level`.
pub fn percentile_interval(samples: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (quantile(&sorted, alpha), quantile(&sorted, 1.0 - alpha))
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Parametric bootstrap of an evaluation: each replicate redraws the rates
/// from the fitted probabilities and repeats the fit, centering and curve.
pub fn bootstrap(eval: &Evaluation, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    bootstrap_parts(&eval.rates, &eval.fit, &eval.costs, &eval.centering, opts)
}

fn bootstrap_parts(
    rates: &PairwiseRates,
    fit: &FactorizationFit,
    costs: &CostWeights,
    centering: &Array2<f64>,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if opts.replicates < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 replicates, got {}", opts.replicates)));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {}", opts.level)));
    }
    if !fit.converged {
        return Err(Error::InvalidArgument("cannot bootstrap from an unconverged fit".into()));
    }
    if opts.replicates < 20 {
        log::warn!("only {} bootstrap replicates; interval width is unreliable", opts.replicates);
    }
    let trials = rates.trials();

    let outcomes: Vec<Result<Option<(f64, RocCurve)>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(opts.seed, b);
            let stacked = resample_rates(&fit.eta, &trials, &mut rng)?;
            let resampled = rates.with_stacked(&stacked)?;
            match factorize::fit(&resampled, costs, &opts.fit) {
                Ok(refit) => {
                    let centered = factorize::center_weighted(&refit, centering)?;
                    let curve = roc::summary_curve(&centered, Some(&rates.levels));
                    Ok(Some((roc::d_statistic(&curve).value(), curve)))
                }
                Err(Error::NoConvergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut d_samples = Vec::with_capacity(opts.replicates);
    let mut replicate_ids = Vec::with_capacity(opts.replicates);
    let mut curves = Vec::new();
    let mut dropped = 0;
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            Some((d, curve)) => {
                d_samples.push(d);
                replicate_ids.push(b);
                if opts.keep_curves {
                    curves.push(curve);
                }
            }
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} of {} bootstrap replicates did not converge and were dropped", opts.replicates);
    }
    if dropped as f64 > MAX_DROP_FRACTION * opts.replicates as f64 || d_samples.len() < 2 {
        return Err(Error::InsufficientReplicates {
            dropped,
            total: opts.replicates,
        });
    }
    let ci = percentile_interval(&d_samples, opts.level);
    Ok(BootstrapResult {
        d_samples,
        replicate_ids,
        ci,
        level: opts.level,
        curves: opts.keep_curves.then_some(curves),
        seed: opts.seed,
        replicates: opts.replicates,
        dropped,
    })
}

impl BootstrapResult {
    pub fn width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }

    pub fn interval(&self, level: f64) -> (f64, f64) {
        percentile_interval(&self.d_samples, level)
    }
}

/// Linear interpolation of a curve's y at `x` (points sorted by x).
fn curve_y_at(points: &[(f64, f64)], x: f64) -> f64 {
    let idx = points.partition_point(|p| p.0 < x);
    if idx == 0 {
        return points[0].1;
    }
    if idx >= points.len() {
        return points[points.len() - 1].1;
    }
    let (x0, y0) = points[idx - 1];
    let (x1, y1) = points[idx];
    if x1 == x0 {
        y1
    } else {
        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    }
}

/// One row of a pointwise confidence band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandPoint {
    pub x: f64,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Pointwise quantile envelope of resampled curves on an even x grid.
pub fn curve_band(curves: &[RocCurve], grid: usize, lower: f64, upper: f64) -> Vec<BandPoint> {
    if curves.is_empty() || grid < 2 {
        return Vec::new();
    }
    (0..grid)
        .map(|i| {
            let x = i as f64 / (grid - 1) as f64;
            let mut ys: Vec<f64> = curves.iter().map(|c| curve_y_at(&c.points, x)).collect();
            ys.sort_by(f64::total_cmp);
            BandPoint {
                x,
                lower: quantile(&ys, lower),
                median: quantile(&ys, 0.5),
                upper: quantile(&ys, upper),
            }
        })
        .collect()
}

pub fn write_band_csv<W: Write>(mut w: W, band: &[BandPoint]) -> std::io::Result<()> {
    writeln!(w, "x,lower,median,upper")?;
    for p in band {
        writeln!(w, "{},{},{},{}", fmt_real(p.x), fmt_real(p.lower), fmt_real(p.median), fmt_real(p.upper))?;
    }
    Ok(())
}

/// Probability of each model ordering across bootstrap replicates.
///
/// Keys are model indices from best to worst `D`; ties go to the model
/// listed first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingTable {
    pub n_models: usize,
    pub rows: BTreeMap<Vec<usize>, f64>,
    /// Replicates shared by all models and used for the table.
    pub replicates_used: usize,
}

pub fn ranking_probabilities(results: &[BootstrapResult]) -> Result<RankingTable> {
    let Some(first) = results.first() else {
        return Err(Error::InvalidArgument("no models to rank".into()));
    };
    for r in results {
        if r.replicates != first.replicates {
            return Err(Error::MismatchedB {
                expected: first.replicates,
                found: r.replicates,
            });
        }
    }
    // d value per (model, replicate) for replicates every model kept
    let lookups: Vec<BTreeMap<usize, f64>> = results
        .iter()
        .map(|r| r.replicate_ids.iter().copied().zip(r.d_samples.iter().copied()).collect())
        .collect();
    let shared: Vec<usize> = (0..first.replicates)
        .filter(|b| lookups.iter().all(|m| m.contains_key(b)))
        .collect();
    if shared.is_empty() {
        return Err(Error::InsufficientReplicates {
            dropped: first.replicates,
            total: first.replicates,
        });
    }
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for &b in &shared {
        let mut order: Vec<usize> = (0..results.len()).collect();
        // stable sort keeps input order among equal values
        order.sort_by(|&i, &j| lookups[j][&b].total_cmp(&lookups[i][&b]));
        *counts.entry(order).or_default() += 1;
    }
    let total = shared.len() as f64;
    Ok(RankingTable {
        n_models: results.len(),
        rows: counts.into_iter().map(|(k, c)| (k, c as f64 / total)).collect(),
        replicates_used: shared.len(),
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

impl RankingTable {
    pub fn probability(&self, order: &[usize]) -> f64 {
        self.rows.get(order).copied().unwrap_or(0.0)
    }

    /// One header row listing every ordering as `a>b>c` (sorted by label)
    /// and one data row; orderings never observed are shown as `-`.
    pub fn write_csv<W: Write>(&self, mut w: W, dataset: &str, names: &[String]) -> std::io::Result<()> {
        let mut columns: Vec<(String, Vec<usize>)> = permutations(self.n_models)
            .into_iter()
            .map(|p| (p.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join(">"), p))
            .collect();
        columns.sort();
        let header: Vec<&str> = std::iter::once("dataset").chain(columns.iter().map(|c| c.0.as_str())).collect();
        writeln!(w, "{}", header.join(","))?;
        let cells: Vec<String> = std::iter::once(dataset.to_string())
            .chain(columns.iter().map(|(_, p)| match self.rows.get(p) {
                Some(v) => format!("{v:.2}"),
                None => "-".into(),
            }))
            .collect();
        writeln!(w, "{}", cells.join(","))
    }
}
