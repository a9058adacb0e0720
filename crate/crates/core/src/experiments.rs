//! Seeded simulation studies: multinomial-logistic data with a tunable amount
//! of covariate information, Dirichlet class-skew resampling, and a majority
//! classifier with a cost-weight schedule.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ScoredDataset;
use crate::error::{Error, Result};
use crate::factorize::{self, CostWeights, WeightMode};
use crate::pairwise::{self, enumerate_pairs};
use crate::pipeline::{self, Evaluation, EvaluationOptions};
use crate::roc::RocCurve;

const MAX_SKEW_ATTEMPTS: usize = 100;
const SEPARATION_LIMIT: f64 = 1.0 - 1e-12;
const MAJORITY_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Label drawn from the multinomial given by the probability row.
    Random,
    /// Label is the argmax of the probability row.
    Deterministic,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "deterministic" => Ok(Self::Deterministic),
            other => Err(Error::InvalidArgument(format!("unknown label mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Number of leading covariates available to the fitted model.
    pub d: usize,
    pub seed: u64,
    pub label_mode: LabelMode,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            p: 10,
            k: 5,
            d: 10,
            seed: 0,
            label_mode: LabelMode::Random,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidK { k: self.k });
        }
        if self.p == 0 || self.d == 0 || self.d > self.p {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= d <= p, got d={} p={}",
                self.d, self.p
            )));
        }
        if self.n < self.k {
            return Err(Error::InvalidArgument(format!("n={} is smaller than k={}", self.n, self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// True class probabilities with the drawn labels.
    pub dataset: ScoredDataset,
    pub covariates: Array2<f64>,
    /// p x (k-1)
    pub coefficients: Array2<f64>,
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Covariates `X ~ N(0, I_p)` and coefficients `B ~ N(1, 1)`, then
/// probabilities `softmax(1, X_i B)`: class 0 has the constant logit 1.
pub fn generate_multinomial(config: &SimulationConfig) -> Result<Simulation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(1.0, 1.0).expect("valid normal");
    let coefficients = Array2::from_shape_simple_fn((config.p, config.k - 1), || normal.sample(&mut rng));
    let covariates = standard_normal_matrix(&mut rng, config.n, config.p);
    simulate_labels(config, covariates, coefficients, &mut rng)
}

/// As [`generate_multinomial`] with caller-supplied coefficients.
pub fn generate_with_coefficients(config: &SimulationConfig, coefficients: Array2<f64>) -> Result<Simulation> {
    config.validate()?;
    if coefficients.dim() != (config.p, config.k - 1) {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {:?}, expected ({}, {})",
            coefficients.dim(),
            config.p,
            config.k - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let covariates = standard_normal_matrix(&mut rng, config.n, config.p);
    simulate_labels(config, covariates, coefficients, &mut rng)
}

fn simulate_labels(
    config: &SimulationConfig,
    covariates: Array2<f64>,
    coefficients: Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Simulation> {
    let linear = covariates.dot(&coefficients);
    let mut probs = Array2::zeros((config.n, config.k));
    let mut labels = Vec::with_capacity(config.n);
    for (i, lin) in linear.rows().into_iter().enumerate() {
        let logits: Vec<f64> = std::iter::once(1.0).chain(lin.iter().copied()).collect();
        let row = softmax_row(&logits);
        let label = match config.label_mode {
            LabelMode::Deterministic => argmax(&row),
            LabelMode::Random => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = config.k - 1;
                for (c, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = c;
                        break;
                    }
                }
                chosen
            }
        };
        probs.row_mut(i).assign(&Array1::from(row));
        labels.push(label);
    }
    Ok(Simulation {
        dataset: ScoredDataset::new(probs, labels)?,
        covariates,
        coefficients,
    })
}

/// Independent standard-normal covariates carrying no label information.
pub fn noise_covariates(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    standard_normal_matrix(&mut rng, n, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultinomialOptions {
    pub max_iter: usize,
    /// Relative change in log-likelihood that stops the ascent.
    pub tol: f64,
}

impl Default for MultinomialOptions {
    fn default() -> Self {
        Self { max_iter: 1000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct MultinomialFit {
    pub dataset: ScoredDataset,
    /// (d+1) x k, intercept row first; class 0 column fixed at zero.
    pub coefficients: Array2<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub separated: bool,
}

fn with_intercept(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut design = Array2::ones((n, d + 1));
    design.slice_mut(s![.., 1..]).assign(&x);
    design
}

fn fitted_probs(design: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let mut z = design.dot(w);
    for mut row in z.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    z
}

/// Mean log-likelihood; computed from logits to stay finite under separation.
fn log_likelihood(design: &Array2<f64>, w: &Array2<f64>, labels: &[usize]) -> f64 {
    let z = design.dot(w);
    let mut total = 0.0;
    for (row, &y) in z.rows().into_iter().zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += row[y] - lse;
    }
    total / labels.len() as f64
}

/// Maximum-likelihood multinomial logistic regression on `x` plus an
/// intercept, by gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking. Returns the in-sample fitted probabilities.
pub fn fit_multinomial(x: ArrayView2<'_, f64>, labels: &[usize], k: usize, opts: &MultinomialOptions) -> Result<MultinomialFit> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} covariate rows but {} labels", labels.len())));
    }
    if k < 2 {
        return Err(Error::InvalidK { k });
    }
    let design = with_intercept(x);
    let dim = design.ncols();
    let mut onehot = Array2::<f64>::zeros((n, k));
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { row: i, label: y as i64, k });
        }
        onehot[[i, y]] = 1.0;
    }
    let gradient = |w: &Array2<f64>| -> Array2<f64> {
        let resid = &onehot - &fitted_probs(&design, w);
        let mut g = design.t().dot(&resid) / n as f64;
        g.column_mut(0).fill(0.0);
        g
    };

    let mut w = Array2::<f64>::zeros((dim, k));
    let mut ll = log_likelihood(&design, &w, labels);
    let mut g = gradient(&w);
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let g_norm2 = g.iter().map(|v| v * v).sum::<f64>();
        if g_norm2 == 0.0 {
            converged = true;
            break;
        }
        // Armijo backtracking along the gradient
        let mut accepted = None;
        let mut trial = step;
        for _ in 0..60 {
            let candidate = &w + &(&g * trial);
            let cand_ll = log_likelihood(&design, &candidate, labels);
            if cand_ll >= ll + 1e-4 * trial * g_norm2 {
                accepted = Some((candidate, cand_ll));
                break;
            }
            trial *= 0.5;
        }
        let Some((w_new, ll_new)) = accepted else {
            converged = true;
            break;
        };
        let g_new = gradient(&w_new);
        let rel = (ll_new - ll).abs() / (ll.abs() + 1e-12);
        // Barzilai-Borwein step for the next iteration (ascent form)
        let s_vec = &w_new - &w;
        let y_vec = &g - &g_new;
        let sy: f64 = s_vec.iter().zip(y_vec.iter()).map(|(a, b)| a * b).sum();
        let ss: f64 = s_vec.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-6, 1e6) } else { trial * 2.0 };
        w = w_new;
        ll = ll_new;
        g = g_new;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }

    let probs = fitted_probs(&design, &w);
    let separated = probs.iter().any(|&p| p > SEPARATION_LIMIT);
    if separated {
        log::warn!("multinomial fit is (quasi-)separated: some fitted probability exceeds 1 - 1e-12");
    }
    if !converged {
        log::debug!("multinomial fit stopped after {iterations} iterations without meeting the tolerance");
    }
    let dataset = ScoredDataset::new(probs, labels.to_vec())?;
    Ok(MultinomialFit {
        dataset,
        coefficients: w,
        log_likelihood: ll * n as f64,
        iterations,
        converged,
        separated,
    })
}

/// Class probabilities for new covariate rows under fitted coefficients.
pub fn predict_multinomial(coefficients: &Array2<f64>, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() + 1 != coefficients.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariates but coefficients expect {}",
            x.ncols(),
            coefficients.nrows() - 1
        )));
    }
    Ok(fitted_probs(&with_intercept(x), coefficients))
}

/// Fit on the first `d` covariate columns.
pub fn fit_first_columns(sim: &Simulation, d: usize, opts: &MultinomialOptions) -> Result<MultinomialFit> {
    if d == 0 || d > sim.covariates.ncols() {
        return Err(Error::InvalidArgument(format!("d={d} outside 1..={}", sim.covariates.ncols())));
    }
    fit_multinomial(sim.covariates.slice(s![.., ..d]), sim.dataset.labels(), sim.dataset.k(), opts)
}

/// `n_per_class` observations of every class drawn without replacement.
pub fn balanced_subsample(dataset: &ScoredDataset, n_per_class: usize, seed: u64) -> Result<ScoredDataset> {
    let pools = class_pools(dataset);
    let smallest = pools.iter().map(Vec::len).min().unwrap_or(0);
    if n_per_class == 0 || n_per_class > smallest {
        return Err(Error::InvalidArgument(format!(
            "balanced size {n_per_class} must lie in 1..={smallest}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = Vec::with_capacity(n_per_class * pools.len());
    for pool in &pools {
        idx.extend(index::sample(&mut rng, pool.len(), n_per_class).into_iter().map(|i| pool[i]));
    }
    idx.sort_unstable();
    dataset.subset(&idx)
}

fn class_pools(dataset: &ScoredDataset) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); dataset.k()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        pools[l].push(i);
    }
    pools
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, k: usize, alpha: f64) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(format!("alpha={alpha}: {e}")))?;
    let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let s: f64 = g.iter().sum();
    Ok(g.into_iter().map(|x| x / s).collect())
}

/// Largest pairwise ratio `max w_i / w_j`.
pub fn skewness(w: &[f64]) -> f64 {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

#[derive(Debug, Clone)]
pub struct SkewSample {
    pub dataset: ScoredDataset,
    pub weights: Vec<f64>,
    /// Skewness of the drawn weights.
    pub z: f64,
    /// Realized class counts after rounding and pool caps.
    pub counts: Vec<usize>,
    pub attempts: usize,
}

/// Resamples `dataset` so that class `c` keeps `round(w_c * n_target)`
/// observations (at most its pool), with `w ~ Dirichlet(alpha)`.
pub fn dirichlet_skew(dataset: &ScoredDataset, alpha: f64, n_target: usize, seed: u64) -> Result<SkewSample> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let pools = class_pools(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=MAX_SKEW_ATTEMPTS {
        let w = dirichlet(&mut rng, dataset.k(), alpha)?;
        let counts: Vec<usize> = w
            .iter()
            .zip(&pools)
            .map(|(&wc, pool)| ((wc * n_target as f64).round() as usize).min(pool.len()))
            .collect();
        if counts.contains(&0) {
            continue;
        }
        let mut idx = Vec::with_capacity(counts.iter().sum());
        for (pool, &m) in pools.iter().zip(&counts) {
            idx.extend(index::sample(&mut rng, pool.len(), m).into_iter().map(|i| pool[i]));
        }
        idx.sort_unstable();
        return Ok(SkewSample {
            dataset: dataset.subset(&idx)?,
            z: skewness(&w),
            weights: w,
            counts,
            attempts: attempt,
        });
    }
    Err(Error::EmptyClassAfterSampling {
        attempts: MAX_SKEW_ATTEMPTS,
    })
}

/// Monte Carlo estimate of `P(Z > c)` for each `c`.
pub fn skew_tail_probability(k: usize, alpha: f64, cs: &[f64], draws: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(draws);
    for _ in 0..draws {
        z.push(skewness(&dirichlet(&mut rng, k, alpha)?));
    }
    Ok(cs
        .iter()
        .map(|&c| z.iter().filter(|&&v| v > c).count() as f64 / draws as f64)
        .collect())
}

/// Probability pattern that always favours `majority` by a margin of 0.2.
pub fn majority_classifier(dataset: &ScoredDataset, majority: usize) -> Result<ScoredDataset> {
    let k = dataset.k();
    if majority >= k {
        return Err(Error::InvalidArgument(format!("majority class {majority} outside 0..{k}")));
    }
    let top = 0.5 + MAJORITY_MARGIN;
    let rest = (0.5 - MAJORITY_MARGIN) / (k - 1) as f64;
    let probs = Array2::from_shape_fn((dataset.n(), k), |(_, c)| if c == majority { top } else { rest });
    dataset.with_probs(probs)
}

/// Most frequent class, lowest index on ties.
pub fn majority_class(dataset: &ScoredDataset) -> usize {
    argmax(&dataset.class_counts().0.iter().map(|&c| c as f64).collect::<Vec<_>>())
}

/// Column-constant T x K cost weights: TPR weight `c` where `majority` is
/// the positive class and `1/c` where it is the negative class; FPR weights
/// take the reciprocal pattern.
pub fn cost_schedule(k: usize, majority: usize, c: f64, t: usize) -> Result<CostWeights> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("cost factor must be positive, got {c}")));
    }
    if majority >= k {
        return Err(Error::InvalidArgument(format!("majority class {majority} outside 0..{k}")));
    }
    let pairs = enumerate_pairs(k)?;
    let factor: Vec<f64> = pairs
        .iter()
        .map(|p| {
            if p.pos == majority {
                c
            } else if p.neg == majority {
                1.0 / c
            } else {
                1.0
            }
        })
        .collect();
    let q_tp = Array2::from_shape_fn((t, pairs.len()), |(_, l)| factor[l]);
    let q_fp = q_tp.mapv(|q| 1.0 / q);
    CostWeights::new(q_tp, q_fp)
}

/// Evaluation with every binomial cell weighted by the schedule alone,
/// independent of the pair sample sizes; the schedule also weights the
/// summary of each threshold row.
pub fn evaluate_with_schedule(dataset: &ScoredDataset, schedule: &CostWeights, opts: &EvaluationOptions) -> Result<Evaluation> {
    let levels = pairwise::default_levels(opts.thresholds)?;
    let rates = pairwise::rate_matrices(dataset, &levels)?;
    let base = factorize::cardinality_weights(&rates, &WeightMode::Unweighted)?;
    let costs = base.compose(schedule)?;
    pipeline::evaluate_rates(rates, costs, schedule.stacked(), &opts.fit)
}

/// The default cost grid: 0.1, 0.2, ..., 0.9, 1, 1/0.9, ..., 1/0.1.
pub fn default_cost_grid() -> Vec<f64> {
    let mut cs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    cs.push(1.0);
    cs.extend((1..=9).rev().map(|i| 10.0 / i as f64));
    cs
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub label: String,
    pub value: f64,
    pub evaluation: Evaluation,
}

/// Fitted classifiers on the first `d` covariates for each requested `d`,
/// plus (when `noise` is set) one fitted on independent noise covariates.
pub fn discriminative_sweep(
    sim: &Simulation,
    ds: &[usize],
    noise: bool,
    eval: &EvaluationOptions,
    fit: &MultinomialOptions,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    if noise {
        let x = noise_covariates(sim.dataset.n(), sim.covariates.ncols(), seed.wrapping_add(1));
        let m = fit_multinomial(x.view(), sim.dataset.labels(), sim.dataset.k(), fit)?;
        out.push(SweepPoint {
            label: "noise".into(),
            value: 0.0,
            evaluation: pipeline::evaluate(&m.dataset, eval)?,
        });
    }
    for &d in ds {
        let m = fit_first_columns(sim, d, fit)?;
        out.push(SweepPoint {
            label: format!("d={d}"),
            value: d as f64,
            evaluation: pipeline::evaluate(&m.dataset, eval)?,
        });
    }
    Ok(out)
}

/// Majority classifier evaluated under `cost_schedule(c)` for each `c`.
pub fn weights_sweep(dataset: &ScoredDataset, cs: &[f64], eval: &EvaluationOptions) -> Result<Vec<SweepPoint>> {
    let majority = majority_class(dataset);
    let naive = majority_classifier(dataset, majority)?;
    cs.iter()
        .map(|&c| {
            let schedule = cost_schedule(naive.k(), majority, c, eval.thresholds)?;
            Ok(SweepPoint {
                label: format!("c={c}"),
                value: c,
                evaluation: evaluate_with_schedule(&naive, &schedule, eval)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SkewReplicate {
    pub replicate: usize,
    pub z: f64,
    pub counts: Vec<usize>,
    pub d: f64,
    pub curve: RocCurve,
}

/// Unweighted D of `dataset` over `replicates` Dirichlet-skewed resamples.
pub fn skewness_replicates(
    dataset: &ScoredDataset,
    alpha: f64,
    n_target: usize,
    replicates: usize,
    seed: u64,
    eval: &EvaluationOptions,
) -> Result<Vec<SkewReplicate>> {
    let opts = EvaluationOptions {
        weights: WeightMode::Unweighted,
        ..eval.clone()
    };
    use rayon::prelude::*;
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sample = dirichlet_skew(dataset, alpha, n_target, seed.wrapping_add(r as u64))?;
            let e = pipeline::evaluate(&sample.dataset, &opts)?;
            Ok(SkewReplicate {
                replicate: r,
                z: sample.z,
                counts: sample.counts,
                d: e.d.value(),
                curve: e.curve,
            })
        })
        .collect()
}

/// Column means of the probability matrix, mostly for diagnostics.
pub fn mean_probabilities(dataset: &ScoredDataset) -> Vec<f64> {
    dataset.probs().mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}
