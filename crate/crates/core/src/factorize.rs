//! Weighted rank-1 binomial factorization of the stacked rate matrix.
//!
//! The 2T x K matrix `M` (TPR rows over FPR rows) is modeled cell-wise as
//! `M_ij * n_ij ~ Bin(n_ij, logistic(eta_ij))` with
//!
//! ```text
//! eta = lambda0 1^T + lambda v^T,   sum_j v_j = 0,   |v| = 1
//! ```
//!
//! i.e. a per-row threshold effect shared by all pairs plus one centered
//! rank-1 term for how the pairs deviate from it. The weighted
//! log-likelihood is maximized by block Fisher scoring: given `v`, each row
//! `(lambda0_i, lambda_i)` is a two-parameter logistic GLM; given the rows,
//! each `v_j` is a one-parameter GLM with offset `lambda0_i`. With the
//! canonical logit link the working weights are `S_ij = w_ij mu_ij (1 - mu_ij)`
//! and the working response is `Z_ij = eta_ij + (x_ij - mu_ij) / (mu_ij (1 - mu_ij))`.
//! Steps that would raise the deviance are halved toward the previous
//! iterate, so the deviance trace is monotone.
//!
//! [`center`] projects `eta` onto the span of the all-ones column vector;
//! [`center_weighted`] does the same in a cell-weighted inner product so that
//! cost weights also shape the summary curve.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise::{PairIndex, PairwiseRates};

const MAX_HALVINGS: usize = 20;
const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-10;

/// Per-cell multiplicative cost weights, one T x K matrix for the TPR rows
/// and one for the FPR rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q_tp: Array2<f64>,
    pub q_fp: Array2<f64>,
}

impl CostWeights {
    pub fn new(q_tp: Array2<f64>, q_fp: Array2<f64>) -> Result<Self> {
        if q_tp.dim() != q_fp.dim() {
            return Err(Error::DimensionMismatch(format!(
                "TPR weights are {:?} but FPR weights are {:?}",
                q_tp.dim(),
                q_fp.dim()
            )));
        }
        let t = q_tp.nrows();
        for (offset, m) in [(0, &q_tp), (t, &q_fp)] {
            for ((r, c), &value) in m.indexed_iter() {
                if !(value.is_finite() && value > 0.0) {
                    return Err(Error::NonPositiveWeight { row: r + offset, col: c, value });
                }
            }
        }
        Ok(Self { q_tp, q_fp })
    }

    pub fn ones(t: usize, k: usize) -> Self {
        Self {
            q_tp: Array2::ones((t, k)),
            q_fp: Array2::ones((t, k)),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.q_tp.dim()
    }

    /// 2T x K weights in the stacking order of the rate matrix.
    pub fn stacked(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(0), &[self.q_tp.view(), self.q_fp.view()]).expect("shapes checked at construction")
    }

    /// Element-wise product with another weight set of the same shape.
    pub fn compose(&self, other: &CostWeights) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", self.dim(), other.dim())));
        }
        Self::new(&self.q_tp * &other.q_tp, &self.q_fp * &other.q_fp)
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.dim().1) {
            return Err(Error::InvalidArgument(format!("weight column {c} out of range (K = {})", self.dim().1)));
        }
        Self::new(self.q_tp.select(Axis(1), cols), self.q_fp.select(Axis(1), cols))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.q_tp * factor, &self.q_fp * factor)
    }

    /// Reads a 2T x K CSV (header row, TPR rows then FPR rows).
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let m = crate::data::read_prob_matrix(reader)?;
        if m.nrows() % 2 != 0 || m.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "weight file must have an even, non-zero number of rows (TPR block then FPR block), got {}",
                m.nrows()
            )));
        }
        let t = m.nrows() / 2;
        Self::new(
            m.slice(ndarray::s![..t, ..]).to_owned(),
            m.slice(ndarray::s![t.., ..]).to_owned(),
        )
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, pairs: &[PairIndex]) -> Result<()> {
        let header: Vec<String> = pairs.iter().map(PairIndex::label).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.stacked().rows() {
            let cells: Vec<String> = row.iter().map(|x| crate::data::fmt_real(*x)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// How cost weights relate to the pair cardinalities.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightMode {
    /// `Q = 1`: each cell is weighted by its binomial trial count.
    Weighted,
    /// `Q = 1 / trials`: every cell carries weight exactly 1.
    Unweighted,
    /// Caller-supplied `Q`.
    Custom(CostWeights),
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(WeightMode::Weighted),
            "unweighted" => Ok(WeightMode::Unweighted),
            other => match other.strip_prefix("file=") {
                Some(path) => {
                    let file = std::fs::File::open(path)?;
                    Ok(WeightMode::Custom(CostWeights::from_csv(std::io::BufReader::new(file))?))
                }
                None => Err(Error::InvalidArgument(format!(
                    "weights must be weighted, unweighted or file=PATH, got '{other}'"
                ))),
            },
        }
    }
}

pub fn cardinality_weights(rates: &PairwiseRates, mode: &WeightMode) -> Result<CostWeights> {
    let (t, k) = (rates.t(), rates.n_pairs());
    match mode {
        WeightMode::Weighted => Ok(CostWeights::ones(t, k)),
        WeightMode::Unweighted => {
            let q_tp = Array2::from_shape_fn((t, k), |(_, c)| 1.0 / rates.n_pos[c] as f64);
            let q_fp = Array2::from_shape_fn((t, k), |(_, c)| 1.0 / rates.n_neg[c] as f64);
            CostWeights::new(q_tp, q_fp)
        }
        WeightMode::Custom(q) => {
            if q.dim() != (t, k) {
                return Err(Error::DimensionMismatch(format!(
                    "custom weights are {:?}, rates are {:?}",
                    q.dim(),
                    (t, k)
                )));
            }
            CostWeights::new(q.q_tp.clone(), q.q_fp.clone())
        }
    }
}

/// Weights for summarizing each row of `eta` into its threshold effect:
/// the caller's cost weights for [`WeightMode::Custom`], uniform otherwise
/// (the cardinality part of the weights only reflects sampling precision).
pub fn centering_weights(rates: &PairwiseRates, mode: &WeightMode) -> Result<Array2<f64>> {
    match mode {
        WeightMode::Custom(_) => Ok(cardinality_weights(rates, mode)?.stacked()),
        _ => Ok(Array2::ones((2 * rates.t(), rates.n_pairs()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative deviance change that counts as converged.
    pub tol: f64,
    /// Boundary clamp for the observed rates; `None` means `0.5 / max(trials)`.
    pub clamp_eps: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            clamp_eps: None,
        }
    }
}

/// Result of a fit; `eta[[i, j]] == lambda0[i] + lambda[i] * v[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationFit {
    /// Shared per-row threshold effects, TPR rows first.
    pub lambda0: Vec<f64>,
    /// Row scores of the centered rank-1 term.
    pub lambda: Vec<f64>,
    /// Column loadings summing to zero with unit norm, first non-zero entry
    /// positive. A single column has `v = [0]`.
    pub v: Vec<f64>,
    pub eta: Array2<f64>,
    /// Effective cell weights `trials * Q`.
    pub weights: Array2<f64>,
    /// Weighted deviance of the clamped rates; entry 0 is the starting point.
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub clamp_eps: f64,
}

impl FactorizationFit {
    /// Number of threshold rows T (half the stacked height).
    pub fn t(&self) -> usize {
        self.lambda0.len() / 2
    }

    pub fn final_deviance(&self) -> f64 {
        *self.deviance_trace.last().expect("trace is never empty")
    }
}

/// Shared threshold effects and the centered remainder of `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredComponents {
    pub lambda0_tp: Vec<f64>,
    pub lambda0_fp: Vec<f64>,
    pub residual: Array2<f64>,
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Binomial unit deviance `2 [y ln(y/mu) + (1-y) ln((1-y)/(1-mu))]` with
/// `mu = logistic(eta)`, evaluated on the log scale.
#[inline]
fn unit_deviance(y: f64, eta: f64) -> f64 {
    let d = xlogx(y) + xlogx(1.0 - y) + y * softplus(-eta) + (1.0 - y) * softplus(eta);
    (2.0 * d).max(0.0)
}

/// Weighted binomial deviance of `response` (rates in [0, 1]) under `eta`.
pub fn binomial_deviance(response: ArrayView2<'_, f64>, eta: ArrayView2<'_, f64>, weights: ArrayView2<'_, f64>) -> f64 {
    let mut total = 0.0;
    for ((&y, &e), &w) in response.iter().zip(eta.iter()).zip(weights.iter()) {
        total += w * unit_deviance(y, e);
    }
    total
}

/// Weighted binomial deviance of the observed (unclamped) rates.
pub fn deviance(rates: &PairwiseRates, eta: &Array2<f64>, weights: &Array2<f64>) -> Result<f64> {
    let m = rates.stacked();
    if eta.dim() != m.dim() || weights.dim() != m.dim() {
        return Err(Error::DimensionMismatch(format!(
            "rates {:?}, eta {:?}, weights {:?}",
            m.dim(),
            eta.dim(),
            weights.dim()
        )));
    }
    Ok(binomial_deviance(m.view(), eta.view(), weights.view()))
}

/// Leading singular pair of `a` by power iteration: returns `(a v, v)` with
/// `|v| = 1`.
fn rank1_start(a: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let k = a.ncols();
    let start = a
        .rows()
        .into_iter()
        .max_by(|x, y| x.dot(x).total_cmp(&y.dot(y)))
        .map(|r| r.to_owned());
    let mut v = match start {
        Some(r) if r.dot(&r) > 0.0 => {
            let n = r.dot(&r).sqrt();
            r / n
        }
        _ => return (Array1::zeros(a.nrows()), Array1::from_elem(k, 1.0 / (k as f64).sqrt())),
    };
    for _ in 0..POWER_ITERATIONS {
        let u = a.dot(&v);
        let next = a.t().dot(&u);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            break;
        }
        let next = next / norm;
        let delta = (&next - &v).mapv(|x| x * x).sum().sqrt();
        v = next;
        if delta < POWER_TOL {
            break;
        }
    }
    (a.dot(&v), v)
}

/// Rescale to `|v| = 1` with the first non-zero `v_j` positive; `eta` is
/// unchanged.
fn normalize(lambda: &mut [f64], v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        let k = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / k.sqrt());
        lambda.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let sign = match v.iter().find(|&&x| x != 0.0) {
        Some(&x) if x < 0.0 => -1.0,
        _ => 1.0,
    };
    v.iter_mut().for_each(|x| *x *= sign / norm);
    lambda.iter_mut().for_each(|x| *x *= sign * norm);
}

/// One-dimensional Fisher-scoring update of `b` in the predictor
/// `offset_c + b * x_c`, halving the step until the local deviance does not
/// increase. Returns the accepted value.
fn scalar_update(b: f64, cells: &[Cell]) -> Result<f64> {
    let local_dev = |b: f64| cells.iter().map(|c| c.w * unit_deviance(c.y, c.offset + b * c.x)).sum::<f64>();
    let mut score = 0.0;
    let mut info = 0.0;
    for c in cells {
        let mu = logistic(c.offset + b * c.x);
        score += c.w * c.x * (c.y - mu);
        info += c.w * mu * (1.0 - mu) * c.x * c.x;
    }
    if !info.is_finite() || info < f64::MIN_POSITIVE {
        return Err(Error::NumericalDegeneracy(format!(
            "working-weight denominator underflowed (sum S x^2 = {info:e})"
        )));
    }
    let proposal = b + score / info;
    if !proposal.is_finite() {
        return Err(Error::NumericalDegeneracy("non-finite IRLS update".into()));
    }
    let current = local_dev(b);
    let mut step = proposal - b;
    for _ in 0..=MAX_HALVINGS {
        let candidate = b + step;
        if local_dev(candidate) <= current {
            return Ok(candidate);
        }
        step *= 0.5;
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    x: f64,
    offset: f64,
    y: f64,
    w: f64,
}

/// Joint Fisher step for one row's `(a, b)` in `a + b * x_c`.
fn row_update(a: f64, b: f64, cells: &[Cell]) -> Result<(f64, f64)> {
    let local_dev = |a: f64, b: f64| cells.iter().map(|c| c.w * unit_deviance(c.y, a + b * c.x)).sum::<f64>();
    let (mut s0, mut s1, mut i00, mut i01, mut i11) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for c in cells {
        let mu = logistic(a + b * c.x);
        let r = c.w * (c.y - mu);
        let h = c.w * mu * (1.0 - mu);
        s0 += r;
        s1 += r * c.x;
        i00 += h;
        i01 += h * c.x;
        i11 += h * c.x * c.x;
    }
    if !i00.is_finite() || i00 < f64::MIN_POSITIVE {
        return Err(Error::NumericalDegeneracy(format!(
            "working-weight denominator underflowed (sum S = {i00:e})"
        )));
    }
    let det = i00 * i11 - i01 * i01;
    let (da, db) = if det > 1e-12 * i00 * i11.max(f64::MIN_POSITIVE) && det.is_finite() {
        ((i11 * s0 - i01 * s1) / det, (i00 * s1 - i01 * s0) / det)
    } else {
        // x carries no information beyond the intercept
        (s0 / i00, 0.0)
    };
    if !(da.is_finite() && db.is_finite()) {
        return Err(Error::NumericalDegeneracy("non-finite IRLS update".into()));
    }
    let current = local_dev(a, b);
    let mut frac = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let (ca, cb) = (a + frac * da, b + frac * db);
        if local_dev(ca, cb) <= current {
            return Ok((ca, cb));
        }
        frac *= 0.5;
    }
    Ok((a, b))
}

/// Fits the weighted factorization to the stacked rates.
///
/// Returns [`Error::NoConvergence`] carrying the last iterate when
/// `max_iter` is reached first.
pub fn fit(rates: &PairwiseRates, costs: &CostWeights, opts: &FitOptions) -> Result<FactorizationFit> {
    let (t, k) = (rates.t(), rates.n_pairs());
    if costs.dim() != (t, k) {
        return Err(Error::DimensionMismatch(format!(
            "cost weights are {:?}, rates are {:?}",
            costs.dim(),
            (t, k)
        )));
    }
    let eps = opts.clamp_eps.unwrap_or(0.5 / rates.max_trials() as f64);
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidArgument(format!("clamp_eps must lie in (0, 0.5), got {eps}")));
    }
    let weights = rates.trials() * costs.stacked();
    let response = rates.stacked().mapv(|m| m.clamp(eps, 1.0 - eps));
    fit_response(response, weights, eps, opts)
}

fn predictor(lambda0: &[f64], lambda: &[f64], v: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((lambda0.len(), v.len()), |(i, j)| lambda0[i] + lambda[i] * v[j])
}

/// Moves the mean of `v` into `lambda0` and rescales to `|v| = 1`; `eta` is
/// unchanged up to rounding.
fn recenter(lambda0: &mut [f64], lambda: &mut [f64], v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for (a, &l) in lambda0.iter_mut().zip(lambda.iter()) {
        *a += l * m;
    }
    v.iter_mut().for_each(|x| *x -= m);
    normalize(lambda, v);
}

pub(crate) fn fit_response(response: Array2<f64>, weights: Array2<f64>, eps: f64, opts: &FitOptions) -> Result<FactorizationFit> {
    let (rows, cols) = response.dim();
    let start = response.mapv(logit);
    let mut lambda0 = start.mean_axis(Axis(1)).expect("at least one column").to_vec();
    let (mut lambda, mut v) = if cols > 1 {
        let centered = &start - &Array1::from(lambda0.clone()).insert_axis(Axis(1));
        let (l, v) = rank1_start(&centered);
        (l.to_vec(), v.to_vec())
    } else {
        (vec![0.0; rows], vec![0.0])
    };
    if cols > 1 {
        recenter(&mut lambda0, &mut lambda, &mut v);
    }

    let total_dev = |a: &[f64], l: &[f64], v: &[f64]| binomial_deviance(response.view(), predictor(a, l, v).view(), weights.view());
    let mut trace = vec![total_dev(&lambda0, &lambda, &v)];
    let mut converged = false;
    let mut iterations = 0;

    let mut cells = Vec::with_capacity(rows.max(cols));
    while iterations < opts.max_iter {
        iterations += 1;
        let prev_dev = *trace.last().unwrap();
        let prev = (lambda0.clone(), lambda.clone(), v.clone());

        for i in 0..rows {
            cells.clear();
            cells.extend((0..cols).map(|j| Cell {
                x: v[j],
                offset: 0.0,
                y: response[[i, j]],
                w: weights[[i, j]],
            }));
            if cols > 1 {
                (lambda0[i], lambda[i]) = row_update(lambda0[i], lambda[i], &cells)?;
            } else {
                cells[0].x = 1.0;
                lambda0[i] = scalar_update(lambda0[i], &cells)?;
            }
        }
        // with lambda == 0 every v gives the same eta
        if cols > 1 && lambda.iter().any(|&l| l != 0.0) {
            for j in 0..cols {
                cells.clear();
                cells.extend((0..rows).map(|i| Cell {
                    x: lambda[i],
                    offset: lambda0[i],
                    y: response[[i, j]],
                    w: weights[[i, j]],
                }));
                v[j] = scalar_update(v[j], &cells)?;
            }
            recenter(&mut lambda0, &mut lambda, &mut v);
        }

        let mut dev = total_dev(&lambda0, &lambda, &v);
        if dev > prev_dev {
            // Each block is monotone in exact arithmetic; guard the summed
            // deviance against rounding by moving back toward the previous
            // iterate.
            let next = (lambda0.clone(), lambda.clone(), v.clone());
            let mut accepted = false;
            let mut frac = 1.0;
            let mix = |a: &[f64], b: &[f64], f: f64| a.iter().zip(b).map(|(x, y)| x + f * (y - x)).collect::<Vec<f64>>();
            for _ in 0..MAX_HALVINGS {
                frac *= 0.5;
                let (mut a, mut l, mut w) = (mix(&prev.0, &next.0, frac), mix(&prev.1, &next.1, frac), mix(&prev.2, &next.2, frac));
                if cols > 1 {
                    recenter(&mut a, &mut l, &mut w);
                }
                let d = total_dev(&a, &l, &w);
                if d <= prev_dev {
                    (lambda0, lambda, v) = (a, l, w);
                    dev = d;
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                (lambda0, lambda, v) = prev;
                dev = prev_dev;
            }
        }
        trace.push(dev);
        if (prev_dev - dev).abs() / (dev.abs() + 0.1) < opts.tol {
            converged = true;
            break;
        }
    }

    let fit = FactorizationFit {
        eta: predictor(&lambda0, &lambda, &v),
        lambda0,
        lambda,
        v,
        weights,
        deviance_trace: trace,
        converged,
        iterations,
        clamp_eps: eps,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::NoConvergence {
            iterations,
            fit: Box::new(fit),
        })
    }
}

/// Splits `eta` into column means (the shared TPR / FPR threshold effects)
/// and the centered residual.
pub fn center(fit: &FactorizationFit) -> CenteredComponents {
    let t = fit.t();
    let means = fit.eta.mean_axis(Axis(1)).expect("at least one column");
    let residual = &fit.eta - &means.view().insert_axis(Axis(1));
    CenteredComponents {
        lambda0_tp: means.slice(ndarray::s![..t]).to_vec(),
        lambda0_fp: means.slice(ndarray::s![t..]).to_vec(),
        residual,
    }
}

/// Projection of `eta` onto the all-ones column vector in the inner product
/// weighted by `centering` (2T x K, positive): each row's threshold effect
/// is the weighted mean of its cells. Uniform weights reduce to [`center`].
pub fn center_weighted(fit: &FactorizationFit, centering: &Array2<f64>) -> Result<CenteredComponents> {
    if centering.dim() != fit.eta.dim() {
        return Err(Error::DimensionMismatch(format!(
            "centering weights are {:?}, eta is {:?}",
            centering.dim(),
            fit.eta.dim()
        )));
    }
    let t = fit.t();
    let means: Array1<f64> = fit
        .eta
        .rows()
        .into_iter()
        .zip(centering.rows())
        .map(|(e, w)| e.dot(&w) / w.sum())
        .collect();
    let residual = &fit.eta - &means.view().insert_axis(Axis(1));
    Ok(CenteredComponents {
        lambda0_tp: means.slice(ndarray::s![..t]).to_vec(),
        lambda0_fp: means.slice(ndarray::s![t..]).to_vec(),
        residual,
    })
}
