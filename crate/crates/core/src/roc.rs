//! ROC-like curve from the centered components and its area, `D`.

use serde::{Deserialize, Serialize};

use crate::factorize::CenteredComponents;

/// Curve points in the unit square, sorted by x, starting at (0,0) and
/// ending at (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    /// Quantile level of each interior point, in curve order; `None` for the
    /// synthetic corners.
    pub source_levels: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DStatistic(pub f64);

impl DStatistic {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for DStatistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}", self.0)
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Curve without level annotations.
pub fn curve(centered: &CenteredComponents) -> RocCurve {
    curve_with_levels(centered, None)
}

/// Maps each threshold row through the logistic function and orders the
/// points by (x, y).
pub fn curve_with_levels(centered: &CenteredComponents, levels: Option<&[f64]>) -> RocCurve {
    assert_eq!(
        centered.lambda0_tp.len(),
        centered.lambda0_fp.len(),
        "TPR and FPR components must have equal length"
    );
    let mut interior: Vec<((f64, f64), Option<f64>)> = centered
        .lambda0_fp
        .iter()
        .zip(&centered.lambda0_tp)
        .enumerate()
        .map(|(t, (&fp, &tp))| ((logistic(fp), logistic(tp)), levels.map(|l| l[t])))
        .collect();
    let in_order = interior.windows(2).all(|w| w[0].0 .0 <= w[1].0 .0);
    interior.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    if !in_order {
        log::debug!("curve points were reordered by x before integration");
    }
    let mut points = Vec::with_capacity(interior.len() + 2);
    let mut source_levels = Vec::with_capacity(interior.len() + 2);
    points.push((0.0, 0.0));
    source_levels.push(None);
    for (p, l) in interior {
        points.push(p);
        source_levels.push(l);
    }
    points.push((1.0, 1.0));
    source_levels.push(None);
    RocCurve { points, source_levels }
}

/// Least-squares non-decreasing fit to `values` (pool adjacent violators).
pub fn isotonic(values: &[f64]) -> Vec<f64> {
    // blocks of (mean, size)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        let mut cur = (v, 1usize);
        while let Some(&(m, n)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let size = n + cur.1;
            cur = ((m * n as f64 + cur.0 * cur.1 as f64) / size as f64, size);
        }
        blocks.push(cur);
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

/// Threshold effects made non-decreasing in threshold order (rows run from
/// the highest threshold to the lowest, so both rates can only grow).
///
/// Without this, noise in a nearly flat coordinate lets the x-sort scramble
/// the other one: a perfect classifier whose FPR effects differ only by
/// resampling noise would get an arbitrary final height.
pub fn monotone(centered: &CenteredComponents) -> CenteredComponents {
    let out = CenteredComponents {
        lambda0_tp: isotonic(&centered.lambda0_tp),
        lambda0_fp: isotonic(&centered.lambda0_fp),
        residual: centered.residual.clone(),
    };
    if out.lambda0_tp != centered.lambda0_tp || out.lambda0_fp != centered.lambda0_fp {
        log::debug!("threshold effects were pooled to restore monotonicity");
    }
    out
}

/// The curve reported by the pipeline: [`monotone`] followed by
/// [`curve_with_levels`].
pub fn summary_curve(centered: &CenteredComponents, levels: Option<&[f64]>) -> RocCurve {
    curve_with_levels(&monotone(centered), levels)
}

/// Trapezoidal area under the curve.
pub fn d_statistic(curve: &RocCurve) -> DStatistic {
    let area: f64 = curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum();
    DStatistic(area.clamp(0.0, 1.0))
}

/// Trapezoidal area of the empirical ROC curve of a binary scorer, with
/// every distinct score as a threshold (ties handled by joint steps).
pub fn empirical_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_x, mut prev_y) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (x, y) = (fp / n_neg, tp / n_pos);
        area += (x - prev_x) * (y + prev_y) * 0.5;
        prev_x = x;
        prev_y = y;
    }
    area
}

impl RocCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y")?;
        for (x, y) in &self.points {
            writeln!(w, "{},{}", crate::data::fmt_real(*x), crate::data::fmt_real(*y))?;
        }
        Ok(())
    }
}
