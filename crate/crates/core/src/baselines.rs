//! Reference statistics: pairwise AUC by the Mann-Whitney U statistic and
//! the Hand-Till average over class pairs.

use serde::{Deserialize, Serialize};

use crate::data::ScoredDataset;
use crate::error::{Error, Result};
use crate::pairwise::{enumerate_pairs, PairIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairAuc {
    pub pair: PairIndex,
    pub value: f64,
}

/// `P(score of a pos-class observation > score of a neg-class observation)`
/// with ties counted as one half, where the score is the probability of the
/// pos class. Computed from midranks of the pooled scores.
pub fn mann_whitney_auc(dataset: &ScoredDataset, pair: PairIndex) -> Result<PairAuc> {
    let scores = dataset.scores(pair.pos);
    let mut pooled: Vec<(f64, bool)> = scores
        .iter()
        .zip(dataset.labels())
        .filter(|(_, &l)| l == pair.pos || l == pair.neg)
        .map(|(&s, &l)| (s, l == pair.pos))
        .collect();
    let n_pos = pooled.iter().filter(|p| p.1).count() as u64;
    let n_neg = pooled.len() as u64 - n_pos;
    if n_pos == 0 {
        return Err(Error::EmptyClass { class: pair.pos });
    }
    if n_neg == 0 {
        return Err(Error::EmptyClass { class: pair.neg });
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the rank sum of the positives, in integers: a tie block covering
    // 1-based ranks a..=b has midrank (a + b) / 2.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let twice_midrank = (i + 1 + j + 1) as u64;
        let positives = pooled[i..=j].iter().filter(|p| p.1).count() as u64;
        twice_rank_sum += twice_midrank * positives;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    let value = twice_u as f64 / (2 * n_pos * n_neg) as f64;
    Ok(PairAuc { pair, value })
}

/// All k(k-1) ordered-pair AUCs in pair enumeration order.
pub fn pairwise_aucs(dataset: &ScoredDataset) -> Result<Vec<PairAuc>> {
    enumerate_pairs(dataset.k())?
        .into_iter()
        .map(|p| mann_whitney_auc(dataset, p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HandTillVariant {
    /// Plain mean over all ordered pairs.
    #[default]
    OrderedPairs,
    /// Mean over unordered pairs of `(A(i,j) + A(j,i)) / 2`.
    Symmetrized,
}

pub fn hand_till_m(dataset: &ScoredDataset) -> Result<f64> {
    hand_till_m_with(dataset, HandTillVariant::OrderedPairs)
}

pub fn hand_till_m_with(dataset: &ScoredDataset, variant: HandTillVariant) -> Result<f64> {
    let k = dataset.k();
    let aucs = pairwise_aucs(dataset)?;
    match variant {
        HandTillVariant::OrderedPairs => Ok(aucs.iter().map(|a| a.value).sum::<f64>() / aucs.len() as f64),
        HandTillVariant::Symmetrized => {
            let mut total = 0.0;
            for i in 0..k {
                for j in i + 1..k {
                    let a = aucs[PairIndex::new(i, j, k)?.flat].value;
                    let b = aucs[PairIndex::new(j, i, k)?.flat].value;
                    total += 0.5 * (a + b);
                }
            }
            Ok(total / (k * (k - 1) / 2) as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive comparison over all positive/negative pairs.
    fn brute_force(ds: &ScoredDataset, pair: PairIndex) -> f64 {
        let s = ds.scores(pair.pos);
        let l = ds.labels();
        let pos: Vec<f64> = (0..ds.n()).filter(|&r| l[r] == pair.pos).map(|r| s[r]).collect();
        let neg: Vec<f64> = (0..ds.n()).filter(|&r| l[r] == pair.neg).map(|r| s[r]).collect();
        let mut twice = 0u64;
        for &a in &pos {
            for &b in &neg {
                twice += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * pos.len() * neg.len()) as f64
    }

    fn dataset(seed: u64, n: usize, k: usize, coarse: bool) -> ScoredDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = Array2::zeros((n, k));
        for mut row in probs.rows_mut() {
            let raw: Vec<f64> = (0..k)
                .map(|_| if coarse { rng.random_range(1..4) as f64 } else { rng.random::<f64>() + 0.01 })
                .collect();
            let s: f64 = raw.iter().sum();
            for (c, x) in raw.into_iter().enumerate() {
                row[c] = x / s;
            }
        }
        let labels = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        ScoredDataset::new(probs, labels).unwrap()
    }

    fn binary(scores0: &[f64], labels: &[usize]) -> ScoredDataset {
        let probs = Array2::from_shape_fn((scores0.len(), 2), |(r, c)| if c == 0 { scores0[r] } else { 1.0 - scores0[r] });
        ScoredDataset::new(probs, labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let ds = binary(&[0.9, 0.8, 0.1, 0.2], &[0, 0, 1, 1]);
        let p = enumerate_pairs(2).unwrap();
        assert_eq!(mann_whitney_auc(&ds, p[0]).unwrap().value, 1.0);
        assert_eq!(mann_whitney_auc(&ds, p[1]).unwrap().value, 1.0);
    }

    #[test]
    fn identical_multisets() {
        let ds = binary(&[0.3, 0.6, 0.6, 0.3, 0.6, 0.6], &[0, 0, 0, 1, 1, 1]);
        let p = enumerate_pairs(2).unwrap();
        assert_eq!(mann_whitney_auc(&ds, p[0]).unwrap().value, 0.5);
    }

    #[test]
    fn matches_exhaustive_comparison() {
        for seed in 0..20 {
            let ds = dataset(seed, 20, 2, seed % 2 == 0);
            for p in enumerate_pairs(2).unwrap() {
                assert_eq!(mann_whitney_auc(&ds, p).unwrap().value, brute_force(&ds, p));
            }
        }
    }

    #[test]
    fn binary_complementary_columns() {
        let ds = dataset(3, 50, 2, false);
        let p = enumerate_pairs(2).unwrap();
        let a = mann_whitney_auc(&ds, p[0]).unwrap().value;
        let b = mann_whitney_auc(&ds, p[1]).unwrap().value;
        assert!((a - b).abs() < 1e-12);
        assert!((hand_till_m(&ds).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn hand_till_double_loop() {
        let ds = dataset(8, 30, 3, false);
        let mut total = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    total += brute_force(&ds, PairIndex::new(i, j, 3).unwrap());
                }
            }
        }
        let m = hand_till_m(&ds).unwrap();
        assert!((m - total / 6.0).abs() < 1e-12);
        let sym = hand_till_m_with(&ds, HandTillVariant::Symmetrized).unwrap();
        assert!((m - sym).abs() < 1e-12);
    }

    #[test]
    fn perfect_multiclass() {
        let n = 40;
        let k = 4;
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let probs = Array2::from_shape_fn((n, k), |(r, c)| if c == labels[r] { 0.7 } else { 0.1 });
        let ds = ScoredDataset::new(probs, labels).unwrap();
        assert_eq!(hand_till_m(&ds).unwrap(), 1.0);
    }

    #[test]
    fn replicating_a_class_leaves_pair_aucs_unchanged() {
        let ds = dataset(21, 45, 3, true);
        let base = pairwise_aucs(&ds).unwrap();
        for m in 2..4 {
            let mut idx: Vec<usize> = (0..ds.n()).collect();
            for r in 0..ds.n() {
                if ds.labels()[r] == 1 {
                    idx.extend(std::iter::repeat_n(r, m - 1));
                }
            }
            let replicated = pairwise_aucs(&ds.subset(&idx).unwrap()).unwrap();
            for (a, b) in base.iter().zip(&replicated) {
                assert_eq!(a.value, b.value);
            }
        }
    }
}
