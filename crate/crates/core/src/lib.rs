//! Multiclass ROC analysis by rank-1 binomial factorization.
//!
//! A k-class probabilistic classifier is reduced to its k(k-1) ordered
//! one-vs-one problems. For each pair the true/false positive rates are
//! tabulated over a quantile threshold grid, the stacked rate matrix is
//! summarized with a weighted binomial (logit link) factorization made of
//! per-threshold effects plus a centered rank-1 term, and the threshold
//! effects trace a single ROC-like curve whose area is the `D` statistic.
//! Two-class inputs keep only the pair `0>1`, which reduces `D` to the
//! ordinary binary AUC.
//!
//! Pipeline:
//!
//! ```text
//! ScoredDataset -> PairwiseRates -> FactorizationFit -> CenteredComponents -> RocCurve -> D
//!                                         |
//!                                         +-> parametric bootstrap -> CI / ranking table
//! ```

pub mod baselines;
pub mod bootstrap;
pub mod data;
pub mod error;
pub mod experiments;
pub mod export;
pub mod factorize;
pub mod pairwise;
pub mod pipeline;
pub mod roc;

pub use baselines::{hand_till_m, mann_whitney_auc, HandTillVariant, PairAuc};
pub use bootstrap::{bootstrap, ranking_probabilities, BootstrapOptions, BootstrapResult, RankingTable};
pub use data::{ClassCounts, DataFormat, ScoredDataset};
pub use error::{Error, Result};
pub use factorize::{
    cardinality_weights, center, center_weighted, centering_weights, deviance, fit, CenteredComponents, CostWeights, FactorizationFit, FitOptions,
    WeightMode,
};
pub use pairwise::{enumerate_pairs, rate_matrices, threshold_grid, PairIndex, PairwiseRates};
pub use pipeline::{evaluate, Evaluation, EvaluationOptions};
pub use roc::{curve, d_statistic, summary_curve, DStatistic, RocCurve};
