use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multiroc::bootstrap::{percentile_interval, ranking_probabilities, BootstrapResult};
use multiroc::experiments::{generate_multinomial, LabelMode, SimulationConfig};
use multiroc::factorize::{self, CostWeights, FitOptions, WeightMode};
use multiroc::pairwise::{default_levels, rate_matrices};
use multiroc::pipeline::{evaluate, evaluate_rates, EvaluationOptions};
use multiroc::roc::{d_statistic, RocCurve};
use multiroc::ScoredDataset;

/// Scores with a class-dependent tilt of strength `signal`.
fn dataset(seed: u64, n: usize, k: usize, signal: f64) -> ScoredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    let probs = Array2::from_shape_fn((n, k), |(r, c)| rng.random::<f64>() + 0.05 + if c == labels[r] { signal } else { 0.0 });
    let sums = probs.sum_axis(ndarray::Axis(1));
    let probs = &probs / &sums.insert_axis(ndarray::Axis(1));
    ScoredDataset::new(probs, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_invariants(seed in 0u64..1000, n in 40usize..300, k in 3usize..5, signal in 0.0f64..1.5, weighted in any::<bool>()) {
        let ds = dataset(seed, n, k, signal);
        let rates = rate_matrices(&ds, &default_levels(20).unwrap()).unwrap();
        let mode = if weighted { WeightMode::Weighted } else { WeightMode::Unweighted };
        let costs = factorize::cardinality_weights(&rates, &mode).unwrap();
        let fit = factorize::fit(&rates, &costs, &FitOptions::default()).unwrap();
        for w in fit.deviance_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        let norm: f64 = fit.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9 || fit.lambda.iter().all(|&l| l == 0.0));
        prop_assert!(fit.v.iter().sum::<f64>().abs() < 1e-9);
        for i in 0..fit.eta.nrows() {
            for j in 0..fit.eta.ncols() {
                let e = fit.lambda0[i] + fit.lambda[i] * fit.v[j];
                prop_assert!((fit.eta[[i, j]] - e).abs() < 1e-12);
            }
        }

        let scaled = factorize::fit(&rates, &costs.scaled(13.0).unwrap(), &FitOptions::default()).unwrap();
        let diff = (&scaled.eta - &fit.eta).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        prop_assert!(diff < 1e-4, "weight scaling moved eta by {diff}");
    }

    #[test]
    fn d_in_unit_interval_and_order_free(seed in 0u64..1000, n in 30usize..200, k in 2usize..5, signal in 0.0f64..2.0) {
        let ds = dataset(seed, n, k, signal);
        let opts = EvaluationOptions { thresholds: 15, ..EvaluationOptions::default() };
        let e = evaluate(&ds, &opts).unwrap();
        let d = e.d.value();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(e.curve.points.windows(2).all(|w| w[0].0 <= w[1].0));
        let rev: Vec<usize> = (0..ds.n()).rev().collect();
        let r = evaluate(&ds.subset(&rev).unwrap(), &opts).unwrap();
        prop_assert_eq!(r.d.value().to_bits(), d.to_bits());
    }

    #[test]
    fn collinear_points_leave_area_unchanged(ys in proptest::collection::vec(0.0f64..1.0, 1..8), t in 0.0f64..1.0) {
        let mut ys = ys;
        ys.sort_by(f64::total_cmp);
        let n = ys.len();
        let mut points = vec![(0.0, 0.0)];
        points.extend(ys.iter().enumerate().map(|(i, &y)| ((i + 1) as f64 / (n + 1) as f64, y)));
        points.push((1.0, 1.0));
        let base = RocCurve { source_levels: vec![None; points.len()], points: points.clone() };
        let (a, b) = (points[0], points[1]);
        let mut extra = points.clone();
        extra.insert(1, (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        extra.insert(1, a);
        let more = RocCurve { source_levels: vec![None; extra.len()], points: extra };
        prop_assert!((d_statistic(&base).value() - d_statistic(&more).value()).abs() < 1e-12);
    }

    #[test]
    fn interval_nesting_and_ranking_mass(samples in proptest::collection::vec(0.0f64..1.0, 3..60), m in 2usize..4, seed in 0u64..100) {
        let inner = percentile_interval(&samples, 0.90);
        let outer = percentile_interval(&samples, 0.99);
        prop_assert!(outer.0 <= inner.0 && inner.1 <= outer.1);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let results: Vec<BootstrapResult> = (0..m)
            .map(|_| {
                let d: Vec<f64> = samples.iter().map(|_| rng.random_range(0.0..1.0)).collect();
                BootstrapResult {
                    ci: percentile_interval(&d, 0.95),
                    replicate_ids: (0..d.len()).collect(),
                    d_samples: d,
                    level: 0.95,
                    curves: None,
                    seed,
                    replicates: samples.len(),
                    dropped: 0,
                }
            })
            .collect();
        let table = ranking_probabilities(&results).unwrap();
        let total: f64 = table.rows.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for key in table.rows.keys() {
            let mut sorted = key.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..m).collect::<Vec<_>>());
        }
    }
}

#[test]
fn clamping_is_local() {
    let sim = generate_multinomial(&SimulationConfig {
        n: 5000,
        p: 10,
        k: 5,
        d: 10,
        seed: 17,
        label_mode: LabelMode::Random,
    })
    .unwrap();
    let noise = multiroc::experiments::noise_covariates(5000, 10, 18);
    let fit = multiroc::experiments::fit_multinomial(
        noise.view(),
        sim.dataset.labels(),
        5,
        &multiroc::experiments::MultinomialOptions::default(),
    )
    .unwrap();
    let rates = rate_matrices(&fit.dataset, &default_levels(50).unwrap()).unwrap();
    let d = |eps: f64| {
        let opts = FitOptions { clamp_eps: Some(eps), ..FitOptions::default() };
        let costs = CostWeights::ones(rates.t(), rates.n_pairs());
        let centering = Array2::ones((2 * rates.t(), rates.n_pairs()));
        evaluate_rates(rates.clone(), costs, centering, &opts).unwrap().d.value()
    };
    let (a, b) = (d(1e-4), d(1e-5));
    assert!((a - b).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn binary_uses_one_pair_column() {
    let ds = dataset(3, 200, 2, 0.6);
    let e = evaluate(&ds, &EvaluationOptions::default()).unwrap();
    assert_eq!(e.rates.n_pairs(), 1);
    assert_eq!(e.rates.pairs[0].pos, 0);
    assert_eq!(e.fit.v, vec![0.0]);
}
