use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multiroc::bootstrap::{bootstrap, BootstrapOptions};
use multiroc::pairwise::{default_levels, enumerate_pairs, rate_matrices, PairwiseRates};
use multiroc::pipeline::{evaluate, evaluate_rates, EvaluationOptions};
use multiroc::{CostWeights, FitOptions, ScoredDataset};

fn labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect()
}

fn random_dataset(n: usize, k: usize, seed: u64) -> ScoredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = labels(n, k, &mut rng);
    let probs = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() + 1e-3);
    let sums = probs.sum_axis(ndarray::Axis(1));
    ScoredDataset::new(&probs / &sums.insert_axis(ndarray::Axis(1)), labels).unwrap()
}

fn opts(seed: u64) -> BootstrapOptions {
    BootstrapOptions {
        seed,
        ..BootstrapOptions::default()
    }
}

#[test]
fn perfect_classifier_concentrates_at_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = 3;
    let labels = labels(6000, k, &mut rng);
    let probs = Array2::from_shape_fn((labels.len(), k), |(r, c)| if c == labels[r] { 0.8 } else { 0.1 });
    let ds = ScoredDataset::new(probs, labels).unwrap();
    let e = evaluate(&ds, &EvaluationOptions::default()).unwrap();
    let r = bootstrap(&e, &opts(3)).unwrap();
    assert!(r.d_samples.iter().all(|&d| d > 0.99), "{:?}", r.d_samples);
    assert!(r.width() < 0.01, "{:?}", r.ci);
}

/// TPR and FPR identical on every pair: the fitted threshold effects
/// coincide and the point estimate is exactly 0.5.
fn chance_rates(k: usize, trials: u64) -> PairwiseRates {
    let levels = default_levels(50).unwrap();
    let pairs = enumerate_pairs(k).unwrap();
    let t = levels.len();
    let m = Array2::from_shape_fn((t, pairs.len()), |(r, _)| {
        (((1.0 - levels[r]) * trials as f64).round()) / trials as f64
    });
    PairwiseRates {
        k,
        thresholds: Array2::zeros((t, pairs.len())),
        n_pos: vec![trials; pairs.len()],
        n_neg: vec![trials; pairs.len()],
        pairs,
        levels,
        mtp: m.clone(),
        mfp: m,
        degenerate: vec![],
    }
}

#[test]
fn random_classifier_interval_covers_half() {
    let rates = chance_rates(3, 10_000);
    let costs = CostWeights::ones(rates.t(), rates.n_pairs());
    let centering = Array2::ones((2 * rates.t(), rates.n_pairs()));
    let e = evaluate_rates(rates, costs, centering, &FitOptions::default()).unwrap();
    assert!((e.d.value() - 0.5).abs() < 1e-9, "{}", e.d.value());
    let r = bootstrap(&e, &opts(4)).unwrap();
    assert_eq!(r.d_samples.len(), 100);
    assert!(r.ci.0 <= 0.5 && 0.5 <= r.ci.1, "{:?}", r.ci);
}

fn scaled(rates: &PairwiseRates, num: u64, den: u64) -> PairwiseRates {
    let mut r = rates.clone();
    r.n_pos.iter_mut().for_each(|n| *n = *n * num / den);
    r.n_neg.iter_mut().for_each(|n| *n = *n * num / den);
    r
}

#[test]
fn halving_trials_widens_intervals() {
    let ds = random_dataset(2000, 3, 5);
    let rates = rate_matrices(&ds, &default_levels(50).unwrap()).unwrap();
    let median_width = |rates: &PairwiseRates| {
        let costs = CostWeights::ones(rates.t(), rates.n_pairs());
        let centering = Array2::ones((2 * rates.t(), rates.n_pairs()));
        let e = evaluate_rates(rates.clone(), costs, centering, &FitOptions::default()).unwrap();
        let mut w: Vec<f64> = (0..7).map(|s| bootstrap(&e, &opts(s)).unwrap().width()).collect();
        w.sort_by(f64::total_cmp);
        w[3]
    };
    // keep rates on the count lattice: double the full set, then compare
    // against the original (half the trials)
    let full = median_width(&scaled(&rates, 2, 1));
    let half = median_width(&rates);
    assert!(half > full, "half {half} vs full {full}");
}

#[test]
fn unconverged_fit_is_rejected() {
    let ds = random_dataset(300, 3, 6);
    let mut e = evaluate(&ds, &EvaluationOptions::default()).unwrap();
    e.fit.converged = false;
    assert!(bootstrap(&e, &opts(0)).is_err());
    let e = evaluate(&ds, &EvaluationOptions::default()).unwrap();
    let one = BootstrapOptions {
        replicates: 1,
        ..opts(0)
    };
    assert!(bootstrap(&e, &one).is_err());
}
