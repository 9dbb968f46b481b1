use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xai_triage::rebalance::{
    fit_weighted_logreg, make_partitions, weighted_loss_and_gradient, ClassWeights, FeatureMatrix,
    SolverConfig, Standardization,
};
use xai_triage::ClassSet;

struct Instance {
    features: FeatureMatrix,
    weights: ClassWeights,
    w: Vec<f64>,
    b: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..40);
    let f = rng.random_range(1..8);
    let k = rng.random_range(2..5);
    let values = (0..n * f).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n)
        .map(|i| if i < k { i } else { rng.random_range(0..k) })
        .collect();
    Instance {
        features: FeatureMatrix::new(f, values, labels).unwrap(),
        weights: ClassWeights::new((0..k).map(|_| rng.random_range(0.2..5.0)).collect()).unwrap(),
        w: (0..k * f).map(|_| rng.random_range(-1.0..1.0)).collect(),
        b: (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn loss(i: &Instance, w: &[f64], b: &[f64]) -> f64 {
    weighted_loss_and_gradient(&i.features, &i.weights, w, b).0
}

/// Relative error between analytic and central-difference gradients,
/// `|g - g_fd| / max(|g|, |g_fd|)` over the full parameter vector.
fn gradient_error(i: &Instance) -> f64 {
    let (_, gw, gb) = weighted_loss_and_gradient(&i.features, &i.weights, &i.w, &i.b);
    let h = 1e-5;
    let mut numeric = Vec::new();
    for j in 0..i.w.len() {
        let (mut up, mut down) = (i.w.clone(), i.w.clone());
        up[j] += h;
        down[j] -= h;
        numeric.push((loss(i, &up, &i.b) - loss(i, &down, &i.b)) / (2.0 * h));
    }
    for j in 0..i.b.len() {
        let (mut up, mut down) = (i.b.clone(), i.b.clone());
        up[j] += h;
        down[j] -= h;
        numeric.push((loss(i, &i.w, &up) - loss(i, &i.w, &down)) / (2.0 * h));
    }
    let analytic: Vec<f64> = gw.into_iter().chain(gb).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300)
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..50 {
        let e = gradient_error(&instance(seed));
        assert!(e <= 1e-5, "seed {seed}: relative error {e}");
    }
}

#[test]
fn loss_at_zero_is_log_k() {
    let i = instance(3);
    let k = i.weights.len();
    let l = loss(&i, &vec![0.0; i.w.len()], &vec![0.0; k]);
    assert!((l - (k as f64).ln()).abs() < 1e-12);
}

#[test]
fn fitting_never_raises_the_loss() {
    for seed in 0..10 {
        let i = instance(seed);
        let fit = fit_weighted_logreg(&i.features, &i.weights, &SolverConfig::default()).unwrap();
        assert!(fit.final_loss <= fit.initial_loss);
    }
}

#[test]
fn folded_standardization_is_equivalent() {
    let i = instance(8);
    let rows: Vec<usize> = (0..i.features.rows()).collect();
    let st = Standardization::fit(&i.features, &rows);
    let z = st.apply(&i.features);
    let fit = fit_weighted_logreg(&z, &i.weights, &SolverConfig::default()).unwrap();
    let folded = st.fold(&fit.head).unwrap();
    let (k, f) = (i.weights.len(), i.features.cols());
    let logit = |head: &xai_triage::rebalance::HeadWeights, x: &[f64], c: usize| {
        head.bias().data()[c]
            + (0..f)
                .map(|j| head.weights().data()[c * f + j] * x[j])
                .sum::<f64>()
    };
    for r in 0..i.features.rows() {
        for c in 0..k {
            let a = logit(&fit.head, z.row(r), c);
            let b = logit(&folded, i.features.row(r), c);
            // f32 storage of head parameters bounds the agreement
            assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}

proptest! {
    #[test]
    fn partitions_are_balanced(
        counts in prop::collection::vec(1usize..40, 2..5),
        parts in 1usize..12,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let classes = ClassSet::new((0..counts.len()).map(|c| format!("c{c}")).collect()).unwrap();
        let p = make_partitions(&labels, &classes, parts, seed).unwrap();
        let n_min = *counts.iter().min().unwrap();
        prop_assert_eq!(p.len(), parts);
        for part in &p {
            for c in 0..counts.len() {
                prop_assert_eq!(part.iter().filter(|&&i| labels[i] == c).count(), n_min);
            }
            let mut d = part.clone();
            d.dedup();
            prop_assert_eq!(d.len(), part.len());
        }
        prop_assert_eq!(p, make_partitions(&labels, &classes, parts, seed).unwrap());
    }

    #[test]
    fn gradient_check_holds_for_any_instance(seed in any::<u64>()) {
        prop_assert!(gradient_error(&instance(seed)) <= 1e-5);
    }
}
