use pathattr_core::axioms::{check_same_region_consistency, probe_weak_dependence};
use pathattr_core::baseline::{enforce_min_gap_clipped, gap_feasible, gaussian_blur};
use pathattr_core::metrics::{auc_trapezoid, rank_features, Curve};
use pathattr_core::model::{crosses_kink, finite_diff_oracle, kinks_near};
use pathattr_core::path::{expected_gradients, pairwise_sum, riemann_ig, RiemannConfig};
use pathattr_core::pwl::{HalfSpace, Piece};
use pathattr_core::valid_path::{attribute_with_baselines, integrate_single_baseline};
use pathattr_core::{ClassOutput, Model, ModelSpec, OutputMode, PwlModel, ScalarModel, TensorF, ValueRange};
use proptest::prelude::*;

fn t(v: Vec<f64>) -> TensorF {
    TensorF::from_vec(v).unwrap()
}

fn mlp(sizes: &[usize], seed: u64) -> Model {
    Model::compile(ModelSpec::random_mlp(sizes, seed)).unwrap()
}

/// Two affine pieces split by the hyperplane `normal·x = offset`.
fn split_model(normal: Vec<f64>, offset: f64, w0: Vec<f64>, b0: f64, w1: Vec<f64>, b1: f64) -> PwlModel {
    let neg: Vec<f64> = normal.iter().map(|v| -v).collect();
    PwlModel::new(
        normal.len(),
        vec![
            Piece {
                region: vec![HalfSpace { normal, offset, strict: false }],
                weights: w0,
                bias: b0,
            },
            Piece {
                region: vec![HalfSpace { normal: neg, offset: -offset, strict: true }],
                weights: w1,
                bias: b1,
            },
        ],
        0.0,
    )
    .unwrap()
}

fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

/// Sign with `sgn(0) = 0`, written out independently of the library.
fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), x in vec_in(3, 0.0, 1.0)) {
        let m = mlp(&[3, 8, 8, 2], seed);
        let x = t(x);
        let h = 1e-6;
        let skip = kinks_near(&m, &x, h).unwrap();
        for class in 0..2 {
            let g = m.grad_input(&x, class).unwrap();
            let fd = finite_diff_oracle(&m, &x, class, h).unwrap();
            for i in (0..3).filter(|i| !skip.contains(i)) {
                let (a, b) = (g.as_slice()[i], fd.as_slice()[i]);
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "feature {i}: {a} vs {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn linear_between_kinks(seed in any::<u64>(), a in vec_in(3, 0.0, 1.0), d in vec_in(3, -0.05, 0.05)) {
        // one hidden layer: pre-activations are affine along the segment
        let m = mlp(&[3, 16, 2], seed);
        let b: Vec<f64> = a.iter().zip(&d).map(|(u, v)| u + v).collect();
        let (ta, tb) = (t(a.clone()), t(b.clone()));
        prop_assume!(!crosses_kink(&m, &ta, &tb).unwrap());
        let mid = t(a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect());
        let (fa, fb, fm) = (
            m.forward_logits(&ta).unwrap(),
            m.forward_logits(&tb).unwrap(),
            m.forward_logits(&mid).unwrap(),
        );
        for c in 0..2 {
            let lin = 0.5 * (fa[c] + fb[c]);
            prop_assert!((fm[c] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn ig_is_exact_on_affine_functions(
        w in vec_in(4, -3.0, 3.0),
        bias in -2.0..2.0f64,
        x in vec_in(4, -1.0, 1.0),
        base in vec_in(4, -1.0, 1.0),
        steps in 1usize..64,
    ) {
        let f = PwlModel::affine(w.clone(), bias).unwrap();
        let (x, base) = (t(x), t(base));
        let map = riemann_ig(&f, &x, &base, &RiemannConfig::midpoint(steps)).unwrap();
        let gap = f.value(&x).unwrap() - f.value(&base).unwrap();
        prop_assert!((map.scores.sum() - gap).abs() <= 1e-9 * (1.0 + gap.abs()));
        for i in 0..4 {
            let expect = w[i] * (x.as_slice()[i] - base.as_slice()[i]);
            prop_assert!((map.scores.as_slice()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn min_gap_and_range_hold(x in vec_in(6, 0.0, 1.0), xp in vec_in(6, -0.5, 1.5), delta in 0.001..0.4f64) {
        let range = ValueRange::default();
        let (x, xp) = (t(x), t(xp));
        let (out, conflicts) = enforce_min_gap_clipped(&x, &xp, delta, range).unwrap();
        prop_assert_eq!(conflicts, 0);
        prop_assert!(range.contains(&out));
        for (a, b) in x.as_slice().iter().zip(out.as_slice()) {
            prop_assert!(gap_feasible(*a, delta, range));
            prop_assert!((a - b).abs() >= delta, "{a} {b} {delta}");
        }
    }

    #[test]
    fn blur_stays_within_input_bounds(v in vec_in(36, 0.0, 1.0), sigma in 0.3..4.0f64) {
        let x = TensorF::new(vec![6, 6], v).unwrap();
        let lo = x.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let b = gaussian_blur(&x, sigma).unwrap();
        for v in b.as_slice() {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive(parts in prop::collection::vec(vec_in(3, -10.0, 10.0), 0..40)) {
        let naive: Vec<f64> = (0..3).map(|i| parts.iter().map(|p| p[i]).sum()).collect();
        let tree = pairwise_sum(parts.clone(), 3);
        for (a, b) in naive.iter().zip(&tree) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn ranking_is_a_permutation_and_auc_is_bounded(
        s in vec_in(12, -1.0, 1.0),
        ys in vec_in(5, 0.0, 1.0),
    ) {
        let mut order = rank_features(&t(s.clone())).order;
        for w in order.windows(2) {
            prop_assert!(s[w[0]] > s[w[1]] || (s[w[0]] == s[w[1]] && w[0] < w[1]));
        }
        order.sort();
        prop_assert_eq!(order, (0..12).collect::<Vec<_>>());
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, y)| (i as f64 / 4.0, *y)).collect();
        let auc = auc_trapezoid(&Curve::new(pts).unwrap());
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(auc >= lo - 1e-15 && auc <= hi + 1e-15);
    }

    #[test]
    fn same_region_ratio_holds_for_any_upper_piece(w in vec_in(2, 0.1, 5.0), bias in -3.0..3.0f64, seed in any::<u64>()) {
        let m = PwlModel::example1().with_piece_params(1, w, bias).unwrap();
        let r = check_same_region_consistency(&m, 1, 20, seed).unwrap();
        prop_assert_eq!(r.passed, Some(true), "{}", r.summary());
    }

    #[test]
    fn same_region_attribution_ignores_other_pieces(
        x in vec_in(2, 1.01, 6.0),
        base in vec_in(2, 1.01, 6.0),
        seed in any::<u64>(),
    ) {
        let r = probe_weak_dependence(&PwlModel::example1(), &x, &base, 10, seed).unwrap();
        prop_assert_eq!(r.passed, Some(true), "{}", r.summary());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn oracle_agrees_with_dense_riemann_sum(
        normal in vec_in(3, -1.0, 1.0),
        offset in -0.5..0.5f64,
        w0 in vec_in(3, -4.0, 4.0),
        w1 in vec_in(3, -4.0, 4.0),
        b0 in -1.0..1.0f64,
        b1 in -1.0..1.0f64,
        x in vec_in(3, -2.0, 2.0),
        base in vec_in(3, -2.0, 2.0),
    ) {
        prop_assume!(normal.iter().map(|v| v * v).sum::<f64>() > 1e-2);
        let f = split_model(normal, offset, w0, b0, w1, b1);
        let exact = f.exact_path_attribution(&x, &base).unwrap();
        let approx = riemann_ig(&f, &t(x), &t(base), &RiemannConfig::midpoint(100_000)).unwrap();
        for (e, a) in exact.iter().zip(approx.scores.as_slice()) {
            prop_assert!((e - a).abs() <= 1e-3 * (1.0 + e.abs()), "{exact:?} vs {:?}", approx.scores.as_slice());
        }
    }

    #[test]
    fn filter_decisions_replay_exactly(seed in any::<u64>(), x in vec_in(3, 0.0, 1.0), base in vec_in(3, 0.0, 1.0), steps in 1usize..80) {
        let m = mlp(&[3, 8, 1], seed);
        let f = ClassOutput::new(&m, 0, OutputMode::Logit);
        let (tx, tb) = (t(x.clone()), t(base.clone()));
        let got = integrate_single_baseline(&f, &tx, &tb, steps, seed, true).unwrap();
        let masks = got.accepted.as_ref().unwrap();
        prop_assert_eq!(masks.len(), steps);
        let rho = m.grad_input(&tx, 0).unwrap();
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for (k, &a) in got.alphas.iter().enumerate() {
            let p: Vec<f64> = base.iter().zip(&x).map(|(b, xi)| b + a * (xi - b)).collect();
            let g = m.grad_input(&t(p.clone()), 0).unwrap();
            for i in 0..3 {
                let r = rho.as_slice()[i];
                let rt = (x[i] - p[i]) * g.as_slice()[i];
                let valid = sgn(r) == sgn(rt) && r.abs() > rt.abs();
                prop_assert_eq!(masks[k][i], valid, "alpha {} feature {}", a, i);
                if valid {
                    sums[i] += g.as_slice()[i];
                    counts[i] += 1;
                }
            }
        }
        prop_assert_eq!(&got.counts[..], &counts[..]);
        for i in 0..3 {
            prop_assert!((got.accum[i] - sums[i]).abs() <= 1e-12 * (1.0 + sums[i].abs()));
        }
    }
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let m = mlp(&[4, 16, 16, 3], 11);
    let f = ClassOutput::new(&m, 1, OutputMode::Probability);
    let x = t(vec![0.3, 0.9, 0.1, 0.6]);
    let bases = vec![t(vec![0.0; 4]), t(vec![0.5; 4]), t(vec![1.0, 0.0, 1.0, 0.0])];
    let run = || {
        (
            riemann_ig(&f, &x, &bases[0], &RiemannConfig::uniform(333, 5)).unwrap().scores,
            expected_gradients(&f, &x, &bases, 301, 9).unwrap().scores,
            attribute_with_baselines(&f, &x, &bases, 301, 9, false).unwrap().map.scores,
        )
    };
    let one = with_threads(1, run);
    for n in [2, 3, 8] {
        assert_eq!(with_threads(n, run), one, "{n} workers");
    }
}

#[test]
fn dummy_feature_gets_exact_zero() {
    // feature 2 has zero weight into every hidden unit
    let mut spec = ModelSpec::random_mlp(&[3, 6, 2], 4);
    if let pathattr_core::Layer::Dense { weights, .. } = &mut spec.layers[0] {
        for r in 0..6 {
            weights[r * 3 + 2] = 0.0;
        }
    }
    let m = Model::compile(spec).unwrap();
    assert!(m.feature_unused(2));
    let f = ClassOutput::new(&m, 0, OutputMode::Logit);
    let x = t(vec![0.7, 0.2, 0.9]);
    let base = t(vec![0.1, 0.5, 0.0]);
    let ig = riemann_ig(&f, &x, &base, &RiemannConfig::midpoint(50)).unwrap();
    let fil = attribute_with_baselines(&f, &x, &[base], 50, 3, false).unwrap();
    assert_eq!(ig.scores.as_slice()[2], 0.0);
    assert_eq!(fil.map.scores.as_slice()[2], 0.0);
}
