use approx::assert_relative_eq;
use ndarray::Array2;
use proptest::prelude::*;
use stnmf::nmf::cosine;
use stnmf::patterns::similarity_matrix;
use stnmf::rank::total_scatter;
use stnmf::*;

fn record(loc: usize, hour: u32, count: u64) -> TrafficRecord {
    TrafficRecord {
        location_id: format!("L{loc}"),
        latitude: 50.0 + loc as f64 * 0.01,
        longitude: -1.0 - loc as f64 * 0.01,
        hour,
        count,
        period: "p".into(),
    }
}

fn records() -> impl Strategy<Value = Vec<TrafficRecord>> {
    prop::collection::vec((0usize..8, 0u32..24, 0u64..5000), 1..120)
        .prop_map(|v| v.into_iter().map(|(l, h, c)| record(l, h, c)).collect())
}

fn matrix(max_n: usize, max_m: usize) -> impl Strategy<Value = Array2<f64>> {
    (2..max_n, 2..max_m).prop_flat_map(|(n, m)| {
        prop::collection::vec(0.0f64..10.0, n * m)
            .prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap())
    })
}

fn labelled_points() -> impl Strategy<Value = (Array2<f64>, ClusterAssignment)> {
    (3usize..30, 1usize..5, 2usize..5).prop_flat_map(|(n, d, k)| {
        (
            prop::collection::vec(-100.0f64..100.0, n * d),
            prop::collection::vec(0..k, n),
        )
            .prop_map(move |(v, labels)| {
                (
                    Array2::from_shape_vec((n, d), v).unwrap(),
                    ClusterAssignment {
                        labels,
                        k,
                        source: FactorSide::Location,
                    },
                )
            })
    })
}

fn window() -> HourWindow {
    HourWindow::new(7, 18).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_total_equals_windowed_record_sum(recs in records()) {
        let in_window: u64 = recs.iter().filter(|r| window().contains(r.hour)).map(|r| r.count).sum();
        match build_matrix(&recs, window()) {
            Ok(m) => prop_assert_eq!(m.total(), in_window as f64),
            Err(Error::EmptyInput(_)) => prop_assert!(recs.iter().all(|r| !window().contains(r.hour))),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn matrix_ignores_record_order(recs in records(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let a = build_matrix(&recs, window());
        let b = build_matrix(&shuffled, window());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn normalized_values_lie_in_unit_interval_and_round_trip(recs in records()) {
        let Ok(m) = build_matrix(&recs, window()) else { return Ok(()) };
        let x = minmax_normalize(&m);
        prop_assert!(x.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = x.denormalize();
        for (&orig, &rt) in m.values().iter().zip(back.iter()) {
            prop_assert!((orig - rt).abs() <= 1e-9 * orig.abs().max(1.0));
        }
    }

    #[test]
    fn objective_never_increases_and_factors_stay_nonnegative(
        x in matrix(20, 14), rank in 1usize..4, seed in any::<u64>()
    ) {
        let rank = rank.min(x.nrows()).min(x.ncols());
        let cfg = NmfConfig::new(rank).with_seed(seed).with_max_iters(200).with_tol(1e-12);
        let pair = factorize(x.view(), &cfg).unwrap();
        for w in pair.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        prop_assert!(pair.w.iter().chain(pair.h.iter()).all(|&v| v >= 0.0));
        prop_assert_eq!(pair.objective_trace.len(), pair.iterations_run + 1);
    }

    #[test]
    fn same_seed_gives_identical_factors(x in matrix(12, 10), seed in any::<u64>()) {
        let cfg = NmfConfig::new(2).with_seed(seed).with_max_iters(50);
        prop_assert_eq!(factorize(x.view(), &cfg).unwrap(), factorize(x.view(), &cfg).unwrap());
    }

    #[test]
    fn dispersions_sum_to_total_scatter((p, a) in labelled_points()) {
        let w = within_dispersion(p.view(), &a).unwrap();
        let b = between_dispersion(p.view(), &a).unwrap();
        prop_assert!(w >= 0.0 && b >= 0.0);
        assert_relative_eq!(w + b, total_scatter(p.view()), max_relative = 1e-8, epsilon = 1e-9);
    }

    #[test]
    fn ch_follows_its_definition((p, a) in labelled_points()) {
        let k = a.non_empty();
        let n = p.nrows();
        match calinski_harabasz(p.view(), &a) {
            Ok(ch) => {
                let w = within_dispersion(p.view(), &a).unwrap();
                let b = between_dispersion(p.view(), &a).unwrap();
                if w == 0.0 {
                    prop_assert!(ch.is_infinite());
                } else {
                    assert_relative_eq!(ch, (b / (k - 1) as f64) / (w / (n - k) as f64), max_relative = 1e-12);
                }
            }
            Err(Error::DegenerateClustering(_)) => prop_assert!(k < 2 || n <= k),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn labels_survive_positive_rescaling(f in matrix(20, 6), c in 0.001f64..1000.0) {
        let a = assign_clusters(f.view(), FactorSide::Location);
        let b = assign_clusters((&f * c).view(), FactorSide::Location);
        prop_assert!(a.labels.iter().all(|&l| l < a.k));
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn cosine_of_nonnegative_vectors_is_in_unit_interval(x in matrix(3, 20)) {
        let c = cosine(x.row(0), x.row(1));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
    }

    #[test]
    fn extraction_preserves_product_and_peaks(w in matrix(12, 4), seed in any::<u64>()) {
        let r = w.ncols();
        let h = Array2::from_shape_fn((6, r), |(i, j)| {
            ((seed.rotate_left((i * r + j) as u32) % 997) as f64) / 97.0
        });
        let pair = FactorPair { w: w.clone(), h: h.clone(), objective_trace: vec![], converged: true, iterations_run: 0 };
        let locs: Vec<Location> = (0..w.nrows())
            .map(|i| Location { id: format!("L{i}"), latitude: 0.0, longitude: 0.0 })
            .collect();
        let hours: Vec<u32> = (7..13).collect();
        let set = extract_patterns(&pair, &locs, &hours, "p").unwrap();
        let before = w.dot(&h.t());
        let after = set.spatial.dot(&set.temporal.t());
        for (x, y) in before.iter().zip(after.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        for (j, col) in set.temporal.columns().into_iter().enumerate() {
            let peak = col.iter().copied().fold(0.0, f64::max);
            prop_assert!(peak == 1.0 || set.column_norms[j] == 0.0);
        }
        let peaks = set.peak_hours();
        let scaled = extract_patterns(
            &FactorPair { h: &h * 3.5, ..pair.clone() }, &locs, &hours, "p",
        ).unwrap();
        prop_assert_eq!(peaks, scaled.peak_hours());
    }

    #[test]
    fn matching_is_symmetric(a in matrix(8, 5), b in matrix(8, 5), t in 0.0f64..1.0) {
        let (ra, rb) = (a.ncols(), b.ncols());
        let hours: Vec<u32> = (0..6).collect();
        let set = |h: Array2<f64>| {
            let r = h.ncols();
            let pair = FactorPair {
                w: Array2::ones((1, r)),
                h,
                objective_trace: vec![],
                converged: true,
                iterations_run: 0,
            };
            let loc = [Location { id: "x".into(), latitude: 0.0, longitude: 0.0 }];
            extract_patterns(&pair, &loc, &hours, "p").unwrap()
        };
        let a = set(Array2::from_shape_fn((6, ra), |(i, j)| a[[i % a.nrows(), j]]));
        let b = set(Array2::from_shape_fn((6, rb), |(i, j)| b[[i % b.nrows(), j]]));
        let ab = match_patterns(&a, &b, t).unwrap();
        let ba = match_patterns(&b, &a, t).unwrap();
        let mut flipped: Vec<_> = ba.pairs.iter().map(|p| (p.b, p.a)).collect();
        flipped.sort();
        let mut direct: Vec<_> = ab.pairs.iter().map(|p| (p.a, p.b)).collect();
        direct.sort();
        let sims = similarity_matrix(&a, &b);
        let distinct = {
            let mut v: Vec<f64> = sims.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            v.windows(2).all(|w| w[1] - w[0] > 1e-12)
        };
        if distinct {
            prop_assert_eq!(direct, flipped);
            prop_assert_eq!(ab.unmatched_a, ba.unmatched_b);
        }
        prop_assert!(ab.pairs.iter().all(|p| p.similarity >= t));
    }
}
