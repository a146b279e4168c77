use comixify_core::features::FeatureMatrix;
use comixify_core::kts::{
    default_max_segments, kernel_matrix, optimal_m_segmentation, segment, segment_kernel, KernelMatrix, KtsConfig,
    SegmentCost,
};
use comixify_core::Error;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fm(x: Array2<f32>) -> FeatureMatrix {
    FeatureMatrix::new(x, "test")
}

/// Every way to choose `m - 1` change points from `1..t`, with costs summed
/// right to left like the recursion they are checked against.
fn brute_force(cost: &SegmentCost, m: usize) -> (f64, Vec<usize>) {
    let t = cost.len();
    let mut best = (f64::INFINITY, vec![]);
    let mut cps = Vec::new();
    fn rec(cost: &SegmentCost, t: usize, left: usize, start: usize, cps: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if left == 0 {
            let mut bounds = vec![0];
            bounds.extend_from_slice(cps);
            bounds.push(t);
            let mut c = 0.0;
            for w in bounds.windows(2).rev() {
                c = cost.scatter(w[0], w[1]) + c;
            }
            // strict `<` over lexicographic enumeration keeps the smallest list on ties
            if c < best.0 {
                *best = (c, cps.clone());
            }
            return;
        }
        for b in start..t {
            cps.push(b);
            rec(cost, t, left - 1, b + 1, cps, best);
            cps.pop();
        }
    }
    rec(cost, t, m - 1, 1, &mut cps, &mut best);
    best
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Array2<f32> {
    let t = rng.random_range(1..=12);
    let d = rng.random_range(1..=4);
    // few distinct levels so exact ties occur regularly
    Array2::from_shape_fn((t, d), |_| rng.random_range(-2..=2) as f32 * 0.5)
}

#[test]
fn dp_matches_exhaustive_search_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let x = if case % 2 == 0 {
            random_matrix(&mut rng)
        } else {
            let t = rng.random_range(1..=12);
            let d = rng.random_range(1..=4);
            Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0f32..1.0))
        };
        let k = kernel_matrix(&fm(x)).unwrap();
        let cost = SegmentCost::new(&k);
        for m in 1..=k.len() {
            let dp = optimal_m_segmentation(&k, m).unwrap();
            let (bc, bcps) = brute_force(&cost, m);
            assert_eq!(dp.cost, bc, "case {case} m {m}");
            assert_eq!(dp.change_points, bcps, "case {case} m {m}");
        }
    }
}

#[test]
fn kernel_scatter_equals_direct_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let x = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0f32..1.0));
        let cost = SegmentCost::new(&kernel_matrix(&fm(x.clone())).unwrap());
        let x = x.mapv(f64::from);
        for a in 0..10 {
            for b in a + 1..=10 {
                let seg = x.slice(ndarray::s![a..b, ..]);
                let mu = seg.mean_axis(ndarray::Axis(0)).unwrap();
                let direct: f64 = seg.rows().into_iter().map(|r| (&r - &mu).mapv(|v| v * v).sum()).sum();
                assert!((cost.scatter(a, b) - direct).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn kernel_examples() {
    let k = kernel_matrix(&fm(array![[1.0, 0.0], [0.0, 2.0]])).unwrap();
    assert_eq!(k.k, array![[1.0, 0.0], [0.0, 4.0]]);
    let k = kernel_matrix(&fm(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])).unwrap();
    assert_eq!(k.k, Array2::<f64>::eye(3));
    let u = Array2::from_shape_fn((4, 2), |(_, j)| if j == 0 { 0.6 } else { 0.8 });
    let k = kernel_matrix(&fm(u)).unwrap();
    assert!(k.k.iter().all(|v| (v - 1.0).abs() < 1e-7));
}

fn e1e2(n1: usize, n2: usize) -> FeatureMatrix {
    fm(Array2::from_shape_fn((n1 + n2, 2), |(i, j)| if (i < n1) == (j == 0) { 1.0 } else { 0.0 }))
}

#[test]
fn segmentation_examples() {
    let constant = fm(Array2::from_elem((7, 3), 0.5));
    let s = segment(&constant, 1, &KtsConfig::default()).unwrap();
    assert_eq!(s.segments(), vec![(0, 7)]);
    assert_eq!(s.cost, 0.0);

    let k = kernel_matrix(&e1e2(3, 3)).unwrap();
    let s = optimal_m_segmentation(&k, 2).unwrap();
    assert_eq!(s.change_points, vec![3]);
    assert_eq!(s.cost, 0.0);

    let k = kernel_matrix(&e1e2(2, 2)).unwrap();
    assert_eq!(optimal_m_segmentation(&k, 2).unwrap().change_points, vec![2]);
    // one segment: each frame is 1/√2 from the mean, scatter 4 · 1/2
    let one = optimal_m_segmentation(&k, 1).unwrap();
    assert_eq!(one.segments(), vec![(0, 4)]);
    assert!((one.cost - 2.0).abs() < 1e-12);
    assert_eq!(optimal_m_segmentation(&k, 4).unwrap().cost, 0.0);

    let s = segment(&e1e2(3, 2), 5, &KtsConfig::default()).unwrap();
    assert_eq!(s.segments(), vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
    assert_eq!(s.cost, 0.0);
}

#[test]
fn constraint_errors() {
    let f = e1e2(2, 2);
    assert!(matches!(segment(&f, 5, &KtsConfig::default()), Err(Error::Constraint(_))));
    assert!(matches!(segment(&f, 0, &KtsConfig::default()), Err(Error::Constraint(_))));
    let k = kernel_matrix(&f).unwrap();
    assert!(matches!(optimal_m_segmentation(&k, 0), Err(Error::Constraint(_))));
    assert!(matches!(optimal_m_segmentation(&k, 5), Err(Error::Constraint(_))));
    let cfg = KtsConfig { max_segments: Some(1), ..Default::default() };
    assert!(matches!(segment(&f, 2, &cfg), Err(Error::Constraint(_))));
}

#[test]
fn default_max_segment_count() {
    assert_eq!(default_max_segments(20, 2), 4);
    assert_eq!(default_max_segments(20, 8), 8);
    assert_eq!(default_max_segments(3, 1), 1);
    assert_eq!(default_max_segments(11, 1), 3);
}

#[test]
fn penalty_picks_the_natural_cut() {
    // two clean clusters: m = 2 has zero cost, more segments only add penalty
    let s = segment(&e1e2(10, 10), 1, &KtsConfig::default()).unwrap();
    assert_eq!(s.change_points, vec![10]);
}

#[test]
fn serialises_with_counts() {
    let s = optimal_m_segmentation(&kernel_matrix(&e1e2(3, 3)).unwrap(), 2).unwrap();
    let v = serde_json::to_value(&s).unwrap();
    assert_eq!(v["change_points"], serde_json::json!([3]));
    assert_eq!(v["m"], 2);
    assert_eq!(v["cost"], 0.0);
}

fn rotate(x: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let d = x.ncols();
    let mut q = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for j in 0..i {
            let dot: f64 = (0..d).map(|k| v[k] * q[[j, k]]).sum();
            (0..d).for_each(|k| v[k] -= dot * q[[j, k]]);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        (0..d).for_each(|k| q[[i, k]] = v[k] / n);
    }
    x.dot(&q.t())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariants(seed in 0u64..100_000, n_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(2..=12);
        let d = rng.random_range(1..=4);
        let x = Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0f64..1.0));
        let k = KernelMatrix { k: x.dot(&x.t()) };

        let mut prev = f64::INFINITY;
        for m in 1..=t {
            let s = optimal_m_segmentation(&k, m).unwrap();
            prop_assert!(s.cost >= 0.0);
            prop_assert!(s.cost <= prev + 1e-12, "cost rose at m={}", m);
            prev = s.cost;
            let segs = s.segments();
            prop_assert_eq!(segs.len(), m);
            prop_assert_eq!(segs[0].0, 0);
            prop_assert_eq!(segs[m - 1].1, t);
            prop_assert!(segs.windows(2).all(|w| w[0].1 == w[1].0 && w[0].0 < w[0].1));
        }

        let n = 1 + (n_frac * (t - 1) as f64) as usize;
        let s = segment_kernel(&k, n, &KtsConfig::default()).unwrap();
        prop_assert!(s.m >= n && s.m <= default_max_segments(t, n));

        let xr = rotate(&x, &mut rng);
        let kr = KernelMatrix { k: xr.dot(&xr.t()) };
        let diff = (&kr.k - &k.k).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(diff < 1e-9);
        let m = 1 + (n_frac * (t - 1) as f64) as usize;
        let a = optimal_m_segmentation(&k, m).unwrap();
        let b = optimal_m_segmentation(&kr, m).unwrap();
        prop_assert!((a.cost - b.cost).abs() < 1e-9);
    }
}
