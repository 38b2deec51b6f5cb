mod oracles;

use ndarray::{array, s, Array1, Array2, Axis};
use proptest::prelude::*;
use tadlab_core::detectors::{
    average_path_length, iforest, knn, lof, ocsvm, read_scores_csv, residual_norm, write_scores_csv,
    DetectorConfig, DetectorKind, DetectorModel, Gamma, IForestConfig, IForestModel, ITreeNode,
    KnnConfig, LofConfig, OcsvmConfig, OcsvmModel,
};
use tadlab_core::linalg::residual_width;
use tadlab_core::rng::Rng;

use oracles::detectors as naive;

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::new(seed);
    Array2::from_shape_fn((n, d), |_| rng.normal())
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn median(v: &Array1<f64>) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

// ---- k-NN ----

#[test]
fn knn_hand_examples() {
    let train = array![[0.0, 0.0], [1.0, 0.0]];
    assert_eq!(knn(train.view(), array![[0.0, 0.0]].view(), 1).unwrap()[0], 0.0);
    assert_eq!(knn(train.view(), array![[0.0, 0.0]].view(), 2).unwrap()[0], 0.5);
    assert_eq!(knn(train.view(), array![[3.0, 0.0]].view(), 1).unwrap()[0], 2.0);
}

#[test]
fn knn_rejects_bad_k() {
    let train = array![[0.0], [1.0]];
    assert!(knn(train.view(), train.view(), 0).is_err());
    assert!(knn(train.view(), train.view(), 3).is_err());
    let loo = KnnConfig {
        leave_one_out: true,
        ..KnnConfig::new(2)
    };
    assert!(DetectorModel::fit(&DetectorConfig::Knn(loo), train.view()).is_err());
}

#[test]
fn knn_leave_one_out_skips_exact_self() {
    let train = array![[0.0], [1.0], [3.0]];
    let cfg = KnnConfig {
        leave_one_out: true,
        ..KnnConfig::new(1)
    };
    let m = DetectorModel::fit(&DetectorConfig::Knn(cfg), train.view()).unwrap();
    let s = m.score(train.view()).unwrap();
    assert_eq!(s.to_vec(), vec![1.0, 1.0, 2.0]);
}

#[test]
fn knn_matches_brute_force() {
    for seed in 0..10 {
        for d in [2, 5, 20] {
            let train = gaussian(30, d, seed);
            let q = gaussian(12, d, seed + 100);
            for k in [1, 3, 7] {
                let got = knn(train.view(), q.view(), k).unwrap();
                let want = naive::knn(train.view(), q.view(), k);
                assert!(max_abs_diff(&got, &want) <= 1e-6, "seed {seed} d {d} k {k}");
            }
        }
    }
}

#[test]
fn knn_subsample_cap_is_seeded() {
    let train = gaussian(200, 3, 5);
    let q = gaussian(5, 3, 6);
    let cfg = KnnConfig {
        max_train: Some(50),
        seed: 9,
        ..KnnConfig::new(3)
    };
    let a = DetectorModel::fit(&DetectorConfig::Knn(cfg.clone()), train.view()).unwrap();
    let b = DetectorModel::fit(&DetectorConfig::Knn(cfg), train.view()).unwrap();
    assert_eq!(a.score(q.view()).unwrap(), b.score(q.view()).unwrap());
    match a {
        DetectorModel::Knn(m) => {
            assert_eq!(m.n_train, 50);
            assert_eq!(m.subsampled_from, Some(200));
        }
        _ => unreachable!(),
    }
}

// ---- LOF ----

fn grid5() -> Array2<f64> {
    Array2::from_shape_fn((25, 2), |(i, j)| if j == 0 { (i / 5) as f64 } else { (i % 5) as f64 })
}

#[test]
fn lof_grid_interior_near_one() {
    let g = grid5();
    let interior: Vec<usize> = (0..25).filter(|i| (1..4).contains(&(i / 5)) && (1..4).contains(&(i % 5))).collect();
    let q = g.select(Axis(0), &interior);
    let s = lof(g.view(), q.view(), 4).unwrap();
    for v in &s {
        assert!((0.8..=1.2).contains(v), "{v}");
    }
    let far = lof(g.view(), array![[14.0, 2.0]].view(), 4).unwrap();
    assert!(far[0] > 2.0, "{}", far[0]);
}

#[test]
fn lof_two_symmetric_points() {
    let train = array![[-1.0, 0.0], [1.0, 0.0]];
    let s = lof(train.view(), train.view(), 1).unwrap();
    assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
}

#[test]
fn lof_duplicates_set_degenerate_flag() {
    let train = array![[0.0], [0.0], [0.0], [5.0]];
    let m = DetectorModel::fit(&DetectorConfig::Lof(LofConfig::new(2)), train.view()).unwrap();
    match &m {
        DetectorModel::Lof(l) => assert!(l.degenerate),
        _ => unreachable!(),
    }
    assert!(m.score(array![[0.0], [2.0]].view()).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn lof_matches_brute_force() {
    for seed in 0..10 {
        for d in [2, 4, 18] {
            let train = gaussian(30, d, seed);
            let q = gaussian(10, d, seed + 50);
            let q = ndarray::concatenate![Axis(0), q, train.slice(s![..5, ..])];
            for k in [1, 4, 10] {
                let got = lof(train.view(), q.view(), k).unwrap();
                let want = naive::lof(train.view(), q.view(), k);
                assert!(max_abs_diff(&got, &want) <= 1e-6, "seed {seed} d {d} k {k}");
            }
        }
    }
}

// ---- isolation forest ----

#[test]
fn iforest_normaliser() {
    assert!((average_path_length(256) - 10.2448).abs() < 1e-3);
    for n in [2, 3, 10, 256, 1000] {
        assert!((average_path_length(n) - naive::c_factor(n)).abs() < 1e-12);
    }
}

#[test]
fn iforest_matches_replay() {
    for seed in 0..8 {
        let train = gaussian(30, 3, seed);
        let q = gaussian(15, 3, seed + 7);
        for psi in [8, 16, 256] {
            let got = iforest(train.view(), q.view(), 25, psi, seed).unwrap();
            let want = naive::iforest(train.view(), q.view(), 25, psi, seed);
            assert!(max_abs_diff(&got, &want) <= 1e-6, "seed {seed} psi {psi}");
        }
    }
}

#[test]
fn iforest_tree_structure() {
    let train = gaussian(300, 4, 3);
    let m = IForestModel::fit(train.view(), &IForestConfig::default()).unwrap();
    assert_eq!(m.psi, 256);
    for (tree, rows) in m.trees.iter().zip(&m.subsamples) {
        assert!(tree.depth() <= 8);
        // every subsample row lands in exactly one leaf; leaf sizes add up
        let mut counts = vec![0usize; tree.nodes.len()];
        for &r in rows {
            let mut node = 0;
            loop {
                match tree.nodes[node] {
                    ITreeNode::Leaf { .. } => break,
                    ITreeNode::Split { feature, threshold, left, right } => {
                        node = if train[[r, feature]] < threshold { left } else { right };
                    }
                }
            }
            counts[node] += 1;
        }
        for (id, node) in tree.nodes.iter().enumerate() {
            if let ITreeNode::Leaf { size } = node {
                assert_eq!(*size, counts[id]);
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), rows.len());
    }
}

#[test]
fn iforest_constant_data_scores_half() {
    let train = Array2::from_elem((20, 3), 1.5);
    let s = iforest(train.view(), array![[1.5, 1.5, 1.5], [9.0, 0.0, 0.0]].view(), 10, 16, 0).unwrap();
    for v in &s {
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }
}

#[test]
fn iforest_isolates_far_outlier() {
    let train = gaussian(500, 2, 11);
    // 10σ out along the diagonal; on a single axis the other coordinate sits
    // mid-range and axis-aligned splits isolate corner points of the blob first
    let r = 10.0 / 2f64.sqrt();
    let q = ndarray::concatenate![Axis(0), train.view(), array![[r, r]]];
    let s = iforest(train.view(), q.view(), 100, 256, 4).unwrap();
    let out = s[500];
    assert!(s.iter().take(500).all(|&v| v < out));
    let labels: Vec<u8> = (0..501).map(|i| (i == 500) as u8).collect();
    assert_eq!(oracles::auroc::auroc(s.as_slice().unwrap(), &labels), 100.0);
}

// ---- one-class SVM ----

fn tight(nu: f64, gamma: f64) -> OcsvmConfig {
    OcsvmConfig {
        nu,
        gamma: Gamma::Value(gamma),
        tol: 1e-10,
        max_iter: None,
    }
}

fn check_ocsvm_oracle(n: usize, seed: u64, nu: f64, gamma: f64) {
    let train = gaussian(n, 2, seed);
    let q = gaussian(10, 2, seed + 1);
    let q = ndarray::concatenate![Axis(0), q, train.view()];
    let m = OcsvmModel::fit(train.view(), &tight(nu, gamma)).unwrap();
    let oracle = naive::ocsvm_dual(train.view(), nu, gamma, 200_000);
    let got = m.score(q.view()).unwrap();
    let want = oracle.score(train.view(), q.view());
    let diff = max_abs_diff(&got, &want);
    assert!(diff <= 1e-6, "n {n} seed {seed} nu {nu}: {diff:e}");
    assert!((m.alpha.sum() - 1.0).abs() < 1e-12);
    let cap = 1.0 / (nu * n as f64);
    assert!(m.alpha.iter().all(|&a| a > 0.0 && a <= cap * (1.0 + 1e-12)));
}

#[test]
fn ocsvm_matches_projected_gradient_dual() {
    for seed in 0..5 {
        check_ocsvm_oracle(30, seed, 0.5, 0.5);
        check_ocsvm_oracle(25, seed + 20, 0.2, 1.0);
    }
    check_ocsvm_oracle(50, 99, 0.5, 0.5);
}

#[test]
fn ocsvm_nu_property() {
    let train = gaussian(200, 2, 21);
    let s = ocsvm(train.view(), train.view(), 0.5, Gamma::Scale).unwrap();
    let frac = s.iter().filter(|&&v| v > 0.0).count() as f64 / 200.0;
    assert!((0.40..=0.60).contains(&frac), "{frac}");
}

#[test]
fn ocsvm_duplicate_train_peaks_at_point() {
    let p = [0.3, -0.2];
    let train = array![[p[0], p[1]], [p[0], p[1]]];
    let q = array![[p[0], p[1]], [1.0, 1.0], [0.3, 0.0], [-4.0, 2.0]];
    let s = ocsvm(train.view(), q.view(), 0.5, Gamma::Scale).unwrap();
    assert!(s.iter().skip(1).all(|&v| v > s[0]));
}

#[test]
fn ocsvm_contract_errors() {
    let train = gaussian(10, 2, 0);
    assert!(ocsvm(train.view(), train.view(), 0.05, Gamma::Scale).is_err());
    assert!(ocsvm(train.view(), train.view(), 0.0, Gamma::Scale).is_err());
    assert!(ocsvm(train.view(), train.view(), 1.5, Gamma::Scale).is_err());
}

// ---- residual norm ----

#[test]
fn residual_hand_examples() {
    let train = array![[1.0, 0.0], [-2.0, 0.0], [3.0, 0.0]];
    let s = residual_norm(train.view(), array![[0.0, 3.0], [7.0, 0.0]].view(), 0.5).unwrap();
    assert!((s[0] - 3.0).abs() < 1e-9);
    assert!(s[1].abs() < 1e-9);
    let q = gaussian(6, 2, 1);
    let full = residual_norm(train.view(), q.view(), 1.0).unwrap();
    for (row, v) in q.outer_iter().zip(&full) {
        assert!((row.dot(&row).sqrt() - v).abs() < 1e-9);
    }
    assert!(residual_norm(train.view(), q.view(), 0.0).is_err());
}

#[test]
fn residual_matches_power_iteration() {
    for seed in 0..10 {
        // distinct column scales keep the spectrum well separated
        let mut train = gaussian(30, 5, seed);
        for (j, mut col) in train.axis_iter_mut(Axis(1)).enumerate() {
            col *= 1.0 + 1.5 * j as f64;
        }
        let q = gaussian(10, 5, seed + 3);
        for f in [0.2, 0.5, 0.9] {
            let got = residual_norm(train.view(), q.view(), f).unwrap();
            let want = naive::residual_norm(train.view(), q.view(), residual_width(5, f).unwrap());
            assert!(max_abs_diff(&got, &want) <= 1e-6, "seed {seed} f {f}");
        }
    }
}

// ---- shared contract ----

fn all_configs(seed: u64) -> Vec<DetectorConfig> {
    vec![
        DetectorConfig::Knn(KnnConfig::new(3)),
        DetectorConfig::Lof(LofConfig::new(3)),
        DetectorConfig::Iforest(IForestConfig {
            n_trees: 30,
            subsample: 16,
            seed,
        }),
        DetectorConfig::Ocsvm(OcsvmConfig::default()),
        DetectorConfig::ResidualNorm { fraction: 0.5 },
    ]
}

#[test]
fn model_bytes_round_trip() {
    let train = gaussian(40, 3, 2);
    let q = gaussian(7, 3, 3);
    for cfg in all_configs(1) {
        let m = DetectorModel::fit(&cfg, train.view()).unwrap();
        let back = DetectorModel::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back.kind(), cfg.kind());
        assert_eq!(m.score(q.view()).unwrap(), back.score(q.view()).unwrap());
    }
    assert_eq!(DetectorKind::ALL.len(), 5);
}

#[test]
fn scores_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let scores = [0.1, 1.0 / 3.0, 1e-300, 12345.678];
    write_scores_csv(&path, &[4, 5, 6, 7], &scores).unwrap();
    let (ids, back) = read_scores_csv(&path).unwrap();
    assert_eq!(ids, vec![4, 5, 6, 7]);
    assert_eq!(back, scores.to_vec());
}

fn rotation(d: usize, seed: u64) -> Array2<f64> {
    tadlab_core::linalg::orthonormalize(gaussian(d, d, seed).view()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn far_query_outranks_median(seed in 0u64..1000, d in 2usize..5) {
        let train = gaussian(40, d, seed);
        let m = train.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut rng = Rng::new(seed ^ 77);
        let dir: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let far = Array2::from_shape_fn((1, d), |(_, j)| 100.0 * m * dir[j] / norm);
        for cfg in all_configs(seed) {
            let model = DetectorModel::fit(&cfg, train.view()).unwrap();
            let own = model.score(train.view()).unwrap();
            let out = model.score(far.view()).unwrap()[0];
            prop_assert!(out > median(&own), "{}: {} vs {}", cfg.label(), out, median(&own));
        }
    }

    #[test]
    fn train_order_does_not_matter(seed in 0u64..1000) {
        let train = gaussian(30, 3, seed);
        let q = gaussian(8, 3, seed + 1);
        let mut perm: Vec<usize> = (0..30).collect();
        Rng::new(seed).shuffle(&mut perm);
        let shuffled = train.select(Axis(0), &perm);
        for mut cfg in all_configs(seed) {
            // SMO's path depends on row order; only the optimum does not
            if let DetectorConfig::Ocsvm(c) = &mut cfg {
                c.tol = 1e-12;
            }
            let a = DetectorModel::fit(&cfg, train.view()).unwrap().score(q.view()).unwrap();
            let b = if let DetectorConfig::Iforest(c) = &cfg {
                // same subsample rows, expressed in the shuffled order
                let orig = IForestModel::fit(train.view(), c).unwrap();
                let mut inv = vec![0; 30];
                for (new, &old) in perm.iter().enumerate() {
                    inv[old] = new;
                }
                let subs = orig.subsamples.iter().map(|s| s.iter().map(|&i| inv[i]).collect()).collect();
                IForestModel::fit_with_subsamples(shuffled.view(), c, subs).unwrap().score(q.view()).unwrap()
            } else {
                DetectorModel::fit(&cfg, shuffled.view()).unwrap().score(q.view()).unwrap()
            };
            prop_assert!(max_abs_diff(&a, &b) <= 1e-8, "{}", cfg.label());
        }
    }

    #[test]
    fn neighbor_scores_rotation_invariant(seed in 0u64..1000, d in 2usize..6) {
        let train = gaussian(30, d, seed);
        let q = gaussian(6, d, seed + 2);
        let r = rotation(d, seed + 3);
        let (tr, qr) = (train.dot(&r), q.dot(&r));
        for k in [1, 5] {
            let a = knn(train.view(), q.view(), k).unwrap();
            let b = knn(tr.view(), qr.view(), k).unwrap();
            prop_assert!(max_abs_diff(&a, &b) <= 1e-8);
            let a = lof(train.view(), q.view(), k).unwrap();
            let b = lof(tr.view(), qr.view(), k).unwrap();
            prop_assert!(max_abs_diff(&a, &b) <= 1e-8);
        }
    }

    #[test]
    fn score_ranges(seed in 0u64..1000) {
        let train = gaussian(25, 3, seed);
        let q = gaussian(10, 3, seed + 5);
        let f = iforest(train.view(), q.view(), 20, 16, seed).unwrap();
        prop_assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(knn(train.view(), q.view(), 4).unwrap().iter().all(|&v| v >= 0.0));
        prop_assert!(residual_norm(train.view(), q.view(), 0.4).unwrap().iter().all(|&v| v >= 0.0));
    }
}
