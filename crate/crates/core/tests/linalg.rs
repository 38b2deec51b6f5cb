mod oracles;

use ndarray::{Array2, Axis};
use proptest::prelude::*;
use tadlab_core::linalg::{orthonormalize, principal_basis, residual_project, residual_width, sym_eig, PrincipalBasis};
use tadlab_core::rng::Rng;

use oracles::linalg::{orthogonality_error, random_symmetric, reconstruction_error};

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::new(seed);
    Array2::from_shape_fn((n, d), |_| rng.normal())
}

#[test]
fn reconstructs_random_symmetric_matrices() {
    for seed in 0..200u64 {
        let d = 1 + (seed as usize * 7) % 64;
        let s = random_symmetric(d, seed);
        let e = sym_eig(s.view()).unwrap();
        assert!(reconstruction_error(s.view(), e.values.view(), e.vectors.view()) <= 1e-8, "seed {seed} d {d}");
        assert!(orthogonality_error(e.vectors.view()) <= 1e-8, "seed {seed} d {d}");
        assert!(e.values.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let s = random_symmetric(20, 4);
    assert_eq!(sym_eig(s.view()).unwrap(), sym_eig(s.view()).unwrap());
}

#[test]
fn basis_cache_round_trip() {
    let b = principal_basis(gaussian(40, 6, 1).view()).unwrap();
    let mut buf = Vec::new();
    b.write_binary(&mut buf).unwrap();
    assert_eq!(PrincipalBasis::read_binary(buf.as_slice()).unwrap(), b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn principal_and_residual_energy_add_up(seed in 0u64..10_000, d in 2usize..12, f_ix in 1usize..10) {
        let x = gaussian(50, d, seed);
        let basis = principal_basis(x.view()).unwrap();
        let f = f_ix as f64 / 10.0;
        let w = residual_width(d, f).unwrap();
        let q = gaussian(5, d, seed + 1);
        let resid = residual_project(&basis, q.view(), f).unwrap();
        prop_assert_eq!(resid.ncols(), w);
        let top = basis.decomposition.vectors.slice(ndarray::s![.., ..d - w]);
        let princ = q.dot(&top);
        for i in 0..5 {
            let total = q.row(i).dot(&q.row(i));
            let split = princ.row(i).dot(&princ.row(i)) + resid.row(i).dot(&resid.row(i));
            prop_assert!((total - split).abs() <= 1e-8 * total.max(1.0));
        }
    }

    #[test]
    fn spectrum_is_rotation_invariant(seed in 0u64..10_000, d in 2usize..10) {
        let x = gaussian(30, d, seed);
        let q = orthonormalize(gaussian(d, d, seed + 5).view()).unwrap();
        let a = principal_basis(x.view()).unwrap().decomposition.values;
        let b = principal_basis(x.dot(&q).view()).unwrap().decomposition.values;
        let scale = a[0].abs().max(1.0);
        for (u, v) in a.iter().zip(b.iter()) {
            prop_assert!((u - v).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn residual_of_training_span_is_zero(seed in 0u64..10_000) {
        // rank-2 data in R^4: the two smallest directions see nothing
        let z = gaussian(30, 2, seed);
        let m = gaussian(2, 4, seed + 9);
        let x = z.dot(&m);
        let basis = principal_basis(x.view()).unwrap();
        let r = residual_project(&basis, x.view(), 0.5).unwrap();
        let worst = r.map_axis(Axis(1), |row| row.dot(&row).sqrt()).fold(0.0f64, |a, v| a.max(*v));
        prop_assert!(worst <= 1e-9 * x.iter().fold(1.0f64, |a, v| a.max(v.abs())));
    }
}
