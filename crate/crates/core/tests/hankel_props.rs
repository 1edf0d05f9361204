mod common;

use behavior_guard_core::hankel::{build_hankel, check_gpe, numerical_rank, restrict_rows, IndexSet, RankTolerance};
use behavior_guard_core::lti::Trajectory;
use common::{gpe_hankel, offline, random_system, three_mass, window};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tol() -> RankTolerance {
    RankTolerance::default()
}

fn trajectory() -> impl Strategy<Value = (Trajectory, usize)> {
    (1usize..4, 2usize..12).prop_flat_map(|(q, t)| {
        (prop::collection::vec(-10.0f64..10.0, q * t), 1..=t)
            .prop_map(move |(data, depth)| (Trajectory::new(q, 0, data).unwrap(), depth))
    })
}

proptest! {
    #[test]
    fn blocks_follow_the_source((w, depth) in trajectory()) {
        let h = build_hankel(&w, depth).unwrap();
        let q = w.q();
        prop_assert_eq!(h.cols(), w.len() - depth + 1);
        for c in 0..h.cols() {
            for r in 0..depth {
                let block: Vec<f64> = h.entries().view((r * q, c), (q, 1)).iter().copied().collect();
                prop_assert_eq!(block.as_slice(), w.sample(r + c + 1));
            }
        }
    }

    #[test]
    fn shift_property((w, depth) in trajectory()) {
        let h = build_hankel(&w, depth).unwrap();
        let (q, m) = (w.q(), h.entries());
        for c in 0..h.cols().saturating_sub(1) {
            for r in q..h.rows() {
                prop_assert_eq!(m[(r, c)], m[(r - q, c + 1)]);
            }
        }
    }

    #[test]
    fn restriction_never_raises_rank((w, depth) in trajectory(), mask in prop::collection::vec(any::<bool>(), 36)) {
        let h = build_hankel(&w, depth).unwrap();
        let full = numerical_rank(h.entries(), &tol()).unwrap().rank;
        let set = IndexSet::from_zero_based((0..h.rows()).filter(|&i| mask[i]), h.rows()).unwrap();
        prop_assert!(numerical_rank(&restrict_rows(h.entries(), &set).unwrap(), &tol()).unwrap().rank <= full);
        let all = restrict_rows(h.entries(), &IndexSet::full(h.rows())).unwrap();
        prop_assert_eq!(&all, h.entries());
    }

    #[test]
    fn dropping_the_last_block_gives_the_truncated_hankel((w, depth) in trajectory()) {
        prop_assume!(depth >= 2);
        let h = build_hankel(&w, depth).unwrap();
        let q = w.q();
        let keep = IndexSet::from_zero_based(0..h.rows() - q, h.rows()).unwrap();
        let shorter = build_hankel(&w.window(1, w.len() - 1).unwrap(), depth - 1).unwrap();
        prop_assert_eq!(&restrict_rows(h.entries(), &keep).unwrap(), shorter.entries());
    }
}

#[test]
fn three_mass_hankel_has_rank_nine() {
    let h = build_hankel(&offline(&three_mass(), 11, 1), 3).unwrap();
    let report = check_gpe(&h, 1, 6, &tol()).unwrap();
    assert!(report.holds);
    assert_eq!(report.rank, 9);
    assert_eq!(report.target, 9);
}

#[test]
fn random_systems_are_excited_by_gaussian_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut held = 0;
    for trial in 0..100u64 {
        let (n, m, p) = (1 + trial as usize % 4, 1 + trial as usize % 2, 1 + trial as usize % 3);
        let sys = random_system(&mut rng, n, m, p);
        let depth = 1 + n;
        let t = (m + 1) * (depth + n) + depth;
        let h = build_hankel(&offline(&sys, t, trial), depth).unwrap();
        held += check_gpe(&h, m, n, &tol()).unwrap().holds as usize;
    }
    assert!(held >= 99, "{held}/100");
}

#[test]
fn range_basis_is_orthonormal_and_reachable() {
    let sys = three_mass();
    let h = build_hankel(&offline(&sys, 11, 4), 3).unwrap();
    let rb = h.range_basis(&tol()).unwrap();
    let (r, c) = (rb.basis.ncols(), rb.complement.ncols());
    assert_eq!((r, c), (9, 3));
    let mut all = DMatrix::zeros(12, 12);
    all.columns_mut(0, r).copy_from(&rb.basis);
    all.columns_mut(r, c).copy_from(&rb.complement);
    assert!((all.transpose() * &all - DMatrix::identity(12, 12)).amax() < 1e-12);
    let miss = (h.entries() * &rb.coeff_map - &rb.basis).amax();
    let sv = numerical_rank(h.entries(), &tol()).unwrap().singular_values;
    let kappa = sv[0] / sv[r - 1];
    assert!(miss < 1e3 * f64::EPSILON * kappa, "{miss:e} at condition number {kappa:e}");
    assert!((rb.complement.transpose() * h.entries()).amax() < 1e-10 * h.entries().amax());
}

#[test]
fn three_mass_window_fits_exactly() {
    let sys = three_mass();
    let h = gpe_hankel(&sys, 3, 9);
    let rb = h.range_basis(&tol()).unwrap();
    for seed in 0..10 {
        let w = window(&sys, 3, seed).stacked();
        let fit = &rb.basis * (rb.basis.transpose() * &w);
        assert!((fit - &w).norm() <= 1e-8 * w.norm());
    }
}
