mod common;

use behavior_guard_core::conditions::{
    check_condition1, check_condition2, check_condition3, epigraph_certificate, epigraph_certificate_for,
    min_channel_critical_set, min_critical_row_set, min_t_matrix, periodical_set, t_matrix_certificate,
    CertifyOptions,
};
use behavior_guard_core::hankel::{check_gpe, IndexSet, RankTolerance};
use behavior_guard_core::lti::system_invariants;
use behavior_guard_core::rng::{stream_rng, Stream};
use common::{autonomous_hankel, gaussian, gpe_hankel, random_system, three_mass};
use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts() -> CertifyOptions {
    CertifyOptions::default()
}

/// Rank through nalgebra's own SVD, independent of the crate's tolerance helper.
fn oracle_rank(m: &DMatrix<f64>, rows: &[usize]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let sub = DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
    let sv = sub.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|s| **s > (1e-10f64).max(f64::EPSILON * sub.nrows().max(sub.ncols()) as f64 * smax)).count()
}

fn without(rows: usize, removed: &[usize]) -> Vec<usize> {
    (0..rows).filter(|r| !removed.contains(r)).collect()
}

/// Smallest removal size that lowers the rank, by plain enumeration.
fn oracle_critical_size(m: &DMatrix<f64>) -> usize {
    let rows = m.nrows();
    let full = oracle_rank(m, &(0..rows).collect::<Vec<_>>());
    (1..=rows)
        .find(|&s| (0..rows).combinations(s).any(|c| oracle_rank(m, &without(rows, &c)) < full))
        .unwrap()
}

#[test]
fn critical_sets_are_minimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..15 {
        let m = if trial % 3 == 0 {
            autonomous_hankel(&mut rng, 2, 3, 3).entries().clone()
        } else {
            let sys = random_system(&mut rng, 2, 1, 2);
            gpe_hankel(&sys, 3, trial).entries().clone()
        };
        let s: Vec<usize> = min_critical_row_set(&m, &opts()).unwrap().zero_based().collect();
        let rows = m.nrows();
        let full = oracle_rank(&m, &(0..rows).collect::<Vec<_>>());
        assert_eq!(oracle_rank(&m, &without(rows, &s)), full - 1);
        for size in 1..s.len() {
            for sub in s.iter().copied().combinations(size) {
                assert_eq!(oracle_rank(&m, &without(rows, &sub)), full);
            }
        }
        assert_eq!(s.len(), oracle_critical_size(&m), "trial {trial}");
    }
}

#[test]
fn critical_set_bounded_by_outputs_plus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 30 {
        let (m, p) = (rng.random_range(1..=2), rng.random_range(1..=3));
        let n = rng.random_range(1..=3);
        let sys = random_system(&mut rng, n, m, p);
        let depth = system_invariants(&sys).unwrap().lag.max(1);
        if (m + p) * depth > 12 {
            continue;
        }
        let h = gpe_hankel(&sys, depth, checked);
        let s = min_critical_row_set(h.entries(), &opts()).unwrap();
        assert!(s.len() <= p + 1, "|S*| = {} with p = {p}", s.len());
        assert!(!check_condition1(h.entries(), p / 2 + 1, &opts()).unwrap().holds());
        checked += 1;
    }
}

#[test]
fn three_mass_hankel_certificates() {
    let h = gpe_hankel(&three_mass(), 3, 1);
    let s = min_critical_row_set(h.entries(), &opts()).unwrap();
    assert!(s.len() <= 4);
    assert_eq!(s.len(), oracle_critical_size(h.entries()));
    assert!(!check_condition1(h.entries(), 2, &opts()).unwrap().holds());
    // second output is channel 3 of [u; y1; y2; y3]
    let rows = periodical_set(&IndexSet::new(vec![3], 4).unwrap(), 4, 3).unwrap();
    assert!(check_condition3(h.entries(), &rows, &opts()).unwrap().holds());
    let channels = min_channel_critical_set(&h, &opts()).unwrap();
    let channel_rows = periodical_set(&channels, 4, 3).unwrap();
    assert!(s.len() <= channel_rows.len());
}

#[test]
fn failed_conditions_carry_checkable_witnesses() {
    let h = gpe_hankel(&three_mass(), 3, 2);
    let rows = h.rows();
    let full = oracle_rank(h.entries(), &(0..rows).collect::<Vec<_>>());
    let c1 = check_condition1(h.entries(), 1, &opts()).unwrap();
    assert_eq!(c1.holds, Some(false));
    let w: Vec<usize> = c1.witness_indices.unwrap().iter().map(|i| i - 1).collect();
    assert!(oracle_rank(h.entries(), &without(rows, &w)) < full);
    let c2 = check_condition2(&h, 1, &opts()).unwrap();
    assert_eq!(c2.holds, Some(false));
    let set = IndexSet::new(c2.witness_indices.unwrap(), 4).unwrap();
    let w: Vec<usize> = periodical_set(&set, 4, 3).unwrap().zero_based().collect();
    assert!(oracle_rank(h.entries(), &without(rows, &w)) < full);
}

#[test]
fn channel_condition_implies_benign_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut passes = 0;
    for _ in 0..40 {
        let h = autonomous_hankel(&mut rng, 2, 5, 2);
        if !check_condition2(&h, 1, &opts()).unwrap().holds() {
            continue;
        }
        passes += 1;
        for size in 1..=2 {
            for c in (1..=5).combinations(size) {
                let rows = periodical_set(&IndexSet::new(c, 5).unwrap(), 5, 2).unwrap();
                assert!(check_condition3(h.entries(), &rows, &opts()).unwrap().holds());
            }
        }
    }
    assert!(passes > 10, "only {passes} instances satisfied the channel condition");
}

#[test]
fn t_norm_certificate_implies_epigraph() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut both, mut t_passes) = (0, 0);
    for trial in 0..60 {
        let sys = random_system(&mut rng, 2, 1, 2);
        let h = gpe_hankel(&sys, 3, trial);
        let size = 1 + trial as usize % 2;
        let mut picked: Vec<usize> = (1..=h.rows()).collect();
        picked.sort_by_key(|_| rng.random::<u32>());
        let attacked = IndexSet::new(picked[..size].to_vec(), h.rows()).unwrap();
        if !check_condition3(h.entries(), &attacked, &opts()).unwrap().holds() {
            continue;
        }
        let t = t_matrix_certificate(h.entries(), &attacked, &opts()).unwrap();
        let epi = epigraph_certificate_for(h.entries(), &attacked, &opts()).unwrap();
        let Some(epi_holds) = epi.holds else { continue };
        both += 1;
        if t.holds() {
            t_passes += 1;
            assert!(epi_holds, "norm {:?} but epigraph optimum {:?}", t.norm, epi.optimum);
        }
        // the epigraph optimum never exceeds the T norm
        assert!(epi.optimum.unwrap() <= t.norm.unwrap() + 1e-7);
    }
    assert!(both > 30 && t_passes > 0, "{both} decided, {t_passes} T passes");
}

#[test]
fn t_matrix_maps_benign_rows_to_attacked_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for trial in 0..10 {
        let h_b = gaussian(&mut rng, 6, 3);
        let h_f = gaussian(&mut rng, 2, 6) * &h_b;
        let t = min_t_matrix(&h_b, &h_f, &opts()).unwrap();
        assert!((&t * &h_b - &h_f).amax() < 1e-7 * (1.0 + h_f.amax()), "trial {trial}");
    }
}

/// `max ‖F v‖₁ / ‖B v‖₁` over unit directions in the plane: dense grid, then a ternary search
/// in the best cell (the ratio is unimodal near its peak).
fn angular_oracle(b: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    let l1 = |m: &DMatrix<f64>, c: f64, s: f64| m.row_iter().map(|r| (r[0] * c + r[1] * s).abs()).sum::<f64>();
    let ratio = |th: f64| {
        let (s, c) = th.sin_cos();
        l1(f, c, s) / l1(b, c, s)
    };
    let n = 50_000;
    let step = std::f64::consts::PI / n as f64;
    let best = (0..n).map(|i| i as f64 * step).max_by(|x, y| ratio(*x).total_cmp(&ratio(*y))).unwrap();
    let (mut lo, mut hi) = (best - step, best + step);
    for _ in 0..200 {
        let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if ratio(m1) < ratio(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    ratio(0.5 * (lo + hi)).max(ratio(best))
}

#[test]
fn epigraph_optimum_matches_angular_oracle() {
    let mut rng = stream_rng(23, Stream::Data);
    for trial in 0..20 {
        let b = gaussian(&mut rng, 5, 2);
        let f = gaussian(&mut rng, 2, 2) * 0.6;
        let cert = epigraph_certificate(&b, &f, &opts()).unwrap();
        let oracle = angular_oracle(&b, &f);
        let ours = cert.optimum.unwrap();
        assert!((ours - oracle).abs() <= 1e-8 * (1.0 + oracle), "trial {trial}: {ours} vs {oracle}");
        assert_eq!(cert.holds, Some(ours < 1.0 - 1e-9));
    }
}

#[test]
fn gpe_check_runs_on_autonomous_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let h = autonomous_hankel(&mut rng, 2, 3, 2);
    assert!(check_gpe(&h, 0, 2, &RankTolerance::default()).unwrap().holds);
}
