mod common;

use behavior_guard_core::attack::{
    adversarial_channel_attack, adversarial_entry_attack, channel_attack_random, entry_attack_random, AttackKind,
    AttackRecord,
};
use behavior_guard_core::conditions::{check_condition2, periodical_set, CertifyOptions};
use behavior_guard_core::error::Error;
use behavior_guard_core::lti::Trajectory;
use behavior_guard_core::recover::{recover_channels_bruteforce, recover_entries_bruteforce, RecoverOptions, RecoveryStatus};
use common::{autonomous_hankel, gpe_hankel, random_system, three_mass, window};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn base_window(q: usize, depth: usize, salt: u64) -> Trajectory {
    Trajectory::new(q, 1, (0..q * depth).map(|i| ((i as u64 * 7 + salt) % 11) as f64 - 5.0).collect()).unwrap()
}

proptest! {
    #[test]
    fn entry_attacks_stay_on_support(q in 1usize..5, depth in 1usize..5, seed in any::<u64>(), frac in 0.0f64..=1.0, mag in 0.1f64..100.0) {
        let w_bar = base_window(q, depth, seed % 13);
        let k = (frac * (q * depth) as f64).floor() as usize;
        let a = entry_attack_random(&w_bar, k, mag, seed).unwrap();
        prop_assert_eq!(a.support.len(), k);
        for (i, (x, y)) in a.w.data().iter().zip(w_bar.data()).enumerate() {
            let d = (x - y).abs();
            if a.support.contains(i + 1) {
                prop_assert!(d >= 0.5 * mag * (1.0 - 1e-12) && d <= mag * (1.0 + 1e-12));
            } else {
                prop_assert_eq!(x, y);
            }
        }
        prop_assert_eq!(entry_attack_random(&w_bar, k, mag, seed).unwrap(), a);
    }

    #[test]
    fn channel_attacks_touch_whole_progressions(q in 1usize..6, depth in 1usize..5, seed in any::<u64>(), k_raw in 0usize..6) {
        let w_bar = base_window(q, depth, seed % 5);
        let k = k_raw.min(q);
        let a = channel_attack_random(&w_bar, k, 3.0, seed).unwrap();
        let rows = periodical_set(&a.support, q, depth).unwrap();
        prop_assert_eq!(a.attacked_rows().unwrap(), rows.clone());
        let changed = a.w.data().iter().zip(w_bar.data()).filter(|(x, y)| x != y).count();
        prop_assert_eq!(changed, depth * k);
        for (i, (x, y)) in a.w.data().iter().zip(w_bar.data()).enumerate() {
            prop_assert_eq!(rows.contains(i + 1), x != y);
        }
    }

    #[test]
    fn attack_json_round_trip(seed in any::<u64>(), channel in any::<bool>()) {
        let w_bar = base_window(4, 3, seed % 7);
        let a = if channel { channel_attack_random(&w_bar, 2, 1.5, seed) } else { entry_attack_random(&w_bar, 3, 1.5, seed) }.unwrap();
        prop_assert_eq!(AttackRecord::from_json(&a.to_json().unwrap()).unwrap(), a);
    }
}

#[test]
fn channel_attacks_on_three_mass_shape_change_at_most_qk_entries() {
    let w_bar = base_window(4, 3, 2);
    for seed in 0..50 {
        let a = channel_attack_random(&w_bar, 1, 2.0, seed).unwrap();
        let changed = a.w.data().iter().zip(w_bar.data()).filter(|(x, y)| x != y).count();
        assert!(changed <= 4);
    }
}

#[test]
fn attack_json_rejects_oversized_support() {
    let a = entry_attack_random(&base_window(2, 2, 0), 2, 1.0, 3).unwrap();
    let text = a.to_json().unwrap().replace("\"k\": 2", "\"k\": 1");
    assert!(matches!(AttackRecord::from_json(&text), Err(Error::Parse(_))));
}

#[test]
fn adversarial_entry_attack_is_stealthy() {
    let opts = CertifyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..5u64 {
        let sys = random_system(&mut rng, 2, 1, 1);
        let h = gpe_hankel(&sys, 3, trial);
        let w_bar = window(&sys, 3, trial);
        let a = adversarial_entry_attack(h.entries(), &w_bar, 1, &opts).unwrap();
        assert_eq!(a.kind, AttackKind::Entry);
        assert_eq!(a.support.len(), 1);
        for (i, (x, y)) in a.w.data().iter().zip(w_bar.data()).enumerate() {
            assert_eq!(a.support.contains(i + 1), x != y);
        }
        let out = recover_entries_bruteforce(&h, &a.w, 1, &RecoverOptions::default()).unwrap();
        assert_eq!(out.status, RecoveryStatus::Recovered);
        assert!((out.w_tilde_vector().unwrap() - w_bar.stacked()).amax() > 1e-6);
    }
}

#[test]
fn three_mass_system_adversarial_attacks() {
    let opts = CertifyOptions::default();
    let sys = three_mass();
    let h = gpe_hankel(&sys, 3, 1);
    let w_bar = window(&sys, 3, 1);
    let entry = adversarial_entry_attack(h.entries(), &w_bar, 1, &opts).unwrap();
    let out = recover_entries_bruteforce(&h, &entry.w, 1, &RecoverOptions::default()).unwrap();
    assert!(out.is_recovered());
    assert!((out.w_tilde_vector().unwrap() - w_bar.stacked()).amax() > 1e-3);

    let channel = adversarial_channel_attack(&h, &w_bar, 1, &opts).unwrap();
    assert_eq!(channel.kind, AttackKind::Channel);
    let rows = channel.attacked_rows().unwrap();
    for (i, (x, y)) in channel.w.data().iter().zip(w_bar.data()).enumerate() {
        if !rows.contains(i + 1) {
            assert_eq!(x, y);
        }
    }
    let out = recover_channels_bruteforce(&h, &channel.w, 1, &RecoverOptions::default()).unwrap();
    assert!(out.is_recovered());
    assert!((out.w_tilde_vector().unwrap() - w_bar.stacked()).amax() > 1e-3);
}

#[test]
fn adversarial_attacks_refused_when_conditions_hold() {
    let opts = CertifyOptions::default();
    let ones = DMatrix::from_element(3, 1, 1.0);
    let w_bar = Trajectory::new(1, 0, vec![1.0; 3]).unwrap();
    assert!(matches!(adversarial_entry_attack(&ones, &w_bar, 1, &opts), Err(Error::InfeasibleAttack(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = loop {
        let h = autonomous_hankel(&mut rng, 2, 5, 2);
        if check_condition2(&h, 1, &opts).unwrap().holds() {
            break h;
        }
    };
    let w_bar = Trajectory::new(5, 0, vec![0.0; 10]).unwrap();
    assert!(matches!(adversarial_channel_attack(&h, &w_bar, 1, &opts), Err(Error::InfeasibleAttack(_))));
}
