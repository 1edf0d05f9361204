#![allow(dead_code)]

use behavior_guard_core::hankel::{build_hankel, check_gpe, HankelMatrix, RankTolerance};
use behavior_guard_core::lti::{
    discretize_zoh, mass_spring_chain, simulate, system_invariants, ChainParams, SystemSpec, TimeKind, Trajectory,
};
use behavior_guard_core::rng::{stream_rng, Stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn three_mass() -> SystemSpec {
    discretize_zoh(&mass_spring_chain(3, &ChainParams::three_mass()).unwrap(), 1.3).unwrap()
}

pub fn gaussian<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Offline data of length `t` from zero initial state and Gaussian inputs.
pub fn offline(sys: &SystemSpec, t: usize, seed: u64) -> Trajectory {
    let mut rng = stream_rng(seed, Stream::Data);
    let u = gaussian(&mut rng, sys.m(), t);
    simulate(sys, &u, &DVector::zeros(sys.n())).unwrap()
}

/// A fresh window from a random initial state.
pub fn window(sys: &SystemSpec, depth: usize, seed: u64) -> Trajectory {
    let mut rng = stream_rng(seed ^ 0x5eed, Stream::Data);
    let u = gaussian(&mut rng, sys.m(), depth);
    let x0 = gaussian(&mut rng, sys.n(), 1).column(0).into_owned();
    simulate(sys, &u, &x0).unwrap()
}

/// Stable random discrete system with spectral radius at most 0.9.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, m: usize, p: usize) -> SystemSpec {
    loop {
        let a = gaussian(rng, n, n);
        let radius = a.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let a = if radius > 0.0 { a * (rng.random_range(0.3..0.9) / radius) } else { a };
        let sys = SystemSpec::new(a, gaussian(rng, n, m), gaussian(rng, p, n), TimeKind::Discrete).unwrap();
        if system_invariants(&sys).unwrap().observable {
            return sys;
        }
    }
}

/// Hankel matrix of depth `depth` satisfying the excitation rank condition, redrawing data until it does.
pub fn gpe_hankel(sys: &SystemSpec, depth: usize, seed: u64) -> HankelMatrix {
    let t = (sys.m() + 1) * (depth + sys.n()) + depth;
    for attempt in 0..20 {
        let h = build_hankel(&offline(sys, t, seed.wrapping_add(1000 * attempt)), depth).unwrap();
        if check_gpe(&h, sys.m(), sys.n(), &RankTolerance::default()).unwrap().holds {
            return h;
        }
    }
    panic!("no exciting data after 20 draws");
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

/// Autonomous system observed through `p` outputs, with data from a random initial state.
pub fn autonomous_hankel<R: Rng>(rng: &mut R, n: usize, p: usize, depth: usize) -> HankelMatrix {
    let sys = loop {
        let sys = random_system(rng, n, 1, p);
        let sys = SystemSpec::new(sys.a, DMatrix::zeros(n, 0), sys.c, TimeKind::Discrete).unwrap();
        if system_invariants(&sys).unwrap().observable {
            break sys;
        }
    };
    let x0 = gaussian(rng, n, 1).column(0).into_owned();
    let wd = simulate(&sys, &DMatrix::zeros(0, n + depth + 2), &x0).unwrap();
    build_hankel(&wd, depth).unwrap()
}
