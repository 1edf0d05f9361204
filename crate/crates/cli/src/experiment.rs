//! The experiment pipeline: data generation, corruption, recovery, aggregation.
//!
//! Each stage is a separate function so the `simulate`, `attack` and `recover`
//! subcommands reproduce `run_experiment` exactly when chained.

use behavior_guard_core::attack::{
    channel_attack_on, channel_attack_random, entry_attack_on, entry_attack_random, AttackKind, AttackRecord,
};
use behavior_guard_core::conditions::{
    check_condition1, check_condition2, check_condition3, epigraph_certificate_for, periodical_set,
    t_matrix_certificate, Certificate,
};
use behavior_guard_core::hankel::{build_hankel, check_gpe, numerical_rank, GpeReport, HankelMatrix, IndexSet};
use behavior_guard_core::lti::{simulate, system_invariants, SystemInvariants, SystemSpec, Trajectory};
use behavior_guard_core::recover::{
    recover_channels_bruteforce, recover_entries_bruteforce, recover_group_lasso, recover_l1,
    recover_noisy_channels, recover_noisy_entries, Method, RecoveryResult,
};
use behavior_guard_core::rng::{stream_rng, trial_seed, Stream};
use behavior_guard_core::Error as CoreError;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NoiseKind};
use crate::presets::ScalingStudy;
use crate::error::{CliError, Result};
use crate::report::{channel_rmse, rmse, summarize, MethodOutcome, Report, TrialRecord};

pub const SEGMENTATION: &str = "non-overlapping consecutive windows of length L";

/// Offline data and the true online trajectory.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub system: SystemSpec,
    pub invariants: SystemInvariants,
    pub offline: Trajectory,
    /// `trials · L` samples; window `i` covers samples `i·L + 1 ..= (i+1)·L`.
    pub online: Trajectory,
}

/// Gaussian `N(0, 1)` inputs from rest: first the offline data, then the online trajectory, from one data stream.
pub fn simulate_data(cfg: &ExperimentConfig) -> Result<Simulation> {
    let system = cfg.resolve_system()?;
    let invariants = system_invariants(&system)?;
    let mut rng = stream_rng(cfg.seed, Stream::Data);
    let (m, n) = (system.m(), system.n());
    let mut draw = |len: usize| DMatrix::from_fn(m, len, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u_off = draw(cfg.t);
    let u_on = draw(cfg.l * cfg.trials);
    let offline = simulate(&system, &u_off, &DVector::zeros(n))?;
    let online = simulate(&system, &u_on, &DVector::zeros(n))?;
    Ok(Simulation { system, invariants, offline, online })
}

/// Builds `H_L(w_d)` and runs the excitation test; aborts when it fails and the config requires it.
pub fn offline_hankel(cfg: &ExperimentConfig, offline: &Trajectory, invariants: &SystemInvariants) -> Result<(HankelMatrix, GpeReport)> {
    let h = build_hankel(offline, cfg.l)?;
    let gpe = match check_gpe(&h, invariants.m, invariants.n, &cfg.solver.rank_tol) {
        Ok(report) => report,
        Err(CoreError::InfeasibleTarget { target, rows, cols }) if !cfg.require_gpe => {
            log::warn!("rank target {target} is out of reach for a {rows}x{cols} Hankel matrix");
            GpeReport { rank: numerical_rank(h.entries(), &cfg.solver.rank_tol)?.rank, target, gap_ratio: None, holds: false }
        }
        Err(e) => return Err(e.into()),
    };
    if !gpe.holds {
        let msg = format!(
            "offline data fail the excitation test: rank {} but m L + n = {} (gap ratio {:?})",
            gpe.rank, gpe.target, gpe.gap_ratio
        );
        if cfg.require_gpe {
            return Err(CliError::Core(CoreError::Numerical(format!("{msg}; recovery guarantees do not apply"))));
        }
        log::warn!("{msg}; continuing because require_gpe is off");
    }
    Ok((h, gpe))
}

/// True windows cut from the online trajectory.
pub fn segments(cfg: &ExperimentConfig, online: &Trajectory) -> Result<Vec<Trajectory>> {
    (0..cfg.trials).map(|i| Ok(online.window(i * cfg.l + 1, cfg.l)?)).collect()
}

/// Adds measurement noise to the whole online trajectory from the noise stream.
pub fn add_noise(cfg: &ExperimentConfig, online: &Trajectory) -> Result<Trajectory> {
    let sigma = cfg.noise.sigma;
    let mut rng = stream_rng(cfg.seed, Stream::Noise);
    let data: Vec<f64> = match cfg.noise.distribution {
        NoiseKind::None => online.data().to_vec(),
        NoiseKind::Gaussian => {
            let dist = Normal::new(0.0, sigma).map_err(|e| CliError::Config(e.to_string()))?;
            online.data().iter().map(|v| v + dist.sample(&mut rng)).collect()
        }
        NoiseKind::Uniform => {
            let half = sigma * 3f64.sqrt();
            online.data().iter().map(|v| v + if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 }).collect()
        }
    };
    Ok(Trajectory::new(online.q(), online.inputs(), data)?)
}

/// Attacks window `index` of the (noisy) online trajectory.
pub fn attack_window(cfg: &ExperimentConfig, index: usize, window: &Trajectory) -> Result<AttackRecord> {
    let seed = trial_seed(cfg.attack.seed.unwrap_or(cfg.seed), index as u64);
    let mag = cfg.attack.magnitude;
    let q = window.q();
    let record = match (&cfg.attack.kind, &cfg.attack.support) {
        (AttackKind::Entry, None) => entry_attack_random(window, cfg.k, mag, seed)?,
        (AttackKind::Channel, None) => channel_attack_random(window, cfg.k, mag, seed)?,
        (AttackKind::Entry, Some(s)) => entry_attack_on(window, &IndexSet::new(s.clone(), q * cfg.l)?, mag, seed)?,
        (AttackKind::Channel, Some(s)) => channel_attack_on(window, &IndexSet::new(s.clone(), q)?, mag, seed)?,
    };
    Ok(record)
}

/// Noise, then one attack per window.
pub fn corrupt(cfg: &ExperimentConfig, online: &Trajectory) -> Result<Vec<AttackRecord>> {
    let noisy = add_noise(cfg, online)?;
    segments(cfg, &noisy)?.iter().enumerate().map(|(i, w)| attack_window(cfg, i, w)).collect()
}

pub fn run_method(method: Method, cfg: &ExperimentConfig, h: &HankelMatrix, w: &Trajectory) -> Result<RecoveryResult> {
    let opts = &cfg.solver;
    let k = cfg.k;
    Ok(match method {
        Method::BruteforceEntries => recover_entries_bruteforce(h, w, k, opts)?,
        Method::BruteforceChannels => recover_channels_bruteforce(h, w, k, opts)?,
        Method::L1 => recover_l1(h, w, opts)?,
        Method::GroupLasso => recover_group_lasso(h, w, opts)?,
        Method::NoisyEntries => recover_noisy_entries(h, w, k, opts)?,
        Method::NoisyChannels => recover_noisy_channels(h, w, k, opts)?,
    })
}

fn granularity(method: Method) -> AttackKind {
    match method {
        Method::BruteforceEntries | Method::L1 | Method::NoisyEntries => AttackKind::Entry,
        Method::BruteforceChannels | Method::GroupLasso | Method::NoisyChannels => AttackKind::Channel,
    }
}

fn outcome(method: Method, result: RecoveryResult, truth: &[f64], attack: &AttackRecord) -> MethodOutcome {
    let q = attack.w.q();
    let rmse_value = result.w_tilde.as_ref().map(|w| rmse(w, truth));
    let per_channel = result.w_tilde.as_ref().map(|w| channel_rmse(w, truth, q));
    let support_identified = (granularity(method) == attack.kind && result.is_recovered())
        .then(|| result.removed.as_ref().map(|r| r.indices() == attack.support.indices()))
        .flatten();
    MethodOutcome { result, rmse: rmse_value, channel_rmse: per_channel, support_identified }
}

/// Runs every configured method on one attacked window.
pub fn recover_window(
    cfg: &ExperimentConfig,
    h: &HankelMatrix,
    index: usize,
    truth: &Trajectory,
    attack: &AttackRecord,
) -> Result<TrialRecord> {
    let mut outcomes = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let result = run_method(method, cfg, h, &attack.w)?;
        outcomes.push(outcome(method, result, truth.data(), attack));
    }
    Ok(TrialRecord {
        index,
        start: index * cfg.l + 1,
        truth: truth.data().to_vec(),
        received: attack.w.data().to_vec(),
        attack_kind: attack.kind,
        support: attack.support.indices().to_vec(),
        received_rmse: rmse(attack.w.data(), truth.data()),
        outcomes,
    })
}

/// Recoverability tests on the offline Hankel matrix for the configured budget and support.
pub fn certify(cfg: &ExperimentConfig, h: &HankelMatrix) -> Result<Vec<Certificate>> {
    let opts = &cfg.certificates;
    let mut out = vec![match cfg.attack.kind {
        AttackKind::Entry => check_condition1(h.entries(), cfg.k, opts)?,
        AttackKind::Channel => check_condition2(h, cfg.k, opts)?,
    }];
    if let Some(support) = &cfg.attack.support {
        let rows = match cfg.attack.kind {
            AttackKind::Entry => IndexSet::new(support.clone(), h.rows())?,
            AttackKind::Channel => periodical_set(
                &IndexSet::new(support.clone(), h.q())?,
                h.q(),
                h.depth(),
            )?,
        };
        let cond3 = check_condition3(h.entries(), &rows, opts)?;
        let holds = cond3.holds();
        out.push(cond3);
        if holds {
            out.push(t_matrix_certificate(h.entries(), &rows, opts)?);
        }
        out.push(epigraph_certificate_for(h.entries(), &rows, opts)?);
    }
    Ok(out)
}

/// Runs `f` over `0..n` on `jobs` threads, keeping results in index order.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Generates data, certifies, corrupts each window, runs every method and aggregates.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Report> {
    cfg.validate()?;
    let sim = simulate_data(cfg)?;
    let (h, gpe) = offline_hankel(cfg, &sim.offline, &sim.invariants)?;
    let certificates = if cfg.certify { certify(cfg, &h)? } else { Vec::new() };
    let truths = segments(cfg, &sim.online)?;
    let attacks = corrupt(cfg, &sim.online)?;
    log::info!("running {} windows with {:?}", cfg.trials, cfg.methods.iter().map(Method::name).collect::<Vec<_>>());
    let trials = parallel_map(cfg.trials, jobs, |i| recover_window(cfg, &h, i, &truths[i], &attacks[i]))?;
    let summary = summarize(&cfg.methods, &trials);
    Ok(Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        segmentation: SEGMENTATION.to_string(),
        invariants: sim.invariants,
        gpe,
        certificates,
        trials,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_masses: usize,
    pub state_dim: usize,
    pub hankel_rows: usize,
    pub hankel_cols: usize,
    pub method: Method,
    pub trials: usize,
    pub recovered: usize,
    /// Milliseconds.
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Slope of log(mean time) against log(n masses).
    pub exponent: f64,
    pub reports: Vec<Report>,
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Runs the first configured method on chains of each size.
pub fn run_scaling(study: &ScalingStudy, jobs: usize) -> Result<ScalingReport> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &n in &study.sizes {
        let cfg = study.config_for(n);
        log::info!("scaling study: {n} masses, T = {}", cfg.t);
        let report = run_experiment(&cfg, jobs)?;
        let s = &report.summary[0];
        let q = report.invariants.m + report.invariants.p;
        rows.push(ScalingRow {
            n_masses: n,
            state_dim: report.invariants.n,
            hankel_rows: q * cfg.l,
            hankel_cols: cfg.t - cfg.l + 1,
            method: s.method,
            trials: s.trials,
            recovered: s.recovered,
            mean_ms: 1e3 * s.wall_time.mean,
            median_ms: 1e3 * s.wall_time.median,
            max_ms: 1e3 * s.wall_time.max,
        });
        reports.push(report);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.n_masses as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_ms).collect();
    Ok(ScalingReport { exponent: log_log_slope(&x, &y), rows, reports })
}

pub fn write_scaling_csv<W: std::io::Write>(rows: &[ScalingRow], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
