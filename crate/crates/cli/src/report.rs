//! Experiment reports: per-window records and the aggregates derived from them.

use behavior_guard_core::attack::AttackKind;
use behavior_guard_core::conditions::Certificate;
use behavior_guard_core::hankel::GpeReport;
use behavior_guard_core::lti::SystemInvariants;
use behavior_guard_core::recover::{Method, RecoveryResult};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub result: RecoveryResult,
    /// RMSE of the recovered window against the true one.
    pub rmse: Option<f64>,
    /// Per-channel RMSE of the recovered window.
    pub channel_rmse: Option<Vec<f64>>,
    /// Whether the entries or channels the method discarded are exactly the attacked ones.
    pub support_identified: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    /// 1-based time of the first sample of the window in the online trajectory.
    pub start: usize,
    /// True window `w̄` (stacked, sample-major).
    pub truth: Vec<f64>,
    /// Received window after noise and attack.
    pub received: Vec<f64>,
    pub attack_kind: AttackKind,
    pub support: Vec<usize>,
    /// RMSE of the received window against the true one.
    pub received_rmse: f64,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl TimeStats {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Self { mean: sorted.iter().sum::<f64>() / n as f64, median, min: sorted[0], max: sorted[n - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub recovered: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_max: Option<f64>,
    /// Windows where the recovered RMSE is strictly below the received RMSE.
    pub improved: usize,
    /// Windows where the discarded set equals the attacked set (when the method reports one).
    pub support_identified: usize,
    pub support_rate: Option<f64>,
    pub channel_rmse_mean: Option<Vec<f64>>,
    /// Seconds.
    pub wall_time: TimeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: ExperimentConfig,
    /// How the online trajectory was cut into windows.
    pub segmentation: String,
    pub invariants: SystemInvariants,
    pub gpe: GpeReport,
    pub certificates: Vec<Certificate>,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<MethodSummary>,
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len().max(1) as f64).sqrt()
}

pub fn channel_rmse(a: &[f64], b: &[f64], q: usize) -> Vec<f64> {
    let mut sums = vec![0.0; q];
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        sums[i % q] += (x - y) * (x - y);
    }
    let per = (a.len() / q.max(1)).max(1) as f64;
    sums.iter().map(|s| (s / per).sqrt()).collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates for each method, computed from the trial records alone.
pub fn summarize(methods: &[Method], trials: &[TrialRecord]) -> Vec<MethodSummary> {
    methods
        .iter()
        .enumerate()
        .map(|(slot, &method)| {
            let outcomes: Vec<(&TrialRecord, &MethodOutcome)> =
                trials.iter().filter_map(|t| t.outcomes.get(slot).map(|o| (t, o))).collect();
            let rmses: Vec<f64> = outcomes.iter().filter_map(|(_, o)| o.rmse).collect();
            let improved = outcomes.iter().filter(|(t, o)| o.rmse.is_some_and(|r| r < t.received_rmse)).count();
            let judged: Vec<bool> = outcomes.iter().filter_map(|(_, o)| o.support_identified).collect();
            let identified = judged.iter().filter(|b| **b).count();
            let channel: Vec<&Vec<f64>> = outcomes.iter().filter_map(|(_, o)| o.channel_rmse.as_ref()).collect();
            let channel_rmse_mean = channel.first().map(|first| {
                (0..first.len()).map(|c| channel.iter().map(|v| v[c]).sum::<f64>() / channel.len() as f64).collect()
            });
            let times: Vec<f64> = outcomes.iter().map(|(_, o)| o.result.wall_time).collect();
            MethodSummary {
                method,
                trials: outcomes.len(),
                recovered: outcomes.iter().filter(|(_, o)| o.result.is_recovered()).count(),
                rmse_mean: mean(&rmses),
                rmse_max: rmses.iter().copied().reduce(f64::max),
                improved,
                support_identified: identified,
                support_rate: (!judged.is_empty()).then(|| identified as f64 / judged.len() as f64),
                channel_rmse_mean,
                wall_time: TimeStats::of(&times),
            }
        })
        .collect()
}

impl Report {
    /// Recomputes every derived number from the stored windows and compares.
    pub fn check_consistency(&self) -> Result<(), String> {
        let q = self.invariants.m + self.invariants.p;
        for t in &self.trials {
            if rmse(&t.received, &t.truth) != t.received_rmse {
                return Err(format!("trial {}: received RMSE does not match the stored windows", t.index));
            }
            for o in &t.outcomes {
                let expected = o.result.w_tilde.as_ref().map(|w| rmse(w, &t.truth));
                if expected != o.rmse {
                    return Err(format!("trial {} {}: RMSE does not match w̃", t.index, o.result.method.name()));
                }
                let expected = o.result.w_tilde.as_ref().map(|w| channel_rmse(w, &t.truth, q));
                if expected != o.channel_rmse {
                    return Err(format!("trial {} {}: channel RMSE does not match w̃", t.index, o.result.method.name()));
                }
            }
        }
        if summarize(&self.config.methods, &self.trials) != self.summary {
            return Err("summary differs from the aggregate of the trial records".into());
        }
        Ok(())
    }

    /// Copy with every wall-clock field zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Report {
        let mut out = self.clone();
        for t in &mut out.trials {
            for o in &mut t.outcomes {
                o.result.wall_time = 0.0;
            }
        }
        for s in &mut out.summary {
            s.wall_time = TimeStats::default();
        }
        out
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
