//! Attack synthesis: random entry and channel corruptions, and worst-case constructions
//! that defeat brute-force recovery when the budget conditions fail.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{
    check_condition1, check_condition2, min_channel_critical_set, min_critical_row_set, periodical_set,
    CertifyOptions,
};
use crate::error::{contract, Error, Result};
use crate::hankel::{numerical_rank, select_rows, svd, HankelMatrix, IndexSet};
use crate::lti::Trajectory;
use crate::optim::least_squares_min_norm;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Entry,
    Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub w: Trajectory,
    /// Entry indices in `1..=qL` or channel indices in `1..=q`.
    pub support: IndexSet,
    pub kind: AttackKind,
    /// Nominal perturbation scale (largest change for constructed attacks).
    pub magnitude: f64,
    pub seed: Option<u64>,
    pub k: usize,
}

#[derive(Serialize, Deserialize)]
struct AttackDoc {
    kind: AttackKind,
    k: usize,
    support: Vec<usize>,
    universe: usize,
    magnitude: f64,
    seed: Option<u64>,
    q: usize,
    m: usize,
    w: Vec<Vec<f64>>,
}

impl AttackRecord {
    /// Rows of the stacked window touched by the attack.
    pub fn attacked_rows(&self) -> Result<IndexSet> {
        match self.kind {
            AttackKind::Entry => Ok(self.support.clone()),
            AttackKind::Channel => periodical_set(&self.support, self.w.q(), self.w.len()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = AttackDoc {
            kind: self.kind,
            k: self.k,
            support: self.support.indices().to_vec(),
            universe: self.support.universe(),
            magnitude: self.magnitude,
            seed: self.seed,
            q: self.w.q(),
            m: self.w.inputs(),
            w: self.w.data().chunks(self.w.q()).map(<[f64]>::to_vec).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: AttackDoc = serde_json::from_str(text)?;
        if doc.w.iter().any(|s| s.len() != doc.q) {
            return Err(Error::Parse(format!("every sample must have {} values", doc.q)));
        }
        let w = Trajectory::new(doc.q, doc.m, doc.w.concat())?;
        let support = IndexSet::new(doc.support, doc.universe)?;
        if support.len() > doc.k {
            return Err(Error::Parse(format!("support of size {} exceeds k = {}", support.len(), doc.k)));
        }
        Ok(Self { w, support, kind: doc.kind, magnitude: doc.magnitude, seed: doc.seed, k: doc.k })
    }
}

fn perturbation<R: Rng>(rng: &mut R, magnitude: f64) -> f64 {
    let size = rng.random_range(0.5..=1.0) * magnitude;
    if rng.random_bool(0.5) {
        size
    } else {
        -size
    }
}

fn check_magnitude(magnitude: f64) -> Result<()> {
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(contract(format!("attack magnitude must be finite and >= 0, got {magnitude}")));
    }
    Ok(())
}

/// Corrupts `k` uniformly chosen entries by `±[magnitude/2, magnitude]`.
pub fn entry_attack_random(w_bar: &Trajectory, k: usize, magnitude: f64, seed: u64) -> Result<AttackRecord> {
    check_magnitude(magnitude)?;
    let total = w_bar.data().len();
    if k > total {
        return Err(contract(format!("k = {k} exceeds qL = {total}")));
    }
    let mut rng = stream_rng(seed, Stream::Attack);
    let picked = sample(&mut rng, total, k).into_vec();
    let mut data = w_bar.data().to_vec();
    let mut sorted = picked.clone();
    sorted.sort_unstable();
    for &i in &sorted {
        data[i] += perturbation(&mut rng, magnitude);
    }
    Ok(AttackRecord {
        w: Trajectory::new(w_bar.q(), w_bar.inputs(), data)?,
        support: IndexSet::from_zero_based(picked, total)?,
        kind: AttackKind::Entry,
        magnitude,
        seed: Some(seed),
        k,
    })
}

/// Corrupts every sample of `k` uniformly chosen channels.
pub fn channel_attack_random(w_bar: &Trajectory, k: usize, magnitude: f64, seed: u64) -> Result<AttackRecord> {
    check_magnitude(magnitude)?;
    let q = w_bar.q();
    if k > q {
        return Err(contract(format!("k = {k} exceeds q = {q}")));
    }
    let mut rng = stream_rng(seed, Stream::Attack);
    let support = IndexSet::from_zero_based(sample(&mut rng, q, k).into_vec(), q)?;
    let rows = periodical_set(&support, q, w_bar.len())?;
    let mut data = w_bar.data().to_vec();
    for i in rows.zero_based() {
        data[i] += perturbation(&mut rng, magnitude);
    }
    Ok(AttackRecord {
        w: Trajectory::new(q, w_bar.inputs(), data)?,
        support,
        kind: AttackKind::Channel,
        magnitude,
        seed: Some(seed),
        k,
    })
}

/// Corrupts the given 1-based entries by `±[magnitude/2, magnitude]`.
pub fn entry_attack_on(w_bar: &Trajectory, support: &IndexSet, magnitude: f64, seed: u64) -> Result<AttackRecord> {
    check_magnitude(magnitude)?;
    if support.universe() != w_bar.data().len() {
        return Err(contract(format!("support universe {} but the window has {} entries", support.universe(), w_bar.data().len())));
    }
    let mut rng = stream_rng(seed, Stream::Attack);
    let mut data = w_bar.data().to_vec();
    for i in support.zero_based() {
        data[i] += perturbation(&mut rng, magnitude);
    }
    Ok(AttackRecord {
        w: Trajectory::new(w_bar.q(), w_bar.inputs(), data)?,
        support: support.clone(),
        kind: AttackKind::Entry,
        magnitude,
        seed: Some(seed),
        k: support.len(),
    })
}

/// Corrupts every sample of the given 1-based channels.
pub fn channel_attack_on(w_bar: &Trajectory, channels: &IndexSet, magnitude: f64, seed: u64) -> Result<AttackRecord> {
    check_magnitude(magnitude)?;
    let q = w_bar.q();
    if channels.universe() != q {
        return Err(contract(format!("channel universe {} but q = {q}", channels.universe())));
    }
    let mut rng = stream_rng(seed, Stream::Attack);
    let rows = periodical_set(channels, q, w_bar.len())?;
    let mut data = w_bar.data().to_vec();
    for i in rows.zero_based() {
        data[i] += perturbation(&mut rng, magnitude);
    }
    Ok(AttackRecord {
        w: Trajectory::new(q, w_bar.inputs(), data)?,
        support: channels.clone(),
        kind: AttackKind::Channel,
        magnitude,
        seed: Some(seed),
        k: channels.len(),
    })
}

/// Attacked groups per the worst-case selection: all of the critical set when it is smaller
/// than `k`, otherwise its first `k` members.
fn adversarial_groups(critical: &IndexSet, k: usize) -> Vec<usize> {
    critical.zero_based().take(k).collect()
}

/// Builds the stealthy perturbation over grouped rows. Returns the attacked groups and new stacked data.
fn construct(
    h: &DMatrix<f64>,
    w_bar: &DVector<f64>,
    groups: &[Vec<usize>],
    attacked: &[usize],
    k: usize,
    opts: &CertifyOptions,
    critical: &IndexSet,
) -> Result<DVector<f64>> {
    let g_bar = least_squares_min_norm(h, w_bar, &opts.rank_tol)?;
    let misfit = (h * &g_bar - w_bar).norm();
    if misfit > 1e-8 * (1.0 + w_bar.norm()) {
        return Err(Error::Precondition(format!("true trajectory is not in the image of H (misfit {misfit:e})")));
    }
    let rows_of = |set: &[usize]| -> Vec<usize> {
        let mut r: Vec<usize> = set.iter().flat_map(|&g| groups[g].iter().copied()).collect();
        r.sort_unstable();
        r
    };
    let must_remove: Vec<usize> = critical.zero_based().filter(|g| !attacked.contains(g)).collect();
    let free: Vec<usize> = (0..groups.len()).filter(|g| !attacked.contains(g) && !must_remove.contains(g)).collect();
    let extra = k.saturating_sub(must_remove.len()).min(free.len());
    let c_rows = rows_of(attacked);
    let h_c = select_rows(h, &c_rows);
    for more in free.iter().copied().combinations(extra) {
        let removed: Vec<usize> = must_remove.iter().copied().chain(more).collect();
        let removed_rows = rows_of(&removed);
        let kept: Vec<usize> = (0..h.nrows()).filter(|r| !removed_rows.contains(r)).collect();
        let benign: Vec<usize> = kept.iter().copied().filter(|r| !c_rows.contains(r)).collect();
        let h_i = select_rows(h, &kept);
        let h_b = select_rows(h, &benign);
        if numerical_rank(&h_b, &opts.rank_tol)?.rank >= numerical_rank(&h_i, &opts.rank_tol)?.rank {
            continue;
        }
        // kernel basis of H_B; keep the direction that moves the attacked rows most
        let cols = h.ncols();
        let mut padded = DMatrix::zeros(benign.len().max(cols), cols);
        padded.rows_mut(0, benign.len()).copy_from(&h_b);
        let factor = svd(&padded, false, true)?;
        let v_t = factor.v_t.expect("right singular vectors requested");
        let threshold = opts.rank_tol.threshold(benign.len(), cols, factor.singular_values.max());
        let best = (0..cols)
            .filter(|&j| factor.singular_values[j] <= threshold)
            .map(|j| v_t.row(j).transpose())
            .map(|v| {
                let reach = (&h_c * &v).amax();
                (v, reach)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((g_tilde, reach)) = best else { continue };
        if reach <= 1e-12 * (1.0 + h.amax()) {
            continue;
        }
        let g_tilde = &g_tilde / g_tilde.norm();
        let mut w = w_bar.clone();
        let moved = &h_c * (&g_bar + &g_tilde);
        for (idx, &r) in c_rows.iter().enumerate() {
            w[r] = moved[idx];
        }
        return Ok(w);
    }
    Err(Error::InfeasibleAttack("no kept set separates the benign rows from the attacked ones".into()))
}

fn validate_window(h: &DMatrix<f64>, w_bar: &Trajectory) -> Result<()> {
    if w_bar.data().len() != h.nrows() {
        return Err(contract(format!("window has {} entries but H has {} rows", w_bar.data().len(), h.nrows())));
    }
    Ok(())
}

/// Worst-case entry attack; only possible when every `2k` rows is not enough to keep the rank.
pub fn adversarial_entry_attack(
    h: &DMatrix<f64>,
    w_bar: &Trajectory,
    k: usize,
    opts: &CertifyOptions,
) -> Result<AttackRecord> {
    validate_window(h, w_bar)?;
    match check_condition1(h, k, opts)?.holds {
        Some(true) => return Err(Error::InfeasibleAttack(format!("every removal of {} rows keeps the rank", 2 * k))),
        None => return Err(Error::BudgetExceeded { budget: opts.budget, lower_bound: 0 }),
        Some(false) => {}
    }
    let critical = min_critical_row_set(h, opts)?;
    let attacked = adversarial_groups(&critical, k);
    let groups: Vec<Vec<usize>> = (0..h.nrows()).map(|i| vec![i]).collect();
    let w_bar_vec = w_bar.stacked();
    let w = construct(h, &w_bar_vec, &groups, &attacked, k, opts, &critical)?;
    Ok(AttackRecord {
        magnitude: (&w - &w_bar_vec).amax(),
        w: Trajectory::from_stacked(w_bar.q(), w_bar.inputs(), &w)?,
        support: IndexSet::from_zero_based(attacked, h.nrows())?,
        kind: AttackKind::Entry,
        seed: None,
        k,
    })
}

/// Worst-case channel attack; only possible when some `2k` channels carry rank on their own.
pub fn adversarial_channel_attack(
    h: &HankelMatrix,
    w_bar: &Trajectory,
    k: usize,
    opts: &CertifyOptions,
) -> Result<AttackRecord> {
    validate_window(h.entries(), w_bar)?;
    if w_bar.q() != h.q() {
        return Err(contract("trajectory and Hankel matrix disagree on q"));
    }
    match check_condition2(h, k, opts)?.holds {
        Some(true) => {
            return Err(Error::InfeasibleAttack(format!("every removal of {} channels keeps the rank", 2 * k)))
        }
        None => return Err(Error::BudgetExceeded { budget: opts.budget, lower_bound: 0 }),
        Some(false) => {}
    }
    let (q, depth) = (h.q(), h.depth());
    let critical = min_channel_critical_set(h, opts)?;
    let attacked = adversarial_groups(&critical, k);
    let groups: Vec<Vec<usize>> = (0..q).map(|i| (0..depth).map(|l| i + l * q).collect()).collect();
    let w_bar_vec = w_bar.stacked();
    let w = construct(h.entries(), &w_bar_vec, &groups, &attacked, k, opts, &critical)?;
    Ok(AttackRecord {
        magnitude: (&w - &w_bar_vec).amax(),
        w: Trajectory::from_stacked(q, w_bar.inputs(), &w)?,
        support: IndexSet::from_zero_based(attacked, q)?,
        kind: AttackKind::Channel,
        seed: None,
        k,
    })
}
