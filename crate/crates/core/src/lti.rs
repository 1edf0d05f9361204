//! State-space models used for data generation and ground truth.
//!
//! Nothing in the recovery path touches this module: it exists to produce the
//! offline data `w_d`, the true windows `w̄`, and the example systems.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::hankel::{numerical_rank, RankTolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKind {
    Continuous,
    Discrete,
}

/// `x' = A x + B u`, `y = C x` (no direct feedthrough).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub time_kind: TimeKind,
    /// Sampling period, set once the model has been discretized.
    pub ts: Option<f64>,
}

impl SystemSpec {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, time_kind: TimeKind) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(contract(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(contract(format!("B must have {n} rows, got {}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(contract(format!("C must have {n} columns, got {}", c.ncols())));
        }
        if b.ncols() + c.nrows() == 0 {
            return Err(contract("system must have at least one variable (m + p >= 1)"));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(contract("system matrices must be finite"));
        }
        Ok(Self { a, b, c, time_kind, ts: None })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn q(&self) -> usize {
        self.m() + self.p()
    }

    /// Applies the state transformation `x = S z`.
    pub fn similarity(&self, s: &DMatrix<f64>) -> Result<Self> {
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("similarity transform is singular".into()))?;
        Ok(Self {
            a: &s_inv * &self.a * s,
            b: &s_inv * &self.b,
            c: &self.c * s,
            time_kind: self.time_kind,
            ts: self.ts,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SystemDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SystemDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Dims {
    n: usize,
    m: usize,
    p: usize,
}

impl Serialize for SystemSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SystemDoc::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SystemSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        SystemDoc::deserialize(deserializer)?.try_into().map_err(serde::de::Error::custom)
    }
}

/// On-disk layout: matrices as arrays of rows.
#[derive(Debug, Serialize, Deserialize)]
struct SystemDoc {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    dims: Dims,
    time_kind: TimeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("matrix {name} does not match dims {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<&SystemSpec> for SystemDoc {
    fn from(s: &SystemSpec) -> Self {
        Self {
            a: rows_of(&s.a),
            b: rows_of(&s.b),
            c: rows_of(&s.c),
            dims: Dims { n: s.n(), m: s.m(), p: s.p() },
            time_kind: s.time_kind,
            ts: s.ts,
        }
    }
}

impl TryFrom<SystemDoc> for SystemSpec {
    type Error = Error;

    fn try_from(doc: SystemDoc) -> Result<Self> {
        let Dims { n, m, p } = doc.dims;
        let a = matrix_from_rows(&doc.a, n, n, "a")?;
        // serde cannot distinguish an n x 0 matrix from an empty list of rows
        let b = if m == 0 { DMatrix::zeros(n, 0) } else { matrix_from_rows(&doc.b, n, m, "b")? };
        let c = if n == 0 && p > 0 && doc.c.iter().all(|r| r.is_empty()) {
            DMatrix::zeros(p, 0)
        } else {
            matrix_from_rows(&doc.c, p, n, "c")?
        };
        let mut sys = SystemSpec::new(a, b, c, doc.time_kind).map_err(|e| Error::Parse(e.to_string()))?;
        sys.ts = doc.ts;
        Ok(sys)
    }
}

/// A finite sequence of stacked samples `w(t) = [u(t); y(t)]`, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    q: usize,
    m: usize,
    data: Vec<f64>,
}

impl Trajectory {
    /// `m` is the number of leading input variables in each sample.
    pub fn new(q: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if q == 0 {
            return Err(contract("trajectory needs q >= 1"));
        }
        if m > q {
            return Err(contract(format!("input count {m} exceeds q = {q}")));
        }
        if !data.len().is_multiple_of(q) {
            return Err(contract(format!("data length {} is not a multiple of q = {q}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(contract("trajectory values must be finite"));
        }
        Ok(Self { q, m, data })
    }

    /// Builds from a stacked vector of length `q * len`.
    pub fn from_stacked(q: usize, m: usize, w: &DVector<f64>) -> Result<Self> {
        Self::new(q, m, w.iter().copied().collect())
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn inputs(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Sample at 1-based time `t`.
    pub fn sample(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.len(), "time index {t} outside [1, {}]", self.len());
        &self.data[(t - 1) * self.q..t * self.q]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    /// Samples `start..start+len` (1-based start).
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start == 0 || start + len - 1 > self.len() {
            return Err(contract(format!(
                "window [{start}, {}] outside [1, {}]",
                start + len - 1,
                self.len()
            )));
        }
        let data = self.data[(start - 1) * self.q..(start - 1 + len) * self.q].to_vec();
        Ok(Self { q: self.q, m: self.m, data })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.m)
            .map(|i| format!("u_{i}"))
            .chain((1..=self.q - self.m).map(|i| format!("y_{i}")))
            .collect();
        wtr.write_record(&header)?;
        for t in 1..=self.len() {
            wtr.write_record(self.sample(t).iter().map(|v| format!("{v:e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let mut m = 0;
        let mut seen_output = false;
        for (col, name) in header.iter().enumerate() {
            let name = name.trim();
            if name.starts_with("u_") && !seen_output {
                m += 1;
            } else if name.starts_with("y_") {
                seen_output = true;
            } else {
                return Err(Error::Parse(format!(
                    "line 1 column {}: expected u_i columns followed by y_i columns, found {name:?}",
                    col + 1
                )));
            }
        }
        let q = header.len();
        let mut data = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("line {line} column {}: not a number: {field:?}", col + 1))
                })?;
                data.push(v);
            }
        }
        Self::new(q, m, data).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Matrix exponential by scaling and squaring around a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm1 = a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(Error::Numerical("matrix exponential of a non-finite matrix".into()));
    }
    let squarings = if norm1 > THETA_13 { (norm1 / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(squarings);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &ident * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &ident * B[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(r)
}

/// Zero-order-hold discretization through the exponential of `[[A, B], [0, 0]] * ts`.
pub fn discretize_zoh(sys: &SystemSpec, ts: f64) -> Result<SystemSpec> {
    if sys.time_kind != TimeKind::Continuous {
        return Err(contract("discretize_zoh expects a continuous-time system"));
    }
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(contract(format!("sampling time must be positive, got {ts}")));
    }
    let (n, m) = (sys.n(), sys.m());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * ts));
    let e = expm(&aug)?;
    Ok(SystemSpec {
        a: e.view((0, 0), (n, n)).into_owned(),
        b: e.view((0, n), (n, m)).into_owned(),
        c: sys.c.clone(),
        time_kind: TimeKind::Discrete,
        ts: Some(ts),
    })
}

/// Runs `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t)` from `x(1) = x0`.
///
/// `u` holds one column per time step.
pub fn simulate(sys: &SystemSpec, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<Trajectory> {
    if sys.time_kind != TimeKind::Discrete {
        return Err(contract("simulate expects a discrete-time system"));
    }
    if u.nrows() != sys.m() {
        return Err(contract(format!("input has {} rows, system has m = {}", u.nrows(), sys.m())));
    }
    if x0.len() != sys.n() {
        return Err(contract(format!("x0 has {} entries, system has n = {}", x0.len(), sys.n())));
    }
    let q = sys.q();
    let mut data = Vec::with_capacity(q * u.ncols());
    let mut x = x0.clone();
    for t in 0..u.ncols() {
        let ut = u.column(t);
        let y = &sys.c * &x;
        data.extend(ut.iter());
        data.extend(y.iter());
        x = &sys.a * &x + &sys.b * ut;
    }
    Trajectory::new(q, sys.m(), data).map_err(|_| Error::Numerical("simulation diverged".into()))
}

/// Physical parameters of a chain of masses, one entry per mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub masses: Vec<f64>,
    pub stiffness: Vec<f64>,
    pub damping: Vec<f64>,
}

impl ChainParams {
    /// k1=2, m1=1, b1=3, k2=3, m2=2, b2=4, k3=1, m3=10, b3=2.
    pub fn three_mass() -> Self {
        Self {
            masses: vec![1.0, 2.0, 10.0],
            stiffness: vec![2.0, 3.0, 1.0],
            damping: vec![3.0, 4.0, 2.0],
        }
    }

    /// Repeats the three-mass pattern along a chain of `n` masses.
    pub fn repeating(n: usize) -> Self {
        let base = Self::three_mass();
        Self {
            masses: (0..n).map(|i| base.masses[i % 3]).collect(),
            stiffness: (0..n).map(|i| base.stiffness[i % 3]).collect(),
            damping: (0..n).map(|i| base.damping[i % 3]).collect(),
        }
    }
}

/// Continuous-time chain with state `[d1, d1', d2, d2', ...]`, a force on mass 1,
/// and outputs `d2, ..., dn, dn'`.
///
/// Mass 1 is tied to the ground by `k1`/`b1`; mass `i > 1` is pulled towards
/// mass `i - 1` by `k_i` and damped by `b_i`.
pub fn mass_spring_chain(n_masses: usize, params: &ChainParams) -> Result<SystemSpec> {
    if n_masses < 2 {
        return Err(contract(format!("chain needs at least 2 masses, got {n_masses}")));
    }
    for (name, v) in [("masses", &params.masses), ("stiffness", &params.stiffness), ("damping", &params.damping)] {
        if v.len() != n_masses {
            return Err(contract(format!("{name} has {} entries, expected {n_masses}", v.len())));
        }
    }
    if params.masses.iter().any(|&m| !(m > 0.0)) {
        return Err(contract("masses must be positive"));
    }
    if params.stiffness.iter().chain(params.damping.iter()).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(contract("stiffness and damping must be non-negative"));
    }

    let n = 2 * n_masses;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let mut c = DMatrix::zeros(n_masses, n);
    for i in 0..n_masses {
        let (mi, ki, bi) = (params.masses[i], params.stiffness[i], params.damping[i]);
        let (pos, vel) = (2 * i, 2 * i + 1);
        a[(pos, vel)] = 1.0;
        a[(vel, pos)] = -ki / mi;
        a[(vel, vel)] = -bi / mi;
        if i > 0 {
            a[(vel, pos - 2)] = ki / mi;
        }
    }
    b[(1, 0)] = 1.0 / params.masses[0];
    for i in 1..n_masses {
        c[(i - 1, 2 * i)] = 1.0;
    }
    c[(n_masses - 1, n - 1)] = 1.0;
    SystemSpec::new(a, b, c, TimeKind::Continuous)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemInvariants {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub lag: usize,
    /// False when `(A, C)` is not observable; `lag` is then where the rank stops growing.
    pub observable: bool,
}

pub fn system_invariants(sys: &SystemSpec) -> Result<SystemInvariants> {
    let (n, p) = (sys.n(), sys.p());
    let tol = RankTolerance::default();
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut ranks = Vec::with_capacity(n);
    let mut ca = sys.c.clone();
    for _ in 0..n {
        blocks.push(ca.clone());
        let stacked = stack_rows(&blocks, n);
        ranks.push(numerical_rank(&stacked, &tol)?.rank);
        ca = &ca * &sys.a;
    }
    let full = ranks.last().copied().unwrap_or(0);
    let lag = if full == 0 { 0 } else { ranks.iter().position(|&r| r == full).map_or(0, |i| i + 1) };
    Ok(SystemInvariants { m: sys.m(), p, n, lag, observable: full == n })
}

fn stack_rows(blocks: &[DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(b);
        r += b.nrows();
    }
    out
}
