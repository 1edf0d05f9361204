//! Dense linear programming.
//!
//! Problems are stated as
//!
//! ```text
//! min cᵀx  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  l <= x <= u
//! ```
//!
//! and rewritten into `min c̄ᵀz, Ā z = b̄, 0 <= z <= ū` before solving with a
//! Mehrotra predictor-corrector interior-point method. When the interior-point
//! iterate stalls or breaks down, a two-phase tableau simplex with Bland's rule
//! takes over and settles the status.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::optim::TraceRow;

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub cost: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl LpProblem {
    /// Nonnegative variables, no constraints yet.
    pub fn new(cost: DVector<f64>) -> Self {
        let n = cost.len();
        Self {
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ub: DMatrix::zeros(0, n),
            b_ub: DVector::zeros(0),
            lower: DVector::zeros(n),
            upper: DVector::from_element(n, f64::INFINITY),
            cost,
        }
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_ub(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ub = a;
        self.b_ub = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let shapes_ok = self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_ub.ncols() == n
            && self.a_ub.nrows() == self.b_ub.len()
            && self.lower.len() == n
            && self.upper.len() == n;
        if !shapes_ok {
            return Err(contract("inconsistent LP dimensions"));
        }
        let finite = self.cost.iter().chain(self.a_eq.iter()).chain(self.b_eq.iter());
        let finite = finite.chain(self.a_ub.iter()).chain(self.b_ub.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(contract("LP data must be finite"));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY || l > u {
                return Err(contract(format!("invalid bounds [{l}, {u}] on variable {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpMethod {
    InteriorPoint,
    Simplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpOptions {
    /// Relative tolerance on residuals and duality gap.
    pub tol: f64,
    pub max_iter: usize,
    pub simplex_fallback: bool,
    pub trace: bool,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, simplex_fallback: true, trace: false }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub method: LpMethod,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Multipliers with `L = cᵀx − yᵀ(A_eq x − b_eq) + λᵀ(A_ub x − b_ub)`.
    pub dual_eq: DVector<f64>,
    /// `λ >= 0`.
    pub dual_ub: DVector<f64>,
    /// `c − A_eqᵀ y + A_ubᵀ λ`.
    pub reduced_costs: DVector<f64>,
    pub dual_objective: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

impl LpSolution {
    pub fn gap(&self) -> f64 {
        self.objective - self.dual_objective
    }
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = l + z`
    Shift { col: usize, lower: f64 },
    /// `x = u − z`
    Flip { col: usize, upper: f64 },
    /// `x = z⁺ − z⁻`
    Split { pos: usize, neg: usize },
    Fixed(f64),
}

/// `min cᵀz, A z = b, 0 <= z <= upper` (upper may be infinite).
#[derive(Debug, Clone)]
struct StdForm {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    upper: Vec<f64>,
    offset: f64,
    map: Vec<VarMap>,
    n_eq: usize,
    /// Orthonormal row-space basis used to drop redundant equalities (`None` when full row rank).
    row_basis: Option<DMatrix<f64>>,
}

impl StdForm {
    fn build(p: &LpProblem) -> Result<Self> {
        let n = p.num_vars();
        let mut map = Vec::with_capacity(n);
        let mut ncols = 0;
        let mut upper = Vec::new();
        for j in 0..n {
            let (l, u) = (p.lower[j], p.upper[j]);
            let entry = if l == u {
                VarMap::Fixed(l)
            } else if l.is_finite() {
                upper.push(u - l);
                ncols += 1;
                VarMap::Shift { col: ncols - 1, lower: l }
            } else if u.is_finite() {
                upper.push(f64::INFINITY);
                ncols += 1;
                VarMap::Flip { col: ncols - 1, upper: u }
            } else {
                upper.push(f64::INFINITY);
                upper.push(f64::INFINITY);
                ncols += 2;
                VarMap::Split { pos: ncols - 2, neg: ncols - 1 }
            };
            map.push(entry);
        }
        let (n_eq, n_ub) = (p.a_eq.nrows(), p.a_ub.nrows());
        let total_cols = ncols + n_ub;
        upper.extend(std::iter::repeat_n(f64::INFINITY, n_ub));

        let mut a = DMatrix::zeros(n_eq + n_ub, total_cols);
        let mut b = DVector::zeros(n_eq + n_ub);
        let mut c = DVector::zeros(total_cols);
        let mut offset = 0.0;

        let place = |row: Option<usize>, coef: f64, var: VarMap, a: &mut DMatrix<f64>, rhs: &mut f64| {
            // rhs accumulates the constant moved to the right-hand side (or objective offset)
            match var {
                VarMap::Shift { col, lower } => {
                    if let Some(r) = row {
                        a[(r, col)] += coef;
                    }
                    *rhs -= coef * lower;
                }
                VarMap::Flip { col, upper } => {
                    if let Some(r) = row {
                        a[(r, col)] -= coef;
                    }
                    *rhs -= coef * upper;
                }
                VarMap::Split { pos, neg } => {
                    if let Some(r) = row {
                        a[(r, pos)] += coef;
                        a[(r, neg)] -= coef;
                    }
                }
                VarMap::Fixed(v) => *rhs -= coef * v,
            }
        };

        for (i, (arow, bval)) in p.a_eq.row_iter().zip(p.b_eq.iter()).enumerate() {
            let mut rhs = *bval;
            for j in 0..n {
                if arow[j] != 0.0 {
                    place(Some(i), arow[j], map[j], &mut a, &mut rhs);
                }
            }
            b[i] = rhs;
        }
        for (k, (arow, bval)) in p.a_ub.row_iter().zip(p.b_ub.iter()).enumerate() {
            let i = n_eq + k;
            let mut rhs = *bval;
            for j in 0..n {
                if arow[j] != 0.0 {
                    place(Some(i), arow[j], map[j], &mut a, &mut rhs);
                }
            }
            a[(i, ncols + k)] = 1.0;
            b[i] = rhs;
        }
        let mut dummy = DMatrix::zeros(0, 0);
        for (&cj, &vm) in p.cost.iter().zip(&map) {
            let mut neg_off = 0.0;
            match vm {
                VarMap::Shift { col, .. } => c[col] += cj,
                VarMap::Flip { col, .. } => c[col] -= cj,
                VarMap::Split { pos, neg } => {
                    c[pos] += cj;
                    c[neg] -= cj;
                }
                VarMap::Fixed(_) => {}
            }
            place(None, cj, vm, &mut dummy, &mut neg_off);
            offset -= neg_off;
        }

        let mut form = Self { a, b, c, upper, offset, map, n_eq, row_basis: None };
        form.drop_redundant_rows()?;
        Ok(form)
    }

    /// Replaces `A z = b` by an equivalent full-row-rank system when rows are dependent.
    fn drop_redundant_rows(&mut self) -> Result<()> {
        let m = self.a.nrows();
        if m == 0 {
            return Ok(());
        }
        let gram = &self.a * self.a.transpose();
        let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
        if let Some(chol) = gram.clone().cholesky() {
            let l = chol.l();
            let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v * v));
            if min_pivot > 1e-12 * scale {
                return Ok(());
            }
        }
        let svd = crate::hankel::svd(&self.a, true, false)?;
        let u = svd.u.unwrap();
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > 1e-10 * smax.max(1e-300))
            .collect();
        let basis = DMatrix::from_fn(m, keep.len(), |i, k| u[(i, keep[k])]);
        let b_proj = basis.transpose() * &self.b;
        let resid = (&self.b - &basis * &b_proj).norm();
        if resid > 1e-8 * (1.0 + self.b.norm()) {
            return Err(Error::Precondition(format!("inconsistent equality constraints (residual {resid:e})")));
        }
        self.a = basis.transpose() * &self.a;
        self.b = b_proj;
        self.row_basis = Some(basis);
        Ok(())
    }

    fn recover_x(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.map.len(),
            self.map.iter().map(|m| match *m {
                VarMap::Shift { col, lower } => lower + z[col],
                VarMap::Flip { col, upper } => upper - z[col],
                VarMap::Split { pos, neg } => z[pos] - z[neg],
                VarMap::Fixed(v) => v,
            }),
        )
    }

    /// Row multipliers in the space of the original (unprojected) rows.
    fn full_row_duals(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.row_basis {
            Some(basis) => basis * y,
            None => y.clone(),
        }
    }
}

pub fn solve_lp(p: &LpProblem, opts: &LpOptions) -> Result<LpSolution> {
    p.validate()?;
    let form = match StdForm::build(p) {
        Ok(f) => f,
        Err(Error::Precondition(_)) => return Ok(infeasible(p, LpMethod::InteriorPoint, 0)),
        Err(e) => return Err(e),
    };
    let ipm = interior_point(&form, opts);
    let outcome = match ipm {
        Ok(out) if out.status == LpStatus::Optimal => out,
        other => {
            if !opts.simplex_fallback {
                return match other {
                    Ok(out) => Ok(finish(p, &form, out)),
                    Err(e) => Err(e),
                };
            }
            log::debug!("interior point did not converge ({:?}); falling back to simplex", other.as_ref().map(|o| o.status));
            let exact = simplex(&form, opts);
            match (exact, other) {
                (Ok(mut out), Ok(prev)) if out.status == LpStatus::Optimal || !prev.near_optimal => {
                    out.trace = prev.trace;
                    out
                }
                (Ok(out), Err(_)) => out,
                (_, Ok(prev)) if prev.near_optimal => {
                    log::debug!("simplex did not finish; accepting the stalled interior point iterate");
                    StdOutcome { status: LpStatus::Optimal, ..prev }
                }
                (Err(e), _) => return Err(e),
                (Ok(out), _) => out,
            }
        }
    };
    Ok(finish(p, &form, outcome))
}

struct StdOutcome {
    status: LpStatus,
    method: LpMethod,
    z: DVector<f64>,
    y: DVector<f64>,
    iterations: usize,
    trace: Vec<TraceRow>,
    /// Interior point stalled close to the tolerance; `z`/`y` hold its best iterate.
    near_optimal: bool,
}

fn infeasible(p: &LpProblem, method: LpMethod, iterations: usize) -> LpSolution {
    let n = p.num_vars();
    LpSolution {
        status: LpStatus::Infeasible,
        method,
        x: DVector::from_element(n, f64::NAN),
        objective: f64::INFINITY,
        dual_eq: DVector::zeros(p.a_eq.nrows()),
        dual_ub: DVector::zeros(p.a_ub.nrows()),
        reduced_costs: DVector::zeros(n),
        dual_objective: f64::INFINITY,
        iterations,
        trace: Vec::new(),
    }
}

fn finish(p: &LpProblem, form: &StdForm, out: StdOutcome) -> LpSolution {
    if out.status == LpStatus::Infeasible {
        let mut s = infeasible(p, out.method, out.iterations);
        s.trace = out.trace;
        return s;
    }
    let x = form.recover_x(&out.z);
    let y_full = form.full_row_duals(&out.y);
    let dual_eq = y_full.rows(0, form.n_eq).into_owned();
    let dual_ub = -y_full.rows(form.n_eq, p.a_ub.nrows()).into_owned();
    let reduced_costs = &p.cost - p.a_eq.transpose() * &dual_eq + p.a_ub.transpose() * &dual_ub;
    let objective = match out.status {
        LpStatus::Unbounded => f64::NEG_INFINITY,
        _ => p.cost.dot(&x),
    };
    let dual_objective = dual_objective(p, &dual_eq, &dual_ub, &reduced_costs, 1e-7);
    LpSolution {
        status: out.status,
        method: out.method,
        x,
        objective,
        dual_eq,
        dual_ub,
        reduced_costs,
        dual_objective,
        iterations: out.iterations,
        trace: out.trace,
    }
}

/// Lagrangian dual value; reduced costs below `slack` against an infinite bound count as zero.
fn dual_objective(p: &LpProblem, y: &DVector<f64>, lam: &DVector<f64>, r: &DVector<f64>, slack: f64) -> f64 {
    let scale = 1.0 + p.cost.amax();
    let mut val = p.b_eq.dot(y) - p.b_ub.dot(lam);
    for j in 0..p.num_vars() {
        let (l, u, rj) = (p.lower[j], p.upper[j], r[j]);
        let bound = if rj > 0.0 { l } else { u };
        if bound.is_finite() {
            val += rj * bound;
        } else if rj.abs() > slack * scale {
            return f64::NEG_INFINITY;
        }
    }
    val
}

/// Newton direction buffers for one primal-dual step.
struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    dw: DVector<f64>,
    dv: DVector<f64>,
    rho: DVector<f64>,
}

impl Direction {
    fn new(m: usize, n: usize) -> Self {
        Self {
            dx: DVector::zeros(n),
            dy: DVector::zeros(m),
            dz: DVector::zeros(n),
            dw: DVector::zeros(n),
            dv: DVector::zeros(n),
            rho: DVector::zeros(n),
        }
    }
}

/// Largest `α` keeping `v + α dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(f64::INFINITY, f64::min)
}

/// Primal-dual state. Unbounded columns carry `w = 1`, `v = 0` throughout, so the
/// upper-bound terms vanish for them without branching.
struct Iterate {
    x: DVector<f64>,
    w: DVector<f64>,
    z: DVector<f64>,
    v: DVector<f64>,
    y: DVector<f64>,
}

/// Iterations without a better merit before the interior point gives up.
const STALL_WINDOW: usize = 15;
/// A stalled run is accepted when its best merit is within this factor of the tolerance.
const STALL_ACCEPT: f64 = 1e3;

fn interior_point(form: &StdForm, opts: &LpOptions) -> Result<StdOutcome> {
    let (m, n) = form.a.shape();
    let a = &form.a;
    let at = a.transpose();
    // 1 on columns with a finite upper bound
    let mask: Vec<f64> = form.upper.iter().map(|u| if u.is_finite() { 1.0 } else { 0.0 }).collect();
    let nb = mask.iter().filter(|b| **b > 0.0).count();
    let u_vec = DVector::from_iterator(n, form.upper.iter().map(|&u| if u.is_finite() { u } else { 0.0 }));

    let x0 = DVector::from_iterator(n, form.upper.iter().map(|&u| if u.is_finite() { (u / 2.0).min(1.0) } else { 1.0 }));
    let mut it = Iterate {
        w: DVector::from_iterator(n, (0..n).map(|j| if mask[j] > 0.0 { u_vec[j] - x0[j] } else { 1.0 })),
        v: DVector::from_column_slice(&mask),
        z: DVector::from_element(n, 1.0),
        y: DVector::zeros(m),
        x: x0,
    };

    let b_norm = 1.0 + form.b.norm();
    let c_norm = 1.0 + form.c.norm();
    let u_norm = 1.0 + u_vec.norm();
    let mut trace = Vec::new();

    let mut r_b = DVector::zeros(m);
    let mut r_c = DVector::zeros(n);
    let mut r_u = DVector::zeros(n);
    let mut theta = DVector::zeros(n);
    let mut a_theta = DMatrix::zeros(m, n);
    let mut normal = DMatrix::zeros(m, m);
    let mut r_xz = vec![0.0; n];
    let mut r_wv = vec![0.0; n];
    let mut aff = Direction::new(m, n);
    let mut dir = Direction::new(m, n);
    // best iterate by max(pres, dres, gap), kept for stalls
    let mut best: Option<(f64, usize, DVector<f64>, DVector<f64>)> = None;
    let mut ran = opts.max_iter;

    for iter in 0..opts.max_iter {
        let Iterate { x, w, z, v, y } = &it;
        r_b.copy_from(&form.b);
        r_b.gemv(-1.0, a, x, 1.0);
        r_c.copy_from(&form.c);
        r_c.gemv(-1.0, &at, y, 1.0);
        r_c -= z;
        r_c += v;
        for j in 0..n {
            r_u[j] = mask[j] * (u_vec[j] - x[j] - w[j]);
        }
        let pobj = form.c.dot(x);
        let dobj = form.b.dot(y) - u_vec.dot(v);
        let pres = (r_b.norm() / b_norm).max(r_u.norm() / u_norm);
        let dres = r_c.norm() / c_norm;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        let mu = (x.dot(z) + w.dot(v)) / (n + nb) as f64;
        if opts.trace {
            trace.push(TraceRow { iteration: iter, objective: pobj + form.offset, primal_residual: pres, dual_residual: dres, gap });
        }
        if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
            return Err(Error::Solver(format!("interior point breakdown at iteration {iter}: pres={pres:e} dres={dres:e}")));
        }
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            return Ok(StdOutcome { status: LpStatus::Optimal, method: LpMethod::InteriorPoint, z: it.x, y: it.y, iterations: iter, trace, near_optimal: false });
        }
        let merit = pres.max(dres).max(gap);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, iter, x.clone(), y.clone()));
        } else if let Some((b_merit, b_iter, ..)) = best.as_ref().filter(|b| iter >= b.1 + STALL_WINDOW) {
            // ill-conditioned normal equations stop progress short of the tolerance; a best point
            // within STALL_ACCEPT of the tolerance is kept in case the simplex cannot finish either
            if *b_merit <= STALL_ACCEPT * opts.tol {
                log::debug!("interior point stalled at {b_merit:e} (iteration {b_iter})");
                let (_, b_iter, bx, by) = best.take().expect("checked above");
                return Ok(StdOutcome {
                    status: LpStatus::IterationCap,
                    method: LpMethod::InteriorPoint,
                    z: bx,
                    y: by,
                    iterations: b_iter,
                    trace,
                    near_optimal: true,
                });
            }
            ran = iter;
            break;
        }
        if x.amax() > 1e14 || y.amax() > 1e14 || z.amax() > 1e14 {
            // diverging iterates signal infeasibility or unboundedness; the simplex decides which
            return Ok(StdOutcome { status: LpStatus::IterationCap, method: LpMethod::InteriorPoint, z: it.x, y: it.y, iterations: iter, trace, near_optimal: false });
        }

        // Θ = (Z/X + V/W)⁻¹
        for j in 0..n {
            theta[j] = 1.0 / (z[j] / x[j] + v[j] / w[j]);
        }
        a_theta.copy_from(a);
        for (mut col, t) in a_theta.column_iter_mut().zip(theta.iter()) {
            col *= *t;
        }
        if m <= 16 {
            // tiny systems: a plain loop beats the blocked product
            for i in 0..m {
                for k in 0..=i {
                    let dot = a_theta.row(i).dot(&a.row(k));
                    normal[(i, k)] = dot;
                    normal[(k, i)] = dot;
                }
            }
        } else {
            normal.gemm(1.0, &a_theta, &at, 0.0);
        }
        let trace_scale = normal.diagonal().amax().max(1e-300);
        let mut reg = 1e-14 * trace_scale;
        let chol = loop {
            let mut reg_m = normal.clone();
            for i in 0..m {
                reg_m[(i, i)] += reg;
            }
            if let Some(ch) = reg_m.cholesky() {
                break ch;
            }
            reg *= 100.0;
            if reg > 1e-4 * trace_scale {
                return Ok(StdOutcome { status: LpStatus::IterationCap, method: LpMethod::InteriorPoint, z: it.x, y: it.y, iterations: iter, trace, near_optimal: false });
            }
        };

        let (xs, zs, ws, vs) = (x.as_slice(), z.as_slice(), w.as_slice(), v.as_slice());
        let (rc, ru) = (r_c.as_slice(), r_u.as_slice());
        let solve = |rxz: &[f64], rwv: &[f64], d: &mut Direction| {
            for (j, rho) in d.rho.as_mut_slice().iter_mut().enumerate() {
                *rho = rc[j] - rxz[j] / xs[j] + (rwv[j] - vs[j] * ru[j]) / ws[j];
            }
            d.dy.copy_from(&r_b);
            d.dy.gemv(1.0, &a_theta, &d.rho, 1.0);
            chol.solve_mut(&mut d.dy);
            d.dx.copy_from(&d.rho);
            d.dx.gemv(1.0, &at, &d.dy, -1.0);
            d.dx.component_mul_assign(&theta);
            let dx = d.dx.as_slice();
            let (dz, dw, dv) = (d.dz.as_mut_slice(), d.dw.as_mut_slice(), d.dv.as_mut_slice());
            for j in 0..n {
                dz[j] = (rxz[j] - zs[j] * dx[j]) / xs[j];
                dw[j] = mask[j] * (ru[j] - dx[j]);
                dv[j] = (rwv[j] - vs[j] * dw[j]) / ws[j];
            }
        };
        let steps = |d: &Direction| {
            let ap = max_step(xs, d.dx.as_slice()).min(max_step(ws, d.dw.as_slice()));
            let ad = max_step(zs, d.dz.as_slice()).min(max_step(vs, d.dv.as_slice()));
            (ap, ad)
        };

        // predictor
        for j in 0..n {
            r_xz[j] = -xs[j] * zs[j];
            r_wv[j] = -ws[j] * vs[j];
        }
        solve(&r_xz, &r_wv, &mut aff);
        let (ap, ad) = steps(&aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let (adx, adz, adw, adv) = (aff.dx.as_slice(), aff.dz.as_slice(), aff.dw.as_slice(), aff.dv.as_slice());
        let mut comp_aff = 0.0;
        for j in 0..n {
            comp_aff += (xs[j] + ap * adx[j]) * (zs[j] + ad * adz[j]) + (ws[j] + ap * adw[j]) * (vs[j] + ad * adv[j]);
        }
        let mu_aff = comp_aff / (n + nb) as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // corrector
        let target = sigma * mu;
        for j in 0..n {
            r_xz[j] = target - xs[j] * zs[j] - adx[j] * adz[j];
            r_wv[j] = mask[j] * (target - ws[j] * vs[j] - adw[j] * adv[j]);
        }
        solve(&r_xz, &r_wv, &mut dir);
        let (ap, ad) = steps(&dir);
        let eta = 0.995;
        let (ap, ad) = ((eta * ap).min(1.0), (eta * ad).min(1.0));

        it.x.axpy(ap, &dir.dx, 1.0);
        it.w.axpy(ap, &dir.dw, 1.0);
        it.v.axpy(ad, &dir.dv, 1.0);
        it.y.axpy(ad, &dir.dy, 1.0);
        it.z.axpy(ad, &dir.dz, 1.0);
    }
    Ok(StdOutcome { status: LpStatus::IterationCap, method: LpMethod::InteriorPoint, z: it.x, y: it.y, iterations: ran, trace, near_optimal: false })
}

/// Two-phase dense tableau simplex with Bland's rule.
fn simplex(form: &StdForm, opts: &LpOptions) -> Result<StdOutcome> {
    let (m0, n0) = form.a.shape();
    let bounded: Vec<usize> = (0..n0).filter(|&j| form.upper[j].is_finite()).collect();
    let rows = m0 + bounded.len();
    let n_struct = n0 + bounded.len();
    let cols = n_struct + rows;
    let rhs_col = cols;
    let mut t = DMatrix::zeros(rows + 1, cols + 1);
    let mut sign = vec![1.0; rows];

    for i in 0..m0 {
        for j in 0..n0 {
            t[(i, j)] = form.a[(i, j)];
        }
        t[(i, rhs_col)] = form.b[i];
    }
    for (k, &j) in bounded.iter().enumerate() {
        let i = m0 + k;
        t[(i, j)] = 1.0;
        t[(i, n0 + k)] = 1.0;
        t[(i, rhs_col)] = form.upper[j];
    }
    for i in 0..rows {
        if t[(i, rhs_col)] < 0.0 {
            sign[i] = -1.0;
            for j in 0..=cols {
                t[(i, j)] = -t[(i, j)];
            }
        }
        t[(i, n_struct + i)] = 1.0;
    }
    let mut basis: Vec<usize> = (n_struct..cols).collect();

    let max_iter = 50 * (rows + cols).max(opts.max_iter);
    let pivot_tol = 1e-9;
    let mut iterations = 0;

    // phase one: minimise the artificial sum
    for j in 0..=cols {
        let s: f64 = (0..rows).map(|i| t[(i, j)]).sum();
        t[(rows, j)] = if j >= n_struct && j < cols { 0.0 } else { -s };
    }
    run_simplex(&mut t, &mut basis, rows, cols, n_struct, cols, pivot_tol, max_iter, &mut iterations)?;
    let infeas = -t[(rows, rhs_col)];
    let scale = 1.0 + (0..rows).map(|i| t[(i, rhs_col)].abs()).fold(0.0, f64::max);
    if infeas > 1e-8 * scale {
        return Ok(StdOutcome {
            status: LpStatus::Infeasible,
            method: LpMethod::Simplex,
            z: DVector::zeros(n0),
            y: DVector::zeros(m0),
            iterations,
            trace: Vec::new(),
            near_optimal: false,
        });
    }
    // drive artificials out of the basis where possible
    for i in 0..rows {
        if basis[i] >= n_struct {
            if let Some(j) = (0..n_struct).find(|&j| t[(i, j)].abs() > pivot_tol) {
                pivot(&mut t, rows, cols, i, j);
                basis[i] = j;
            }
        }
    }

    // phase two objective row
    let mut cost = vec![0.0; cols];
    cost[..n0].copy_from_slice(form.c.as_slice());
    for j in 0..=cols {
        let cj = if j < cols { cost[j] } else { 0.0 };
        let cb: f64 = (0..rows).map(|i| cost[basis[i]] * t[(i, j)]).sum();
        t[(rows, j)] = cj - cb;
    }
    let status = run_simplex(&mut t, &mut basis, rows, cols, n_struct, n_struct, pivot_tol, max_iter, &mut iterations)?;

    let mut z = DVector::zeros(n0);
    for i in 0..rows {
        if basis[i] < n0 {
            z[basis[i]] = t[(i, rhs_col)];
        }
    }
    // reduced cost of artificial i is −y'_i
    let y = DVector::from_iterator(m0, (0..m0).map(|i| -t[(rows, n_struct + i)] * sign[i]));
    Ok(StdOutcome { status, method: LpMethod::Simplex, z, y, iterations, trace: Vec::new(), near_optimal: false })
}

fn pivot(t: &mut DMatrix<f64>, rows: usize, cols: usize, pr: usize, pc: usize) {
    let p = t[(pr, pc)];
    for j in 0..=cols {
        t[(pr, j)] /= p;
    }
    for i in 0..=rows {
        if i != pr {
            let f = t[(i, pc)];
            if f != 0.0 {
                for j in 0..=cols {
                    t[(i, j)] -= f * t[(pr, j)];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_simplex(
    t: &mut DMatrix<f64>,
    basis: &mut [usize],
    rows: usize,
    cols: usize,
    n_struct: usize,
    enter_limit: usize,
    tol: f64,
    max_iter: usize,
    iterations: &mut usize,
) -> Result<LpStatus> {
    let _ = n_struct;
    loop {
        if *iterations >= max_iter {
            return Ok(LpStatus::IterationCap);
        }
        let Some(enter) = (0..enter_limit).find(|&j| t[(rows, j)] < -tol) else {
            return Ok(LpStatus::Optimal);
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let a = t[(i, enter)];
            if a > tol {
                let ratio = t[(i, cols)] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((pr, _)) = leave else {
            return Ok(LpStatus::Unbounded);
        };
        pivot(t, rows, cols, pr, enter);
        basis[pr] = enter;
        *iterations += 1;
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("simplex tableau became non-finite after {} pivots", iterations)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn both_methods(p: &LpProblem) -> Vec<LpSolution> {
        let ipm = solve_lp(p, &LpOptions::default()).unwrap();
        let form = StdForm::build(p).unwrap();
        let spx = finish(p, &form, simplex(&form, &LpOptions::default()).unwrap());
        vec![ipm, spx]
    }

    #[test]
    fn single_lower_bound() {
        // min x s.t. x >= 1, x free
        let p = LpProblem::new(DVector::from_vec(vec![1.0])).with_bounds(
            DVector::from_vec(vec![f64::NEG_INFINITY]),
            DVector::from_vec(vec![f64::INFINITY]),
        );
        let p = p.with_ub(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, -1.0));
        for sol in both_methods(&p) {
            assert_eq!(sol.status, LpStatus::Optimal);
            assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-8);
            assert_relative_eq!(sol.dual_ub[0], 1.0, epsilon = 1e-6);
            assert!(sol.gap().abs() < 1e-7);
        }
    }

    #[test]
    fn least_absolute_deviation_is_the_median() {
        // variables (x, t1, t2, t3): min Σt, −t <= b − a x <= t
        let b = [1.0, 1.0, 10.0];
        let mut a_ub = DMatrix::zeros(6, 4);
        let mut b_ub = DVector::zeros(6);
        for i in 0..3 {
            a_ub[(2 * i, 0)] = -1.0;
            a_ub[(2 * i, 1 + i)] = -1.0;
            b_ub[2 * i] = -b[i];
            a_ub[(2 * i + 1, 0)] = 1.0;
            a_ub[(2 * i + 1, 1 + i)] = -1.0;
            b_ub[2 * i + 1] = b[i];
        }
        let lower = DVector::from_vec(vec![f64::NEG_INFINITY, 0.0, 0.0, 0.0]);
        let upper = DVector::from_element(4, f64::INFINITY);
        let p = LpProblem::new(DVector::from_vec(vec![0.0, 1.0, 1.0, 1.0]))
            .with_ub(a_ub, b_ub)
            .with_bounds(lower, upper);
        for sol in both_methods(&p) {
            assert_eq!(sol.status, LpStatus::Optimal);
            assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
            assert_relative_eq!(sol.objective, 9.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        // x >= 0, x <= −1
        let p = LpProblem::new(DVector::from_vec(vec![1.0]))
            .with_ub(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, -1.0));
        assert_eq!(solve_lp(&p, &LpOptions::default()).unwrap().status, LpStatus::Infeasible);

        // min −x, x >= 0
        let p = LpProblem::new(DVector::from_vec(vec![-1.0]));
        assert_eq!(solve_lp(&p, &LpOptions::default()).unwrap().status, LpStatus::Unbounded);

        // inconsistent equalities
        let p = LpProblem::new(DVector::from_vec(vec![1.0, 1.0])).with_eq(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            DVector::from_vec(vec![1.0, 3.0]),
        );
        assert_eq!(solve_lp(&p, &LpOptions::default()).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn redundant_equalities_and_boxes() {
        // min −x1 − 2 x2, x1 + x2 = 1 (stated twice), 0 <= x <= 0.7
        let p = LpProblem::new(DVector::from_vec(vec![-1.0, -2.0]))
            .with_eq(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]), DVector::from_vec(vec![1.0, 2.0]))
            .with_bounds(DVector::zeros(2), DVector::from_element(2, 0.7));
        for sol in both_methods(&p) {
            assert_eq!(sol.status, LpStatus::Optimal);
            assert_relative_eq!(sol.x[0], 0.3, epsilon = 1e-7);
            assert_relative_eq!(sol.x[1], 0.7, epsilon = 1e-7);
            assert!(sol.gap().abs() < 1e-6, "gap {}", sol.gap());
        }
    }

    #[test]
    fn fixed_variables_are_substituted() {
        let p = LpProblem::new(DVector::from_vec(vec![1.0, 1.0]))
            .with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 3.0))
            .with_bounds(DVector::from_vec(vec![2.0, 0.0]), DVector::from_vec(vec![2.0, 10.0]));
        let sol = solve_lp(&p, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-8);
    }
}
