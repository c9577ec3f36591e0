//! Dense primal simplex for linear programs with bounded variables.
//!
//! Two-phase method: phase 1 drives basic-variable bound violations to zero
//! with a composite infeasibility objective (no big-M), phase 2 optimizes the
//! user objective. Variables carry individual `[lo, hi]` bounds (either side
//! may be infinite) and nonbasic variables rest at a bound, so box
//! constraints cost no rows. Dantzig pricing with a switch to Bland's rule
//! after a run of degenerate pivots keeps the method finite.
//!
//! Problems at the scale this crate needs (a few hundred rows) solve in
//! milliseconds; there is no sparse factorization and none is planned.

use thiserror::Error;

/// Constraint sense for one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// One linear constraint `coeffs . x  (sense)  rhs` with sparse coefficients.
#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A linear program over variables `x[0..n]` with per-variable bounds.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub maximize: bool,
    pub objective: Vec<f64>,
    /// `(lo, hi)` per variable; `f64::NEG_INFINITY` / `f64::INFINITY` allowed.
    pub var_bounds: Vec<(f64, f64)>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("objective length {objective} does not match bound count {bounds}")]
    DimensionMismatch { objective: usize, bounds: usize },
    #[error("variable {0} has lo > hi")]
    EmptyBound(usize),
    #[error("non-finite coefficient in problem data")]
    NonFinite,
    #[error("row references variable {var} beyond problem size {n}")]
    BadIndex { var: usize, n: usize },
}

/// Solver outcome classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Result of an LP or MILP solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: Status,
    /// Values of the structural variables (empty unless some solution exists).
    pub x: Vec<f64>,
    /// Objective in the problem's own sense; NaN when no solution exists.
    pub objective: f64,
    /// Dual value per row (sign convention: objective change per unit rhs),
    /// populated for `Optimal` LP solves only.
    pub duals: Vec<f64>,
    /// Reduced cost per structural variable, `Optimal` LP solves only.
    pub reduced_costs: Vec<f64>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.var_bounds.len() {
            return Err(LpError::DimensionMismatch {
                objective: self.objective.len(),
                bounds: self.var_bounds.len(),
            });
        }
        for (j, &(lo, hi)) in self.var_bounds.iter().enumerate() {
            if lo > hi {
                return Err(LpError::EmptyBound(j));
            }
            if lo.is_nan() || hi.is_nan() {
                return Err(LpError::NonFinite);
            }
        }
        for c in &self.objective {
            if !c.is_finite() {
                return Err(LpError::NonFinite);
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite);
            }
            for &(j, v) in &row.coeffs {
                if j >= self.num_vars() {
                    return Err(LpError::BadIndex {
                        var: j,
                        n: self.num_vars(),
                    });
                }
                if !v.is_finite() {
                    return Err(LpError::NonFinite);
                }
            }
        }
        Ok(())
    }

    /// Largest constraint/bound violation of `x` (for feasibility audits).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &(lo, hi)) in self.var_bounds.iter().enumerate() {
            worst = worst.max(lo - x[j]).max(x[j] - hi);
        }
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
            let viol = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst.max(0.0)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-9;
const DEGEN_SWITCH: usize = 60;
pub const MAX_ITER: usize = 100_000;

#[derive(Clone, Copy, PartialEq, Eq)]
enum NbState {
    AtLo,
    AtHi,
    FreeZero,
    Basic,
}

/// Reusable dense solver for one LP structure; bound overrides per solve make
/// it cheap to re-solve branch-and-bound nodes.
pub struct SimplexSolver {
    n: usize,
    m: usize,
    ncols: usize,
    /// Dense `[A | I]`, row-major, m x ncols.
    a: Vec<f64>,
    b: Vec<f64>,
    base_lo: Vec<f64>,
    base_hi: Vec<f64>,
    /// Objective over all columns (slacks zero), in MAX sense.
    cost: Vec<f64>,
    maximize: bool,
}

struct Work {
    t: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<NbState>,
    xval: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    d: Vec<f64>,
}

impl SimplexSolver {
    pub fn new(lp: &LinearProgram) -> Result<Self, LpError> {
        lp.validate()?;
        let n = lp.num_vars();
        let m = lp.rows.len();
        let ncols = n + m;
        let mut a = vec![0.0; m * ncols];
        let mut b = vec![0.0; m];
        let mut base_lo = vec![0.0; ncols];
        let mut base_hi = vec![0.0; ncols];
        for (j, &(lo, hi)) in lp.var_bounds.iter().enumerate() {
            base_lo[j] = lo;
            base_hi[j] = hi;
        }
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, v) in &row.coeffs {
                a[i * ncols + j] += v;
            }
            a[i * ncols + n + i] = 1.0;
            b[i] = row.rhs;
            let (slo, shi) = match row.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Eq => (0.0, 0.0),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
            };
            base_lo[n + i] = slo;
            base_hi[n + i] = shi;
        }
        let mut cost = vec![0.0; ncols];
        for j in 0..n {
            cost[j] = if lp.maximize {
                lp.objective[j]
            } else {
                -lp.objective[j]
            };
        }
        Ok(Self {
            n,
            m,
            ncols,
            a,
            b,
            base_lo,
            base_hi,
            cost,
            maximize: lp.maximize,
        })
    }

    /// Solves with per-variable bound overrides (used by branch and bound).
    pub fn solve_with_bounds(&self, overrides: &[(usize, f64, f64)]) -> SolveResult {
        let mut lo = self.base_lo.clone();
        let mut hi = self.base_hi.clone();
        for &(j, l, h) in overrides {
            lo[j] = lo[j].max(l);
            hi[j] = hi[j].min(h);
            if lo[j] > hi[j] {
                return SolveResult {
                    status: Status::Infeasible,
                    x: Vec::new(),
                    objective: f64::NAN,
                    duals: Vec::new(),
                    reduced_costs: Vec::new(),
                };
            }
        }
        self.run(lo, hi)
    }

    pub fn solve(&self) -> SolveResult {
        self.run(self.base_lo.clone(), self.base_hi.clone())
    }

    fn init_work(&self, lo: Vec<f64>, hi: Vec<f64>) -> Work {
        let ncols = self.ncols;
        let mut state = vec![NbState::AtLo; ncols];
        let mut xval = vec![0.0; ncols];
        for j in 0..ncols {
            let (s, v) = if lo[j].is_finite() {
                (NbState::AtLo, lo[j])
            } else if hi[j].is_finite() {
                (NbState::AtHi, hi[j])
            } else {
                (NbState::FreeZero, 0.0)
            };
            state[j] = s;
            xval[j] = v;
        }
        let mut t = self.a.clone();
        let mut basis = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let s = self.n + i;
            basis.push(s);
            state[s] = NbState::Basic;
            // basic slack value = b - A x_N over structural columns
            let mut v = self.b[i];
            let arow = &self.a[i * ncols..i * ncols + self.n];
            for (j, &aij) in arow.iter().enumerate() {
                if aij != 0.0 && xval[j] != 0.0 {
                    v -= aij * xval[j];
                }
            }
            xval[s] = v;
        }
        // slack columns of the initial tableau are exactly I already
        let d = vec![0.0; ncols];
        let _ = &mut t;
        Work {
            t,
            basis,
            state,
            xval,
            lo,
            hi,
            d,
        }
    }

    fn run(&self, lo: Vec<f64>, hi: Vec<f64>) -> SolveResult {
        let mut w = self.init_work(lo, hi);
        let mut iters = 0usize;

        match self.phase1(&mut w, &mut iters) {
            Phase1Outcome::Feasible => {}
            Phase1Outcome::Infeasible => {
                return SolveResult {
                    status: Status::Infeasible,
                    x: Vec::new(),
                    objective: f64::NAN,
                    duals: Vec::new(),
                    reduced_costs: Vec::new(),
                }
            }
            Phase1Outcome::IterLimit => return self.bail(&w, Status::IterationLimit),
        }

        // phase 2 reduced costs: d = cost - cost_B . T
        w.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[w.basis[i]];
            if cb != 0.0 {
                let row = &w.t[i * self.ncols..(i + 1) * self.ncols];
                for (dj, &tv) in w.d.iter_mut().zip(row) {
                    *dj -= cb * tv;
                }
            }
        }
        for i in 0..self.m {
            w.d[w.basis[i]] = 0.0;
        }

        let mut degen_run = 0usize;
        loop {
            if iters >= MAX_ITER {
                return self.bail(&w, Status::IterationLimit);
            }
            iters += 1;
            let bland = degen_run >= DEGEN_SWITCH;
            let Some((jin, dir)) = self.price_phase2(&w, bland) else {
                return self.finish(&w);
            };
            match self.ratio_and_step(&mut w, jin, dir, false) {
                StepOutcome::Moved(theta) => {
                    if theta > FEAS_TOL {
                        degen_run = 0;
                    } else {
                        degen_run += 1;
                    }
                }
                StepOutcome::Unbounded => {
                    return SolveResult {
                        status: Status::Unbounded,
                        x: self.extract_x(&w),
                        objective: f64::NAN,
                        duals: Vec::new(),
                        reduced_costs: Vec::new(),
                    }
                }
            }
        }
    }

    fn bail(&self, w: &Work, status: Status) -> SolveResult {
        SolveResult {
            status,
            x: self.extract_x(w),
            objective: f64::NAN,
            duals: Vec::new(),
            reduced_costs: Vec::new(),
        }
    }

    fn extract_x(&self, w: &Work) -> Vec<f64> {
        w.xval[..self.n].to_vec()
    }

    fn finish(&self, w: &Work) -> SolveResult {
        let x = self.extract_x(w);
        let raw: f64 = (0..self.n).map(|j| self.cost[j] * x[j]).sum();
        let objective = if self.maximize { raw } else { -raw };
        // y_i = -d[slack_i] gives the dual of row i in MAX sense.
        let sign = if self.maximize { 1.0 } else { -1.0 };
        let duals = (0..self.m)
            .map(|i| -w.d[self.n + i] * sign)
            .collect::<Vec<_>>();
        let reduced_costs = (0..self.n).map(|j| w.d[j] * sign).collect();
        SolveResult {
            status: Status::Optimal,
            x,
            objective,
            duals,
            reduced_costs,
        }
    }

    fn price_phase2(&self, w: &Work, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.ncols {
            match w.state[j] {
                NbState::Basic => continue,
                NbState::AtLo => {
                    if w.lo[j] == w.hi[j] {
                        continue;
                    }
                    let dj = w.d[j];
                    if dj > COST_TOL {
                        if bland {
                            return Some((j, 1.0));
                        }
                        if best.map_or(true, |(_, _, s)| dj > s) {
                            best = Some((j, 1.0, dj));
                        }
                    }
                }
                NbState::AtHi => {
                    let dj = w.d[j];
                    if dj < -COST_TOL {
                        if bland {
                            return Some((j, -1.0));
                        }
                        if best.map_or(true, |(_, _, s)| -dj > s) {
                            best = Some((j, -1.0, -dj));
                        }
                    }
                }
                NbState::FreeZero => {
                    let dj = w.d[j];
                    if dj.abs() > COST_TOL {
                        let dir = if dj > 0.0 { 1.0 } else { -1.0 };
                        if bland {
                            return Some((j, dir));
                        }
                        if best.map_or(true, |(_, _, s)| dj.abs() > s) {
                            best = Some((j, dir, dj.abs()));
                        }
                    }
                }
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Ratio test plus pivot/bound-flip. `phase1` changes only which basics
    /// are allowed to block (infeasible ones block at the violated bound).
    fn ratio_and_step(&self, w: &mut Work, jin: usize, dir: f64, phase1: bool) -> StepOutcome {
        let ncols = self.ncols;
        let mut theta = f64::INFINITY;
        let mut leave: Option<(usize, f64)> = None; // (row, bound the leaver lands on)

        // entering variable's own opposite bound
        if dir > 0.0 {
            if w.hi[jin].is_finite() {
                theta = w.hi[jin] - w.xval[jin];
            }
        } else if w.lo[jin].is_finite() {
            theta = w.xval[jin] - w.lo[jin];
        }

        for i in 0..self.m {
            let t = w.t[i * ncols + jin];
            if t.abs() <= PIVOT_TOL {
                continue;
            }
            let delta = -dir * t; // d(x_basic_i)/d(theta)
            let bi = w.basis[i];
            let v = w.xval[bi];
            let (blo, bhi) = (w.lo[bi], w.hi[bi]);
            let feasible_lo = v >= blo - FEAS_TOL;
            let feasible_hi = v <= bhi + FEAS_TOL;
            let (limit, target) = if phase1 && !feasible_lo {
                // below its lower bound: blocks only when rising back to lo
                if delta > 0.0 {
                    ((blo - v) / delta, blo)
                } else {
                    continue;
                }
            } else if phase1 && !feasible_hi {
                if delta < 0.0 {
                    ((bhi - v) / delta, bhi)
                } else {
                    continue;
                }
            } else if delta > 0.0 {
                if bhi.is_finite() {
                    (((bhi - v) / delta).max(0.0), bhi)
                } else {
                    continue;
                }
            } else if blo.is_finite() {
                (((blo - v) / delta).max(0.0), blo)
            } else {
                continue;
            };
            if limit < theta - FEAS_TOL
                || (limit < theta + FEAS_TOL
                    && leave.map_or(false, |(r, _)| {
                        t.abs() > w.t[r * ncols + jin].abs()
                    }))
            {
                theta = limit.max(0.0);
                leave = Some((i, target));
            }
        }

        if theta.is_infinite() {
            return StepOutcome::Unbounded;
        }

        match leave {
            None => {
                // bound flip: entering travels to its opposite bound
                let step = dir * theta;
                if step != 0.0 {
                    for i in 0..self.m {
                        let t = w.t[i * ncols + jin];
                        if t != 0.0 {
                            let bi = w.basis[i];
                            w.xval[bi] -= t * step;
                        }
                    }
                    w.xval[jin] += step;
                }
                w.state[jin] = if dir > 0.0 { NbState::AtHi } else { NbState::AtLo };
                StepOutcome::Moved(theta)
            }
            Some((r, target)) => {
                let step = dir * theta;
                for i in 0..self.m {
                    let t = w.t[i * ncols + jin];
                    if t != 0.0 {
                        let bi = w.basis[i];
                        w.xval[bi] -= t * step;
                    }
                }
                w.xval[jin] += step;
                let leaver = w.basis[r];
                w.xval[leaver] = target;
                w.state[leaver] = if target == w.lo[leaver] {
                    NbState::AtLo
                } else {
                    NbState::AtHi
                };
                self.pivot(w, r, jin);
                StepOutcome::Moved(theta)
            }
        }
    }

    fn pivot(&self, w: &mut Work, r: usize, jin: usize) {
        let ncols = self.ncols;
        let piv = w.t[r * ncols + jin];
        let inv = 1.0 / piv;
        {
            let row = &mut w.t[r * ncols..(r + 1) * ncols];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[jin] = 1.0;
        }
        let (before, rest) = w.t.split_at_mut(r * ncols);
        let (prow, after) = rest.split_at_mut(ncols);
        for (i, chunk) in before.chunks_exact_mut(ncols).enumerate() {
            let _ = i;
            let f = chunk[jin];
            if f != 0.0 {
                for (c, p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
                chunk[jin] = 0.0;
            }
        }
        for chunk in after.chunks_exact_mut(ncols) {
            let f = chunk[jin];
            if f != 0.0 {
                for (c, p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
                chunk[jin] = 0.0;
            }
        }
        let f = w.d[jin];
        if f != 0.0 {
            for (c, p) in w.d.iter_mut().zip(prow.iter()) {
                *c -= f * p;
            }
            w.d[jin] = 0.0;
        }
        w.state[jin] = NbState::Basic;
        w.basis[r] = jin;
    }

    fn phase1(&self, w: &mut Work, iters: &mut usize) -> Phase1Outcome {
        let ncols = self.ncols;
        let mut degen_run = 0usize;
        loop {
            // collect violated basics
            let mut below: Vec<usize> = Vec::new();
            let mut above: Vec<usize> = Vec::new();
            let mut total = 0.0f64;
            for i in 0..self.m {
                let bi = w.basis[i];
                let v = w.xval[bi];
                if v < w.lo[bi] - FEAS_TOL {
                    below.push(i);
                    total += w.lo[bi] - v;
                } else if v > w.hi[bi] + FEAS_TOL {
                    above.push(i);
                    total += v - w.hi[bi];
                }
            }
            if total <= FEAS_TOL * 10.0 {
                for i in 0..self.m {
                    let bi = w.basis[i];
                    if w.lo[bi].is_finite() && w.xval[bi] < w.lo[bi] {
                        w.xval[bi] = w.lo[bi];
                    }
                    if w.hi[bi].is_finite() && w.xval[bi] > w.hi[bi] {
                        w.xval[bi] = w.hi[bi];
                    }
                }
                return Phase1Outcome::Feasible;
            }
            if *iters >= MAX_ITER {
                return Phase1Outcome::IterLimit;
            }
            *iters += 1;

            // dF/dx_j = sum_below T[i][j] - sum_above T[i][j]
            let mut grad = vec![0.0f64; ncols];
            for &i in &below {
                let row = &w.t[i * ncols..(i + 1) * ncols];
                for (g, &tv) in grad.iter_mut().zip(row) {
                    *g += tv;
                }
            }
            for &i in &above {
                let row = &w.t[i * ncols..(i + 1) * ncols];
                for (g, &tv) in grad.iter_mut().zip(row) {
                    *g -= tv;
                }
            }

            let bland = degen_run >= DEGEN_SWITCH;
            let mut pick: Option<(usize, f64, f64)> = None;
            for j in 0..ncols {
                let score_dir = match w.state[j] {
                    NbState::Basic => continue,
                    NbState::AtLo => {
                        if w.lo[j] == w.hi[j] {
                            continue;
                        }
                        if grad[j] < -COST_TOL {
                            Some((1.0, -grad[j]))
                        } else {
                            None
                        }
                    }
                    NbState::AtHi => {
                        if grad[j] > COST_TOL {
                            Some((-1.0, grad[j]))
                        } else {
                            None
                        }
                    }
                    NbState::FreeZero => {
                        if grad[j].abs() > COST_TOL {
                            Some((if grad[j] < 0.0 { 1.0 } else { -1.0 }, grad[j].abs()))
                        } else {
                            None
                        }
                    }
                };
                if let Some((dir, score)) = score_dir {
                    if bland {
                        pick = Some((j, dir, score));
                        break;
                    }
                    if pick.map_or(true, |(_, _, s)| score > s) {
                        pick = Some((j, dir, score));
                    }
                }
            }
            let Some((jin, dir, _)) = pick else {
                return Phase1Outcome::Infeasible;
            };
            match self.ratio_and_step(w, jin, dir, true) {
                StepOutcome::Moved(theta) => {
                    if theta > FEAS_TOL {
                        degen_run = 0;
                    } else {
                        degen_run += 1;
                    }
                }
                // an improving direction in phase 1 is always blocked by the
                // infeasible basic it repairs; infinite steps signal numeric
                // trouble, treat as infeasible rather than looping
                StepOutcome::Unbounded => return Phase1Outcome::Infeasible,
            }
        }
    }
}

enum Phase1Outcome {
    Feasible,
    Infeasible,
    IterLimit,
}

enum StepOutcome {
    Moved(f64),
    Unbounded,
}

/// Solves `lp` from scratch. Statuses are returned, not raised; only
/// malformed problem data is an error.
pub fn solve_lp(lp: &LinearProgram) -> Result<SolveResult, LpError> {
    Ok(SimplexSolver::new(lp)?.solve())
}
