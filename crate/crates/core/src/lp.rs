//! Dense bounded-variable simplex.
//!
//! Problems are stated as `maximize c·x` subject to equality rows, `<=` rows,
//! and per-variable bounds `lo <= x <= hi` (either side may be infinite).
//! The solver runs a two-phase primal simplex on a dense tableau. Pricing is
//! largest reduced cost with lowest-index tie-breaking; after a run of
//! degenerate pivots it switches to Bland's rule (lowest eligible index for
//! both entering and leaving variable) until the objective moves again, so
//! the method cannot cycle. Every choice is a deterministic function of the
//! input bits.

use std::fmt::Write as _;
use std::io::Write;

/// Bounds at or beyond this magnitude are treated as infinite.
pub const INF: f64 = 1e30;

pub const TOL_FEAS: f64 = 1e-8;
pub const TOL_PIVOT: f64 = 1e-10;
pub const TOL_OPT: f64 = 1e-9;

const DEGENERATE_STREAK: usize = 25;
const DROP: f64 = 1e-14;
const FEAS_CHECK: f64 = 1e-7;

fn finite(b: f64) -> bool {
    b.abs() < INF
}

/// A dense linear program, `maximize objective·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub le_rows: Vec<Vec<f64>>,
    pub le_rhs: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl LpProblem {
    /// `n` variables with zero objective and bounds `[0, +inf)`.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            le_rows: Vec::new(),
            le_rhs: Vec::new(),
            bounds: vec![(0.0, INF); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rows.len() + self.le_rows.len()
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.bounds[j] = (lo, hi);
    }

    pub fn free(&mut self, j: usize) {
        self.bounds[j] = (-INF, INF);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
    }

    /// Adds `Σ coef·x_j = rhs` from sparse `(j, coef)` terms.
    pub fn add_eq_sparse(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.densify(terms);
        self.add_eq(row, rhs);
    }

    /// Adds `Σ coef·x_j <= rhs` from sparse `(j, coef)` terms.
    pub fn add_le_sparse(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.densify(terms);
        self.add_le(row, rhs);
    }

    fn densify(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut row = vec![0.0; self.num_vars()];
        for &(j, c) in terms {
            row[j] += c;
        }
        row
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(LpError::Dimension(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.le_rows.len() != self.le_rhs.len() {
            return Err(LpError::Dimension("row and rhs counts differ".into()));
        }
        for row in self.eq_rows.iter().chain(self.le_rows.iter()) {
            if row.len() != n {
                return Err(LpError::Dimension(format!(
                    "row of length {} for {} variables",
                    row.len(),
                    n
                )));
            }
        }
        let all = self
            .objective
            .iter()
            .chain(self.eq_rhs.iter())
            .chain(self.le_rhs.iter())
            .chain(self.eq_rows.iter().flatten())
            .chain(self.le_rows.iter().flatten());
        for v in all {
            if v.is_nan() {
                return Err(LpError::NotANumber);
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(LpError::Dimension(format!(
                    "variable {j} has bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    Dimension(String),
    NotANumber,
    IterationLimit(usize),
    /// The final point violates a row or bound by more than the tolerance.
    Numerical(f64),
}

impl std::fmt::Display for LpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpError::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            LpError::NotANumber => write!(f, "NaN coefficient"),
            LpError::IterationLimit(n) => write!(f, "iteration limit of {n} pivots reached"),
            LpError::Numerical(v) => write!(f, "solution violates constraints by {v:e}"),
        }
    }
}

impl std::error::Error for LpError {}

impl From<LpError> for crate::Error {
    fn from(e: LpError) -> Self {
        crate::Error::Lp(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub pivots: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `p` to optimality or reports infeasible / unbounded.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    Simplex::build(p, None)?.run(p)
}

/// Like [`solve_lp`] but writes a human-readable pivot log to `out`.
/// The format is for debugging and not stable.
pub fn solve_lp_traced(p: &LpProblem, out: &mut dyn Write) -> Result<LpSolution, LpError> {
    Simplex::build(p, Some(out))?.run(p)
}

/// Re-checks bounds, rows and the objective of an optimal solution.
pub fn verify_solution(p: &LpProblem, s: &LpSolution) -> bool {
    if s.status != LpStatus::Optimal || s.x.len() != p.num_vars() || p.check().is_err() {
        return false;
    }
    let x = &s.x;
    if x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for (j, &(lo, hi)) in p.bounds.iter().enumerate() {
        if (finite(lo) && x[j] < lo - TOL_FEAS) || (finite(hi) && x[j] > hi + TOL_FEAS) {
            return false;
        }
    }
    let dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    for (row, &rhs) in p.eq_rows.iter().zip(&p.eq_rhs) {
        if (dot(row) - rhs).abs() > TOL_FEAS {
            return false;
        }
    }
    for (row, &rhs) in p.le_rows.iter().zip(&p.le_rhs) {
        if dot(row) > rhs + TOL_FEAS {
            return false;
        }
    }
    let value = dot(&p.objective);
    (value - s.objective_value).abs() <= 1e-9 * value.abs().max(1.0)
}

/// Largest bound or row violation of `x`.
fn violation(p: &LpProblem, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (j, &(lo, hi)) in p.bounds.iter().enumerate() {
        if finite(lo) {
            worst = worst.max(lo - x[j]);
        }
        if finite(hi) {
            worst = worst.max(x[j] - hi);
        }
    }
    let dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    for (row, &rhs) in p.eq_rows.iter().zip(&p.eq_rhs) {
        worst = worst.max((dot(row) - rhs).abs());
    }
    for (row, &rhs) in p.le_rows.iter().zip(&p.le_rhs) {
        worst = worst.max(dot(row) - rhs);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    Lower,
    Upper,
    Free,
}

enum Outcome {
    Optimal,
    Unbounded,
}

struct Simplex<'a> {
    rows: usize,
    cols: usize,
    n_struct: usize,
    /// Row-major `rows × cols` tableau `B⁻¹A`.
    tab: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    artificial: Vec<bool>,
    d: Vec<f64>,
    pivots: usize,
    limit: usize,
    trace: Option<&'a mut dyn Write>,
}

impl<'a> Simplex<'a> {
    fn build(p: &LpProblem, trace: Option<&'a mut dyn Write>) -> Result<Self, LpError> {
        p.check()?;
        let n = p.num_vars();
        let n_eq = p.eq_rows.len();
        let n_le = p.le_rows.len();
        let rows = n_eq + n_le;

        let mut lo: Vec<f64> = p.bounds.iter().map(|b| if finite(b.0) { b.0 } else { -INF }).collect();
        let mut hi: Vec<f64> = p.bounds.iter().map(|b| if finite(b.1) { b.1 } else { INF }).collect();
        let mut status = Vec::with_capacity(n + rows);
        let mut x = Vec::with_capacity(n + rows);
        for j in 0..n {
            let (s, v) = if finite(lo[j]) {
                (Status::Lower, lo[j])
            } else if finite(hi[j]) {
                (Status::Upper, hi[j])
            } else {
                (Status::Free, 0.0)
            };
            status.push(s);
            x.push(v);
        }
        for _ in 0..n_le {
            lo.push(0.0);
            hi.push(INF);
            status.push(Status::Lower);
            x.push(0.0);
        }

        // Decide the starting basic variable of each row.
        let all_rows: Vec<(&Vec<f64>, f64, Option<usize>)> = p
            .eq_rows
            .iter()
            .zip(&p.eq_rhs)
            .map(|(r, &b)| (r, b, None))
            .chain(
                p.le_rows
                    .iter()
                    .zip(&p.le_rhs)
                    .enumerate()
                    .map(|(k, (r, &b))| (r, b, Some(n + k))),
            )
            .collect();
        let mut residual = Vec::with_capacity(rows);
        let mut n_art = 0;
        for (row, b, slack) in &all_rows {
            let r = b - row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>();
            residual.push(r);
            if !(slack.is_some() && r >= 0.0) {
                n_art += 1;
            }
        }
        let cols = n + n_le + n_art;
        let mut tab = vec![0.0; rows * cols];
        let mut basis = Vec::with_capacity(rows);
        let mut artificial = vec![false; n + n_le];
        let mut next_art = n + n_le;
        for (i, (row, _, slack)) in all_rows.iter().enumerate() {
            let r = residual[i];
            let line = &mut tab[i * cols..(i + 1) * cols];
            match slack {
                Some(s) if r >= 0.0 => {
                    line[..n].copy_from_slice(row);
                    line[*s] = 1.0;
                    basis.push(*s);
                    status[*s] = Status::Basic;
                    x[*s] = r;
                }
                _ => {
                    let sign = if r < 0.0 { -1.0 } else { 1.0 };
                    for (t, a) in line[..n].iter_mut().zip(row.iter()) {
                        *t = sign * a;
                    }
                    if let Some(s) = slack {
                        line[*s] = sign;
                    }
                    line[next_art] = 1.0;
                    basis.push(next_art);
                    artificial.push(true);
                    status.push(Status::Basic);
                    lo.push(0.0);
                    hi.push(INF);
                    x.push(r.abs());
                    next_art += 1;
                }
            }
        }
        let limit = 50 * (rows + cols) + 10_000;
        Ok(Self {
            rows,
            cols,
            n_struct: n,
            tab,
            basis,
            status,
            x,
            lo,
            hi,
            artificial,
            d: vec![0.0; cols],
            pivots: 0,
            limit,
            trace,
        })
    }

    fn log(&mut self, msg: String) {
        if let Some(t) = self.trace.as_mut() {
            let _ = writeln!(t, "{msg}");
        }
    }

    fn run(mut self, p: &LpProblem) -> Result<LpSolution, LpError> {
        let n = self.n_struct;
        if self.trace.is_some() {
            let msg = format!("lp: {} rows, {} columns ({} structural)", self.rows, self.cols, n);
            self.log(msg);
        }
        if self.artificial.iter().any(|&a| a) {
            let cost: Vec<f64> = self.artificial.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
            self.price(&cost);
            if self.trace.is_some() {
            let msg = "phase 1".into();
            self.log(msg);
        }
            self.iterate()?;
            let infeasibility: f64 = (0..self.cols)
                .filter(|&j| self.artificial[j])
                .map(|j| self.x[j])
                .sum();
            if self.trace.is_some() {
            let msg = format!("phase 1 residual {infeasibility:e}");
            self.log(msg);
        }
            if infeasibility > TOL_FEAS {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: self.x[..n].to_vec(),
                    objective_value: f64::NAN,
                    pivots: self.pivots,
                });
            }
            self.drive_out_artificials();
        }
        let cost: Vec<f64> = (0..self.cols)
            .map(|j| if j < n { -p.objective[j] } else { 0.0 })
            .collect();
        self.price(&cost);
        if self.trace.is_some() {
            let msg = "phase 2".into();
            self.log(msg);
        }
        let outcome = self.iterate()?;
        let x = self.x[..n].to_vec();
        if matches!(outcome, Outcome::Optimal) {
            let v = violation(p, &x);
            if v > FEAS_CHECK {
                return Err(LpError::Numerical(v));
            }
        }
        let value = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let status = match outcome {
            Outcome::Optimal => LpStatus::Optimal,
            Outcome::Unbounded => LpStatus::Unbounded,
        };
        if self.trace.is_some() {
            let msg = format!("{status:?} after {} pivots, objective {value}", self.pivots);
            self.log(msg);
        }
        if self.rows * self.cols <= 400 {
            let mut dump = String::new();
            for i in 0..self.rows {
                let _ = write!(dump, "  basic x{:<4} = {:>12.6} |", self.basis[i], self.x[self.basis[i]]);
                for j in 0..self.cols {
                    let _ = write!(dump, " {:>9.4}", self.tab[i * self.cols + j]);
                }
                dump.push('\n');
            }
            if self.trace.is_some() {
            let msg = format!("final tableau:\n{}", dump.trim_end());
            self.log(msg);
        }
        }
        Ok(LpSolution {
            status,
            x,
            objective_value: value,
            pivots: self.pivots,
        })
    }

    /// Reduced costs `d = c - c_B B⁻¹A` for a minimization cost vector.
    fn price(&mut self, cost: &[f64]) {
        let cols = self.cols;
        self.d.clear();
        self.d.extend_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let line = &self.tab[i * cols..(i + 1) * cols];
                for (dj, t) in self.d.iter_mut().zip(line) {
                    *dj -= cb * t;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    /// Entering variable and its direction (+1 increase, -1 decrease).
    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.cols {
            if self.artificial[j] && self.status[j] != Status::Basic && self.hi[j] == 0.0 {
                continue;
            }
            let dj = self.d[j];
            let dir = match self.status[j] {
                Status::Basic => continue,
                Status::Lower if dj < -TOL_OPT => 1.0,
                Status::Upper if dj > TOL_OPT => -1.0,
                Status::Free if dj.abs() > TOL_OPT => -dj.signum(),
                _ => continue,
            };
            if self.lo[j] == self.hi[j] {
                continue;
            }
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(_, _, m)| dj.abs() > m) {
                best = Some((j, dir, dj.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn iterate(&mut self) -> Result<Outcome, LpError> {
        let cols = self.cols;
        let mut streak = 0usize;
        loop {
            if self.pivots >= self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
            let bland = streak >= DEGENERATE_STREAK;
            let Some((q, dir)) = self.choose_entering(bland) else {
                return Ok(Outcome::Optimal);
            };

            // Ratio test, two passes: bound the step with slightly relaxed
            // bounds, then take the largest pivot among rows that block
            // within that step (lowest basic index on ties).
            let mut relaxed = INF;
            for i in 0..self.rows {
                let alpha = self.tab[i * cols + q];
                if alpha.abs() <= TOL_PIVOT {
                    continue;
                }
                if let Some((limit, _)) = self.row_limit(i, dir * alpha, TOL_FEAS) {
                    relaxed = relaxed.min(limit);
                }
            }
            let mut step = INF;
            let mut leave: Option<(usize, bool)> = None;
            if relaxed < INF {
                let mut best_alpha = 0.0;
                for i in 0..self.rows {
                    let alpha = self.tab[i * cols + q];
                    if alpha.abs() <= TOL_PIVOT {
                        continue;
                    }
                    let Some((limit, to_upper)) = self.row_limit(i, dir * alpha, 0.0) else {
                        continue;
                    };
                    if limit > relaxed {
                        continue;
                    }
                    let better = match leave {
                        None => true,
                        Some((r, _)) => {
                            alpha.abs() > best_alpha * (1.0 + 1e-9)
                                || (alpha.abs() >= best_alpha * (1.0 - 1e-9)
                                    && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        best_alpha = alpha.abs();
                        step = limit.max(0.0);
                        leave = Some((i, to_upper));
                    }
                }
            }
            let flip = if finite(self.lo[q]) && finite(self.hi[q]) {
                self.hi[q] - self.lo[q]
            } else {
                INF
            };
            if leave.is_none() && !finite(flip) {
                if self.trace.is_some() {
            let msg = format!("unbounded along x{q}");
            self.log(msg);
        }
                return Ok(Outcome::Unbounded);
            }

            if leave.is_none() || flip <= step {
                // Bound flip: the entering variable moves to its other bound.
                for i in 0..self.rows {
                    let alpha = self.tab[i * cols + q];
                    if alpha != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= dir * alpha * flip;
                    }
                }
                if dir > 0.0 {
                    self.x[q] = self.hi[q];
                    self.status[q] = Status::Upper;
                } else {
                    self.x[q] = self.lo[q];
                    self.status[q] = Status::Lower;
                }
                self.pivots += 1;
                streak = 0;
                if self.trace.is_some() {
            let msg = format!("flip x{q} by {flip}");
            self.log(msg);
        }
                continue;
            }

            let (r, to_upper) = leave.expect("checked above");
            for i in 0..self.rows {
                let alpha = self.tab[i * cols + q];
                if alpha != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= dir * alpha * step;
                }
            }
            self.x[q] += dir * step;
            let out = self.basis[r];
            if to_upper {
                self.x[out] = self.hi[out];
                self.status[out] = Status::Upper;
            } else {
                self.x[out] = self.lo[out];
                self.status[out] = Status::Lower;
            }
            self.pivot(r, q);
            self.pivots += 1;
            if step <= 1e-12 {
                streak += 1;
            } else {
                streak = 0;
            }
            if self.trace.is_some() {
            let msg = format!("pivot {}: x{q} enters, x{out} leaves, step {step:e}", self.pivots);
            self.log(msg);
        }
        }
    }

    /// Step at which basic variable of row `i` hits a bound when the
    /// entering variable moves by `t` and the basic one by `-dir_alpha * t`.
    fn row_limit(&self, i: usize, dir_alpha: f64, slack: f64) -> Option<(f64, bool)> {
        let b = self.basis[i];
        let rate = -dir_alpha;
        if rate < 0.0 {
            finite(self.lo[b]).then(|| ((self.x[b] - self.lo[b] + slack) / -rate, false))
        } else {
            finite(self.hi[b]).then(|| ((self.hi[b] - self.x[b] + slack) / rate, true))
        }
    }

    /// Makes column `q` basic in row `r`.
    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let alpha = self.tab[r * cols + q];
        let (before, rest) = self.tab.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        let inv = 1.0 / alpha;
        for v in prow.iter_mut() {
            *v *= inv;
        }
        prow[q] = 1.0;
        let eliminate = |line: &mut [f64]| {
            let f = line[q];
            if f != 0.0 {
                for (t, p) in line.iter_mut().zip(prow.iter()) {
                    if *p != 0.0 {
                        *t -= f * p;
                        if t.abs() < DROP {
                            *t = 0.0;
                        }
                    }
                }
                line[q] = 0.0;
            }
        };
        for line in before.chunks_exact_mut(cols) {
            eliminate(line);
        }
        for line in after.chunks_exact_mut(cols) {
            eliminate(line);
        }
        let f = self.d[q];
        if f != 0.0 {
            for (t, p) in self.d.iter_mut().zip(prow.iter()) {
                *t -= f * p;
            }
            self.d[q] = 0.0;
        }
        self.status[self.basis[r]] = match self.status[self.basis[r]] {
            Status::Basic => Status::Lower,
            s => s,
        };
        self.basis[r] = q;
        self.status[q] = Status::Basic;
    }

    /// Pivots zero-level artificials out of the basis where possible, fixes
    /// the rest at zero, and drops nonbasic artificial columns.
    fn drive_out_artificials(&mut self) {
        let cols = self.cols;
        for r in 0..self.rows {
            let b = self.basis[r];
            if !self.artificial[b] {
                continue;
            }
            let line = &self.tab[r * cols..(r + 1) * cols];
            let mut best: Option<(usize, f64)> = None;
            for j in 0..cols {
                if self.artificial[j] || self.status[j] == Status::Basic {
                    continue;
                }
                let a = line[j].abs();
                if a > 1e-9 && best.is_none_or(|(_, m)| a > m) {
                    best = Some((j, a));
                }
            }
            if let Some((q, _)) = best {
                self.x[b] = 0.0;
                self.status[b] = Status::Lower;
                self.pivot(r, q);
                self.pivots += 1;
            }
        }
        for j in 0..cols {
            if self.artificial[j] {
                self.lo[j] = 0.0;
                self.hi[j] = 0.0;
                if self.status[j] == Status::Basic {
                    self.x[j] = 0.0;
                }
            }
        }
        let keep: Vec<usize> = (0..cols)
            .filter(|&j| !self.artificial[j] || self.status[j] == Status::Basic)
            .collect();
        if keep.len() == cols {
            return;
        }
        let mut remap = vec![usize::MAX; cols];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let new_cols = keep.len();
        let mut tab = vec![0.0; self.rows * new_cols];
        for i in 0..self.rows {
            let src = &self.tab[i * cols..(i + 1) * cols];
            let dst = &mut tab[i * new_cols..(i + 1) * new_cols];
            for (d, &old) in dst.iter_mut().zip(&keep) {
                *d = src[old];
            }
        }
        self.tab = tab;
        self.cols = new_cols;
        self.basis = self.basis.iter().map(|&b| remap[b]).collect();
        let pick = |v: &Vec<f64>| keep.iter().map(|&j| v[j]).collect::<Vec<f64>>();
        self.x = pick(&self.x);
        self.lo = pick(&self.lo);
        self.hi = pick(&self.hi);
        self.status = keep.iter().map(|&j| self.status[j]).collect();
        self.artificial = keep.iter().map(|&j| self.artificial[j]).collect();
        self.d = vec![0.0; new_cols];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bounded_variable() {
        let mut p = LpProblem::new(1);
        p.objective = vec![1.0];
        p.set_bounds(0, 0.0, 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.x, vec![1.0]);
        assert_eq!(s.objective_value, 1.0);
        assert!(verify_solution(&p, &s));
        let bad = LpSolution { x: vec![2.0], objective_value: 2.0, ..s };
        assert!(!verify_solution(&p, &bad));
    }

    #[test]
    fn degenerate_optimum_is_deterministic() {
        let mut p = LpProblem::new(2);
        p.objective = vec![1.0, 1.0];
        p.add_le(vec![1.0, 1.0], 1.0);
        let a = solve_lp(&p).unwrap();
        let b = solve_lp(&p).unwrap();
        assert_eq!(a.objective_value, 1.0);
        assert_eq!(a.x, b.x);
        assert!(verify_solution(&p, &a));
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut p = LpProblem::new(1);
        p.objective = vec![1.0];
        p.add_le(vec![1.0], -1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);

        let mut q = LpProblem::new(2);
        q.objective = vec![1.0, 0.0];
        q.add_le(vec![-1.0, 1.0], 1.0);
        assert_eq!(solve_lp(&q).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut p = LpProblem::new(2);
        p.add_le(vec![1.0], 1.0);
        assert!(matches!(solve_lp(&p), Err(LpError::Dimension(_))));
        let mut q = LpProblem::new(1);
        q.objective = vec![f64::NAN];
        assert_eq!(solve_lp(&q), Err(LpError::NotANumber));
    }

    #[test]
    fn equalities_free_variables_and_negative_bounds() {
        // max x - y  s.t. x + y = 1, x - y <= 0.5, y free, x in [-2, 2]
        let mut p = LpProblem::new(2);
        p.objective = vec![1.0, -1.0];
        p.set_bounds(0, -2.0, 2.0);
        p.free(1);
        p.add_eq(vec![1.0, 1.0], 1.0);
        p.add_le(vec![1.0, -1.0], 0.5);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 0.5).abs() < 1e-12);
        assert!(verify_solution(&p, &s));
    }

    #[test]
    fn transportation_problem() {
        // Two supplies (3, 4), three demands (2, 2, 3), costs minimized.
        let cost = [[4.0, 6.0, 9.0], [5.0, 3.0, 8.0]];
        let mut p = LpProblem::new(6);
        for i in 0..2 {
            for j in 0..3 {
                p.objective[i * 3 + j] = -cost[i][j];
            }
        }
        p.add_eq_sparse(&[(0, 1.0), (1, 1.0), (2, 1.0)], 3.0);
        p.add_eq_sparse(&[(3, 1.0), (4, 1.0), (5, 1.0)], 4.0);
        for j in 0..3 {
            p.add_eq_sparse(&[(j, 1.0), (3 + j, 1.0)], [2.0, 2.0, 3.0][j]);
        }
        let s = solve_lp(&p).unwrap();
        assert!(s.is_optimal());
        // Optimal: x00=2, x02=1, x11=2, x12=2 -> 8 + 9 + 6 + 16 = 39.
        assert!((s.objective_value + 39.0).abs() < 1e-9);
        assert!(verify_solution(&p, &s));
    }

    #[test]
    fn trace_is_written() {
        let mut p = LpProblem::new(2);
        p.objective = vec![1.0, 2.0];
        p.add_le(vec![1.0, 1.0], 1.0);
        let mut buf = Vec::new();
        let s = solve_lp_traced(&p, &mut buf).unwrap();
        assert!(s.is_optimal());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("phase 2"));
        assert!(text.contains("final tableau"));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        // Random box-constrained packing LPs always contain x = 0, so the
        // solver must report optimal and the answer must verify.
        #[test]
        fn feasible_lps_solve_and_verify(
            n in 1usize..6,
            m in 1usize..6,
            seed in prop::collection::vec(-1.0f64..1.0, 64),
        ) {
            let mut p = LpProblem::new(n);
            let mut k = 0;
            let mut next = || { k += 1; seed[k % seed.len()] };
            for j in 0..n {
                p.objective[j] = next();
                p.set_bounds(j, 0.0, 1.0 + next().abs());
            }
            for _ in 0..m {
                let row = (0..n).map(|_| next()).collect();
                p.add_le(row, next().abs());
            }
            let s = solve_lp(&p).unwrap();
            prop_assert_eq!(s.status, LpStatus::Optimal);
            prop_assert!(verify_solution(&p, &s));
            let again = solve_lp(&p).unwrap();
            prop_assert_eq!(s.x, again.x);
            // x = 0 is feasible, so the optimum is at least 0.
            prop_assert!(s.objective_value >= -1e-12);
        }
    }
}
