//! Dense bounded-variable revised simplex.
//!
//! Solves `min c^T x` subject to `A x = b`, `l <= x <= u` with dense
//! column-major storage and an explicit basis inverse. Two phases with
//! artificial columns; Dantzig pricing with lowest-index tie-breaks and a
//! Bland's-rule fallback after a degeneracy stall. Fully deterministic.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("iteration limit {0} exceeded")]
    IterationLimit(usize),
    #[error("basis became numerically singular")]
    SingularBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// `min c^T x  s.t.  A x = b,  l <= x <= u`, `A` column-major dense.
#[derive(Debug, Clone)]
pub struct DenseLp {
    pub num_rows: usize,
    pub num_cols: usize,
    /// Entry `(row, col)` lives at `cols[col * num_rows + row]`.
    pub cols: Vec<f64>,
    pub objective: Vec<f64>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DenseLp {
    pub fn new(num_rows: usize, num_cols: usize) -> Self {
        Self {
            num_rows,
            num_cols,
            cols: vec![0.0; num_rows * num_cols],
            objective: vec![0.0; num_cols],
            rhs: vec![0.0; num_rows],
            lower: vec![0.0; num_cols],
            upper: vec![f64::INFINITY; num_cols],
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.cols[col * self.num_rows + row] = value;
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.cols[col * self.num_rows + row] += value;
    }

    pub fn free_var(&mut self, col: usize) {
        self.lower[col] = f64::NEG_INFINITY;
        self.upper[col] = f64::INFINITY;
    }

    #[inline]
    fn col(&self, col: usize) -> &[f64] {
        &self.cols[col * self.num_rows..(col + 1) * self.num_rows]
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals `y = c_B^T B^{-1}` of the final basis (phase-2 costs).
    pub duals: Vec<f64>,
    /// Basic column per row; entries `>= num_cols` are artificials.
    pub basis: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Free nonbasic variables rest at zero.
    FreeAtZero,
}

enum Step {
    Optimal,
    Moved,
    Unbounded,
}

const STALL_LIMIT: usize = 400;
const REFACTOR_EVERY: usize = 16;
const PIVOT_TOL: f64 = 1e-11;

struct Tableau<'a> {
    lp: &'a DenseLp,
    m: usize,
    n_total: usize,
    state: Vec<VarState>,
    basis: Vec<usize>,
    x: Vec<f64>,
    /// Row-major m x m basis inverse.
    binv: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Artificial column sign per row.
    art_sign: Vec<f64>,
    pivots_since_refactor: usize,
    stall: usize,
    bland: bool,
    opt_tol: f64,
}

impl<'a> Tableau<'a> {
    fn new(lp: &'a DenseLp) -> Self {
        let m = lp.num_rows;
        let n = lp.num_cols;
        let n_total = n + m;

        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower.extend(std::iter::repeat(0.0).take(m));
        upper.extend(std::iter::repeat(f64::INFINITY).take(m));

        let mut state = Vec::with_capacity(n_total);
        let mut x = vec![0.0; n_total];
        for j in 0..n {
            if lower[j].is_finite() {
                state.push(VarState::AtLower);
                x[j] = lower[j];
            } else if upper[j].is_finite() {
                state.push(VarState::AtUpper);
                x[j] = upper[j];
            } else {
                state.push(VarState::FreeAtZero);
            }
        }

        let mut residual = lp.rhs.clone();
        for j in 0..n {
            if x[j] != 0.0 {
                let col = lp.col(j);
                for i in 0..m {
                    residual[i] -= col[i] * x[j];
                }
            }
        }
        let mut basis = Vec::with_capacity(m);
        let mut art_sign = vec![1.0; m];
        for (i, &r) in residual.iter().enumerate() {
            let j = n + i;
            art_sign[i] = if r >= 0.0 { 1.0 } else { -1.0 };
            x[j] = r.abs();
            state.push(VarState::Basic(i));
            basis.push(j);
        }

        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = art_sign[i];
        }

        let scale = lp
            .rhs
            .iter()
            .chain(lp.objective.iter())
            .fold(1.0f64, |acc, v| acc.max(v.abs()));

        Self {
            lp,
            m,
            n_total,
            state,
            basis,
            x,
            binv,
            lower,
            upper,
            art_sign,
            pivots_since_refactor: 0,
            stall: 0,
            bland: false,
            opt_tol: 1e-9 * scale,
        }
    }

    #[inline]
    fn column_entry(&self, row: usize, col: usize) -> f64 {
        if col < self.lp.num_cols {
            self.lp.cols[col * self.m + row]
        } else if col - self.lp.num_cols == row {
            self.art_sign[row]
        } else {
            0.0
        }
    }

    fn duals(&self, costs: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (row, &j) in self.basis.iter().enumerate() {
            let cb = costs[j];
            if cb != 0.0 {
                for i in 0..m {
                    y[i] += cb * self.binv[row * m + i];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, costs: &[f64], y: &[f64], j: usize) -> f64 {
        let mut d = costs[j];
        if j < self.lp.num_cols {
            let col = self.lp.col(j);
            for i in 0..self.m {
                d -= y[i] * col[i];
            }
        } else {
            d -= y[j - self.lp.num_cols] * self.art_sign[j - self.lp.num_cols];
        }
        d
    }

    /// `w = B^{-1} A_q`.
    fn ftran(&self, q: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        if q < self.lp.num_cols {
            let col = self.lp.col(q);
            for (i, &a) in col.iter().enumerate() {
                if a != 0.0 {
                    for r in 0..m {
                        w[r] += self.binv[r * m + i] * a;
                    }
                }
            }
        } else {
            let i = q - self.lp.num_cols;
            let a = self.art_sign[i];
            for r in 0..m {
                w[r] = self.binv[r * m + i] * a;
            }
        }
        w
    }

    /// Install a caller-supplied basis: returns false when it is singular
    /// or the implied basic values violate their bounds.
    fn try_install_basis(&mut self, basis: &[usize]) -> bool {
        let mut seen = vec![false; self.n_total];
        for &j in basis {
            if j >= self.lp.num_cols || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        let old_state = self.state.clone();
        let old_basis = self.basis.clone();
        let old_x = self.x.clone();
        for j in 0..self.lp.num_cols {
            if seen[j] {
                continue;
            }
            self.state[j] = if self.lower[j].is_finite() {
                self.x[j] = self.lower[j];
                VarState::AtLower
            } else if self.upper[j].is_finite() {
                self.x[j] = self.upper[j];
                VarState::AtUpper
            } else {
                self.x[j] = 0.0;
                VarState::FreeAtZero
            };
        }
        for j in self.lp.num_cols..self.n_total {
            self.state[j] = VarState::AtLower;
            self.x[j] = 0.0;
            self.upper[j] = 0.0;
        }
        for (row, &j) in basis.iter().enumerate() {
            self.basis[row] = j;
            self.state[j] = VarState::Basic(row);
        }
        if self.refactorize().is_err() {
            self.restore(old_state, old_basis, old_x);
            return false;
        }
        let tol = 1e-9 * self.x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        for &j in basis {
            if self.x[j] < self.lower[j] - tol || self.x[j] > self.upper[j] + tol {
                self.restore(old_state, old_basis, old_x);
                return false;
            }
        }
        true
    }

    /// Undo a failed basis installation: back to the artificial start.
    fn restore(&mut self, state: Vec<VarState>, basis: Vec<usize>, x: Vec<f64>) {
        self.state = state;
        self.basis = basis;
        self.x = x;
        let m = self.m;
        for j in self.lp.num_cols..self.n_total {
            self.upper[j] = f64::INFINITY;
        }
        for v in self.binv.iter_mut() {
            *v = 0.0;
        }
        for i in 0..m {
            self.binv[i * m + i] = self.art_sign[i];
        }
        self.pivots_since_refactor = 0;
    }

    fn refactorize(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let width = 2 * m;
        let mut aug = vec![0.0; m * width];
        for (col_pos, &j) in self.basis.iter().enumerate() {
            for row in 0..m {
                aug[row * width + col_pos] = self.column_entry(row, j);
            }
        }
        for row in 0..m {
            aug[row * width + m + row] = 1.0;
        }
        for col in 0..m {
            let mut piv_row = col;
            let mut piv_val = aug[col * width + col].abs();
            for r in (col + 1)..m {
                let v = aug[r * width + col].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = r;
                }
            }
            if piv_val < 1e-12 {
                if std::env::var("APDFIT_LP_DEBUG").is_ok() {
                    let arts = self.basis.iter().filter(|&&j| j >= self.lp.num_cols).count();
                    let dup = {
                        let mut b = self.basis.clone();
                        b.sort_unstable();
                        b.dedup();
                        self.m - b.len()
                    };
                    eprintln!(
                        "refactor singular at col {col}/{m}, piv {piv_val:.3e}, artificials {arts}, dup {dup}, pivots since {since}, cols {nc}",
                        since = self.pivots_since_refactor, nc = self.lp.num_cols
                    );
                }
                return Err(LpError::SingularBasis);
            }
            if piv_row != col {
                for c in 0..width {
                    aug.swap(col * width + c, piv_row * width + c);
                }
            }
            let inv = 1.0 / aug[col * width + col];
            for c in 0..width {
                aug[col * width + c] *= inv;
            }
            for r in 0..m {
                if r != col {
                    let f = aug[r * width + col];
                    if f != 0.0 {
                        for c in col..width {
                            aug[r * width + c] -= f * aug[col * width + c];
                        }
                    }
                }
            }
        }
        // After Gauss-Jordan the right half of row r solves B x = e_r in
        // basis-position coordinates.
        for row_pos in 0..m {
            for c in 0..m {
                self.binv[row_pos * m + c] = aug[row_pos * width + m + c];
            }
        }
        self.pivots_since_refactor = 0;
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut residual = self.lp.rhs.to_vec();
        for j in 0..self.n_total {
            if !matches!(self.state[j], VarState::Basic(_)) && self.x[j] != 0.0 {
                for i in 0..m {
                    let a = self.column_entry(i, j);
                    if a != 0.0 {
                        residual[i] -= a * self.x[j];
                    }
                }
            }
        }
        for row in 0..m {
            let mut v = 0.0;
            for i in 0..m {
                v += self.binv[row * m + i] * residual[i];
            }
            self.x[self.basis[row]] = v;
        }
    }

    fn choose_entering_skipping(
        &self,
        costs: &[f64],
        y: &[f64],
        skip: &[usize],
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n_total {
            if skip.contains(&j) {
                continue;
            }
            let (dir, score) = match self.state[j] {
                VarState::Basic(_) => continue,
                VarState::AtLower => {
                    if self.lower[j] >= self.upper[j] {
                        continue;
                    }
                    let d = self.reduced_cost(costs, y, j);
                    if d < -self.opt_tol {
                        (1.0, -d)
                    } else {
                        continue;
                    }
                }
                VarState::AtUpper => {
                    if self.lower[j] >= self.upper[j] {
                        continue;
                    }
                    let d = self.reduced_cost(costs, y, j);
                    if d > self.opt_tol {
                        (-1.0, d)
                    } else {
                        continue;
                    }
                }
                VarState::FreeAtZero => {
                    let d = self.reduced_cost(costs, y, j);
                    if d < -self.opt_tol {
                        (1.0, -d)
                    } else if d > self.opt_tol {
                        (-1.0, d)
                    } else {
                        continue;
                    }
                }
            };
            if self.bland {
                // Lowest improving index.
                return Some((j, dir));
            }
            match &best {
                Some((_, _, s)) if score <= *s => {}
                _ => best = Some((j, dir, score)),
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Two-pass ratio test: find the tightest step, then among rows whose
    /// limit ties it pick the largest pivot (under Bland's rule: the lowest
    /// basic variable index).
    fn ratio_test(&self, dir: f64, span: f64, w: &[f64]) -> (f64, Option<usize>) {
        let mut t_min = if span.is_finite() { span } else { f64::INFINITY };
        for (row, &wv) in w.iter().enumerate() {
            if wv.abs() <= PIVOT_TOL {
                continue;
            }
            let jb = self.basis[row];
            let delta = -dir * wv;
            let limit = if delta > 0.0 {
                if self.upper[jb].is_finite() {
                    (self.upper[jb] - self.x[jb]) / delta
                } else {
                    continue;
                }
            } else if self.lower[jb].is_finite() {
                (self.lower[jb] - self.x[jb]) / delta
            } else {
                continue;
            };
            t_min = t_min.min(limit.max(0.0));
        }
        if !t_min.is_finite() {
            return (t_min, None);
        }
        let tie = t_min + 1e-9 * (1.0 + t_min);
        let mut leaving: Option<usize> = None;
        let mut best_piv = 0.0f64;
        for (row, &wv) in w.iter().enumerate() {
            if wv.abs() <= PIVOT_TOL {
                continue;
            }
            let jb = self.basis[row];
            let delta = -dir * wv;
            let limit = if delta > 0.0 {
                if self.upper[jb].is_finite() {
                    (self.upper[jb] - self.x[jb]) / delta
                } else {
                    continue;
                }
            } else if self.lower[jb].is_finite() {
                (self.lower[jb] - self.x[jb]) / delta
            } else {
                continue;
            };
            if limit.max(0.0) <= tie {
                let better = if self.bland {
                    match leaving {
                        None => true,
                        Some(cur) => jb < self.basis[cur],
                    }
                } else {
                    wv.abs() > best_piv
                        || (wv.abs() == best_piv
                            && leaving.is_some_and(|cur| jb < self.basis[cur]))
                };
                if better {
                    best_piv = wv.abs();
                    leaving = Some(row);
                }
            }
        }
        // The reported step is the chosen row's own limit, clamped to span.
        let t = match leaving {
            Some(row) => {
                let jb = self.basis[row];
                let delta = -dir * w[row];
                let limit = if delta > 0.0 {
                    (self.upper[jb] - self.x[jb]) / delta
                } else {
                    (self.lower[jb] - self.x[jb]) / delta
                };
                limit.max(0.0).min(if span.is_finite() { span } else { f64::INFINITY })
            }
            None => t_min,
        };
        (t, leaving)
    }

    fn step(&mut self, costs: &[f64]) -> Result<Step, LpError> {
        let y = self.duals(costs);
        let mut skip: Vec<usize> = Vec::new();
        loop {
            let Some((q, dir)) = self.choose_entering_skipping(costs, &y, &skip) else {
                return Ok(Step::Optimal);
            };
            let mut w = self.ftran(q);
            let span = self.upper[q] - self.lower[q];
            let (mut t_best, mut leaving) = self.ratio_test(dir, span, &w);

            if let Some(row) = leaving {
                let w_scale = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                if w[row].abs() < 1e-7 * (1.0 + w_scale) {
                    // Tiny pivot: could be inverse drift, so refactorize and
                    // retry; if the pivot stays poor, reject this column.
                    self.refactorize()?;
                    w = self.ftran(q);
                    (t_best, leaving) = self.ratio_test(dir, span, &w);
                    if let Some(row2) = leaving {
                        let w_scale2 = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                        if w[row2].abs() < 1e-6 * (1.0 + w_scale2) {
                            if skip.len() >= 256 {
                                return Ok(Step::Optimal);
                            }
                            skip.push(q);
                            continue;
                        }
                    }
                }
            }
            match self.try_pivot(q, dir, &w, t_best, leaving) {
                Ok(step) => return Ok(step),
                Err(LpError::SingularBasis) => {
                    if skip.len() >= 256 {
                        // Every usable direction is numerically unsound;
                        // stop at the current (feasible) point.
                        return Ok(Step::Optimal);
                    }
                    skip.push(q);
                    continue;
                }
                Err(other) => return Err(other),
            }
        }
    }

    fn try_pivot(
        &mut self,
        q: usize,
        dir: f64,
        w: &[f64],
        t_best: f64,
        leaving: Option<usize>,
    ) -> Result<Step, LpError> {
        match leaving {
            None if !t_best.is_finite() => Ok(Step::Unbounded),
            None => {
                // Bound flip across the whole span.
                let t = t_best;
                for (row, &wv) in w.iter().enumerate() {
                    self.x[self.basis[row]] -= dir * t * wv;
                }
                self.state[q] = if dir > 0.0 {
                    self.x[q] = self.upper[q];
                    VarState::AtUpper
                } else {
                    self.x[q] = self.lower[q];
                    VarState::AtLower
                };
                self.note_step(t);
                Ok(Step::Moved)
            }
            Some(row) => {
                // Snapshot enough state to undo the pivot if the new basis
                // turns out numerically singular.
                let saved: Vec<(usize, f64)> = self
                    .basis
                    .iter()
                    .map(|&jb| (jb, self.x[jb]))
                    .chain(std::iter::once((q, self.x[q])))
                    .collect();
                let jb = self.basis[row];
                let saved_state_q = self.state[q];
                let saved_state_jb = self.state[jb];

                let t = t_best;
                for (r, &wv) in w.iter().enumerate() {
                    self.x[self.basis[r]] -= dir * t * wv;
                }
                self.x[q] = match self.state[q] {
                    VarState::AtLower => self.lower[q] + t,
                    VarState::AtUpper => self.upper[q] - t,
                    VarState::FreeAtZero => dir * t,
                    VarState::Basic(_) => unreachable!(),
                };
                let delta = -dir * w[row];
                self.state[jb] = if delta > 0.0 {
                    self.x[jb] = self.upper[jb];
                    VarState::AtUpper
                } else {
                    self.x[jb] = self.lower[jb];
                    VarState::AtLower
                };
                self.basis[row] = q;
                self.state[q] = VarState::Basic(row);
                match self.update_binv(row, &w) {
                    Ok(()) => {
                        self.note_step(t);
                        Ok(Step::Moved)
                    }
                    Err(LpError::SingularBasis) => {
                        // Undo and report; the caller rejects this column.
                        self.basis[row] = jb;
                        self.state[q] = saved_state_q;
                        self.state[jb] = saved_state_jb;
                        for (var, value) in saved {
                            self.x[var] = value;
                        }
                        // With incremental updates the restored basis can be
                        // unfactorizable too; that aborts the solve.
                        self.refactorize()?;
                        Err(LpError::SingularBasis)
                    }
                    Err(other) => Err(other),
                }
            }
        }
    }

    fn note_step(&mut self, t: f64) {
        if t.abs() <= 1e-12 {
            self.stall += 1;
            if self.stall >= STALL_LIMIT {
                self.bland = true;
            }
        } else {
            self.stall = 0;
            self.bland = false;
        }
    }

    fn update_binv(&mut self, row: usize, w: &[f64]) -> Result<(), LpError> {
        let m = self.m;
        // Small bases refactorize on every pivot: it costs about as much as
        // one pricing pass and keeps the inverse exact-quality, which the
        // near-dependent column sets of the separation LPs require.
        if m <= 320 {
            return self.refactorize();
        }
        let piv = w[row];
        if piv.abs() < PIVOT_TOL {
            if std::env::var("APDFIT_LP_DEBUG").is_ok() {
                eprintln!("update singular pivot {piv:.3e} at row {row}");
            }
            return Err(LpError::SingularBasis);
        }
        let inv = 1.0 / piv;
        for c in 0..m {
            self.binv[row * m + c] *= inv;
        }
        for r in 0..m {
            if r != row {
                let f = w[r];
                if f != 0.0 {
                    for c in 0..m {
                        self.binv[r * m + c] -= f * self.binv[row * m + c];
                    }
                }
            }
        }
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactorize()?;
        }
        Ok(())
    }

    /// Run to (phase) optimality. Returns false on an unbounded ray.
    fn run(&mut self, costs: &[f64], iter_cap: usize) -> Result<bool, LpError> {
        for _ in 0..iter_cap {
            match self.step(costs)? {
                Step::Optimal => return Ok(true),
                Step::Unbounded => return Ok(false),
                Step::Moved => {}
            }
        }
        Err(LpError::IterationLimit(iter_cap))
    }
}

/// Solve a dense LP; deterministic for identical input.
pub fn solve(lp: &DenseLp) -> Result<LpSolution, LpError> {
    solve_inner(lp, None)
}

/// Solve starting from a caller-supplied basis (one column per row). Falls
/// back to the ordinary two-phase path when the basis is singular or
/// infeasible.
pub fn solve_with_basis(lp: &DenseLp, basis: &[usize]) -> Result<LpSolution, LpError> {
    solve_inner(lp, Some(basis))
}

fn solve_inner(lp: &DenseLp, warm_basis: Option<&[usize]>) -> Result<LpSolution, LpError> {
    assert_eq!(lp.cols.len(), lp.num_rows * lp.num_cols);
    assert_eq!(lp.objective.len(), lp.num_cols);
    assert_eq!(lp.rhs.len(), lp.num_rows);
    let m = lp.num_rows;
    let n = lp.num_cols;
    let mut tab = Tableau::new(lp);
    let iter_cap = 200 * (m + n) + 2000;

    let warm_ok = match warm_basis {
        Some(basis) if basis.len() == m => tab.try_install_basis(basis),
        _ => false,
    };

    if !warm_ok {
        // Phase 1: minimize the artificial sum.
        let mut phase1_costs = vec![0.0; n + m];
        for c in phase1_costs.iter_mut().skip(n) {
            *c = 1.0;
        }
        let finished = tab.run(&phase1_costs, iter_cap)?;
        debug_assert!(finished, "phase 1 objective is bounded below by zero");
        let infeas: f64 = (n..n + m).map(|j| tab.x[j].max(0.0)).sum();
        if infeas > 1e-7 * (1.0 + tab.opt_tol / 1e-9) {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: tab.x[..n].to_vec(),
                objective: f64::INFINITY,
                duals: vec![0.0; m],
                basis: tab.basis.clone(),
            });
        }
    }

    // Phase 2: real costs; artificials pinned to zero.
    for j in n..n + m {
        tab.upper[j] = 0.0;
        if !matches!(tab.state[j], VarState::Basic(_)) {
            tab.state[j] = VarState::AtLower;
            tab.x[j] = 0.0;
        }
    }
    let mut phase2_costs = lp.objective.clone();
    phase2_costs.extend(std::iter::repeat(0.0).take(m));
    tab.stall = 0;
    tab.bland = false;
    let bounded = tab.run(&phase2_costs, iter_cap)?;
    if !bounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: tab.x[..n].to_vec(),
            objective: f64::NEG_INFINITY,
            duals: vec![0.0; m],
            basis: tab.basis.clone(),
        });
    }

    tab.refactorize()?;
    let x = tab.x[..n].to_vec();
    let objective = lp
        .objective
        .iter()
        .zip(&x)
        .map(|(c, v)| c * v)
        .sum::<f64>();
    let duals = tab.duals(&phase2_costs);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        basis: tab.basis.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(
        rows: usize,
        cols: usize,
        entries: &[(usize, usize, f64)],
        c: &[f64],
        b: &[f64],
    ) -> DenseLp {
        let mut p = DenseLp::new(rows, cols);
        for &(r, cix, v) in entries {
            p.set(r, cix, v);
        }
        p.objective.copy_from_slice(c);
        p.rhs.copy_from_slice(b);
        p
    }

    #[test]
    fn small_optimum_and_duals() {
        // max x1 + 2 x2 s.t. x1 + x2 <= 4, x1 + 3 x2 <= 6 => (3, 1), value 5.
        let p = lp(
            2,
            4,
            &[
                (0, 0, 1.0),
                (0, 1, 1.0),
                (0, 2, 1.0),
                (1, 0, 1.0),
                (1, 1, 3.0),
                (1, 3, 1.0),
            ],
            &[-1.0, -2.0, 0.0, 0.0],
            &[4.0, 6.0],
        );
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 5.0).abs() < 1e-9);
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
        // All structural nonbasic at lower 0: strong duality y^T b = c^T x.
        let yb = sol.duals[0] * 4.0 + sol.duals[1] * 6.0;
        assert!((yb - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let p = lp(
            2,
            2,
            &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
            &[0.0, 0.0],
            &[1.0, 2.0],
        );
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let p = lp(
            1,
            2,
            &[(0, 0, 1.0), (0, 1, -1.0)],
            &[-1.0, 0.0],
            &[0.0],
        );
        assert_eq!(solve(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn respects_upper_bounds() {
        // min -x1 s.t. x1 + x2 = 10, x1 <= 3, x2 <= 100.
        let mut p = lp(
            1,
            2,
            &[(0, 0, 1.0), (0, 1, 1.0)],
            &[-1.0, 0.0],
            &[10.0],
        );
        p.upper[0] = 3.0;
        p.upper[1] = 100.0;
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        assert!((sol.x[1] - 7.0).abs() < 1e-9);
    }

    #[test]
    fn free_variables() {
        // min x1 s.t. x1 + x2 = 5, 0 <= x2 <= 2, x1 free => x1 = 3.
        let mut p = lp(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)], &[1.0, 0.0], &[5.0]);
        p.free_var(0);
        p.upper[1] = 2.0;
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_feasible() {
        // x1 - x2 = -3 with x1 <= 1: e.g. x1 = 0, x2 = 3.
        let p = lp(
            1,
            2,
            &[(0, 0, 1.0), (0, 1, -1.0)],
            &[1.0, 1.0],
            &[-3.0],
        );
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn random_lps_satisfy_optimality_certificate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for case in 0..40 {
            let m = rng.random_range(2..6);
            let n = rng.random_range(m..m + 8);
            let mut p = DenseLp::new(m, n);
            for col in 0..n {
                for row in 0..m {
                    p.set(row, col, rng.random_range(-2.0..2.0));
                }
                p.objective[col] = rng.random_range(-1.0..1.0);
                p.upper[col] = rng.random_range(0.5..4.0);
            }
            // rhs from a random feasible interior-ish point.
            let x0: Vec<f64> = (0..n)
                .map(|j| rng.random_range(0.0..p.upper[j]))
                .collect();
            for row in 0..m {
                let mut b = 0.0;
                for col in 0..n {
                    b += p.cols[col * m + row] * x0[col];
                }
                p.rhs[row] = b;
            }
            let sol = solve(&p).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
            // Primal feasibility.
            for row in 0..m {
                let mut ax = 0.0;
                for col in 0..n {
                    ax += p.cols[col * m + row] * sol.x[col];
                }
                assert!((ax - p.rhs[row]).abs() < 1e-7, "case {case} row {row}");
            }
            for col in 0..n {
                assert!(sol.x[col] >= -1e-9 && sol.x[col] <= p.upper[col] + 1e-9);
            }
            // Dual sign conditions via reduced costs.
            for col in 0..n {
                let mut d = p.objective[col];
                for row in 0..m {
                    d -= sol.duals[row] * p.cols[col * m + row];
                }
                let at_lower = sol.x[col] < 1e-7;
                let at_upper = sol.x[col] > p.upper[col] - 1e-7;
                if !at_lower && !at_upper {
                    assert!(d.abs() < 1e-6, "case {case} col {col} interior d={d}");
                } else if at_lower && !at_upper {
                    assert!(d > -1e-6, "case {case} col {col} lower d={d}");
                } else if at_upper && !at_lower {
                    assert!(d < 1e-6, "case {case} col {col} upper d={d}");
                }
            }
        }
    }
}
