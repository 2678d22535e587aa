//! Direct full-parameter fitting: one LP over all diagram parameters.
//!
//! Every cell value `h_i(x) = x^T A_i x + a_i^T x + alpha_i` is linear in
//! the 10 coefficients `(alpha_i, a_i, A_i)` once points are lifted to
//! quadric coordinates. Points deep inside a grain must be separated from
//! every neighboring grain with a positive margin; points near the boundary
//! get a nonnegative slack, and the total (weighted) slack is minimized.
//!
//! The solver works in two stages. Separable instances (optimal slack zero)
//! are detected by a pure feasibility stage whose working problems have only
//! `10k + 1` dual rows, so row generation scales to hundreds of thousands of
//! separation constraints. Only genuinely unseparable instances pay for the
//! slack variables.
//!
//! Recovered shape matrices need not be positive definite; a single global
//! shift `A_i + beta I` repairs them without changing any constraint (the
//! term `beta x^T x` cancels from every difference), with sites and sizes
//! recomputed from the unchanged linear and constant coefficients.

use rayon::prelude::*;
use thiserror::Error;

use crate::diagram::{DiagramError, DiagramParams};
use crate::linalg::{self, Mat3, Vec3};
use crate::simplex::{self, DenseLp, LpError, LpStatus};
use crate::stats::NeighborGraph;
use crate::support::ImageSupport;

#[derive(Debug, Error)]
pub enum DilpmError {
    #[error("direct fitting needs k >= 2, got {0}")]
    KTooSmall(usize),
    #[error("instance has no separation constraints")]
    NoConstraints,
    #[error("ring bounds must satisfy 1 <= lo < hi, got ({0}, {1})")]
    BadRing(u32, u32),
    #[error("strict separation depth must be at least 1, got {0}")]
    BadDelta(u32),
    #[error("working set exceeded {0} rows")]
    WorkingSetOverflow(usize),
    #[error("row generation did not converge within {0} rounds")]
    RoundLimit(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Diagram(#[from] DiagramError),
}

/// Quadric lift `(1, x1, x2, x3, x1^2, x1 x2, x1 x3, x2^2, x2 x3, x3^2)`.
pub fn lift(x: &Vec3) -> [f64; 10] {
    [
        1.0,
        x.x,
        x.y,
        x.z,
        x.x * x.x,
        x.x * x.y,
        x.x * x.z,
        x.y * x.y,
        x.y * x.z,
        x.z * x.z,
    ]
}

/// Per-cell coefficient vector `(alpha, a_1..a_3, A11, 2 A12, 2 A13, A22,
/// 2 A23, A33)`; `dot(lift(x))` equals `h(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamVector(pub [f64; 10]);

impl ParamVector {
    pub fn dot(&self, lifted: &[f64; 10]) -> f64 {
        self.0
            .iter()
            .zip(lifted)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// The symmetric shape matrix stored in the quadratic coefficients.
    pub fn shape(&self) -> Mat3 {
        let v = &self.0;
        Mat3::new(
            v[4],
            v[5] / 2.0,
            v[6] / 2.0,
            v[5] / 2.0,
            v[7],
            v[8] / 2.0,
            v[6] / 2.0,
            v[8] / 2.0,
            v[9],
        )
    }

    pub fn linear(&self) -> Vec3 {
        Vec3::new(self.0[1], self.0[2], self.0[3])
    }

    pub fn constant(&self) -> f64 {
        self.0[0]
    }
}

/// Encode `(A, s, gamma)` so that `encode(..).dot(lift(x)) == h(x)`.
pub fn encode(a: &Mat3, s: &Vec3, gamma: f64) -> ParamVector {
    let lin = -2.0 * a * s;
    let alpha = s.dot(&(a * s)) + gamma;
    ParamVector([
        alpha,
        lin.x,
        lin.y,
        lin.z,
        a[(0, 0)],
        2.0 * a[(0, 1)],
        2.0 * a[(0, 2)],
        a[(1, 1)],
        2.0 * a[(1, 2)],
        a[(2, 2)],
    ])
}

/// Default positive-definiteness floor: `1e-6` times the median absolute
/// trace of the decoded shape matrices.
pub fn default_eps_pd(params: &[ParamVector]) -> f64 {
    let mut traces: Vec<f64> = params.iter().map(|p| p.shape().trace().abs()).collect();
    traces.sort_by(f64::total_cmp);
    let median = traces[traces.len() / 2];
    1e-6 * median.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
pub struct DecodedDiagram {
    pub shapes: Vec<Mat3>,
    pub sites: Vec<Vec3>,
    pub gammas: Vec<f64>,
    /// The global shift applied to all shape matrices (0 when all were
    /// sufficiently positive definite already).
    pub beta: f64,
}

/// Recover `(A, s, gamma)` per cell, applying one global `beta` shift when
/// any shape matrix has smallest eigenvalue at or below `eps_pd`.
pub fn decode_all(params: &[ParamVector], eps_pd: f64) -> DecodedDiagram {
    let min_eig = params
        .iter()
        .map(|p| linalg::sym_eigenvalues(&p.shape())[0])
        .fold(f64::INFINITY, f64::min);
    let beta = if min_eig <= eps_pd {
        eps_pd - min_eig
    } else {
        0.0
    };
    let mut shapes = Vec::with_capacity(params.len());
    let mut sites = Vec::with_capacity(params.len());
    let mut gammas = Vec::with_capacity(params.len());
    for p in params {
        let a_bar = p.shape() + beta * Mat3::identity();
        let s_bar = -0.5
            * a_bar
                .try_inverse()
                .expect("shifted shape matrix is positive definite")
            * p.linear();
        let gamma = p.constant() - s_bar.dot(&(a_bar * s_bar));
        shapes.push(linalg::symmetrize(&a_bar));
        sites.push(s_bar);
        gammas.push(gamma);
    }
    DecodedDiagram {
        shapes,
        sites,
        gammas,
        beta,
    }
}

/// One support point of a separation instance.
#[derive(Debug, Clone)]
pub struct InstancePoint {
    pub x: Vec3,
    pub weight: f64,
    /// 0-based grain index.
    pub grain: u32,
    pub strict: bool,
    /// Minimum boundary distance of the aggregate (seeding heuristic).
    pub depth: u32,
}

/// A built constraint system: points plus the neighbor pairs that generate
/// rows. Point `j` of grain `g` yields one row per neighbor `l` of `g`:
/// `h_g(x_j) <= h_l(x_j) - margin` (strict) or `<= h_l(x_j) + zeta_j`.
#[derive(Debug, Clone)]
pub struct SeparationInstance {
    pub k: usize,
    pub points: Vec<InstancePoint>,
    /// 0-based neighbor lists, sorted.
    pub neighbors: Vec<Vec<u32>>,
    pub margin: f64,
    /// 1-based labels of grains that ended up without strict points.
    pub empty_strict_grains: Vec<u32>,
}

impl SeparationInstance {
    pub fn row_count(&self) -> usize {
        self.points
            .iter()
            .map(|p| self.neighbors[p.grain as usize].len())
            .sum()
    }

    pub fn strict_point_count(&self) -> usize {
        self.points.iter().filter(|p| p.strict).count()
    }
}

/// Build a separation instance from a support and the grain adjacency.
///
/// A support point is strict when its aggregate is pure and its boundary
/// distance is at least `delta_strict`; with `ring = (lo, hi)` strictness
/// requires distance in `[lo, hi)` and pure points at depth `hi` or more
/// are dropped entirely. Everything else is soft.
pub fn build_instance(
    support: &ImageSupport,
    graph: &NeighborGraph,
    delta_strict: u32,
    ring: Option<(u32, u32)>,
    margin: f64,
) -> Result<SeparationInstance, DilpmError> {
    let k = graph.k();
    if k < 2 {
        return Err(DilpmError::KTooSmall(k));
    }
    if delta_strict < 1 {
        return Err(DilpmError::BadDelta(delta_strict));
    }
    if let Some((lo, hi)) = ring {
        if lo < 1 || lo >= hi {
            return Err(DilpmError::BadRing(lo, hi));
        }
    }
    let neighbors: Vec<Vec<u32>> = (1..=k as u32)
        .map(|label| graph.neighbors(label).iter().map(|&l| l - 1).collect())
        .collect();

    let mut points = Vec::with_capacity(support.len());
    let mut has_strict = vec![false; k];
    for j in 0..support.len() {
        let pure = support.is_pure(j);
        let depth = support.min_boundary_dist(j);
        let (strict, keep) = match ring {
            None => (pure && depth >= delta_strict, true),
            Some((lo, hi)) => {
                let deep = pure && depth >= hi;
                (pure && depth >= lo && depth < hi, !deep)
            }
        };
        if !keep {
            continue;
        }
        let grain = support.grain(j) - 1;
        if strict {
            has_strict[grain as usize] = true;
        }
        points.push(InstancePoint {
            x: *support.position(j),
            weight: support.weight(j),
            grain,
            strict,
            depth,
        });
    }
    let empty_strict_grains = (0..k)
        .filter(|&g| !has_strict[g])
        .map(|g| g as u32 + 1)
        .collect();
    let instance = SeparationInstance {
        k,
        points,
        neighbors,
        margin,
        empty_strict_grains,
    };
    if instance.row_count() == 0 {
        return Err(DilpmError::NoConstraints);
    }
    Ok(instance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStage {
    /// All constraints satisfiable with zero slack.
    StrictFeasible,
    /// Positive optimal slack.
    Soft,
}

#[derive(Debug, Clone)]
pub struct DilpmSolution {
    pub params: Vec<ParamVector>,
    /// Optimal weighted slack sum.
    pub objective: f64,
    pub stage: SolveStage,
    pub rounds: usize,
    pub working_rows: usize,
}

/// A scaled separation row: sparse coefficients over the `10k` parameter
/// block, right-hand side, and the soft point it belongs to (if any).
struct Row {
    grain: u32,
    other: u32,
    lifted: [f64; 10],
    scale: f64,
    rhs: f64,
    soft_point: Option<u32>,
}

struct RowGen<'a> {
    instance: &'a SeparationInstance,
    /// Flattened (point, neighbor_pos) pairs in canonical order.
    row_ids: Vec<(u32, u16)>,
}

impl<'a> RowGen<'a> {
    fn new(instance: &'a SeparationInstance) -> Self {
        let mut row_ids = Vec::with_capacity(instance.row_count());
        for (j, p) in instance.points.iter().enumerate() {
            for pos in 0..instance.neighbors[p.grain as usize].len() {
                row_ids.push((j as u32, pos as u16));
            }
        }
        Self { instance, row_ids }
    }

    fn len(&self) -> usize {
        self.row_ids.len()
    }

    fn build(&self, row_id: usize) -> Row {
        let (j, pos) = self.row_ids[row_id];
        let p = &self.instance.points[j as usize];
        let other = self.instance.neighbors[p.grain as usize][pos as usize];
        let lifted = lift(&p.x);
        let scale = lifted.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        // Internal margin is 1; the caller rescales the solution.
        let rhs = if p.strict { -1.0 / scale } else { 0.0 };
        Row {
            grain: p.grain,
            other,
            lifted,
            scale,
            rhs,
            soft_point: (!p.strict).then_some(j),
        }
    }

    /// `(lhs - rhs)` of row `row_id` at parameters `w`, in scaled units;
    /// positive values are violations (with zero slack).
    fn violation(&self, row_id: usize, w: &[f64]) -> f64 {
        let row = self.build(row_id);
        let gi = row.grain as usize * 10;
        let li = row.other as usize * 10;
        let mut lhs = 0.0;
        for t in 0..10 {
            lhs += row.lifted[t] * (w[gi + t] - w[li + t]);
        }
        lhs / row.scale - row.rhs
    }

    /// Scaled left-hand side only (the homogeneous part, no margin).
    fn violation_homogeneous(&self, row_id: usize, w: &[f64]) -> f64 {
        let row = self.build(row_id);
        let gi = row.grain as usize * 10;
        let li = row.other as usize * 10;
        let mut lhs = 0.0;
        for t in 0..10 {
            lhs += row.lifted[t] * (w[gi + t] - w[li + t]);
        }
        lhs / row.scale
    }
}

/// Seed rows for row generation: per ordered grain pair, the rows whose
/// points lie closest to a grain boundary (these are the likely active
/// constraints of the separating quadrics).
fn seed_rows(instance: &SeparationInstance, gen: &RowGen) -> Vec<usize> {
    const PER_PAIR: usize = 8;
    let mut best: std::collections::BTreeMap<(u32, u32), Vec<(u32, usize)>> = Default::default();
    for (rid, &(j, pos)) in gen.row_ids.iter().enumerate() {
        let point = &instance.points[j as usize];
        let other = instance.neighbors[point.grain as usize][pos as usize];
        let slot = best.entry((point.grain, other)).or_default();
        if slot.len() < PER_PAIR {
            slot.push((point.depth, rid));
            slot.sort_unstable();
        } else if point.depth < slot[PER_PAIR - 1].0 {
            slot[PER_PAIR - 1] = (point.depth, rid);
            slot.sort_unstable();
        }
    }
    let mut out: Vec<usize> = best
        .into_values()
        .flat_map(|v| v.into_iter().map(|(_, rid)| rid))
        .collect();
    out.sort_unstable();
    out
}

const DIRECT_ROW_LIMIT: usize = 300;
const WORKING_ROW_LIMIT: usize = 20_000;
const ROUND_LIMIT: usize = 200;
const BATCH: usize = 256;
const WORKING_CAP: usize = 1536;
/// Stage B working sets stay small enough for per-pivot refactorization.
const SOFT_BATCH: usize = 64;
const SOFT_CAP: usize = 300;
const FEAS_TOL: f64 = 1e-7;
/// Acceptance tolerance for normalized (box-scale) row violations.
const ACCEPT_TOL: f64 = 1e-6;
/// Box-scale margins below this level count as not strictly separable (the
/// rhs micro-perturbation alone can fake margins up to roughly 1e-8).
const INFEAS_MARGIN: f64 = 1e-5;

/// Solve the separation LP: minimize the weighted slack sum.
///
/// Internally the points are mapped to `[-1, 1]`-scale coordinates (lifted
/// monomials over raw physical coordinates make the LP badly conditioned);
/// the solution is transformed back to the physical frame, which changes no
/// constraint value.
pub fn solve_dilpm(instance: &SeparationInstance) -> Result<DilpmSolution, DilpmError> {
    if instance.k < 2 {
        return Err(DilpmError::KTooSmall(instance.k));
    }
    let (center, half) = bounding_frame(&instance.points);
    let normalized = SeparationInstance {
        k: instance.k,
        points: instance
            .points
            .iter()
            .map(|p| InstancePoint {
                x: (p.x - center) / half,
                weight: p.weight,
                grain: p.grain,
                strict: p.strict,
                depth: p.depth,
            })
            .collect(),
        neighbors: instance.neighbors.clone(),
        margin: 1.0,
        empty_strict_grains: instance.empty_strict_grains.clone(),
    };
    let gen = RowGen::new(&normalized);
    if gen.len() == 0 {
        return Err(DilpmError::NoConstraints);
    }

    // Stage A: can every row hold with zero slack?
    let (w, t_star, rounds_a, rows_a) = stage_feasibility(&normalized, &gen)?;
    if t_star <= FEAS_TOL {
        let params = denormalize(instance, &w, center, half);
        return Ok(DilpmSolution {
            params,
            objective: 0.0,
            stage: SolveStage::StrictFeasible,
            rounds: rounds_a,
            working_rows: rows_a,
        });
    }

    // Stage B: genuine soft optimum.
    if std::env::var("APDFIT_LP_DEBUG").is_ok() {
        eprintln!("entering stage B");
    }
    let (w, objective, rounds_b, rows_b) = stage_soft(&normalized, &gen)?;
    let params = denormalize(instance, &w, center, half);
    Ok(DilpmSolution {
        params,
        objective: objective * instance.margin,
        stage: SolveStage::Soft,
        rounds: rounds_a + rounds_b,
        working_rows: rows_a.max(rows_b),
    })
}

fn bounding_frame(points: &[InstancePoint]) -> (Vec3, f64) {
    let mut lo = Vec3::from_element(f64::INFINITY);
    let mut hi = Vec3::from_element(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.x);
        hi = hi.sup(&p.x);
    }
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo).max().max(1e-12);
    (center, half)
}

/// Map a solution over normalized coordinates `x' = (x - c) / L` back to
/// the physical frame and apply the requested margin scale. With
/// `h'(x') = x'^T Q' x' + a'^T x' + alpha'`, substituting gives
/// `Q = Q'/L^2`, `a = a'/L - 2 Q' c / L^2`,
/// `alpha = alpha' + c^T Q' c / L^2 - a'^T c / L`; every constraint value
/// is unchanged.
fn denormalize(
    instance: &SeparationInstance,
    w: &[f64],
    center: Vec3,
    half: f64,
) -> Vec<ParamVector> {
    let margin = instance.margin;
    (0..instance.k)
        .map(|g| {
            let mut v = [0.0; 10];
            v.copy_from_slice(&w[g * 10..g * 10 + 10]);
            let prime = ParamVector(v);
            let q = prime.shape();
            let a = prime.linear();
            let alpha = prime.constant();
            let l2 = half * half;
            let q_phys = q / l2;
            let a_phys = a / half - 2.0 * (q * center) / l2;
            let alpha_phys =
                alpha + center.dot(&(q * center)) / l2 - a.dot(&center) / half;
            let mut out = ParamVector([
                alpha_phys,
                a_phys.x,
                a_phys.y,
                a_phys.z,
                q_phys[(0, 0)],
                2.0 * q_phys[(0, 1)],
                2.0 * q_phys[(0, 2)],
                q_phys[(1, 1)],
                2.0 * q_phys[(1, 2)],
                q_phys[(2, 2)],
            ]);
            for entry in out.0.iter_mut() {
                *entry *= margin;
            }
            out
        })
        .collect()
}

/// Decide strict feasibility via stabilized row generation.
///
/// The margin system is homogeneous: a separator with positive strict
/// margins at any scale exists iff one exists with `|w|_inf <= 1`. Each
/// round maximizes the worst normalized strict margin `s` over the working
/// rows (central solutions avoid cutting-plane zigzag), then either
/// certifies infeasibility (`s* <= 0` on a relaxation bounds the full
/// system), or rescales the solution to unit margins and checks every row.
fn stage_feasibility(
    instance: &SeparationInstance,
    gen: &RowGen,
) -> Result<(Vec<f64>, f64, usize, usize), DilpmError> {
    let p = instance.k * 10;
    let total = gen.len();
    let mut working: Vec<usize> = Vec::new();
    let mut in_working = vec![false; total];
    for id in seed_rows(instance, gen) {
        if !in_working[id] {
            in_working[id] = true;
            working.push(id);
        }
    }

    let mut max_rows = 0usize;
    for round in 1..=ROUND_LIMIT {
        max_rows = max_rows.max(working.len());
        // max s  s.t.  a_r w + g_r s + slack_r = 0 (g_r = 1 on strict rows),
        // slack >= 0, |w| <= 1, s >= 0.
        let m = working.len();
        let n = p + 1 + m;
        let mut lp = DenseLp::new(m, n);
        for (row_pos, &rid) in working.iter().enumerate() {
            let row = gen.build(rid);
            let gi = row.grain as usize * 10;
            let li = row.other as usize * 10;
            for t in 0..10 {
                let v = row.lifted[t] / row.scale;
                lp.add(row_pos, gi + t, v);
                lp.add(row_pos, li + t, -v);
            }
            if row.soft_point.is_none() {
                lp.set(row_pos, p, 1.0);
            }
            lp.set(row_pos, p + 1 + row_pos, 1.0);
            // Deterministic micro-perturbation: keeps the all-slack start
            // vertex non-degenerate. Feasibility is judged on the true rows
            // afterwards, never on these.
            let noise = (rid as u32).wrapping_mul(0x9E37_79B1) as f64 / u32::MAX as f64;
            lp.rhs[row_pos] = 1e-9 * (0.5 + noise);
        }
        for col in 0..p {
            lp.lower[col] = -1.0;
            lp.upper[col] = 1.0;
        }
        // Scaled rows have coefficients in [-1, 1], so no margin beyond the
        // coefficient mass is attainable; the cap only binds when the
        // working set happens to hold no strict row yet.
        lp.upper[p] = 32.0;
        lp.objective[p] = -1.0;

        // w = 0, s = 0, slacks = rhs > 0 is a nondegenerate feasible basis.
        let basis: Vec<usize> = (0..m).map(|r| p + 1 + r).collect();
        let sol = simplex::solve_with_basis(&lp, &basis)?;
        debug_assert_eq!(sol.status, LpStatus::Optimal, "the zero point is feasible");
        let margin = sol.x[p];

        if margin <= INFEAS_MARGIN {
            // Even the relaxation admits no strictly separating parameters
            // beyond perturbation noise.
            let w = sol.x[..p].to_vec();
            return Ok((w, 1.0, round, max_rows));
        }

        // Homogeneous test at box scale: does the full row set sustain half
        // of the working margin? Strict rows must clear theta, soft rows
        // zero; on success, dividing by theta yields unit margins.
        let theta = 0.5 * margin;
        let w_box = &sol.x[..p];
        let violations: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|rid| {
                let strict_need = if instance.points[gen.row_ids[rid].0 as usize].strict {
                    theta
                } else {
                    0.0
                };
                gen.violation_homogeneous(rid, w_box) + strict_need
            })
            .collect();
        let v_max = violations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if std::env::var("APDFIT_LP_DEBUG").is_ok() {
            eprintln!(
                "stage A round {round}: margin {margin:.3e}, v_max {v_max:.3e}, rows {}",
                working.len()
            );
        }
        if v_max <= ACCEPT_TOL {
            let w: Vec<f64> = w_box.iter().map(|v| v / theta).collect();
            return Ok((w, 0.0, round, max_rows));
        }

        let mut violated: Vec<(f64, usize)> = violations
            .into_iter()
            .enumerate()
            .filter(|&(rid, v)| !in_working[rid] && v > ACCEPT_TOL)
            .map(|(rid, v)| (v, rid))
            .collect();
        if violated.is_empty() {
            // Residual violations live in already-working rows only; the
            // margin program judged them as tight as possible.
            let w: Vec<f64> = w_box.iter().map(|v| v / theta).collect();
            return Ok((w, v_max / theta, round, max_rows));
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        // Shed comfortably slack rows before growing the set again.
        if working.len() + violated.len().min(BATCH) > WORKING_CAP {
            let mut kept = Vec::with_capacity(working.len());
            for (row_pos, &rid) in working.iter().enumerate() {
                if sol.x[p + 1 + row_pos] <= 1e-6 {
                    kept.push(rid);
                } else {
                    in_working[rid] = false;
                }
            }
            working = kept;
        }
        let mut point_seen = std::collections::HashSet::new();
        let mut added = 0usize;
        for &(_, rid) in violated.iter() {
            if added >= BATCH {
                break;
            }
            let (j, _) = gen.row_ids[rid];
            if point_seen.insert(j) && !near_parallel(gen, rid, &working) {
                in_working[rid] = true;
                working.push(rid);
                added += 1;
            }
        }
        if added == 0 {
            for &(_, rid) in violated.iter().take(BATCH) {
                if !in_working[rid] {
                    in_working[rid] = true;
                    working.push(rid);
                }
            }
        }
        if working.len() > WORKING_ROW_LIMIT {
            return Err(DilpmError::WorkingSetOverflow(WORKING_ROW_LIMIT));
        }
    }
    Err(DilpmError::RoundLimit(ROUND_LIMIT))
}

/// Whether the row is nearly identical to a working row of the same grain
/// pair (same constraint direction up to 1e-8); such rows add nothing.
fn near_parallel(gen: &RowGen, rid: usize, working: &[usize]) -> bool {
    let row = gen.build(rid);
    for &other in working.iter().rev().take(512) {
        let or = gen.build(other);
        if or.grain == row.grain && or.other == row.other {
            let mut close = true;
            for t in 0..10 {
                if (row.lifted[t] / row.scale - or.lifted[t] / or.scale).abs() > 1e-8 {
                    close = false;
                    break;
                }
            }
            if close && (row.rhs - or.rhs).abs() <= 1e-12 {
                return true;
            }
        }
    }
    false
}

/// Full soft model on a working row set: parameters free, one slack per
/// soft point present, one surplus per row. Direct dense solve.
fn solve_soft_working(
    instance: &SeparationInstance,
    gen: &RowGen,
    working: &[usize],
) -> Result<(Vec<f64>, Vec<f64>, f64), DilpmError> {
    let p = instance.k * 10;
    let m = working.len();

    // Map soft points present in the working set to slack columns.
    let mut slack_of_point: std::collections::BTreeMap<u32, usize> = Default::default();
    for &rid in working {
        if let Some(j) = gen.build(rid).soft_point {
            let next = slack_of_point.len();
            slack_of_point.entry(j).or_insert(next);
        }
    }
    let s = slack_of_point.len();
    let n = p + s + m;

    let mut lp = DenseLp::new(m, n);
    for (row_pos, &rid) in working.iter().enumerate() {
        let row = gen.build(rid);
        let gi = row.grain as usize * 10;
        let li = row.other as usize * 10;
        for t in 0..10 {
            let v = row.lifted[t] / row.scale;
            lp.add(row_pos, gi + t, v);
            lp.add(row_pos, li + t, -v);
        }
        if let Some(j) = row.soft_point {
            lp.set(row_pos, p + slack_of_point[&j], -1.0 / row.scale);
        }
        // Surplus turns <= into =.
        lp.set(row_pos, p + s + row_pos, 1.0);
        lp.rhs[row_pos] = row.rhs;
    }
    for col in 0..p {
        lp.free_var(col);
    }
    for (&j, &slot) in &slack_of_point {
        lp.objective[p + slot] = instance.points[j as usize].weight;
    }

    let sol = simplex::solve(&lp)?;
    debug_assert_eq!(sol.status, LpStatus::Optimal, "soft model is always feasible");
    let w = sol.x[..p].to_vec();
    let mut zeta = vec![0.0; instance.points.len()];
    for (&j, &slot) in &slack_of_point {
        zeta[j as usize] = sol.x[p + slot];
    }
    Ok((w, zeta, sol.objective))
}

fn stage_soft(
    instance: &SeparationInstance,
    gen: &RowGen,
) -> Result<(Vec<f64>, f64, usize, usize), DilpmError> {
    let total = gen.len();

    if total <= DIRECT_ROW_LIMIT {
        let working: Vec<usize> = (0..total).collect();
        let (w, _, objective) = solve_soft_working(instance, gen, &working)?;
        return Ok((w, objective, 1, total));
    }

    let mut working: Vec<usize> = Vec::new();
    let mut in_working = vec![false; total];
    for id in seed_rows(instance, gen) {
        if !in_working[id] {
            in_working[id] = true;
            working.push(id);
        }
    }

    for round in 1..=ROUND_LIMIT {
        let (w, zeta, objective) = solve_soft_working(instance, gen, &working)?;
        // A row is violated when its slack (0 for strict) cannot cover it.
        let mut violated: Vec<(f64, usize)> = (0..total)
            .into_par_iter()
            .filter(|&rid| !in_working[rid])
            .map(|rid| {
                let (j, _) = gen.row_ids[rid];
                let allowance = if instance.points[j as usize].strict {
                    0.0
                } else {
                    // Scaled slack: zeta enters the row scaled.
                    zeta[j as usize] / gen.build(rid).scale
                };
                (gen.violation(rid, &w) - allowance, rid)
            })
            .filter(|&(v, _)| v > 1e-9)
            .collect();
        if violated.is_empty() {
            return Ok((w, objective, round, working.len()));
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        // Shed satisfied rows when the working set grows too large.
        if working.len() + violated.len().min(SOFT_BATCH) > SOFT_CAP {
            let mut kept = Vec::with_capacity(working.len());
            for &rid in working.iter() {
                let (j, _) = gen.row_ids[rid];
                let allowance = if instance.points[j as usize].strict {
                    0.0
                } else {
                    zeta[j as usize] / gen.build(rid).scale
                };
                if gen.violation(rid, &w) - allowance >= -1e-7 {
                    kept.push(rid);
                } else {
                    in_working[rid] = false;
                }
            }
            working = kept;
        }
        for &(_, rid) in violated.iter().take(SOFT_BATCH) {
            in_working[rid] = true;
            working.push(rid);
        }
        if working.len() > WORKING_ROW_LIMIT {
            return Err(DilpmError::WorkingSetOverflow(WORKING_ROW_LIMIT));
        }
    }
    Err(DilpmError::RoundLimit(ROUND_LIMIT))
}

#[derive(Debug, Clone)]
pub struct DilpmReport {
    pub objective: f64,
    pub stage: SolveStage,
    pub rounds: usize,
    pub working_rows: usize,
    pub beta: f64,
    pub eps_pd: f64,
    pub empty_strict_grains: Vec<u32>,
}

/// Build, solve and decode in one step.
pub fn fit_dilpm(
    support: &ImageSupport,
    graph: &NeighborGraph,
    delta_strict: u32,
    ring: Option<(u32, u32)>,
    margin: f64,
    eps_pd: Option<f64>,
) -> Result<(DiagramParams, DilpmReport), DilpmError> {
    let instance = build_instance(support, graph, delta_strict, ring, margin)?;
    let solution = solve_dilpm(&instance)?;
    let eps = eps_pd.unwrap_or_else(|| default_eps_pd(&solution.params));
    let decoded = decode_all(&solution.params, eps);
    let diagram = DiagramParams::new(decoded.shapes, decoded.sites, decoded.gammas)?;
    Ok((
        diagram,
        DilpmReport {
            objective: solution.objective,
            stage: solution.stage,
            rounds: solution.rounds,
            working_rows: solution.working_rows,
            beta: decoded.beta,
            eps_pd: eps,
            empty_strict_grains: instance.empty_strict_grains,
        },
    ))
}
