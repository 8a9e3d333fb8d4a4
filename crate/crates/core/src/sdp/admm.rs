//! Operator-splitting solver.
//!
//! Iterates, for the affine set `𝒜 = {x : A x = b}` and the cone `𝒦`,
//!
//! ```text
//! x  = P_𝒜(z - u - c/ρ)
//! x̂  = α x + (1 - α) z
//! z  = Π_𝒦(x̂ + u)
//! u += x̂ - z
//! ```
//!
//! `P_𝒜(w) = w - Aᵀ (A Aᵀ)⁻¹ (A w - b)` uses a sparse Cholesky factor of `A Aᵀ`
//! computed once; changing `ρ` or `b` does not require refactoring. Duals are
//! `y = -ρ (A Aᵀ)⁻¹ (A w - b)` and `s = -ρ u`.

use std::io::Write;
use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use serde::{Deserialize, Serialize};

use super::SdpProblem;
use crate::error::{Error, Result};

/// Algorithm used for each face program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    /// First-order splitting; scales to large programs.
    #[default]
    Admm,
    /// Interior point; accurate, for small and medium programs.
    InteriorPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    #[serde(default)]
    pub method: SolverMethod,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
    /// The interior-point method caps this at [`INTERIOR_MAX_ITER`](super::INTERIOR_MAX_ITER).
    pub max_iter: usize,
    pub rho: f64,
    pub over_relaxation: f64,
    /// Rescale `ρ` every this many iterations; 0 disables.
    pub adapt_every: usize,
    /// Rescale only when the primal/dual residual ratio leaves `[1/r, r]`.
    pub adapt_ratio: f64,
    pub check_every: usize,
    /// Anderson acceleration memory; 0 runs plain iterations.
    #[serde(default)]
    pub anderson: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_limit: Option<f64>,
    /// Keep an `IterRecord` at every convergence check.
    #[serde(default)]
    pub record_log: bool,
    /// Restrict blocks to the smallest face containing the feasible set before an
    /// interior-point solve. The face is found numerically; a restricted program
    /// still yields a valid certificate but may be looser.
    #[serde(default)]
    pub facial_reduction: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            method: SolverMethod::Admm,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            tol_gap: 1e-6,
            max_iter: 50_000,
            rho: 1.0,
            over_relaxation: 1.6,
            adapt_every: 50,
            adapt_ratio: 10.0,
            check_every: 10,
            anderson: 10,
            time_limit: None,
            record_log: false,
            facial_reduction: false,
        }
    }
}

impl SolverParams {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_primal = tol;
        self.tol_dual = tol;
        self.tol_gap = tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleSuspect,
    TimeLimit,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleSuspect => "infeasible-suspect",
            SolveStatus::TimeLimit => "time_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    /// Cone-feasible iterate `z`.
    pub x: Vec<f64>,
    /// Equality duals in the unscaled row space.
    pub y: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub status: SolveStatus,
    /// `‖A z - b‖ / (1 + ‖b‖)` in row-normalized form.
    pub primal_residual: f64,
    /// `‖c - Aᵀy - s‖ / (1 + ‖c‖)`.
    pub dual_residual: f64,
    /// `|cᵀz - bᵀy| / (1 + |cᵀz| + |bᵀy|)`.
    pub gap: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub rho: f64,
    #[serde(skip)]
    pub log: Vec<IterRecord>,
}

impl SdpSolution {
    pub fn write_log_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,primal,dual,gap,rho")?;
        for r in &self.log {
            writeln!(out, "{},{:e},{:e},{:e},{}", r.iter, r.primal, r.dual, r.gap, r.rho)?;
        }
        Ok(())
    }

    pub fn free_values<'a>(&'a self, problem: &SdpProblem) -> &'a [f64] {
        &self.x[..problem.n_free]
    }

    pub fn block_values(&self, problem: &SdpProblem) -> Vec<nalgebra::DMatrix<f64>> {
        (0..problem.blocks.len())
            .map(|k| problem.block_matrix(&self.x, k))
            .collect()
    }
}

/// Cached projection onto `{x : A x = b}` with rows of `A` scaled to unit norm.
pub struct AffineProjector {
    a: super::SparseRows,
    row_scale: Vec<f64>,
    llt: Option<Llt<usize, f64>>,
    factor_nnz: usize,
}

impl std::fmt::Debug for AffineProjector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineProjector")
            .field("rows", &self.a.nrows())
            .field("cols", &self.a.ncols)
            .field("factor_nnz", &self.factor_nnz)
            .finish()
    }
}

impl AffineProjector {
    pub fn new(problem: &SdpProblem) -> Result<Self> {
        let mut a = problem.a.clone();
        let norms = a.row_norms();
        if let Some(r) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Factorization(format!(
                "equality row {r} is empty; A Aᵀ is singular"
            )));
        }
        let row_scale: Vec<f64> = norms.iter().map(|n| 1.0 / n).collect();
        a.scale_rows(&row_scale);
        let m = a.nrows();
        if m == 0 {
            return Ok(Self {
                a,
                row_scale,
                llt: None,
                factor_nnz: 0,
            });
        }
        let lower = a.gram_lower();
        let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
        for &(r, c, v) in &lower {
            if r == c {
                dmin = dmin.min(v);
                dmax = dmax.max(v);
            }
        }
        let triplets: Vec<Triplet<usize, usize, f64>> =
            lower.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let gram = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, &triplets)
            .map_err(|e| Error::Factorization(format!("building A Aᵀ: {e:?}")))?;
        let symbolic = SymbolicLlt::try_new(gram.symbolic(), Side::Lower)
            .map_err(|e| Error::Factorization(format!("symbolic analysis: {e:?}")))?;
        let llt = Llt::try_new_with_symbolic(symbolic, gram.as_ref(), Side::Lower).map_err(|e| {
            Error::Factorization(format!(
                "Cholesky of A Aᵀ failed ({e:?}); {m} rows, {} nonzeros, diagonal range [{dmin:e}, {dmax:e}]",
                lower.len()
            ))
        })?;
        Ok(Self {
            a,
            row_scale,
            llt: Some(llt),
            factor_nnz: lower.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Nonzeros in the lower triangle of `A Aᵀ`.
    pub fn gram_nnz(&self) -> usize {
        self.factor_nnz
    }

    fn scaled_rhs(&self, b: &[f64]) -> Vec<f64> {
        b.iter().zip(&self.row_scale).map(|(b, s)| b * s).collect()
    }

    fn solve_gram(&self, r: &mut [f64]) {
        if let Some(llt) = &self.llt {
            let n = r.len();
            let mat = faer::MatMut::from_column_major_slice_mut(r, n, 1);
            llt.solve_in_place(mat);
        }
    }

    /// Writes `P(w)` into `x` and returns `t = (A Aᵀ)⁻¹ (A w - b)`.
    fn project(&self, w: &[f64], b: &[f64], x: &mut [f64]) -> Vec<f64> {
        let mut t = self.a.mul_vec(w);
        for (ti, bi) in t.iter_mut().zip(b) {
            *ti -= bi;
        }
        self.solve_gram(&mut t);
        let corr = self.a.mul_t_vec(&t);
        for ((xi, wi), ci) in x.iter_mut().zip(w).zip(&corr) {
            *xi = wi - ci;
        }
        t
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves with a fresh projector.
pub fn solve(problem: &SdpProblem, params: &SolverParams) -> Result<SdpSolution> {
    let proj = AffineProjector::new(problem)?;
    solve_with(problem, &proj, params)
}

/// Solves using a projector built for a problem with the same `A` (the right-hand
/// side may differ).
pub fn solve_with(
    problem: &SdpProblem,
    proj: &AffineProjector,
    params: &SolverParams,
) -> Result<SdpSolution> {
    solve_rhs(problem, proj, &problem.b, params)
}

/// Type-II Anderson acceleration over the stacked state `(z, u)`.
struct Anderson {
    mem: usize,
    df: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
    /// Gram matrix of the stored `df` columns, row-major `mem × mem`.
    gram: Vec<f64>,
    next: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

impl Anderson {
    fn new(mem: usize) -> Self {
        Self {
            mem,
            df: Vec::new(),
            dg: Vec::new(),
            gram: vec![0.0; mem * mem],
            next: 0,
            prev: None,
        }
    }

    fn reset(&mut self) {
        self.df.clear();
        self.dg.clear();
        self.next = 0;
        self.prev = None;
    }

    /// Records `g = F(x)` with residual `f = g - x` and returns the extrapolated
    /// point, or `None` while there is no history.
    fn step(&mut self, g: &[f64], f: Vec<f64>) -> Option<Vec<f64>> {
        if let Some((pg, pf)) = self.prev.take() {
            let dfk: Vec<f64> = f.iter().zip(&pf).map(|(a, b)| a - b).collect();
            let dgk: Vec<f64> = g.iter().zip(&pg).map(|(a, b)| a - b).collect();
            let slot = if self.df.len() < self.mem {
                self.df.push(dfk);
                self.dg.push(dgk);
                self.df.len() - 1
            } else {
                let s = self.next;
                self.df[s] = dfk;
                self.dg[s] = dgk;
                s
            };
            self.next = (slot + 1) % self.mem;
            for k in 0..self.df.len() {
                let d = dot(&self.df[slot], &self.df[k]);
                self.gram[slot * self.mem + k] = d;
                self.gram[k * self.mem + slot] = d;
            }
        }
        self.prev = Some((g.to_vec(), f.clone()));
        let m = self.df.len();
        if m == 0 {
            return None;
        }
        let mut mat = nalgebra::DMatrix::from_fn(m, m, |i, j| self.gram[i * self.mem + j]);
        let trace: f64 = (0..m).map(|i| mat[(i, i)]).sum();
        for i in 0..m {
            mat[(i, i)] += 1e-10 * trace + f64::MIN_POSITIVE;
        }
        let rhs = nalgebra::DVector::from_fn(m, |i, _| dot(&self.df[i], &f));
        let gamma = mat.cholesky()?.solve(&rhs);
        if gamma.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut out = g.to_vec();
        for (k, &gk) in gamma.iter().enumerate() {
            for (o, d) in out.iter_mut().zip(&self.dg[k]) {
                *o -= gk * d;
            }
        }
        Some(out)
    }
}

/// As [`solve_with`] with `rhs` in place of `problem.b`.
pub fn solve_rhs(
    problem: &SdpProblem,
    proj: &AffineProjector,
    rhs: &[f64],
    params: &SolverParams,
) -> Result<SdpSolution> {
    let start = Instant::now();
    let time_limit = params.time_limit.map(Duration::from_secs_f64);
    let n = problem.n_vars();
    if proj.a.ncols != n || proj.rows() != problem.n_rows() || rhs.len() != proj.rows() {
        return Err(Error::Dimension {
            expected: n,
            got: proj.a.ncols,
        });
    }
    let alpha = params.over_relaxation;
    let mut b = proj.scaled_rhs(rhs);
    // The cone is invariant under positive scaling, so solve with a unit-size b
    // and rescale the primal afterwards.
    let b_scale = match b.iter().fold(0.0f64, |m, v| m.max(v.abs())) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    for bi in &mut b {
        *bi /= b_scale;
    }
    let c = &problem.c;
    let (b_norm, c_norm) = (norm(&b), norm(c));
    let mut rho = params.rho;
    // State (z, u) stacked; the plain iteration maps it to (z', u').
    let mut state = vec![0.0; 2 * n];
    let mut next = vec![0.0; 2 * n];
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut t = vec![0.0; proj.rows()];
    let mut anderson = (params.anderson > 0).then(|| Anderson::new(params.anderson));
    // Plain iterate and its residual norm, kept while an extrapolated point is on trial.
    let mut fallback: Option<(Vec<f64>, f64)> = None;
    let mut log = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let (mut pri, mut dua, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut stall_ref = (0usize, f64::INFINITY);
    let check_every = params.check_every.max(1);

    for k in 1..=params.max_iter {
        iterations = k;
        {
            let (z, u) = state.split_at(n);
            for i in 0..n {
                w[i] = z[i] - u[i] - c[i] / rho;
            }
            t = proj.project(&w, &b, &mut x);
            let (zn, un) = next.split_at_mut(n);
            for i in 0..n {
                let xh = alpha * x[i] + (1.0 - alpha) * z[i];
                zn[i] = xh + u[i];
                w[i] = xh;
            }
            problem.project_cone(zn);
            for i in 0..n {
                un[i] = u[i] + w[i] - zn[i];
            }
        }

        let adapt = params.adapt_every > 0 && k % params.adapt_every == 0;
        if k % check_every == 0 || adapt || k == params.max_iter {
            let (z, u) = next.split_at(n);
            let residual = {
                let mut r = proj.a.mul_vec(z);
                for (ri, bi) in r.iter_mut().zip(&b) {
                    *ri -= bi;
                }
                r
            };
            pri = norm(&residual) / (1.0 + b_norm);
            let y: Vec<f64> = t.iter().map(|ti| -rho * ti).collect();
            let aty = proj.a.mul_t_vec(&y);
            let dres: Vec<f64> = (0..n).map(|i| c[i] - aty[i] + rho * u[i]).collect();
            dua = norm(&dres) / (1.0 + c_norm);
            let (pobj, dobj) = (dot(c, z), dot(&b, &y));
            gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            if params.record_log {
                log.push(IterRecord {
                    iter: k,
                    primal: pri,
                    dual: dua,
                    gap,
                    rho,
                });
            }
            if pri <= params.tol_primal && dua <= params.tol_dual && gap <= params.tol_gap {
                status = SolveStatus::Optimal;
                break;
            }
            if time_limit.is_some_and(|lim| start.elapsed() > lim) {
                status = SolveStatus::TimeLimit;
                break;
            }
            // A primal residual that stays large over a long window signals an empty
            // feasible set.
            if k >= stall_ref.0 + 2000 {
                if pri > 1e-2 && pri > 0.99 * stall_ref.1 {
                    status = SolveStatus::InfeasibleSuspect;
                    break;
                }
                stall_ref = (k, pri);
            }
            if k == params.max_iter {
                break;
            }
            if adapt && dua > 0.0 && pri > 0.0 {
                let ratio = pri / dua;
                let factor = ratio.sqrt().clamp(0.5, 2.0);
                if ratio > params.adapt_ratio || ratio * params.adapt_ratio < 1.0 {
                    rho *= factor;
                    for ui in &mut next[n..] {
                        *ui /= factor;
                    }
                    if let Some(aa) = anderson.as_mut() {
                        aa.reset();
                    }
                    fallback = None;
                    std::mem::swap(&mut state, &mut next);
                    continue;
                }
            }
        }

        let Some(aa) = anderson.as_mut() else {
            std::mem::swap(&mut state, &mut next);
            continue;
        };
        let f: Vec<f64> = next.iter().zip(&state).map(|(g, x)| g - x).collect();
        let f_norm = norm(&f);
        if let Some((plain, ref_norm)) = fallback.take() {
            if f_norm > ref_norm {
                // Extrapolation made things worse: resume from the plain iterate.
                aa.reset();
                state = plain;
                continue;
            }
        }
        match aa.step(&next, f) {
            Some(cand) => {
                fallback = Some((next.clone(), f_norm));
                state = cand;
            }
            None => std::mem::swap(&mut state, &mut next),
        }
    }
    if status == SolveStatus::MaxIter && pri > 1e3 * params.tol_primal.max(1e-9) && pri > 1e-2 {
        status = SolveStatus::InfeasibleSuspect;
    }

    // `next` holds the last plain iterate, which is cone-feasible.
    let (z, _) = next.split_at(n);
    let mut z = z.to_vec();
    for zi in &mut z {
        *zi *= b_scale;
    }
    let y_scaled: Vec<f64> = t.iter().map(|ti| -rho * ti).collect();
    let y: Vec<f64> = y_scaled
        .iter()
        .zip(&proj.row_scale)
        .map(|(y, s)| y * s)
        .collect();
    Ok(SdpSolution {
        objective: dot(c, &z),
        dual_objective: dot(&b, &y_scaled) * b_scale,
        x: z,
        y,
        status,
        primal_residual: pri,
        dual_residual: dua,
        gap,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        rho,
        log,
    })
}
