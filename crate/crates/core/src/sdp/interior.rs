//! Interior-point backend.
//!
//! Hands the program to Clarabel's homogeneous-embedding interior-point method.
//! The svec layout of a block matches Clarabel's scaled upper-triangle cone, so
//! the decision vector is passed through unchanged:
//!
//! ```text
//! A x + s = b,  s ∈ {0}^m        (equalities)
//!  -x + s = 0,  s ∈ ℝ₊ or S₊^n   (one cone per block)
//! ```
//!
//! Gram programs from SOS certificates often have no strictly feasible point,
//! which stalls interior-point methods well short of the requested accuracy.
//! Before solving, facial reduction looks for `y` with `bᵀy = 0`, `A_fᵀy = 0`
//! and `S = A_Kᵀy ⪰ 0, S ≠ 0`. Every feasible `X` then satisfies `⟨S, X⟩ = 0`, so
//! each block is restricted to `ker S_k` through `X_k = U_k W_k U_kᵀ` and the
//! search repeats on the smaller program.
//!
//! Memory and time grow quickly with the block sizes, so this is meant for small
//! and medium programs where first-order accuracy is not enough.

#![cfg_attr(not(feature = "interior-point"), allow(dead_code, unused_imports))]

use std::time::Instant;

use nalgebra::DMatrix;

use super::admm::{SdpSolution, SolveStatus, SolverParams};
use super::{smat, svec, svec_len, SdpProblem, SparseRows};
use crate::error::{Error, Result};

/// Upper bound on interior-point iterations, whatever `max_iter` says.
pub const INTERIOR_MAX_ITER: usize = 500;

/// Facial reduction rounds before the main solve.
const REDUCTION_ROUNDS: usize = 8;

/// Eigenvalues of a reducing certificate above this fraction of its largest
/// eigenvalue are treated as exposed directions. Small values misread
/// near-degenerate directions as forced zeros.
const REDUCTION_TOL: f64 = 1e-1;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per original block, an orthonormal basis `U_k` of the face the block is
/// confined to (zero columns when the block vanishes).
#[derive(Debug, Clone)]
struct Reduction {
    bases: Vec<DMatrix<f64>>,
}

impl Reduction {
    fn identity(problem: &SdpProblem) -> Self {
        Self {
            bases: problem.blocks.iter().map(|&n| DMatrix::identity(n, n)).collect(),
        }
    }

    fn active(&self) -> Vec<usize> {
        (0..self.bases.len()).filter(|&k| self.bases[k].ncols() > 0).collect()
    }

    /// Maps a reduced decision vector into the original layout.
    fn expand(&self, original: &SdpProblem, reduced: &SdpProblem, xr: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; original.n_vars()];
        x[..original.n_free].copy_from_slice(&xr[..original.n_free]);
        let offsets = original.block_offsets();
        let red_offsets = reduced.block_offsets();
        for (j, &k) in self.active().iter().enumerate() {
            let u = &self.bases[k];
            let r = u.ncols();
            let w = smat(&xr[red_offsets[j]..red_offsets[j] + svec_len(r)], r);
            let full = u * w * u.transpose();
            x[offsets[k]..offsets[k] + svec_len(original.blocks[k])].copy_from_slice(&svec(&full));
        }
        x
    }
}

/// Dense symmetric coefficient matrix of the svec entries `ent` of one block.
fn coefficient_matrix(n: usize, offset: usize, ent: &[(usize, f64)]) -> DMatrix<f64> {
    let mut v = vec![0.0; svec_len(n)];
    for &(col, a) in ent {
        v[col - offset] += a;
    }
    // smat divides off-diagonals by √2, which turns svec coefficients into the
    // matrix whose inner product with X reproduces them.
    smat(&v, n)
}

/// Restricts each active block to its basis: coefficient matrices `A` become `UᵀAU`.
fn compress(original: &SdpProblem, red: &Reduction) -> Result<SdpProblem> {
    let active = red.active();
    let offsets = original.block_offsets();
    let nf = original.n_free;
    let block_of = |col: usize| offsets.partition_point(|&o| o <= col) - 1;
    let mut new_offsets = Vec::with_capacity(active.len());
    let mut slot = vec![None; original.blocks.len()];
    let mut off = nf;
    for (j, &k) in active.iter().enumerate() {
        slot[k] = Some(j);
        new_offsets.push(off);
        off += svec_len(red.bases[k].ncols());
    }
    let n_new = off;

    let transform = |entries: Vec<(usize, f64)>, out: &mut Vec<(usize, f64)>| {
        let mut per_block: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for (col, v) in entries {
            if col < nf {
                out.push((col, v));
                continue;
            }
            let k = block_of(col);
            match per_block.iter_mut().find(|(b, _)| *b == k) {
                Some((_, e)) => e.push((col, v)),
                None => per_block.push((k, vec![(col, v)])),
            }
        }
        for (k, ent) in per_block {
            let Some(j) = slot[k] else { continue };
            let u = &red.bases[k];
            let a = coefficient_matrix(original.blocks[k], offsets[k], &ent);
            let b = u.transpose() * a * u;
            let scale = b.amax();
            for (i, v) in svec(&b).into_iter().enumerate() {
                if v.abs() > 1e-15 * scale {
                    out.push((new_offsets[j] + i, v));
                }
            }
        }
    };

    let mut triplets = Vec::new();
    for r in 0..original.n_rows() {
        let mut out = Vec::new();
        transform(original.a.row(r).collect(), &mut out);
        triplets.extend(out.into_iter().map(|(c, v)| (r, c, v)));
    }
    let mut c_entries = Vec::new();
    transform(
        original.c.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect(),
        &mut c_entries,
    );
    let mut c = vec![0.0; n_new];
    for (col, v) in c_entries {
        c[col] += v;
    }
    let a = SparseRows::from_triplets(original.n_rows(), n_new, triplets);
    let blocks = active.iter().map(|&k| red.bases[k].ncols()).collect();
    SdpProblem::new(nf, blocks, a, original.b.clone(), c)
}

#[cfg(feature = "interior-point")]
mod backend {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus, SupportedConeT,
        ZeroConeT,
    };

    use super::*;

    pub(super) struct Raw {
        pub status: SolverStatus,
        pub x: Vec<f64>,
        pub z: Vec<f64>,
        pub iterations: usize,
    }

    fn cones(blocks: &[usize], zeros: usize) -> Vec<SupportedConeT<f64>> {
        let mut cones: Vec<SupportedConeT<f64>> = vec![ZeroConeT(zeros)];
        let mut scalars = 0;
        for &k in blocks {
            if k == 1 {
                scalars += 1;
                continue;
            }
            if scalars > 0 {
                cones.push(NonnegativeConeT(scalars));
                scalars = 0;
            }
            cones.push(PSDTriangleConeT(k));
        }
        if scalars > 0 {
            cones.push(NonnegativeConeT(scalars));
        }
        cones
    }

    fn csc(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
        triplets.sort_by_key(|&(r, c, _)| (c, r));
        let mut colptr = vec![0; ncols + 1];
        let mut rowval = Vec::with_capacity(triplets.len());
        let mut nzval = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            colptr[c + 1] += 1;
            rowval.push(r);
            nzval.push(v);
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
    }

    pub(super) fn settings(params: &SolverParams) -> DefaultSettings<f64> {
        DefaultSettings {
            verbose: false,
            max_iter: params.max_iter.min(INTERIOR_MAX_ITER) as u32,
            time_limit: params.time_limit.unwrap_or(f64::INFINITY),
            tol_gap_abs: params.tol_gap,
            tol_gap_rel: params.tol_gap,
            tol_feas: params.tol_primal.min(params.tol_dual),
            ..DefaultSettings::default()
        }
    }

    fn run(
        q: &[f64],
        triplets: Vec<(usize, usize, f64)>,
        b: Vec<f64>,
        cones: &[SupportedConeT<f64>],
        settings: DefaultSettings<f64>,
    ) -> Result<Raw> {
        let n = q.len();
        let a = csc(b.len(), n, triplets);
        let p = CscMatrix::zeros((n, n));
        let mut solver = DefaultSolver::new(&p, q, &a, &b, cones, settings)
            .map_err(|e| Error::Config(format!("interior-point setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        Ok(Raw {
            status: sol.status,
            x: sol.x.clone(),
            z: sol.z.clone(),
            iterations: sol.iterations as usize,
        })
    }

    /// `min cᵀx` over `A x = rhs`, `x ∈ ℝ^{n_free} × 𝒦`.
    pub(super) fn solve_program(problem: &SdpProblem, rhs: &[f64], settings: DefaultSettings<f64>) -> Result<Raw> {
        let (m, n, nf) = (problem.n_rows(), problem.n_vars(), problem.n_free);
        let mut triplets = Vec::with_capacity(problem.a.nnz() + n - nf);
        for r in 0..m {
            triplets.extend(problem.a.row(r).map(|(c, v)| (r, c, v)));
        }
        triplets.extend((nf..n).map(|j| (m + j - nf, j, -1.0)));
        let mut b = rhs.to_vec();
        b.resize(m + n - nf, 0.0);
        run(&problem.c, triplets, b, &cones(&problem.blocks, m), settings)
    }

    /// Searches for a reducing certificate; returns `A_Kᵀy` in the decision layout.
    pub(super) fn reducing_certificate(problem: &SdpProblem, rhs: &[f64]) -> Result<Option<Vec<f64>>> {
        let (m, n, nf) = (problem.n_rows(), problem.n_vars(), problem.n_free);
        let offsets = problem.block_offsets();
        let diagonal: Vec<usize> = problem
            .blocks
            .iter()
            .zip(&offsets)
            .flat_map(|(&k, &o)| (0..k).map(move |i| o + super::super::svec_index(i, i)))
            .collect();
        let mut is_diag = vec![false; n];
        for &d in &diagonal {
            is_diag[d] = true;
        }
        // Rows: bᵀy = 0, A_fᵀy = 0, Σ tr S_k = 1, then -A_Kᵀy + s = 0 with s ∈ 𝒦.
        let zeros = 2 + nf;
        let mut triplets = Vec::new();
        for r in 0..m {
            if rhs[r] != 0.0 {
                triplets.push((0, r, rhs[r]));
            }
            let mut trace = 0.0;
            for (c, v) in problem.a.row(r) {
                if c < nf {
                    triplets.push((1 + c, r, v));
                } else {
                    triplets.push((zeros + c - nf, r, -v));
                    if is_diag[c] {
                        trace += v;
                    }
                }
            }
            if trace != 0.0 {
                triplets.push((1 + nf, r, trace));
            }
        }
        let mut b = vec![0.0; zeros + n - nf];
        b[1 + nf] = 1.0;
        let settings = DefaultSettings {
            verbose: false,
            ..DefaultSettings::default()
        };
        let raw = run(&vec![0.0; m], triplets, b, &cones(&problem.blocks, zeros), settings)?;
        if !matches!(raw.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            return Ok(None);
        }
        Ok(Some(problem.a.mul_t_vec(&raw.x)))
    }

    pub(super) fn status(s: SolverStatus) -> SolveStatus {
        match s {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible
            | SolverStatus::DualInfeasible
            | SolverStatus::AlmostPrimalInfeasible
            | SolverStatus::AlmostDualInfeasible => SolveStatus::InfeasibleSuspect,
            SolverStatus::MaxTime => SolveStatus::TimeLimit,
            _ => SolveStatus::MaxIter,
        }
    }
}

/// Runs facial reduction; `None` when the program already has an interior point.
#[cfg(feature = "interior-point")]
fn reduce(problem: &SdpProblem, rhs: &[f64]) -> Result<Option<(SdpProblem, Reduction)>> {
    let mut red = Reduction::identity(problem);
    let mut current: Option<SdpProblem> = None;
    for _ in 0..REDUCTION_ROUNDS {
        let p = current.as_ref().unwrap_or(problem);
        if p.blocks.is_empty() {
            break;
        }
        let Some(s) = backend::reducing_certificate(p, rhs)? else { break };
        let offsets = p.block_offsets();
        let eig: Vec<_> = (0..p.blocks.len())
            .map(|j| {
                let n = p.blocks[j];
                smat(&s[offsets[j]..offsets[j] + svec_len(n)], n).symmetric_eigen()
            })
            .collect();
        let top = eig.iter().flat_map(|e| e.eigenvalues.iter().copied()).fold(0.0f64, f64::max);
        if !(top > 0.0) {
            break;
        }
        let mut changed = false;
        for (j, &k) in red.active().iter().enumerate() {
            let keep: Vec<usize> = (0..p.blocks[j])
                .filter(|&i| eig[j].eigenvalues[i] <= REDUCTION_TOL * top)
                .collect();
            if keep.len() == p.blocks[j] {
                continue;
            }
            changed = true;
            let v = DMatrix::from_fn(p.blocks[j], keep.len(), |r, c| eig[j].eigenvectors[(r, keep[c])]);
            red.bases[k] = &red.bases[k] * v;
        }
        if !changed {
            break;
        }
        current = Some(compress(problem, &red)?);
    }
    Ok(current.map(|p| (p, red)))
}

/// Solves `problem` with `rhs` in place of `problem.b`.
///
/// The dual residual refers to the program after facial reduction.
#[cfg(feature = "interior-point")]
pub fn solve_interior(problem: &SdpProblem, rhs: &[f64], params: &SolverParams) -> Result<SdpSolution> {
    let start = Instant::now();
    let m = problem.n_rows();
    if rhs.len() != m {
        return Err(Error::Dimension { expected: m, got: rhs.len() });
    }
    let reduced = if params.facial_reduction { reduce(problem, rhs)? } else { None };
    let target = reduced.as_ref().map(|(p, _)| p).unwrap_or(problem);
    let raw = backend::solve_program(target, rhs, backend::settings(params))?;

    let x = match &reduced {
        Some((p, red)) => red.expand(problem, p, &raw.x),
        None => raw.x.clone(),
    };
    let y: Vec<f64> = raw.z[..m].iter().map(|v| -v).collect();
    let objective = problem.objective(&x);
    let dual_objective: f64 = rhs.iter().zip(&y).map(|(b, y)| b * y).sum();

    let mut r = problem.a.mul_vec(&x);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri -= bi;
    }
    let primal_residual = norm(&r) / (1.0 + norm(rhs));
    let aty = target.a.mul_t_vec(&y);
    let nf = target.n_free;
    let d: Vec<f64> = (0..target.n_vars())
        .map(|j| {
            let s = if j < nf { 0.0 } else { raw.z[m + j - nf] };
            target.c[j] - aty[j] - s
        })
        .collect();
    let dual_residual = norm(&d) / (1.0 + norm(&target.c));
    let gap = (objective - dual_objective).abs() / (1.0 + objective.abs() + dual_objective.abs());

    Ok(SdpSolution {
        x,
        y,
        objective,
        dual_objective,
        status: backend::status(raw.status),
        primal_residual,
        dual_residual,
        gap,
        iterations: raw.iterations,
        wall_time: start.elapsed().as_secs_f64(),
        rho: 0.0,
        log: Vec::new(),
    })
}

#[cfg(not(feature = "interior-point"))]
pub fn solve_interior(_problem: &SdpProblem, _rhs: &[f64], _params: &SolverParams) -> Result<SdpSolution> {
    let _ = (Instant::now(), norm(&[]), compress, Reduction::identity);
    Err(Error::Config("built without the interior-point feature".into()))
}

#[cfg(all(test, feature = "interior-point"))]
mod tests {
    use super::*;
    use crate::sdp::{svec_index, SQRT2};

    fn params() -> SolverParams {
        SolverParams::default().with_tol(1e-9)
    }

    #[test]
    fn min_eigenvalue_matches_svec_layout() {
        // min ⟨C, X⟩ s.t. tr X = 1 is λ_min(C); distinct off-diagonals pin the ordering.
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.7, 0.3, 1.0, 0.1, -0.7, 0.1, 3.0]);
        let a = SparseRows::from_triplets(1, 6, vec![(0, 0, 1.0), (0, 2, 1.0), (0, 5, 1.0)]);
        let p = SdpProblem::new(0, vec![3], a, vec![1.0], svec(&c)).unwrap();
        let sol = solve_interior(&p, &p.b, &params()).unwrap();
        let lam = c.symmetric_eigenvalues().min();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - lam).abs() < 1e-7, "{} vs {lam}", sol.objective);
        assert!((sol.dual_objective - lam).abs() < 1e-7);
        assert!(sol.dual_residual < 1e-7);
    }

    #[test]
    fn free_variables_and_scalars() {
        // min t s.t. t - s = 3, s ≥ 0.
        let a = SparseRows::from_triplets(1, 2, vec![(0, 0, 1.0), (0, 1, -1.0)]);
        let p = SdpProblem::new(1, vec![1], a, vec![3.0], vec![1.0, 0.0]).unwrap();
        let sol = solve_interior(&p, &p.b, &params()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-7);
        assert!((sol.y[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn off_diagonal_constraint() {
        // min X₀₀ + X₁₁ s.t. X₀₁ = 1 gives 2 at X = [[1, 1], [1, 1]].
        let a = SparseRows::from_triplets(1, 3, vec![(0, 1, 1.0 / SQRT2)]);
        let p = SdpProblem::new(0, vec![2], a, vec![1.0], vec![1.0, 0.0, 1.0]).unwrap();
        let sol = solve_interior(&p, &p.b, &params()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_program_is_flagged() {
        let a = SparseRows::from_triplets(1, 1, vec![(0, 0, 1.0)]);
        let p = SdpProblem::new(0, vec![1], a, vec![-1.0], vec![0.0]).unwrap();
        let sol = solve_interior(&p, &p.b, &params()).unwrap();
        assert_eq!(sol.status, SolveStatus::InfeasibleSuspect);
    }

    /// min t s.t. t - X₀₀ = 1, X₁₁ = 0 (so X₀₁ = 0 too), X ∈ S₊³.
    fn face_program() -> SdpProblem {
        let a = SparseRows::from_triplets(
            2,
            7,
            vec![(0, 0, 1.0), (0, 1 + svec_index(0, 0), -1.0), (1, 1 + svec_index(1, 1), 1.0)],
        );
        let mut c = vec![0.0; 7];
        c[0] = 1.0;
        c[1 + svec_index(2, 2)] = 1.0;
        SdpProblem::new(1, vec![3], a, vec![1.0, 0.0], c).unwrap()
    }

    #[test]
    fn facial_reduction_exposes_forced_zero() {
        let p = face_program();
        let (reduced, red) = reduce(&p, &p.b).unwrap().expect("X₁₁ = 0 leaves no interior");
        assert_eq!(reduced.blocks, vec![2]);
        let u = &red.bases[0];
        assert!(u.row(1).amax() < 1e-6, "basis must avoid e₁: {u}");
        let reduced_params = SolverParams { facial_reduction: true, ..params() };
        let sol = solve_interior(&p, &p.b, &reduced_params).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-8);
        assert!(norm(&p.residual(&sol.x)) < 1e-8);
    }

    #[test]
    fn compress_preserves_inner_products() {
        let p = face_program();
        let mut red = Reduction::identity(&p);
        let q = DMatrix::from_row_slice(3, 2, &[0.6, 0.0, 0.0, 0.6, 0.8, 0.0]);
        red.bases[0] = q.clone();
        let reduced = compress(&p, &red).unwrap();
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut xr = vec![0.7];
        xr.extend(svec(&w));
        let x = red.expand(&p, &reduced, &xr);
        let full = smat(&x[1..], 3);
        assert!((full - &q * w * q.transpose()).amax() < 1e-14);
        let (ar, af) = (reduced.a.mul_vec(&xr), p.a.mul_vec(&x));
        for (u, v) in ar.iter().zip(&af) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((reduced.objective(&xr) - p.objective(&x)).abs() < 1e-12);
    }
}
