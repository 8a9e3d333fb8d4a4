//! Block semidefinite programs in standard form
//!
//! ```text
//! minimize cᵀx  subject to  A x = b,  x ∈ ℝ^{n_free} × S₊^{n_1} × … × S₊^{n_k}
//! ```
//!
//! with each PSD block stored as its scaled half-vectorization (`svec`): the upper
//! triangle column by column, off-diagonal entries multiplied by `√2`, so that
//! `svec(X)ᵀ svec(Y) = ⟨X, Y⟩`. Blocks of size 1 are nonnegative scalars.

mod admm;
mod interior;
mod sdpa;

pub use admm::{
    solve, solve_rhs, solve_with, AffineProjector, IterRecord, SdpSolution, SolveStatus, SolverMethod, SolverParams,
};
pub use interior::{solve_interior, INTERIOR_MAX_ITER};
pub use sdpa::{export_sdpa, write_sdpa, SdpaBlockMap, SdpaLayout};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)`, `i ≤ j`, in the svec of a block.
pub fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let x = v[svec_index(i, j)];
            if i == j {
                m[(i, i)] = x;
            } else {
                m[(i, j)] = x / SQRT2;
                m[(j, i)] = x / SQRT2;
            }
        }
    }
    m
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = vec![0.0; svec_len(n)];
    for j in 0..n {
        for i in 0..=j {
            v[svec_index(i, j)] = if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * SQRT2
            };
        }
    }
    v
}

/// Nearest PSD matrix in the Frobenius norm: negative eigenvalues clipped to zero.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        let mut out = eig.recompose();
        out.fill_lower_triangle_with_upper_triangle();
        return out;
    }
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let q = eig.eigenvectors.column(k);
            out += l * q * q.transpose();
        }
    }
    out
}

/// Projects one svec block in place.
pub(crate) fn project_svec(v: &mut [f64], n: usize) {
    match n {
        0 => {}
        1 => v[0] = v[0].max(0.0),
        _ => project_svec_dense(v, n),
    }
}

fn project_svec_dense(v: &mut [f64], n: usize) {
    // Entries far below the block scale push the eigensolvers into underflow.
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        if x.abs() < 1e-100 * scale {
            *x = 0.0;
        }
    }
    let orig = v.to_vec();
    project_with(v, n, n < 48);
    if v.iter().any(|x| !x.is_finite()) {
        v.copy_from_slice(&orig);
        project_with(v, n, n >= 48);
    }
}

fn project_with(v: &mut [f64], n: usize, small: bool) {
    let entry = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let x = v[svec_index(i, j)];
        if i == j {
            x
        } else {
            x / SQRT2
        }
    };
    // Eigenvectors stored column-major.
    let (lambda, q): (Vec<f64>, Vec<f64>) = if small {
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, entry));
        (eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors.as_slice().to_vec())
    } else {
        let m = faer::Mat::<f64>::from_fn(n, n, entry);
        let Ok(eig) = m.self_adjoint_eigen(faer::Side::Lower) else {
            let p = project_psd(&smat(v, n));
            v.copy_from_slice(&svec(&p));
            return;
        };
        let u = eig.U();
        let s = eig.S().column_vector();
        (
            (0..n).map(|k| s[k]).collect(),
            (0..n).flat_map(|k| (0..n).map(move |i| u[(i, k)])).collect(),
        )
    };
    let neg: Vec<usize> = (0..n).filter(|&k| lambda[k] < 0.0).collect();
    if neg.is_empty() {
        return;
    }
    if neg.len() == n {
        v.fill(0.0);
        return;
    }
    // X₊ = Σ_{λ>0} λ qqᵀ = X - Σ_{λ<0} λ qqᵀ; sum over the smaller set.
    let use_neg = 2 * neg.len() <= n;
    let set: Vec<usize> = if use_neg {
        neg
    } else {
        (0..n).filter(|&k| lambda[k] > 0.0).collect()
    };
    if !use_neg {
        v.fill(0.0);
    }
    for &k in &set {
        let l = if use_neg { -lambda[k] } else { lambda[k] };
        let col = &q[k * n..(k + 1) * n];
        let mut idx = 0;
        for j in 0..n {
            let lj = l * col[j];
            for i in 0..j {
                v[idx] += SQRT2 * lj * col[i];
                idx += 1;
            }
            v[idx] += lj * col[j];
            idx += 1;
        }
    }
}

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRows {
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRows {
    /// From triplets; duplicates are summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if rows.last() == Some(&r) && col_idx.last() == Some(&c) {
                *values.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                col_idx.push(c);
                values.push(v);
            }
        }
        let keep: Vec<bool> = values.iter().map(|&v| v != 0.0).collect();
        let mut k = 0;
        let (mut ci, mut vs) = (Vec::with_capacity(col_idx.len()), Vec::with_capacity(values.len()));
        for ((r, c), v) in rows.iter().zip(col_idx).zip(values) {
            if keep[k] {
                row_ptr[r + 1] += 1;
                ci.push(c);
                vs.push(v);
            }
            k += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            ncols,
            row_ptr,
            col_idx: ci,
            values: vs,
        }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `Aᵀ y`.
    pub fn mul_t_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                for (c, v) in self.row(r) {
                    out[c] += v * yr;
                }
            }
        }
        out
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.nrows())
            .map(|r| self.row(r).map(|(_, v)| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn scale_rows(&mut self, s: &[f64]) {
        for (r, &sr) in s.iter().enumerate() {
            for v in &mut self.values[self.row_ptr[r]..self.row_ptr[r + 1]] {
                *v *= sr;
            }
        }
    }

    /// Column-compressed copy: per column, the `(row, value)` entries.
    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.ncols];
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                cols[c].push((r, v));
            }
        }
        cols
    }

    /// Lower triangle of `A Aᵀ` as `(row, col, value)` with `row ≥ col`.
    pub fn gram_lower(&self) -> Vec<(usize, usize, f64)> {
        let cols = self.columns();
        let m = self.nrows();
        let per_row = crate::parallel::map_range(m, |r| {
            let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
            for (c, v) in self.row(r) {
                for &(r2, v2) in &cols[c] {
                    if r2 > r {
                        break;
                    }
                    *acc.entry(r2).or_insert(0.0) += v * v2;
                }
            }
            acc.into_iter()
                .filter(|&(_, x)| x != 0.0)
                .map(|(c2, x)| (r, c2, x))
                .collect::<Vec<_>>()
        });
        per_row.into_iter().flatten().collect()
    }
}

/// Standard-form block SDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub n_free: usize,
    /// PSD block orders, in decision-vector order after the free scalars.
    pub blocks: Vec<usize>,
    pub a: SparseRows,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl SdpProblem {
    pub fn new(n_free: usize, blocks: Vec<usize>, a: SparseRows, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let n = n_free + blocks.iter().map(|&k| svec_len(k)).sum::<usize>();
        if a.ncols != n || c.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: if a.ncols != n { a.ncols } else { c.len() },
            });
        }
        if b.len() != a.nrows() {
            return Err(Error::Dimension {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        Ok(Self {
            n_free,
            blocks,
            a,
            b,
            c,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.a.ncols
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Start of each block's svec in the decision vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut off = self.n_free;
        self.blocks
            .iter()
            .map(|&k| {
                let o = off;
                off += svec_len(k);
                o
            })
            .collect()
    }

    pub fn max_block(&self) -> usize {
        self.blocks.iter().copied().max().unwrap_or(0)
    }

    /// `A x - b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.a.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Projects a full decision vector onto the cone.
    pub fn project_cone(&self, x: &mut [f64]) {
        let mut chunks: Vec<(&mut [f64], usize)> = Vec::with_capacity(self.blocks.len());
        let (_, mut rest) = x.split_at_mut(self.n_free);
        for &k in &self.blocks {
            let (head, tail) = rest.split_at_mut(svec_len(k));
            chunks.push((head, k));
            rest = tail;
        }
        crate::parallel::for_each_mut(&mut chunks, |(v, k)| project_svec(v, *k));
    }

    pub fn block_matrix(&self, x: &[f64], block: usize) -> DMatrix<f64> {
        let off = self.block_offsets()[block];
        let k = self.blocks[block];
        smat(&x[off..off + svec_len(k)], k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_symmetric(n: usize, rng: &mut CounterRng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gaussian());
        0.5 * (&m + m.transpose())
    }

    #[test]
    fn svec_round_trip_and_inner_product() {
        let mut rng = CounterRng::new(1);
        let a = random_symmetric(4, &mut rng);
        let b = random_symmetric(4, &mut rng);
        let (va, vb) = (svec(&a), svec(&b));
        assert!((smat(&va, 4) - &a).abs().max() < 1e-15);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        assert!((dot - a.component_mul(&b).sum()).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0]));
        let p = project_psd(&d);
        assert!((p - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]))).abs().max() < 1e-15);

        let mut rng = CounterRng::new(2);
        let g = DMatrix::from_fn(5, 5, |_, _| rng.gaussian());
        let psd = &g * g.transpose();
        assert!((project_psd(&psd) - &psd).abs().max() < 1e-12);
        let s = random_symmetric(5, &mut rng);
        let once = project_psd(&s);
        assert!((project_psd(&once) - &once).abs().max() < 1e-12);
    }

    #[test]
    fn projection_against_direct_eigenvalues() {
        // Distance to the cone equals the norm of the negative eigenvalues.
        let mut rng = CounterRng::new(3);
        for _ in 0..20 {
            let s = random_symmetric(5, &mut rng);
            let p = project_psd(&s);
            let eig = SymmetricEigen::new(p.clone());
            assert!(eig.eigenvalues.min() >= -1e-10);
            let neg: f64 = SymmetricEigen::new(s.clone())
                .eigenvalues
                .iter()
                .filter(|&&l| l < 0.0)
                .map(|l| l * l)
                .sum::<f64>()
                .sqrt();
            assert!(((&p - &s).norm() - neg).abs() < 1e-10);
            // No PSD matrix is closer.
            let g = DMatrix::from_fn(5, 5, |_, _| rng.gaussian());
            let x = &g * g.transpose();
            assert!((&p - &s).norm() <= (&x - &s).norm() + 1e-12);
        }
    }

    #[test]
    fn sparse_rows_ops() {
        let a = SparseRows::from_triplets(
            2,
            3,
            vec![(0, 0, 1.0), (1, 2, 2.0), (0, 2, 3.0), (0, 0, 1.0), (1, 1, 0.0)],
        );
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![5.0, 2.0]);
        assert_eq!(a.mul_t_vec(&[1.0, 1.0]), vec![2.0, 0.0, 5.0]);
        let mut g = a.gram_lower();
        g.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        assert_eq!(g, vec![(0, 0, 13.0), (1, 0, 6.0), (1, 1, 4.0)]);
    }

    #[test]
    fn svec_projection_matches_dense() {
        let mut rng = CounterRng::new(7);
        for n in [2, 5, 12, 31] {
            for shift in [-1.5, 0.0, 1.5] {
                let m = random_symmetric(n, &mut rng) + DMatrix::identity(n, n) * shift;
                let mut v = svec(&m);
                project_svec(&mut v, n);
                let expect = svec(&project_psd(&m));
                let err = v.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-10, "n={n} shift={shift} err={err}");
            }
        }
    }

    #[test]
    fn projection_survives_tiny_entries() {
        let n = 15;
        let mut v = vec![0.0; svec_len(n)];
        v[0] = -0.66;
        for (k, x) in v.iter_mut().enumerate().skip(1) {
            *x = 1e-150 * (k as f64).sin().powi(3) * 10f64.powi(-(k as i32 % 30));
        }
        project_svec(&mut v, n);
        assert!(v.iter().all(|x| x.is_finite() && x.abs() < 1e-100));
    }

    #[test]
    fn cone_projection_of_vector() {
        let a = SparseRows::from_triplets(1, 5, vec![(0, 1, 1.0)]);
        let p = SdpProblem::new(1, vec![1, 2], a, vec![1.0], vec![0.0; 5]).unwrap();
        let mut x = vec![-3.0, -1.0, 1.0, 0.0, -1.0];
        p.project_cone(&mut x);
        assert_eq!(&x[..2], &[-3.0, 0.0]);
        assert_eq!(&x[2..], &[1.0, 0.0, 0.0]);
    }
}
