//! Assembly of the sparse certificate
//!
//! ```text
//! γ - f = Σ_j t_j h_j + Σ_i s_i g_i + Σ_k σ_k
//! ```
//!
//! as a block SDP. Each `s_i` and `σ_k` is a Gram form on a clique basis, each
//! `t_j` a free polynomial, one equality row per monomial of the combined support.
//! Variables are first mapped to `x = center + radius · x̃` with the interval boxes,
//! so every reachable `x̃` lies in `[-1, 1]ⁿ`; constraints are then rescaled to
//! unit max-abs coefficient.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintKind, ConstraintSet};
use crate::error::{Error, Result};
use crate::model::NetworkModel;
use crate::poly::{ExponentSet, Monomial, Polynomial};
use crate::prop::LayerBounds;
use crate::sdp::{svec_index, svec_len, SdpProblem, SdpSolution, SdpaLayout, SparseRows, SQRT2};
use crate::sparsity::{Clique, MultiplierPlan};

/// `cᵀ (W^ℓ x^ℓ + b^ℓ)` over the last layer's variables.
pub fn output_objective(model: &NetworkModel, c: &[f64]) -> Result<Polynomial> {
    if c.len() != model.n_outputs() {
        return Err(Error::Dimension {
            expected: model.n_outputs(),
            got: c.len(),
        });
    }
    let out = model.output_layer();
    let last: Vec<usize> = model.layer_vars(model.hidden_layers()).collect();
    let mut coeffs = vec![0.0; last.len()];
    let mut constant = 0.0;
    for (k, &ck) in c.iter().enumerate() {
        for (j, coef) in coeffs.iter_mut().enumerate() {
            *coef += ck * out.weights[(k, j)];
        }
        constant += ck * out.bias[k];
    }
    Ok(Polynomial::affine(&last, &coeffs, constant))
}

/// Affine change of variables `x = center + radius · x̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarScaling {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl VarScaling {
    pub fn identity(n: usize) -> Self {
        Self {
            center: vec![0.0; n],
            radius: vec![1.0; n],
        }
    }

    /// Maps every variable's interval onto `[-1, 1]`, slightly enlarged so that
    /// rounding in the bounds cannot push a reachable point outside.
    pub fn from_bounds(bounds: &LayerBounds) -> Self {
        let (center, radius) = bounds
            .flat_var_bounds()
            .into_iter()
            .map(|(lo, hi)| {
                let c = 0.5 * (lo + hi);
                let r = 0.5 * (hi - lo);
                let r = if r > 0.0 && r.is_finite() {
                    r * (1.0 + 1e-9) + 1e-12 * (1.0 + c.abs())
                } else {
                    1.0
                };
                (c, r)
            })
            .unzip();
        Self { center, radius }
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    pub fn apply(&self, p: &Polynomial) -> Polynomial {
        p.substitute_affine(&self.center, &self.radius)
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| (xi - self.center[i]) / self.radius[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlockKind {
    Multiplier { constraint: usize },
    Residual { clique: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfo {
    pub kind: BlockKind,
    pub label: String,
    pub basis: ExponentSet,
    /// Offset of the block's svec in the decision vector.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityInfo {
    pub constraint: usize,
    pub support: ExponentSet,
    pub offset: usize,
}

/// Where each multiplier lives in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateLayout {
    pub blocks: Vec<BlockInfo>,
    pub equalities: Vec<EqualityInfo>,
    /// Monomial of each equality row.
    pub rows: Vec<Monomial>,
}

/// An assembled certificate problem for one objective. The matrix does not depend
/// on the objective, so one program serves every face via [`SosProgram::rhs_for`].
#[derive(Debug, Clone)]
pub struct SosProgram {
    pub problem: SdpProblem,
    pub layout: CertificateLayout,
    pub scaling: VarScaling,
    /// Constraints in scaled variables with unit max-abs coefficient; `None` when
    /// the constraint vanished identically.
    pub constraints: Vec<Option<(Polynomial, ConstraintKind)>>,
    /// Objective in scaled variables.
    pub objective: Polynomial,
    row_index: BTreeMap<Monomial, usize>,
}

struct Column {
    entries: Vec<(Monomial, f64)>,
}

fn gram_columns(basis: &ExponentSet, g: &Polynomial) -> Vec<Column> {
    let b = basis.as_slice();
    let n = b.len();
    let mut cols: Vec<Column> = (0..svec_len(n)).map(|_| Column { entries: Vec::new() }).collect();
    for q in 0..n {
        for p in 0..=q {
            let w = if p == q { 1.0 } else { SQRT2 };
            let m = b[p].mul(&b[q]);
            let col = &mut cols[svec_index(p, q)];
            for (d, gd) in g.terms() {
                col.entries.push((m.mul(d), -w * gd));
            }
        }
    }
    cols
}

fn free_columns(support: &ExponentSet, h: &Polynomial) -> Vec<Column> {
    support
        .iter()
        .map(|beta| Column {
            entries: h.terms().map(|(d, hd)| (beta.mul(d), -hd)).collect(),
        })
        .collect()
}

/// Builds the certificate SDP for objective `cᵀy`.
pub fn assemble(
    model: &NetworkModel,
    bounds: &LayerBounds,
    constraints: &ConstraintSet,
    cliques: &[Clique],
    plan: &MultiplierPlan,
    c: &[f64],
) -> Result<SosProgram> {
    let objective = output_objective(model, c)?;
    assemble_with_scaling(
        constraints,
        cliques,
        plan,
        &objective,
        VarScaling::from_bounds(bounds),
    )
}

pub fn assemble_with_scaling(
    constraints: &ConstraintSet,
    cliques: &[Clique],
    plan: &MultiplierPlan,
    objective: &Polynomial,
    scaling: VarScaling,
) -> Result<SosProgram> {
    if plan.constraints.len() != constraints.len() {
        return Err(Error::Assembly(format!(
            "multiplier plan covers {} of {} constraints",
            plan.constraints.len(),
            constraints.len()
        )));
    }
    if plan.residual.len() != cliques.len() {
        return Err(Error::Assembly("residual bases do not match cliques".into()));
    }
    let scaled: Vec<Option<(Polynomial, ConstraintKind)>> = crate::parallel::map(&constraints.constraints, |c| {
        let p = scaling.apply(&c.poly);
        let s = p.max_abs_coeff();
        (s > 0.0).then(|| (p.scale(1.0 / s), c.kind))
    });

    // Free scalars: γ, then the equality multipliers.
    let mut equalities = Vec::new();
    let mut n_free = 1;
    for (idx, (sc, cp)) in scaled.iter().zip(&plan.constraints).enumerate() {
        if let Some((_, ConstraintKind::Equality)) = sc {
            let support = cp.basis.pairwise_sums();
            equalities.push(EqualityInfo {
                constraint: idx,
                support: support.clone(),
                offset: n_free,
            });
            n_free += support.len();
        }
    }
    let mut blocks = Vec::new();
    let mut offset = n_free;
    for (idx, (sc, cp)) in scaled.iter().zip(&plan.constraints).enumerate() {
        if let Some((_, ConstraintKind::Inequality)) = sc {
            let c = &constraints.constraints[idx];
            blocks.push(BlockInfo {
                kind: BlockKind::Multiplier { constraint: idx },
                label: format!("s[{idx}] {} ({},{}) clique {}", c.label, c.layer, c.node, cp.clique),
                basis: cp.basis.clone(),
                offset,
            });
            offset += svec_len(cp.basis.len());
        }
    }
    for (k, basis) in plan.residual.iter().enumerate() {
        blocks.push(BlockInfo {
            kind: BlockKind::Residual { clique: cliques[k].id },
            label: format!("sigma[{}]", cliques[k].id),
            basis: basis.clone(),
            offset,
        });
        offset += svec_len(basis.len());
    }
    let n_vars = offset;

    let eq_cols: Vec<Vec<Column>> = crate::parallel::map(&equalities, |e| {
        let (h, _) = scaled[e.constraint].as_ref().expect("equality present");
        free_columns(&e.support, h)
    });
    let one = Polynomial::constant(1.0);
    let block_cols: Vec<Vec<Column>> = crate::parallel::map(&blocks, |b| match b.kind {
        BlockKind::Multiplier { constraint } => {
            let (g, _) = scaled[constraint].as_ref().expect("inequality present");
            gram_columns(&b.basis, g)
        }
        BlockKind::Residual { .. } => gram_columns(&b.basis, &one),
    });

    let mut row_index: BTreeMap<Monomial, usize> = BTreeMap::new();
    row_index.insert(Monomial::one(), 0);
    let all_cols = eq_cols
        .iter()
        .zip(&equalities)
        .map(|(cols, e)| (cols, e.offset))
        .chain(block_cols.iter().zip(&blocks).map(|(cols, b)| (cols, b.offset)));
    for (cols, _) in all_cols.clone() {
        for col in cols {
            for (m, _) in &col.entries {
                if !row_index.contains_key(m) {
                    row_index.insert(m.clone(), 0);
                }
            }
        }
    }
    let objective_scaled = scaling.apply(objective);
    for (m, _) in objective_scaled.terms() {
        if !row_index.contains_key(m) {
            return Err(Error::Assembly(format!(
                "objective monomial {m} lies outside every clique basis"
            )));
        }
    }
    for (k, v) in row_index.values_mut().enumerate() {
        *v = k;
    }
    let rows: Vec<Monomial> = row_index.keys().cloned().collect();

    let mut triplets = vec![(0usize, 0usize, 1.0)];
    for (cols, off) in all_cols {
        for (k, col) in cols.iter().enumerate() {
            for (m, v) in &col.entries {
                triplets.push((row_index[m], off + k, *v));
            }
        }
    }
    let a = SparseRows::from_triplets(rows.len(), n_vars, triplets);
    let mut cvec = vec![0.0; n_vars];
    cvec[0] = 1.0;
    let mut program = SosProgram {
        problem: SdpProblem::new(
            n_free,
            blocks.iter().map(|b| b.basis.len()).collect(),
            a,
            vec![0.0; rows.len()],
            cvec,
        )?,
        layout: CertificateLayout {
            blocks,
            equalities,
            rows,
        },
        scaling,
        constraints: scaled,
        objective: objective_scaled,
        row_index,
    };
    program.problem.b = program.rhs_scaled(&program.objective)?;
    Ok(program)
}

impl SosProgram {
    fn rhs_scaled(&self, objective_scaled: &Polynomial) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.layout.rows.len()];
        for (m, v) in objective_scaled.terms() {
            let r = self.row_index.get(m).ok_or_else(|| {
                Error::Assembly(format!("objective monomial {m} lies outside every clique basis"))
            })?;
            b[*r] = v;
        }
        Ok(b)
    }

    /// Right-hand side for another objective in the original variables.
    pub fn rhs_for(&self, objective: &Polynomial) -> Result<Vec<f64>> {
        self.rhs_scaled(&self.scaling.apply(objective))
    }

    /// The same program with a different objective.
    pub fn with_objective(&self, objective: &Polynomial) -> Result<SosProgram> {
        let mut p = self.clone();
        p.objective = self.scaling.apply(objective);
        p.problem.b = p.rhs_scaled(&p.objective)?;
        Ok(p)
    }

    pub fn gamma(&self, solution: &SdpSolution) -> f64 {
        solution.x[0]
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.problem.blocks.clone()
    }

    /// Upper bound on `cᵀy` over the reachable set implied by the decision vector
    /// `x`, whatever its accuracy: `γ` plus a bound on the equality residual
    /// polynomial over `[-1, 1]ⁿ` plus the effect of any negative eigenvalue left in
    /// a Gram block after rounding.
    pub fn certified_bound(&self, x: &[f64]) -> CertifiedBound {
        self.certified_bound_rhs(x, &self.problem.b)
    }

    /// As [`SosProgram::certified_bound`] for the objective with right-hand side `rhs`.
    pub fn certified_bound_rhs(&self, x: &[f64], rhs: &[f64]) -> CertifiedBound {
        let gamma = x[0];
        let residual_slack: f64 = self
            .problem
            .a
            .mul_vec(x)
            .iter()
            .zip(rhs)
            .map(|(ax, b)| (ax - b).abs())
            .sum();
        let psd_slack: f64 = crate::parallel::map(&self.layout.blocks, |b| {
            let n = b.basis.len();
            let q = crate::sdp::smat(&x[b.offset..b.offset + svec_len(n)], n);
            let lmin = if n == 1 {
                q[(0, 0)]
            } else {
                SymmetricEigen::new(q).eigenvalues.min()
            };
            if lmin >= 0.0 {
                return 0.0;
            }
            let g_max = match b.kind {
                BlockKind::Multiplier { constraint } => self.constraints[constraint]
                    .as_ref()
                    .map(|(g, _)| g.terms().map(|(_, v)| v.abs()).sum())
                    .unwrap_or(0.0),
                BlockKind::Residual { .. } => 1.0,
            };
            -lmin * n as f64 * g_max
        })
        .into_iter()
        .sum();
        CertifiedBound {
            gamma_raw: gamma,
            residual_slack,
            psd_slack,
            gamma: gamma + residual_slack + psd_slack,
        }
    }

    /// Gram matrix of block `k` from a decision vector.
    pub fn gram(&self, x: &[f64], k: usize) -> DMatrix<f64> {
        let b = &self.layout.blocks[k];
        let n = b.basis.len();
        crate::sdp::smat(&x[b.offset..b.offset + svec_len(n)], n)
    }

    /// `γ - f - Σ t h - Σ s g - Σ σ` evaluated directly from the polynomials at a
    /// point in the original variables.
    pub fn identity_residual(&self, x: &[f64], point: &[f64]) -> f64 {
        let z = self.scaling.to_scaled(point);
        let mut total = x[0] - self.objective.eval(&z);
        for e in &self.layout.equalities {
            let (h, _) = self.constraints[e.constraint].as_ref().expect("equality present");
            let t: f64 = e
                .support
                .iter()
                .enumerate()
                .map(|(k, m)| x[e.offset + k] * m.eval(&z))
                .sum();
            total -= t * h.eval(&z);
        }
        for (k, b) in self.layout.blocks.iter().enumerate() {
            let mv = nalgebra::DVector::from_vec(b.basis.eval(&z));
            let form = (mv.transpose() * self.gram(x, k) * &mv)[(0, 0)];
            let g = match b.kind {
                BlockKind::Multiplier { constraint } => self.constraints[constraint]
                    .as_ref()
                    .map(|(g, _)| g.eval(&z))
                    .unwrap_or(0.0),
                BlockKind::Residual { .. } => 1.0,
            };
            total -= form * g;
        }
        total
    }

    /// Sidecar describing each SDPA block.
    pub fn write_sidecar<W: Write>(&self, sdpa: &SdpaLayout, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Entry<'a> {
            sdpa_block: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            diagonal_index: Option<usize>,
            size: usize,
            label: &'a str,
            #[serde(flatten)]
            kind: &'a BlockKind,
        }
        #[derive(Serialize)]
        struct Sidecar<'a> {
            objective: &'static str,
            free_scalars: usize,
            free_labels: Vec<String>,
            blocks: Vec<Entry<'a>>,
        }
        let mut free_labels = vec!["gamma".to_string()];
        for e in &self.layout.equalities {
            for k in 0..e.support.len() {
                free_labels.push(format!("t[{}][{}]", e.constraint, k));
            }
        }
        let blocks = sdpa
            .blocks
            .iter()
            .map(|m| {
                let b = &self.layout.blocks[m.source_block];
                Entry {
                    sdpa_block: m.sdpa_block,
                    diagonal_index: m.diagonal_index,
                    size: b.basis.len(),
                    label: &b.label,
                    kind: &b.kind,
                }
            })
            .collect();
        let sidecar = Sidecar {
            objective: "SDPA optimum equals -gamma; free scalars split as p - q in the diagonal block",
            free_scalars: self.problem.n_free,
            free_labels,
            blocks,
        };
        serde_json::to_writer_pretty(out, &sidecar)?;
        Ok(())
    }

    /// Writes `<path>` in sparse SDPA format and `<path>.json` with block labels.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<SdpaLayout> {
        let path = path.as_ref();
        let layout = crate::sdp::write_sdpa(&self.problem, path)?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let file = std::io::BufWriter::new(std::fs::File::create(side)?);
        self.write_sidecar(&layout, file)?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    pub gamma: f64,
    pub gamma_raw: f64,
    pub residual_slack: f64,
    pub psd_slack: f64,
}
