//! Correlative sparsity: layer-pair cliques and multiplier bases.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, TaggedConstraint};
use crate::error::{Error, Result};
use crate::model::NetworkModel;
use crate::poly::ExponentSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sparse,
    Dense,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sparse => "sparse",
            Mode::Dense => "dense",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Mode::Sparse),
            "dense" => Ok(Mode::Dense),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Relaxation order. `Minimum` uses constant multipliers everywhere and degree-1
/// residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelaxationOrder {
    Minimum,
    Fixed(u32),
}

impl RelaxationOrder {
    /// Degree of the residual SOS bases.
    pub fn residual_degree(self) -> u32 {
        match self {
            RelaxationOrder::Minimum => 1,
            RelaxationOrder::Fixed(w) => w,
        }
    }

    /// `ω - ⌈deg_g / 2⌉`, or 0 in minimum mode.
    pub fn multiplier_degree(self, deg_g: u32) -> Result<u32> {
        match self {
            RelaxationOrder::Minimum => Ok(0),
            RelaxationOrder::Fixed(w) => {
                let half = deg_g.div_ceil(2);
                if w == 0 || w < half {
                    Err(Error::Config(format!(
                        "relaxation order {w} is below the minimum for a degree-{deg_g} constraint"
                    )))
                } else {
                    Ok(w - half)
                }
            }
        }
    }

    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RelaxationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelaxationOrder::Minimum => f.write_str("min"),
            RelaxationOrder::Fixed(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for RelaxationOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "min" || s == "minimum" {
            return Ok(RelaxationOrder::Minimum);
        }
        s.parse::<u32>()
            .map(RelaxationOrder::Fixed)
            .map_err(|_| Error::Config(format!("invalid relaxation order '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clique {
    /// 1-based.
    pub id: usize,
    pub vars: Vec<usize>,
}

impl Clique {
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn contains_all(&self, vars: &BTreeSet<usize>) -> bool {
        vars.iter().all(|v| self.vars.binary_search(v).is_ok())
    }
}

/// Clique `τ` holds layers `τ - 1` and `τ` for `τ = 1..=ℓ`. A network without hidden
/// layers gets a single clique of its inputs.
pub fn build_cliques(model: &NetworkModel) -> Vec<Clique> {
    let hidden = model.hidden_layers();
    if hidden == 0 {
        return vec![Clique {
            id: 1,
            vars: model.layer_vars(0).collect(),
        }];
    }
    (1..=hidden)
        .map(|tau| Clique {
            id: tau,
            vars: model.layer_vars(tau - 1).chain(model.layer_vars(tau)).collect(),
        })
        .collect()
}

/// The single all-variable clique of dense mode.
pub fn dense_clique(model: &NetworkModel) -> Vec<Clique> {
    vec![Clique {
        id: 1,
        vars: (0..model.n_variables()).collect(),
    }]
}

pub fn cliques_for(model: &NetworkModel, mode: Mode) -> Vec<Clique> {
    match mode {
        Mode::Sparse => build_cliques(model),
        Mode::Dense => dense_clique(model),
    }
}

/// Id of the lowest clique containing every variable of the constraint.
pub fn assign_multiplier(constraint: &TaggedConstraint, cliques: &[Clique]) -> Result<usize> {
    let vars = constraint.poly.variables();
    cliques
        .iter()
        .find(|c| c.contains_all(&vars))
        .map(|c| c.id)
        .ok_or_else(|| {
            Error::Assembly(format!(
                "constraint {} of node ({}, {}) spans variables {:?} outside every clique",
                constraint.label, constraint.layer, constraint.node, vars
            ))
        })
}

/// Monomials over the clique of degree at most `ω - ⌈deg_g / 2⌉`.
pub fn multiplier_basis(clique: &Clique, order: RelaxationOrder, deg_g: u32) -> Result<ExponentSet> {
    let d = order.multiplier_degree(deg_g)?;
    Ok(ExponentSet::up_to_degree(&clique.vars, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPlan {
    pub clique: usize,
    /// Gram basis for an inequality; for an equality, the multiplier's support is
    /// the pairwise sums of this basis.
    pub basis: ExponentSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierPlan {
    pub order: RelaxationOrder,
    pub constraints: Vec<ConstraintPlan>,
    /// Residual SOS basis of each clique, indexed by `id - 1`.
    pub residual: Vec<ExponentSet>,
}

impl MultiplierPlan {
    pub fn assigned_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.residual.len()];
        for c in &self.constraints {
            counts[c.clique - 1] += 1;
        }
        counts
    }
}

pub fn plan_multipliers(
    constraints: &ConstraintSet,
    cliques: &[Clique],
    order: RelaxationOrder,
) -> Result<MultiplierPlan> {
    if let RelaxationOrder::Fixed(0) = order {
        return Err(Error::Config("relaxation order must be at least 1".into()));
    }
    let plans = constraints
        .iter()
        .map(|c| {
            let id = assign_multiplier(c, cliques)?;
            let basis = multiplier_basis(&cliques[id - 1], order, c.poly.degree())?;
            Ok(ConstraintPlan { clique: id, basis })
        })
        .collect::<Result<Vec<_>>>()?;
    let residual = cliques
        .iter()
        .map(|c| ExponentSet::up_to_degree(&c.vars, order.residual_degree()))
        .collect();
    Ok(MultiplierPlan {
        order,
        constraints: plans,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliqueEntry {
    pub id: usize,
    pub vars: Vec<usize>,
    pub constraints: usize,
    pub residual_block: usize,
}

/// Per clique: variables, number of assigned constraints and residual block size.
pub fn clique_report(cliques: &[Clique], plan: &MultiplierPlan) -> Vec<CliqueEntry> {
    let counts = plan.assigned_counts();
    cliques
        .iter()
        .map(|c| CliqueEntry {
            id: c.id,
            vars: c.vars.clone(),
            constraints: counts[c.id - 1],
            residual_block: plan.residual[c.id - 1].len(),
        })
        .collect()
}
