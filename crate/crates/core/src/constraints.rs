//! The semi-algebraic set describing a network: input box, activation constraints
//! per hidden node, and interval boxes from bound propagation.
//!
//! Every constraint of node `(i, j)` only involves that node's variable and the
//! variables of layer `i - 1`; the clique structure downstream depends on it.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model::{Activation, IntervalBox, NetworkModel};
use crate::poly::Polynomial;
use crate::prop::LayerBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    /// `poly ≥ 0`
    Inequality,
    /// `poly = 0`
    Equality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedConstraint {
    pub poly: Polynomial,
    pub kind: ConstraintKind,
    /// Variable layer of the owning node (0 = inputs).
    pub layer: usize,
    pub node: usize,
    pub label: String,
}

impl TaggedConstraint {
    fn ineq(poly: Polynomial, layer: usize, node: usize, label: &str) -> Self {
        Self {
            poly,
            kind: ConstraintKind::Inequality,
            layer,
            node,
            label: label.to_string(),
        }
    }

    fn eq(poly: Polynomial, layer: usize, node: usize, label: &str) -> Self {
        Self {
            poly,
            kind: ConstraintKind::Equality,
            layer,
            node,
            label: label.to_string(),
        }
    }

    pub fn is_equality(&self) -> bool {
        self.kind == ConstraintKind::Equality
    }

    /// Signed violation at a point: negative part for inequalities, absolute value
    /// for equalities. Zero when satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.poly.eval(x);
        match self.kind {
            ConstraintKind::Inequality => (-v).max(0.0),
            ConstraintKind::Equality => v.abs(),
        }
    }
}

impl fmt::Display for TaggedConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.kind {
            ConstraintKind::Inequality => ">= 0",
            ConstraintKind::Equality => "= 0",
        };
        write!(
            f,
            "[{},{}] {}: {} {}",
            self.layer, self.node, self.label, self.poly, rel
        )
    }
}

/// The line `slope * v + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorLine {
    pub slope: f64,
    pub intercept: f64,
}

impl SectorLine {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    /// Line with the given slope through `(x0, y0)`.
    pub fn through(x0: f64, y0: f64, slope: f64) -> Self {
        Self::new(slope, y0 - slope * x0)
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.slope * v + self.intercept
    }

    fn poly(&self, v: &Polynomial) -> Polynomial {
        &(v * self.slope) + &Polynomial::constant(self.intercept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectorSide {
    Left,
    Right,
    /// The single global sector used when no two-sector pair applies.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorPair {
    pub lo: SectorLine,
    pub hi: SectorLine,
    pub side: SectorSide,
}

impl SectorPair {
    /// Value of `(φ - lo(v)) (hi(v) - φ)`.
    pub fn product(&self, v: f64, phi: f64) -> f64 {
        (phi - self.lo.eval(v)) * (self.hi.eval(v) - phi)
    }

    pub fn label(&self) -> &'static str {
        match self.side {
            SectorSide::Left => "sector_left",
            SectorSide::Right => "sector_right",
            SectorSide::Global => "sector_global_fallback",
        }
    }
}

/// The quadratic `(φ - lo(v)) (hi(v) - φ)` with `v` the affine pre-activation.
pub fn sector_constraint(
    lo: &SectorLine,
    hi: &SectorLine,
    phi_var: usize,
    pre_activation: &Polynomial,
) -> Polynomial {
    let phi = Polynomial::var(phi_var);
    let below = &phi - &lo.poly(pre_activation);
    let above = &hi.poly(pre_activation) - &phi;
    &below * &above
}

/// Grid used to validate sector pairs.
pub const SECTOR_GRID: usize = 2001;
/// Tolerated negative value of a sector product on the validation grid.
pub const SECTOR_MARGIN: f64 = 1e-9;

/// Global sector valid on all of ℝ.
pub fn global_sector(act: Activation) -> SectorPair {
    let (alpha, beta, lambda) = match act {
        Activation::Sigmoid => (0.0, 0.25, 0.5),
        Activation::Tanh | Activation::Relu => (0.0, 1.0, 0.0),
    };
    SectorPair {
        lo: SectorLine::new(alpha, lambda),
        hi: SectorLine::new(beta, lambda),
        side: SectorSide::Global,
    }
}

/// `sup |φ''|`; bounds how far the secant-slope function can move between grid points.
fn second_derivative_bound(act: Activation) -> f64 {
    match act {
        // |σ''| peaks at 1/(6√3).
        Activation::Sigmoid => 1.0 / (6.0 * 3f64.sqrt()),
        // |tanh''| peaks at 4/(3√3).
        Activation::Tanh => 4.0 / (3.0 * 3f64.sqrt()),
        Activation::Relu => 0.0,
    }
}

/// Default sector midpoint: half the smaller side of the interval, clipped to `[0.1, 5]`.
pub fn default_midpoint(pre_lo: f64, pre_hi: f64) -> f64 {
    (pre_lo.abs().min(pre_hi) / 2.0).clamp(0.1, 5.0)
}

fn grid(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let n = SECTOR_GRID - 1;
    (0..=n).map(move |k| {
        if k == n {
            hi
        } else {
            lo + (hi - lo) * k as f64 / n as f64
        }
    })
}

/// Secant slope of `φ` from `center` to `v`; the derivative at `v = center`.
fn secant(act: Activation, center: f64, v: f64) -> f64 {
    if (v - center).abs() < 1e-7 {
        act.derivative(0.5 * (v + center))
    } else {
        (act.apply(v) - act.apply(center)) / (v - center)
    }
}

/// Tangency point of a line from `(center, φ(center))` on `[a, b]`, located by
/// bisection on `φ'(t) - secant(center, t)`; `None` if no sign change.
fn tangency(act: Activation, center: f64, a: f64, b: f64) -> Option<f64> {
    let f = |t: f64| act.derivative(t) - secant(act, center, t);
    let (mut lo, mut hi) = (a, b);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo * fhi < 0.0) {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) * flo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// A sector centred on the curve point `(center, φ(center))`.
///
/// The curve lies between two lines through the centre on `[lo, hi]` exactly when every
/// secant slope from the centre lies between the two slopes. The lower slope is the
/// chord to the far endpoint and the upper one the tangent from the centre (or vice
/// versa, whichever the data gives), widened by the grid-gap bound.
fn centred_sector(
    act: Activation,
    lo: f64,
    hi: f64,
    center: f64,
    side: SectorSide,
) -> Option<SectorPair> {
    let mut s_min = f64::INFINITY;
    let mut s_max = f64::NEG_INFINITY;
    let mut visit = |v: f64| {
        let s = secant(act, center, v);
        s_min = s_min.min(s);
        s_max = s_max.max(s);
    };
    grid(lo, hi).for_each(&mut visit);
    visit(center);
    if center > lo {
        if let Some(t) = tangency(act, center, lo, center - 1e-9) {
            visit(t);
        }
    }
    if center < hi {
        if let Some(t) = tangency(act, center, center + 1e-9, hi) {
            visit(t);
        }
    }
    if !s_min.is_finite() || !s_max.is_finite() {
        return None;
    }
    let h = (hi - lo) / (SECTOR_GRID - 1) as f64;
    let widen = second_derivative_bound(act) * h / 4.0 + 1e-12;
    let y = act.apply(center);
    let pair = SectorPair {
        lo: SectorLine::through(center, y, s_min - widen),
        hi: SectorLine::through(center, y, s_max + widen),
        side,
    };
    validate_or_widen(act, lo, hi, pair)
}

/// Checks a pair on the grid and widens both slopes until the worst product is
/// above `-SECTOR_MARGIN`.
fn validate_or_widen(act: Activation, lo: f64, hi: f64, mut pair: SectorPair) -> Option<SectorPair> {
    let center = (pair.hi.intercept - pair.lo.intercept) / (pair.lo.slope - pair.hi.slope);
    for _ in 0..30 {
        let worst = min_sector_product(act, &pair, lo, hi);
        if worst >= -SECTOR_MARGIN {
            return Some(pair);
        }
        let bump = worst.abs() + SECTOR_MARGIN;
        let phi_c = if center.is_finite() { act.apply(center) } else { 0.0 };
        let c = if center.is_finite() { center } else { 0.5 * (lo + hi) };
        pair.lo = SectorLine::through(c, phi_c, pair.lo.slope - bump);
        pair.hi = SectorLine::through(c, phi_c, pair.hi.slope + bump);
    }
    None
}

/// Smallest sector product over the validation grid of `[lo, hi]`.
pub fn min_sector_product(act: Activation, pair: &SectorPair, lo: f64, hi: f64) -> f64 {
    grid(lo, hi)
        .map(|v| pair.product(v, act.apply(v)))
        .fold(f64::INFINITY, f64::min)
}

/// Left and right sectors for a sigmoid or tanh node with pre-activation interval
/// `pre`, centred at `-x_m` and `+x_m` (clamped into the interval). A side is used
/// only if its centre lies strictly inside the interval's reach on that side. With
/// neither side usable the single global sector is returned.
pub fn build_two_sector(act: Activation, pre: (f64, f64), x_m: f64) -> Vec<SectorPair> {
    let (lo, hi) = pre;
    let mut out = Vec::with_capacity(2);
    if act != Activation::Relu && x_m > 0.0 && lo.is_finite() && hi.is_finite() && hi > lo {
        if -x_m > lo {
            let c = (-x_m).min(hi);
            if let Some(p) = centred_sector(act, lo, hi, c, SectorSide::Left) {
                out.push(p);
            }
        }
        if x_m < hi {
            let c = x_m.max(lo);
            if let Some(p) = centred_sector(act, lo, hi, c, SectorSide::Right) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        out.push(global_sector(act));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintOptions {
    /// Add `φ - φ̲ ≥ 0` and `φ̄ - φ ≥ 0` for every hidden node.
    pub ibp_boxes: bool,
    /// Replace dead or always-active ReLU constraints by a single equality.
    pub relu_tightening: bool,
    /// Sector midpoint; `None` picks [`default_midpoint`] per node.
    pub x_m: Option<f64>,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        Self {
            ibp_boxes: true,
            relu_tightening: true,
            x_m: None,
        }
    }
}

/// `x_j - lo_j ≥ 0` and `hi_j - x_j ≥ 0` for every input.
pub fn input_constraints(input: &IntervalBox) -> Vec<TaggedConstraint> {
    let mut out = Vec::with_capacity(2 * input.dim());
    for j in 0..input.dim() {
        let x = Polynomial::var(j);
        out.push(TaggedConstraint::ineq(
            &x - &Polynomial::constant(input.lo[j]),
            0,
            j,
            "input_lower",
        ));
        out.push(TaggedConstraint::ineq(
            &Polynomial::constant(input.hi[j]) - &x,
            0,
            j,
            "input_upper",
        ));
    }
    out
}

/// Pre-activation `W^{i-1}_{j,:} x^{i-1} + b^{i-1}_j` of node `j` in variable layer `i ≥ 1`.
pub fn pre_activation(model: &NetworkModel, layer: usize, node: usize) -> Polynomial {
    let affine = &model.layers()[layer - 1];
    let prev: Vec<usize> = model.layer_vars(layer - 1).collect();
    let coeffs: Vec<f64> = affine.weights.row(node).iter().copied().collect();
    Polynomial::affine(&prev, &coeffs, affine.bias[node])
}

fn box_constraints(
    phi: &Polynomial,
    post: (f64, f64),
    layer: usize,
    node: usize,
) -> [TaggedConstraint; 2] {
    [
        TaggedConstraint::ineq(phi - &Polynomial::constant(post.0), layer, node, "ibp_lower"),
        TaggedConstraint::ineq(&Polynomial::constant(post.1) - phi, layer, node, "ibp_upper"),
    ]
}

/// ReLU constraints `φ ≥ 0`, `φ - v ≥ 0`, `φ (φ - v) = 0` plus the interval box of
/// node `node` in variable layer `layer ≥ 1`. A node that is dead (`v̄ ≤ 0`) becomes
/// `φ = 0`; an always-active one (`v̲ > 0`) becomes `φ - v = 0`.
pub fn relu_constraints(
    model: &NetworkModel,
    bounds: &LayerBounds,
    layer: usize,
    node: usize,
    options: &ConstraintOptions,
) -> Vec<TaggedConstraint> {
    let v = pre_activation(model, layer, node);
    let phi = Polynomial::var(model.var_index(layer, node));
    let pre = &bounds.pre[layer - 1];
    let post = &bounds.post[layer - 1];
    if options.relu_tightening {
        if pre.hi[node] <= 0.0 {
            return vec![TaggedConstraint::eq(phi, layer, node, "relu_dead")];
        }
        if pre.lo[node] > 0.0 {
            return vec![TaggedConstraint::eq(&phi - &v, layer, node, "relu_active")];
        }
    }
    let gap = &phi - &v;
    let mut out = vec![
        TaggedConstraint::ineq(phi.clone(), layer, node, "relu_nonneg"),
        TaggedConstraint::ineq(gap.clone(), layer, node, "relu_above_pre"),
        TaggedConstraint::eq(&phi * &gap, layer, node, "relu_complementarity"),
    ];
    if options.ibp_boxes {
        out.extend(box_constraints(&phi, (post.lo[node], post.hi[node]), layer, node));
    }
    out
}

fn sector_constraints(
    model: &NetworkModel,
    bounds: &LayerBounds,
    layer: usize,
    node: usize,
    options: &ConstraintOptions,
) -> Vec<TaggedConstraint> {
    let act = model.activation();
    let v = pre_activation(model, layer, node);
    let var = model.var_index(layer, node);
    let phi = Polynomial::var(var);
    let pre = &bounds.pre[layer - 1];
    let post = &bounds.post[layer - 1];
    let (lo, hi) = (pre.lo[node], pre.hi[node]);
    let x_m = options.x_m.unwrap_or_else(|| default_midpoint(lo, hi));
    let mut out: Vec<TaggedConstraint> = build_two_sector(act, (lo, hi), x_m)
        .iter()
        .map(|pair| {
            TaggedConstraint::ineq(
                sector_constraint(&pair.lo, &pair.hi, var, &v),
                layer,
                node,
                pair.label(),
            )
        })
        .collect();
    if options.ibp_boxes {
        out.extend(box_constraints(&phi, (post.lo[node], post.hi[node]), layer, node));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub constraints: Vec<TaggedConstraint>,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TaggedConstraint> {
        self.constraints.iter()
    }

    pub fn n_inequalities(&self) -> usize {
        self.constraints.iter().filter(|c| !c.is_equality()).count()
    }

    pub fn n_equalities(&self) -> usize {
        self.constraints.iter().filter(|c| c.is_equality()).count()
    }

    pub fn max_degree(&self) -> u32 {
        self.constraints
            .iter()
            .map(|c| c.poly.degree())
            .max()
            .unwrap_or(0)
    }

    /// Largest constraint violation at a full variable assignment.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max)
    }

    /// One constraint per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for c in &self.constraints {
            writeln!(out, "{c}")?;
        }
        Ok(())
    }
}

/// All constraints of the network: inputs first, then hidden nodes layer by layer.
pub fn build_constraint_set(
    model: &NetworkModel,
    bounds: &LayerBounds,
    options: &ConstraintOptions,
) -> ConstraintSet {
    let mut constraints = input_constraints(&bounds.input);
    let widths = model.widths();
    for layer in 1..=model.hidden_layers() {
        for node in 0..widths[layer] {
            constraints.extend(match model.activation() {
                Activation::Relu => relu_constraints(model, bounds, layer, node, options),
                Activation::Sigmoid | Activation::Tanh => {
                    sector_constraints(model, bounds, layer, node, options)
                }
            });
        }
    }
    ConstraintSet { constraints }
}
