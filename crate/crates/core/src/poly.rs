//! Sparse multivariate polynomials over the global variable index space.
//!
//! Monomials are stored as sorted `(variable, power)` lists with no zero powers.
//! Canonical order is graded: lower degree first, then, scanning variables from the
//! lowest index, the monomial with the higher power comes first. So the degree-1
//! basis over `{1, 2}` is `[1, x1, x2]` and degree 2 continues `x1^2, x1 x2, x2^2`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Coefficients smaller than this in magnitude are dropped after arithmetic.
pub const DROP_TOL: f64 = 1e-14;

#[derive(Clone, PartialEq, Eq, Hash, Default, Debug)]
pub struct Monomial(Vec<(u32, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(index: usize) -> Self {
        Monomial(vec![(index as u32, 1)])
    }

    /// Builds from `(variable, power)` pairs in any order; repeated variables add up.
    pub fn from_powers<I: IntoIterator<Item = (usize, u32)>>(powers: I) -> Self {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for (v, p) in powers {
            if p > 0 {
                *map.entry(v as u32).or_default() += p;
            }
        }
        Monomial(map.into_iter().collect())
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, p)| p).sum()
    }

    pub fn powers(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.0.iter().map(|&(v, p)| (v as usize, p))
    }

    pub fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&(v, _)| v as usize)
    }

    pub fn power_of(&self, var: usize) -> u32 {
        self.0
            .iter()
            .find(|&&(v, _)| v as usize == var)
            .map_or(0, |&(_, p)| p)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|&(v, p)| x[v as usize].powi(p as i32))
            .product()
    }

    /// True when every variable of the monomial is in `vars`.
    pub fn within(&self, vars: &BTreeSet<usize>) -> bool {
        self.vars().all(|v| vars.contains(&v))
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        for (a, b) in self.0.iter().zip(&other.0) {
            if a.0 != b.0 {
                // The monomial holding the lower variable has the higher power there.
                return a.0.cmp(&b.0);
            }
            if a.1 != b.1 {
                return b.1.cmp(&a.1);
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|&(v, p)| {
                if p == 1 {
                    format!("x{v}")
                } else {
                    format!("x{v}^{p}")
                }
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Clone, PartialEq, Default, Debug)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms([(Monomial::one(), c)])
    }

    pub fn var(index: usize) -> Self {
        Self::from_terms([(Monomial::var(index), 1.0)])
    }

    /// `Σ coeffs[k] x_{vars[k]} + constant`.
    pub fn affine(vars: &[usize], coeffs: &[f64], constant: f64) -> Self {
        Self::from_terms(
            vars.iter()
                .zip(coeffs)
                .map(|(&v, &c)| (Monomial::var(v), c))
                .chain(std::iter::once((Monomial::one(), constant))),
        )
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, f64)>>(terms: I) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p.prune();
        p
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        *self.terms.entry(m).or_insert(0.0) += c;
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= DROP_TOL);
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn variables(&self) -> BTreeSet<usize> {
        self.terms.keys().flat_map(|m| m.vars()).collect()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut p = Polynomial {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        };
        p.prune();
        p
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut p = self.clone();
        for (m, c) in &other.terms {
            p.add_term(m.clone(), *c);
        }
        p.prune();
        p
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut p = Polynomial::zero();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                p.add_term(a.mul(b), ca * cb);
            }
        }
        p.prune();
        p
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        (0..k).fold(Polynomial::constant(1.0), |acc, _| acc.mul(self))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    /// Substitutes `x_i = shift[i] + scale[i] * x_i` for every variable.
    pub fn substitute_affine(&self, shift: &[f64], scale: &[f64]) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            let mut term = Polynomial::constant(*c);
            for (v, p) in m.powers() {
                let lin = Polynomial::from_terms([
                    (Monomial::one(), shift[v]),
                    (Monomial::var(v), scale[v]),
                ]);
                term = term.mul(&lin.pow(p));
            }
            for (tm, tc) in term.terms {
                out.add_term(tm, tc);
            }
        }
        out.prune();
        out
    }
}

impl fmt::Display for Polynomial {
    /// Renders `c * x1^a x2^b + ...` in canonical order; the zero polynomial is `0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| {
                if m.is_one() {
                    format!("{c}")
                } else {
                    format!("{c} * {m}")
                }
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::add(self, rhs)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::sub(self, rhs)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::mul(self, rhs)
    }
}

impl Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// An ordered, duplicate-free monomial basis.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct ExponentSet(Vec<Monomial>);

impl ExponentSet {
    pub fn new(mut monomials: Vec<Monomial>) -> Self {
        monomials.sort();
        monomials.dedup();
        ExponentSet(monomials)
    }

    pub fn constant() -> Self {
        ExponentSet(vec![Monomial::one()])
    }

    /// Every monomial over `vars` of degree at most `d`.
    pub fn up_to_degree(vars: &[usize], d: u32) -> Self {
        let mut vars = vars.to_vec();
        vars.sort_unstable();
        vars.dedup();
        let mut out = Vec::new();
        let mut current = Vec::new();
        fn rec(
            vars: &[usize],
            start: usize,
            left: u32,
            current: &mut Vec<(usize, u32)>,
            out: &mut Vec<Monomial>,
        ) {
            out.push(Monomial::from_powers(current.iter().copied()));
            if left == 0 {
                return;
            }
            for k in start..vars.len() {
                for p in 1..=left {
                    current.push((vars[k], p));
                    rec(vars, k + 1, left - p, current, out);
                    current.pop();
                }
            }
        }
        rec(&vars, 0, d, &mut current, &mut out);
        ExponentSet::new(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Monomial> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Monomial] {
        &self.0
    }

    pub fn max_degree(&self) -> u32 {
        self.0.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_subset_of(&self, other: &ExponentSet) -> bool {
        self.0.iter().all(|m| other.0.binary_search(m).is_ok())
    }

    /// `𝔹 + 𝔹`.
    pub fn pairwise_sums(&self) -> ExponentSet {
        let mut v = Vec::new();
        for (i, a) in self.0.iter().enumerate() {
            for b in &self.0[i..] {
                v.push(a.mul(b));
            }
        }
        ExponentSet::new(v)
    }

    /// Evaluates the monomial vector `x^𝔹` at a point.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|m| m.eval(x)).collect()
    }
}

impl<'a> IntoIterator for &'a ExponentSet {
    type Item = &'a Monomial;
    type IntoIter = std::slice::Iter<'a, Monomial>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// For each `α ∈ 𝔹 + 𝔹`, every ordered position `(row, col)` with `𝔹[row] 𝔹[col] = α`.
/// This is the nonzero pattern of all matrices `A_α` at once.
pub fn index_products(basis: &ExponentSet) -> BTreeMap<Monomial, Vec<(usize, usize)>> {
    let mut map: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            map.entry(a.mul(b)).or_default().push((i, j));
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn x(i: usize) -> Polynomial {
        Polynomial::var(i)
    }

    fn c(v: f64) -> Polynomial {
        Polynomial::constant(v)
    }

    #[test]
    fn difference_of_squares() {
        let p = &(&x(1) + &c(1.0)) * &(&x(1) - &c(1.0));
        let expected = Polynomial::from_terms([
            (Monomial::from_powers([(1, 2)]), 1.0),
            (Monomial::one(), -1.0),
        ]);
        assert_eq!(p, expected);
    }

    #[test]
    fn cancellation_gives_zero() {
        let p = Polynomial::affine(&[0, 3], &[2.0, -1.5], 0.25);
        let z = &p + &(&p * -1.0);
        assert!(z.is_zero());
        assert_eq!(z.len(), 0);
    }

    #[test]
    fn binomial_cube() {
        // Oracle: C(3, k).
        let s = &x(1) + &x(2);
        let cube = s.pow(3);
        let binom = [1.0, 3.0, 3.0, 1.0];
        for k in 0..=3u32 {
            let m = Monomial::from_powers([(1, 3 - k), (2, k)]);
            assert_eq!(cube.coeff(&m), binom[k as usize]);
        }
        assert_eq!(cube.len(), 4);
    }

    #[test]
    fn basis_small() {
        let b = ExponentSet::up_to_degree(&[1, 2], 1);
        assert_eq!(
            b.as_slice(),
            &[Monomial::one(), Monomial::var(1), Monomial::var(2)]
        );
        let b = ExponentSet::up_to_degree(&[1], 2);
        assert_eq!(
            b.as_slice(),
            &[
                Monomial::one(),
                Monomial::var(1),
                Monomial::from_powers([(1, 2)])
            ]
        );
    }

    fn binomial(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn basis_counts_match_binomial() {
        assert_eq!(ExponentSet::up_to_degree(&[1, 2, 3], 2).len(), 10);
        for n in 1..6 {
            for d in 0..5 {
                let vars: Vec<usize> = (0..n).collect();
                assert_eq!(
                    ExponentSet::up_to_degree(&vars, d).len() as u64,
                    binomial(n as u64 + d as u64, d as u64)
                );
            }
        }
    }

    #[test]
    fn degree_two_order() {
        let b = ExponentSet::up_to_degree(&[0, 1], 2);
        let names: Vec<String> = b.iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["1", "x0", "x1", "x0^2", "x0 x1", "x1^2"]);
    }

    #[test]
    fn index_products_small() {
        let b = ExponentSet::up_to_degree(&[1], 1);
        let ip = index_products(&b);
        assert_eq!(ip[&Monomial::one()], vec![(0, 0)]);
        assert_eq!(ip[&Monomial::var(1)], vec![(0, 1), (1, 0)]);
        assert_eq!(ip[&Monomial::from_powers([(1, 2)])], vec![(1, 1)]);
        assert_eq!(index_products(&ExponentSet::up_to_degree(&[1, 2], 1)).len(), 6);
    }

    #[test]
    fn index_products_cover_all_pairs() {
        let b = ExponentSet::new(vec![
            Monomial::one(),
            Monomial::var(0),
            Monomial::from_powers([(0, 1), (3, 1)]),
            Monomial::from_powers([(2, 2)]),
            Monomial::var(5),
        ]);
        let total: usize = index_products(&b).values().map(Vec::len).sum();
        assert_eq!(total, 25);
    }

    #[test]
    fn gram_identity() {
        let mut rng = CounterRng::new(3);
        let b = ExponentSet::up_to_degree(&[0, 1, 2], 2);
        let n = b.len();
        let mut q = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gaussian();
                q[i][j] = v;
                q[j][i] = v;
            }
        }
        let point: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
        let mb = b.eval(&point);
        let direct: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| mb[i] * q[i][j] * mb[j])
            .sum();
        let via_alpha: f64 = index_products(&b)
            .iter()
            .map(|(alpha, pairs)| {
                let inner: f64 = pairs.iter().map(|&(i, j)| q[i][j]).sum();
                inner * alpha.eval(&point)
            })
            .sum();
        assert!((direct - via_alpha).abs() < 1e-10);
    }

    #[test]
    fn affine_substitution() {
        // p = x0^2 x1 at x0 = 1 + 2 t0, x1 = -1 + 0.5 t1
        let p = Polynomial::from_terms([(Monomial::from_powers([(0, 2), (1, 1)]), 3.0)]);
        let q = p.substitute_affine(&[1.0, -1.0], &[2.0, 0.5]);
        for t in [[0.3, -0.7], [1.0, 1.0], [-2.0, 0.1]] {
            let orig = [1.0 + 2.0 * t[0], -1.0 + 0.5 * t[1]];
            assert!((q.eval(&t) - p.eval(&orig)).abs() < 1e-12);
        }
    }

    #[test]
    fn display_format() {
        let p = Polynomial::from_terms([
            (Monomial::from_powers([(1, 2), (2, 1)]), -2.5),
            (Monomial::var(0), 1.0),
            (Monomial::one(), 3.0),
        ]);
        assert_eq!(p.to_string(), "3 + 1 * x0 + -2.5 * x1^2 x2");
        assert_eq!(Polynomial::zero().to_string(), "0");
    }

    fn arb_poly() -> impl Strategy<Value = Polynomial> {
        prop::collection::vec(
            (prop::collection::vec((0usize..4, 0u32..3), 0..3), -5.0f64..5.0),
            0..6,
        )
        .prop_map(|terms| {
            Polynomial::from_terms(
                terms
                    .into_iter()
                    .map(|(pw, c)| (Monomial::from_powers(pw), c)),
            )
        })
    }

    fn close(a: &Polynomial, b: &Polynomial, tol: f64) -> bool {
        (a - b).max_abs_coeff() <= tol * (1.0 + a.max_abs_coeff())
    }

    proptest! {
        #[test]
        fn arithmetic_laws(p in arb_poly(), q in arb_poly(), r in arb_poly()) {
            prop_assert!(close(&(&p + &q), &(&q + &p), 1e-12));
            prop_assert!(close(&(&p * &q), &(&q * &p), 1e-12));
            prop_assert!(close(&(&(&p + &q) + &r), &(&p + &(&q + &r)), 1e-12));
            prop_assert!(close(&(&(&p * &q) * &r), &(&p * &(&q * &r)), 1e-12));
            prop_assert!(close(&(&p * &(&q + &r)), &(&(&p * &q) + &(&p * &r)), 1e-12));
        }

        #[test]
        fn monomial_order_is_total(a in prop::collection::vec((0usize..4, 0u32..3), 0..4),
                                   b in prop::collection::vec((0usize..4, 0u32..3), 0..4)) {
            let (ma, mb) = (Monomial::from_powers(a), Monomial::from_powers(b));
            prop_assert_eq!(ma.cmp(&mb) == Ordering::Equal, ma == mb);
            prop_assert_eq!(ma.cmp(&mb), mb.cmp(&ma).reverse());
        }
    }
}
