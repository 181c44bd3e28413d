//! Sparse real polynomials over the `2n` real variables of a relaxation.
//!
//! Monomials are ordered by total degree, and within a degree by exponent
//! vectors compared lexicographically with the larger power of `x1` first.
//! For two variables of degree at most one this gives `1, x1, x2`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{PartyDims, C64};

/// Coefficients with magnitude below this are dropped after arithmetic.
pub const PRUNE_TOL: f64 = 1e-15;

/// Exponent vector `alpha` of a monomial `x^alpha`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, j: usize) -> Self {
        let mut e = vec![0; nvars];
        e[j] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&a, _)| a > 0)
            .map(|(&a, &v)| v.powi(a as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (j, &a) in self.0.iter().enumerate() {
            if a == 0 {
                continue;
            }
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            if a == 1 {
                write!(f, "x{}", j + 1)?;
            } else {
                write!(f, "x{}^{}", j + 1, a)?;
            }
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

/// All monomials in `nvars` variables of degree at most `d`, in order.
pub fn monomial_basis(nvars: usize, d: usize) -> Vec<Monomial> {
    fn fill(prefix: &mut Vec<u32>, nvars: usize, remaining: u32, out: &mut Vec<Monomial>) {
        if prefix.len() + 1 == nvars {
            prefix.push(remaining);
            out.push(Monomial(prefix.clone()));
            prefix.pop();
            return;
        }
        for a in (0..=remaining).rev() {
            prefix.push(a);
            fill(prefix, nvars, remaining - a, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(binomial(nvars + d, d));
    for deg in 0..=d {
        fill(&mut Vec::with_capacity(nvars), nvars, deg as u32, &mut out);
    }
    out
}

/// Binomial coefficient, exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Sparse real polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(nvars, [(Monomial::one(nvars), c)])
    }

    pub fn var(nvars: usize, j: usize) -> Self {
        Self::from_terms(nvars, [(Monomial::var(nvars, j), 1.0)])
    }

    /// Sums the given terms; repeated monomials are merged.
    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Polynomial::zero(nvars);
        for (m, c) in terms {
            assert_eq!(m.nvars(), nvars, "monomial arity");
            *p.terms.entry(m).or_insert(0.0) += c;
        }
        p.prune();
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree; 0 for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        };
        out.prune();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, other.nvars, "polynomial arity");
        let mut terms = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                *terms.entry(a.mul(b)).or_insert(0.0) += ca * cb;
            }
        }
        let mut out = Polynomial {
            nvars: self.nvars,
            terms,
        };
        out.prune();
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.nvars {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, polynomial has {} variables",
                x.len(),
                self.nvars
            )));
        }
        Ok(self.terms.iter().map(|(m, c)| c * m.evaluate(x)).sum())
    }
}

impl fmt::Display for Polynomial {
    /// One `coeff * x1^a1 ...` line per term.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return writeln!(f, "0");
        }
        for (m, c) in &self.terms {
            writeln!(f, "{c:e} * {m}")?;
        }
        Ok(())
    }
}

/// Evaluates `p` at `x`.
pub fn evaluate(p: &Polynomial, x: &[f64]) -> Result<f64> {
    p.evaluate(x)
}

/// How complex vectors are laid out in the real variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One vector `u` shared by all parties: `x = (Re u, Im u)`.
    Symmetric,
    /// One vector per party, blocks `(Re u_k, Im u_k)` in party order.
    Partitioned,
}

/// Variable layout of a relaxation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableLayout {
    mode: Mode,
    dims: PartyDims,
}

impl VariableLayout {
    /// Symmetric mode requires equal local dimensions.
    pub fn new(mode: Mode, dims: PartyDims) -> Result<Self> {
        if mode == Mode::Symmetric && !dims.is_uniform() {
            return Err(Error::UnequalDims(dims.as_slice().to_vec()));
        }
        Ok(VariableLayout { mode, dims })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dims(&self) -> &PartyDims {
        &self.dims
    }

    /// Number of real variables.
    pub fn nvars(&self) -> usize {
        match self.mode {
            Mode::Symmetric => 2 * self.dims.local(0),
            Mode::Partitioned => 2 * self.dims.total(),
        }
    }

    /// Number of complex vectors encoded in a point.
    pub fn blocks(&self) -> usize {
        match self.mode {
            Mode::Symmetric => 1,
            Mode::Partitioned => self.dims.parties(),
        }
    }

    /// First slot and length of block `b`'s real part.
    fn block(&self, b: usize) -> (usize, usize) {
        match self.mode {
            Mode::Symmetric => (0, self.dims.local(0)),
            Mode::Partitioned => (self.dims.block_offset(b), self.dims.local(b)),
        }
    }

    /// Slots `(re, im)` of component `i` of party `party`'s vector.
    pub fn slots(&self, party: usize, i: usize) -> (usize, usize) {
        let b = match self.mode {
            Mode::Symmetric => 0,
            Mode::Partitioned => party,
        };
        let (start, len) = self.block(b);
        (start + i, start + len + i)
    }

    /// Variable range of block `b` (real then imaginary part).
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        let (start, len) = self.block(b);
        start..start + 2 * len
    }

    /// Complex vector of block `b` read from a real point.
    pub fn block_vector(&self, x: &[f64], b: usize) -> Vec<C64> {
        let (start, len) = self.block(b);
        (0..len)
            .map(|i| C64::new(x[start + i], x[start + len + i]))
            .collect()
    }

    /// Writes a complex vector into block `b` of a real point.
    pub fn set_block_vector(&self, x: &mut [f64], b: usize, u: &[C64]) {
        let (start, len) = self.block(b);
        for (i, z) in u.iter().enumerate().take(len) {
            x[start + i] = z.re;
            x[start + len + i] = z.im;
        }
    }

    fn check_half_index(&self, idx: &[usize]) -> Result<()> {
        self.dims.check_index(idx)
    }
}

type ComplexPoly = (Polynomial, Polynomial);

fn cmul(a: &ComplexPoly, b: &ComplexPoly) -> ComplexPoly {
    (
        a.0.mul(&b.0).sub(&a.1.mul(&b.1)),
        a.0.mul(&b.1).add(&a.1.mul(&b.0)),
    )
}

/// Real and imaginary parts `(R, T)` of `prod_k u_k[i_k] conj(u_k[j_k])`.
pub fn expand_pij(
    layout: &VariableLayout,
    i: &[usize],
    j: &[usize],
) -> Result<(Polynomial, Polynomial)> {
    layout.check_half_index(i)?;
    layout.check_half_index(j)?;
    let nv = layout.nvars();
    let mut acc: ComplexPoly = (Polynomial::constant(nv, 1.0), Polynomial::zero(nv));
    for k in 0..layout.dims().parties() {
        let (ri, ii) = layout.slots(k, i[k]);
        let (rj, ij) = layout.slots(k, j[k]);
        let u = (Polynomial::var(nv, ri), Polynomial::var(nv, ii));
        let v = (Polynomial::var(nv, rj), Polynomial::var(nv, ij).scale(-1.0));
        acc = cmul(&acc, &cmul(&u, &v));
    }
    Ok(acc)
}

/// Unit-sphere equations `|x_b|^2 - 1`, one per block of the layout.
pub fn sphere_constraints(layout: &VariableLayout) -> Vec<Polynomial> {
    let nv = layout.nvars();
    (0..layout.blocks())
        .map(|b| {
            let mut terms: Vec<(Monomial, f64)> = layout
                .block_range(b)
                .map(|j| {
                    let mut e = vec![0; nv];
                    e[j] = 2;
                    (Monomial::new(e), 1.0)
                })
                .collect();
            terms.push((Monomial::one(nv), -1.0));
            Polynomial::from_terms(nv, terms)
        })
        .collect()
}

/// Generic sum of squares `[x]^T R^T R [x]` over the degree `d/2` basis,
/// with `R` square and standard normal.
pub fn random_sos(nvars: usize, d: usize, seed: u64) -> Result<Polynomial> {
    if !d.is_multiple_of(2) {
        return Err(Error::Order(format!("SOS degree must be even, got {d}")));
    }
    let basis = monomial_basis(nvars, d / 2);
    let s = basis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..s * s)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    // gram = R^T R, R row-major s x s
    let mut gram = vec![0.0; s * s];
    for row in r.chunks(s) {
        for a in 0..s {
            let ra = row[a];
            for b in a..s {
                gram[a * s + b] += ra * row[b];
            }
        }
    }
    let mut terms = BTreeMap::new();
    for a in 0..s {
        for b in a..s {
            let c = if a == b {
                gram[a * s + b]
            } else {
                2.0 * gram[a * s + b]
            };
            *terms.entry(basis[a].mul(&basis[b])).or_insert(0.0) += c;
        }
    }
    let mut p = Polynomial { nvars, terms };
    p.prune();
    Ok(p)
}
