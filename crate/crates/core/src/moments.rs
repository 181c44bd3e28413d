//! Truncated moment sequences, moment and localizing matrices, and the
//! assembly of a relaxation level into an [`SdpProblem`].

use std::collections::HashSet;
use std::io::Write;

use faer::Mat;

use crate::error::{Error, Result};
use crate::poly::{
    binomial, expand_pij, monomial_basis, sphere_constraints, Mode, Monomial, Polynomial,
    VariableLayout,
};
use crate::tensor::{check_structure, reduced_index_pairs, HermitianTensor};

/// Tolerance for the permutation symmetry required by symmetric assembly.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Position lookup for the graded monomial order, without hashing.
#[derive(Debug, Clone)]
pub struct MonomialIndex {
    nvars: usize,
    degree: usize,
    // choose[a][b] = C(a, b)
    choose: Vec<Vec<usize>>,
}

impl MonomialIndex {
    pub fn new(nvars: usize, degree: usize) -> Self {
        let top = nvars + degree + 1;
        let choose = (0..=top)
            .map(|a| (0..=top).map(|b| binomial(a, b)).collect())
            .collect();
        MonomialIndex {
            nvars,
            degree,
            choose,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of monomials of degree at most `d`.
    pub fn count(&self, d: usize) -> usize {
        self.choose[self.nvars + d][d]
    }

    pub fn len(&self) -> usize {
        self.count(self.degree)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    // monomials of degree exactly s in v variables
    fn exact(&self, v: usize, s: usize) -> usize {
        if v == 0 {
            usize::from(s == 0)
        } else {
            self.choose[v + s - 1][s]
        }
    }

    /// Position of `x^alpha`, or `None` when its degree exceeds the index.
    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        debug_assert_eq!(alpha.len(), self.nvars);
        let g: usize = alpha.iter().map(|&a| a as usize).sum();
        if g > self.degree {
            return None;
        }
        let mut pos = if g == 0 { 0 } else { self.count(g - 1) };
        let mut rest = g;
        for (j, &a) in alpha.iter().enumerate() {
            let v = self.nvars - j - 1;
            if v == 0 {
                break;
            }
            let a = a as usize;
            for e in a + 1..=rest {
                pos += self.exact(v, rest - e);
            }
            rest -= a;
        }
        Some(pos)
    }

    /// Position of the product of two monomials.
    pub fn product_position(&self, a: &Monomial, b: &Monomial) -> Option<usize> {
        let sum: Vec<u32> = a
            .exponents()
            .iter()
            .zip(b.exponents())
            .map(|(x, y)| x + y)
            .collect();
        self.position(&sum)
    }
}

/// Real moment vector indexed by `monomial_basis(nvars, degree)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMomentSequence {
    nvars: usize,
    degree: usize,
    values: Vec<f64>,
}

impl TruncatedMomentSequence {
    pub fn new(nvars: usize, degree: usize, values: Vec<f64>) -> Result<Self> {
        let need = binomial(nvars + degree, degree);
        if values.len() != need {
            return Err(Error::Dimension(format!(
                "{} moments given, degree {degree} in {nvars} variables needs {need}",
                values.len()
            )));
        }
        Ok(TruncatedMomentSequence {
            nvars,
            degree,
            values,
        })
    }

    /// Moments of the atomic measure `sum_i w_i delta_{x_i}`.
    pub fn from_atoms(nvars: usize, degree: usize, atoms: &[(f64, Vec<f64>)]) -> Result<Self> {
        let basis = monomial_basis(nvars, degree);
        for (_, x) in atoms {
            if x.len() != nvars {
                return Err(Error::Dimension(format!(
                    "atom with {} coordinates in {nvars} variables",
                    x.len()
                )));
            }
        }
        let values = basis
            .iter()
            .map(|m| atoms.iter().map(|(w, x)| w * m.evaluate(x)).sum())
            .collect();
        Ok(TruncatedMomentSequence {
            nvars,
            degree,
            values,
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total mass `y_0`.
    pub fn mass(&self) -> f64 {
        self.values[0]
    }

    pub fn get(&self, alpha: &Monomial) -> Option<f64> {
        MonomialIndex::new(self.nvars, self.degree)
            .position(alpha.exponents())
            .map(|p| self.values[p])
    }

    /// Restriction to moments of degree at most `degree`.
    pub fn truncate(&self, degree: usize) -> Result<Self> {
        if degree > self.degree {
            return Err(Error::Degree {
                needed: degree,
                available: self.degree,
            });
        }
        let len = binomial(self.nvars + degree, degree);
        Ok(TruncatedMomentSequence {
            nvars: self.nvars,
            degree,
            values: self.values[..len].to_vec(),
        })
    }
}

/// Symmetric matrix whose cells are linear forms in the moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicMatrix {
    labels: Vec<Monomial>,
    cells: Vec<Vec<(usize, f64)>>,
}

impl SymbolicMatrix {
    /// `M_k`: cell `(beta, gamma)` is `y_{beta+gamma}`.
    pub fn moment(index: &MonomialIndex, k: usize) -> Result<Self> {
        Self::localizing(&Polynomial::constant(index.nvars(), 1.0), index, k)
    }

    /// Localizing matrix of `h` at order `k`, over the basis of degree
    /// `k - ceil(deg h / 2)`.
    pub fn localizing(h: &Polynomial, index: &MonomialIndex, k: usize) -> Result<Self> {
        let half = h.degree().div_ceil(2);
        if half > k {
            return Err(Error::Order(format!(
                "localizing order {k} below half degree {half}"
            )));
        }
        if 2 * k > index.degree() {
            return Err(Error::Degree {
                needed: 2 * k,
                available: index.degree(),
            });
        }
        let labels = monomial_basis(index.nvars(), k - half);
        let s = labels.len();
        let mut cells = vec![Vec::new(); s * s];
        for a in 0..s {
            for b in a..s {
                let bg = labels[a].mul(&labels[b]);
                let mut cell: Vec<(usize, f64)> = h
                    .terms()
                    .map(|(m, c)| (index.product_position(m, &bg).expect("degree checked"), c))
                    .collect();
                cell.sort_by_key(|e| e.0);
                cells[b * s + a] = cell.clone();
                cells[a * s + b] = cell;
            }
        }
        Ok(SymbolicMatrix { labels, cells })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Monomial] {
        &self.labels
    }

    pub fn cell(&self, a: usize, b: usize) -> &[(usize, f64)] {
        &self.cells[a * self.size() + b]
    }

    /// Largest moment index referenced, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.cells.iter().flatten().map(|e| e.0).max()
    }

    /// Numeric value at `y`.
    pub fn evaluate(&self, y: &[f64]) -> Mat<f64> {
        let s = self.size();
        Mat::from_fn(s, s, |a, b| {
            self.cell(a, b).iter().map(|&(i, c)| c * y[i]).sum()
        })
    }

    /// Adjoint map: `out[i] = sum over cells of coeff * X[cell]` for moments
    /// `i`, so that `<X, M(y)> = out . y`.
    pub fn adjoint(&self, x: faer::MatRef<'_, f64>, num_moments: usize) -> Vec<f64> {
        let s = self.size();
        let mut out = vec![0.0; num_moments];
        for a in 0..s {
            for b in 0..s {
                let v = x[(a, b)];
                if v != 0.0 {
                    for &(i, c) in self.cell(a, b) {
                        out[i] += c * v;
                    }
                }
            }
        }
        out
    }
}

/// One linear equality `sum coeffs . y = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub label: String,
}

/// Equality-constrained moment SDP: minimise `objective . y` subject to the
/// equalities, `psd_blocks(y) >= 0` and `zero_blocks(y) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub nvars: usize,
    /// Relaxation order `k`; moments go up to degree `2k`.
    pub order: usize,
    pub num_moments: usize,
    pub objective: Vec<f64>,
    pub equalities: Vec<LinearRow>,
    pub psd_blocks: Vec<SymbolicMatrix>,
    pub zero_blocks: Vec<SymbolicMatrix>,
    /// A proved bound on `|y_i|` over the feasible set; used to turn an
    /// inexact dual certificate into a rigorous margin.
    pub moment_bound: f64,
}

impl SdpProblem {
    /// Checks index ranges and non-empty rows.
    pub fn validate(&self) -> Result<()> {
        if self.num_moments == 0 {
            return Err(Error::Problem("no moments".into()));
        }
        if self.objective.len() != self.num_moments {
            return Err(Error::Problem(format!(
                "objective has {} entries for {} moments",
                self.objective.len(),
                self.num_moments
            )));
        }
        if self.psd_blocks.is_empty() && self.equalities.is_empty() {
            return Err(Error::Problem("no constraints".into()));
        }
        for (r, row) in self.equalities.iter().enumerate() {
            if row.coeffs.is_empty() {
                return Err(Error::Problem(format!("equality {r} is empty")));
            }
            if row.coeffs.iter().any(|e| e.0 >= self.num_moments) {
                return Err(Error::Problem(format!(
                    "equality {r} references a missing moment"
                )));
            }
        }
        for blk in self.psd_blocks.iter().chain(&self.zero_blocks) {
            if blk.max_index().is_some_and(|i| i >= self.num_moments) {
                return Err(Error::Problem("block references a missing moment".into()));
            }
        }
        if !(self.moment_bound > 0.0) {
            return Err(Error::Problem("moment bound must be positive".into()));
        }
        Ok(())
    }

    /// All linear equalities: the explicit ones, then one row per distinct
    /// cell of every zero block (upper triangle, row-major). Certificates
    /// index their multipliers by this list.
    pub fn linear_rows(&self) -> Vec<LinearRow> {
        let mut rows = self.equalities.clone();
        for (z, blk) in self.zero_blocks.iter().enumerate() {
            let mut seen: HashSet<Vec<(usize, u64)>> = HashSet::new();
            for a in 0..blk.size() {
                for b in a..blk.size() {
                    let cell = blk.cell(a, b);
                    if cell.is_empty() {
                        continue;
                    }
                    let key = cell.iter().map(|&(i, c)| (i, c.to_bits())).collect();
                    if seen.insert(key) {
                        rows.push(LinearRow {
                            coeffs: cell.to_vec(),
                            rhs: 0.0,
                            label: format!("zero{} [{}, {}]", z + 1, blk.labels[a], blk.labels[b]),
                        });
                    }
                }
            }
        }
        rows
    }

    /// Sparse text dump, one nonzero per line, all indices 1-based:
    /// `psd|zero <block> <row> <col> <moment> <coeff>` (upper triangle),
    /// `eq <row> <moment> <coeff>`, `rhs <row> <value>`, `obj <moment> <coeff>`,
    /// and `moment <index> <monomial>`.
    pub fn dump(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "# moments {} order {} nvars {}",
            self.num_moments, self.order, self.nvars
        )?;
        for (i, m) in monomial_basis(self.nvars, 2 * self.order)
            .iter()
            .enumerate()
        {
            if i >= self.num_moments {
                break;
            }
            writeln!(w, "moment {} {}", i + 1, m)?;
        }
        for (kind, blocks) in [("psd", &self.psd_blocks), ("zero", &self.zero_blocks)] {
            for (bi, blk) in blocks.iter().enumerate() {
                for a in 0..blk.size() {
                    for b in a..blk.size() {
                        for &(i, c) in blk.cell(a, b) {
                            writeln!(w, "{kind} {} {} {} {} {c:e}", bi + 1, a + 1, b + 1, i + 1)?;
                        }
                    }
                }
            }
        }
        for (r, row) in self.equalities.iter().enumerate() {
            for &(i, c) in &row.coeffs {
                writeln!(w, "eq {} {} {c:e}", r + 1, i + 1)?;
            }
            writeln!(w, "rhs {} {:e}", r + 1, row.rhs)?;
        }
        for (i, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                writeln!(w, "obj {} {c:e}", i + 1)?;
            }
        }
        Ok(())
    }
}

/// Riesz functional `L_y(p) = sum_alpha p_alpha y_alpha`.
pub fn riesz(p: &Polynomial, y: &TruncatedMomentSequence) -> Result<f64> {
    if p.degree() > y.degree() {
        return Err(Error::Degree {
            needed: p.degree(),
            available: y.degree(),
        });
    }
    if p.nvars() != y.nvars() {
        return Err(Error::Dimension(format!(
            "polynomial in {} variables, moments in {}",
            p.nvars(),
            y.nvars()
        )));
    }
    let index = MonomialIndex::new(y.nvars(), y.degree());
    Ok(p.terms()
        .map(|(m, c)| c * y.values()[index.position(m.exponents()).expect("degree checked")])
        .sum())
}

/// Moment matrix `M_k(y)`.
pub fn moment_matrix(y: &TruncatedMomentSequence, k: usize) -> Result<Mat<f64>> {
    let index = MonomialIndex::new(y.nvars(), y.degree());
    Ok(SymbolicMatrix::moment(&index, k)?.evaluate(y.values()))
}

/// Localizing matrix `L_h^(k)(y)`.
pub fn localizing_matrix(
    h: &Polynomial,
    y: &TruncatedMomentSequence,
    k: usize,
) -> Result<Mat<f64>> {
    let index = MonomialIndex::new(y.nvars(), y.degree());
    Ok(SymbolicMatrix::localizing(h, &index, k)?.evaluate(y.values()))
}

fn row_from(p: &Polynomial, index: &MonomialIndex) -> Vec<(usize, f64)> {
    let mut row: Vec<(usize, f64)> = p
        .terms()
        .map(|(m, c)| (index.position(m.exponents()).expect("degree checked"), c))
        .collect();
    row.sort_by_key(|e| e.0);
    row
}

/// Assembles relaxation level `k` for the tensor `h`.
pub fn assemble_sdp(
    h: &HermitianTensor,
    mode: Mode,
    k: usize,
    f: &Polynomial,
) -> Result<SdpProblem> {
    let dims = h.dims().clone();
    let layout = VariableLayout::new(mode, dims.clone())?;
    let m = dims.parties();
    if k < m {
        return Err(Error::Order(format!("order {k} is below the {m} parties")));
    }
    if f.degree() > 2 * k {
        return Err(Error::Order(format!(
            "objective degree {} exceeds 2k = {}",
            f.degree(),
            2 * k
        )));
    }
    let nvars = layout.nvars();
    if f.nvars() != nvars {
        return Err(Error::Dimension(format!(
            "objective in {} variables, layout has {nvars}",
            f.nvars()
        )));
    }
    let symmetric = mode == Mode::Symmetric;
    if symmetric {
        let report = check_structure(h, SYMMETRY_TOL);
        if !report.symmetric {
            return Err(Error::NotSymmetric {
                max_deviation: report.max_permutation_deviation,
            });
        }
    }
    let index = MonomialIndex::new(nvars, 2 * k);
    let mut equalities = Vec::new();
    for pair in reduced_index_pairs(&dims, symmetric)? {
        let (r, t) = expand_pij(&layout, &pair.i, &pair.j)?;
        let value = h.get(&pair.i, &pair.j);
        let name = format!("{:?},{:?}", one_based(&pair.i), one_based(&pair.j));
        equalities.push(LinearRow {
            coeffs: row_from(&r, &index),
            rhs: value.re,
            label: format!("re ({name})"),
        });
        if !t.is_zero() {
            equalities.push(LinearRow {
                coeffs: row_from(&t, &index),
                rhs: value.im,
                label: format!("im ({name})"),
            });
        }
    }
    let zero_blocks = sphere_constraints(&layout)
        .iter()
        .map(|s| SymbolicMatrix::localizing(s, &index, k))
        .collect::<Result<Vec<_>>>()?;
    let mut objective = vec![0.0; index.len()];
    for (mono, c) in f.terms() {
        objective[index.position(mono.exponents()).expect("degree checked")] = c;
    }
    let problem = SdpProblem {
        nvars,
        order: k,
        num_moments: index.len(),
        objective,
        equalities,
        psd_blocks: vec![SymbolicMatrix::moment(&index, k)?],
        zero_blocks,
        moment_bound: h.trace().abs().max(f64::MIN_POSITIVE),
    };
    problem.validate()?;
    Ok(problem)
}

fn one_based(i: &[usize]) -> Vec<usize> {
    i.iter().map(|v| v + 1).collect()
}
