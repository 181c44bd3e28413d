//! Hermitian tensors, state ensembles and positive product decompositions.
//!
//! A Hermitian tensor of an `m`-partite system with local dimensions
//! `(n_1, ..., n_m)` is stored densely as a `D x D` complex matrix, where
//! `D = n_1 * ... * n_m`. Row and column positions are multi-indices
//! flattened lexicographically with party 1 varying slowest, which is the
//! usual Kronecker ordering of `|i_1 i_2 ... i_m>`.
//!
//! Multi-indices are 0-based in the Rust API. Text dumps print them 1-based.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance on ensemble weight sums and amplitude norms.
pub const ENSEMBLE_TOL: f64 = 1e-10;
/// Tolerance on the unit norm of decomposition vectors.
pub const UNIT_TOL: f64 = 1e-9;

/// Local dimensions `(n_1, ..., n_m)` of an `m`-partite system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PartyDims(Vec<usize>);

impl TryFrom<Vec<usize>> for PartyDims {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        PartyDims::new(dims)
    }
}

impl From<PartyDims> for Vec<usize> {
    fn from(d: PartyDims) -> Self {
        d.0
    }
}

impl PartyDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension("at least one party is required".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "local dimensions must be positive, got {dims:?}"
            )));
        }
        Ok(PartyDims(dims))
    }

    /// `m` parties, each of local dimension `n`.
    pub fn uniform(parties: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; parties])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of parties `m`.
    pub fn parties(&self) -> usize {
        self.0.len()
    }

    pub fn local(&self, party: usize) -> usize {
        self.0[party]
    }

    /// Sum of the local dimensions.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Product of the local dimensions (the Hilbert space dimension).
    pub fn size(&self) -> usize {
        self.0.iter().product()
    }

    /// Offset of the real block of `party` in the partitioned variable
    /// layout: twice the sum of the preceding local dimensions.
    pub fn block_offset(&self, party: usize) -> usize {
        2 * self.0[..party].iter().sum::<usize>()
    }

    /// True when every party has the same local dimension.
    pub fn is_uniform(&self) -> bool {
        self.0.windows(2).all(|w| w[0] == w[1])
    }

    pub fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.0.len() {
            return Err(Error::Index(format!(
                "expected {} components, got {}",
                self.0.len(),
                idx.len()
            )));
        }
        if let Some((k, &i)) = idx.iter().enumerate().find(|(k, &i)| i >= self.0[*k]) {
            return Err(Error::Index(format!(
                "component {} = {} out of range 0..{}",
                k, i, self.0[k]
            )));
        }
        Ok(())
    }

    /// Lexicographic position of a multi-index, party 1 slowest.
    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.0).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.0.len()];
        for k in (0..self.0.len()).rev() {
            idx[k] = flat % self.0[k];
            flat /= self.0[k];
        }
        idx
    }

    /// All multi-indices in lexicographic order.
    pub fn multi_indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.size()).map(move |f| self.unflatten(f))
    }
}

/// Dense Hermitian tensor indexed by half-subscript pairs `(I, J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianTensor {
    dims: PartyDims,
    entries: Vec<C64>,
}

impl HermitianTensor {
    pub fn zeros(dims: PartyDims) -> Self {
        let d = dims.size();
        HermitianTensor {
            dims,
            entries: vec![C64::new(0.0, 0.0); d * d],
        }
    }

    pub fn dims(&self) -> &PartyDims {
        &self.dims
    }

    /// Side length `D` of the flattened matrix.
    pub fn dim(&self) -> usize {
        self.dims.size()
    }

    pub fn get(&self, i: &[usize], j: &[usize]) -> C64 {
        self.entry(self.dims.flatten(i), self.dims.flatten(j))
    }

    /// Entry at flattened positions.
    pub fn entry(&self, a: usize, b: usize) -> C64 {
        self.entries[a * self.dim() + b]
    }

    pub(crate) fn entry_mut(&mut self, a: usize, b: usize) -> &mut C64 {
        let d = self.dim();
        &mut self.entries[a * d + b]
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    /// Real part of the sum of the diagonal entries.
    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|a| self.entry(a, a).re).sum()
    }

    /// Largest `|H_IJ - conj(H_JI)|`.
    pub fn max_asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in a..d {
                worst = worst.max((self.entry(a, b) - self.entry(b, a).conj()).norm());
            }
        }
        worst
    }

    pub fn scaled(&self, factor: f64) -> Self {
        HermitianTensor {
            dims: self.dims.clone(),
            entries: self.entries.iter().map(|z| z * factor).collect(),
        }
    }

    /// The flattened matrix as rows.
    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        self.entries
            .chunks(self.dim())
            .map(|r| r.to_vec())
            .collect()
    }
}

/// One pure-state term of a mixed-state ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTerm {
    pub weight: f64,
    /// Amplitudes in flattened lexicographic order.
    pub amplitudes: Vec<C64>,
}

/// A convex combination of pure states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEnsemble {
    dims: PartyDims,
    terms: Vec<EnsembleTerm>,
}

impl StateEnsemble {
    /// Validates positivity, unit weight sum and unit amplitude norms.
    pub fn new(dims: PartyDims, terms: Vec<EnsembleTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Ensemble("ensemble has no terms".into()));
        }
        let size = dims.size();
        for (i, t) in terms.iter().enumerate() {
            if t.amplitudes.len() != size {
                return Err(Error::Dimension(format!(
                    "term {i} has {} amplitudes, dims {:?} need {size}",
                    t.amplitudes.len(),
                    dims.as_slice()
                )));
            }
            if !(t.weight > 0.0) {
                return Err(Error::Ensemble(format!(
                    "term {i} has non-positive weight {}",
                    t.weight
                )));
            }
            let norm = t
                .amplitudes
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > ENSEMBLE_TOL {
                return Err(Error::Ensemble(format!(
                    "term {i} amplitudes have norm {norm}, expected 1"
                )));
            }
        }
        let total: f64 = terms.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > ENSEMBLE_TOL {
            return Err(Error::Ensemble(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(StateEnsemble { dims, terms })
    }

    /// Builds an ensemble after normalising every amplitude vector and the
    /// weights. Useful for amplitudes quoted to a few decimals.
    pub fn normalized(dims: PartyDims, terms: Vec<EnsembleTerm>) -> Result<Self> {
        let total: f64 = terms.iter().map(|t| t.weight).sum();
        let terms = terms
            .into_iter()
            .map(|t| {
                let norm = t
                    .amplitudes
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                EnsembleTerm {
                    weight: t.weight / total,
                    amplitudes: t.amplitudes.iter().map(|z| z / norm).collect(),
                }
            })
            .collect();
        Self::new(dims, terms)
    }

    pub fn dims(&self) -> &PartyDims {
        &self.dims
    }

    pub fn terms(&self) -> &[EnsembleTerm] {
        &self.terms
    }
}

/// One weighted product term `lambda * u1 ⊗ ... ⊗ um ⊗ conj(u1) ⊗ ... ⊗ conj(um)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    /// One unit vector per party, or a single vector in symmetric mode.
    pub vectors: Vec<Vec<C64>>,
}

/// A positive Hermitian decomposition, plain or symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub symmetric: bool,
    pub atoms: Vec<Atom>,
    /// Frobenius distance to the tensor the decomposition was fitted to.
    pub residual: Option<f64>,
}

impl Decomposition {
    pub fn rank(&self) -> usize {
        self.atoms.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Checks positive weights and unit vectors.
    pub fn validate(&self) -> Result<()> {
        for (i, atom) in self.atoms.iter().enumerate() {
            if !(atom.weight > 0.0) {
                return Err(Error::Ensemble(format!(
                    "atom {i} has non-positive weight {}",
                    atom.weight
                )));
            }
            for v in &atom.vectors {
                let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > UNIT_TOL {
                    return Err(Error::Ensemble(format!(
                        "atom {i} has a vector of norm {norm}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of [`check_structure`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureReport {
    pub hermitian: bool,
    pub symmetric: bool,
    pub trace: f64,
    pub max_asymmetry: f64,
    /// Largest change of an entry under a simultaneous party permutation;
    /// infinite when the local dimensions differ.
    pub max_permutation_deviation: f64,
}

/// Density tensor `sum_i p_i chi_i ⊗ conj(chi_i)` of an ensemble.
pub fn ensemble_to_tensor(ensemble: &StateEnsemble) -> Result<HermitianTensor> {
    let dims = ensemble.dims().clone();
    let d = dims.size();
    let mut h = HermitianTensor::zeros(dims);
    for term in ensemble.terms() {
        if term.amplitudes.len() != d {
            return Err(Error::Dimension(format!(
                "amplitude vector of length {} for dimension {d}",
                term.amplitudes.len()
            )));
        }
        add_outer(&mut h, term.weight, &term.amplitudes);
    }
    Ok(h)
}

/// Reinterprets a density matrix as a Hermitian tensor.
pub fn density_to_tensor(matrix: &[Vec<C64>], dims: &PartyDims) -> Result<HermitianTensor> {
    let d = dims.size();
    if matrix.len() != d || matrix.iter().any(|row| row.len() != d) {
        return Err(Error::Dimension(format!(
            "density matrix must be {d}x{d} for dims {:?}",
            dims.as_slice()
        )));
    }
    let mut h = HermitianTensor::zeros(dims.clone());
    for (a, row) in matrix.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            *h.entry_mut(a, b) = v;
        }
    }
    let asym = h.max_asymmetry();
    if asym > ENSEMBLE_TOL {
        return Err(Error::NotHermitian {
            max_asymmetry: asym,
        });
    }
    Ok(h)
}

/// Reports Hermitian symmetry, permutation symmetry and the trace.
pub fn check_structure(h: &HermitianTensor, tol: f64) -> StructureReport {
    let max_asymmetry = h.max_asymmetry();
    let max_permutation_deviation = permutation_deviation(h);
    StructureReport {
        hermitian: max_asymmetry <= tol,
        symmetric: max_permutation_deviation <= tol,
        trace: h.trace(),
        max_asymmetry,
        max_permutation_deviation,
    }
}

fn permutation_deviation(h: &HermitianTensor) -> f64 {
    let dims = h.dims();
    if !dims.is_uniform() {
        return f64::INFINITY;
    }
    let m = dims.parties();
    let d = h.dim();
    let mut worst = 0.0f64;
    // adjacent transpositions generate every permutation
    for k in 0..m.saturating_sub(1) {
        for a in 0..d {
            let mut i = dims.unflatten(a);
            i.swap(k, k + 1);
            let pa = dims.flatten(&i);
            for b in 0..d {
                let mut j = dims.unflatten(b);
                j.swap(k, k + 1);
                let pb = dims.flatten(&j);
                worst = worst.max((h.entry(a, b) - h.entry(pa, pb)).norm());
            }
        }
    }
    worst
}

/// Averages every entry over the orbit of simultaneous party permutations.
pub fn symmetrize(h: &HermitianTensor) -> Result<HermitianTensor> {
    let dims = h.dims();
    if !dims.is_uniform() {
        return Err(Error::UnequalDims(dims.as_slice().to_vec()));
    }
    let perms = permutations(dims.parties());
    let scale = 1.0 / perms.len() as f64;
    let d = h.dim();
    let mut out = HermitianTensor::zeros(dims.clone());
    for a in 0..d {
        let i = dims.unflatten(a);
        for b in 0..d {
            let j = dims.unflatten(b);
            let mut acc = C64::new(0.0, 0.0);
            for p in &perms {
                let pi: Vec<usize> = p.iter().map(|&k| i[k]).collect();
                let pj: Vec<usize> = p.iter().map(|&k| j[k]).collect();
                acc += h.get(&pi, &pj);
            }
            *out.entry_mut(a, b) = acc * scale;
        }
    }
    Ok(out)
}

/// All permutations of `0..m` in lexicographic order.
pub(crate) fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                rec(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(m), &mut vec![false; m], &mut out);
    out
}

/// A half-subscript pair `(I, J)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexPair {
    pub i: Vec<usize>,
    pub j: Vec<usize>,
}

impl IndexPair {
    pub fn is_diagonal(&self) -> bool {
        self.i == self.j
    }
}

/// Index pairs that carry the independent matching conditions.
///
/// Plain mode keeps `I <= J` (lexicographic), since the `(J, I)` condition
/// is the conjugate of the `(I, J)` one. Symmetric mode additionally
/// requires `I` to be non-decreasing; `J` is left free so that entries such
/// as `H[(1,2),(2,1)]` remain constrained. Output is lexicographic in
/// `(I, J)`.
pub fn reduced_index_pairs(dims: &PartyDims, symmetric: bool) -> Result<Vec<IndexPair>> {
    if symmetric && !dims.is_uniform() {
        return Err(Error::UnequalDims(dims.as_slice().to_vec()));
    }
    let all: Vec<Vec<usize>> = dims.multi_indices().collect();
    let mut out = Vec::new();
    for i in &all {
        if symmetric && i.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        for j in all.iter().filter(|j| i <= *j) {
            out.push(IndexPair {
                i: i.clone(),
                j: j.clone(),
            });
        }
    }
    Ok(out)
}

fn add_outer(h: &mut HermitianTensor, weight: f64, psi: &[C64]) {
    let d = psi.len();
    for a in 0..d {
        let left = psi[a] * weight;
        if left == C64::new(0.0, 0.0) {
            continue;
        }
        for b in 0..d {
            *h.entry_mut(a, b) += left * psi[b].conj();
        }
    }
}

/// Kronecker product `v_1 ⊗ ... ⊗ v_m` in lexicographic order.
pub fn kron(vectors: &[&[C64]]) -> Vec<C64> {
    vectors.iter().fold(vec![C64::new(1.0, 0.0)], |acc, v| {
        acc.iter()
            .flat_map(|a| v.iter().map(move |b| a * b))
            .collect()
    })
}

/// Sums the weighted rank-one terms of a decomposition.
pub fn reconstruct(decomposition: &Decomposition, dims: &PartyDims) -> Result<HermitianTensor> {
    let mut h = HermitianTensor::zeros(dims.clone());
    for (idx, atom) in decomposition.atoms.iter().enumerate() {
        let parts = atom_party_vectors(atom, decomposition.symmetric, dims)
            .map_err(|e| Error::Dimension(format!("atom {idx}: {e}")))?;
        add_outer(&mut h, atom.weight, &kron(&parts));
    }
    Ok(h)
}

pub(crate) fn atom_party_vectors<'a>(
    atom: &'a Atom,
    symmetric: bool,
    dims: &PartyDims,
) -> std::result::Result<Vec<&'a [C64]>, String> {
    if symmetric {
        if !dims.is_uniform() {
            return Err(format!(
                "symmetric atoms need uniform dims, got {:?}",
                dims.as_slice()
            ));
        }
        match atom.vectors.as_slice() {
            [u] if u.len() == dims.local(0) => Ok(vec![u.as_slice(); dims.parties()]),
            _ => Err(format!("expected one vector of length {}", dims.local(0))),
        }
    } else {
        if atom.vectors.len() != dims.parties()
            || atom
                .vectors
                .iter()
                .zip(dims.as_slice())
                .any(|(v, &n)| v.len() != n)
        {
            return Err(format!("expected vectors of lengths {:?}", dims.as_slice()));
        }
        Ok(atom.vectors.iter().map(|v| v.as_slice()).collect())
    }
}

/// Frobenius distance between two tensors of equal dims.
pub fn residual(a: &HermitianTensor, b: &HermitianTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "dims {:?} and {:?} differ",
            a.dims().as_slice(),
            b.dims().as_slice()
        )));
    }
    Ok(a.entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt())
}
