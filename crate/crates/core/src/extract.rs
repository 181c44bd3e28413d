//! Flatness test, atom extraction from flat moment sequences, and the map
//! from atoms back to product-state decompositions.
//!
//! Extraction uses multiplication matrices: with `M_t = W W^T` of rank `r`,
//! a set `B` of `r` monomials of degree `< t` whose rows of `W` are
//! independent spans the quotient space, and multiplying by `x_j` acts on it
//! as a matrix `N_j`. The `N_j` commute and share their eigenvectors; the
//! eigenvalues are the atom coordinates.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{lstsq, singular_values, sym_eigen};
use crate::error::{Error, Result};
use crate::moments::{moment_matrix, MonomialIndex, TruncatedMomentSequence};
use crate::poly::{monomial_basis, Mode, Monomial, Polynomial, VariableLayout};
use crate::tensor::{reconstruct, residual, Atom, Decomposition, HermitianTensor, C64};

pub const DEFAULT_RANK_TOL: f64 = 1e-6;
pub const DEFAULT_ATOM_TOL: f64 = 1e-6;

const MAX_ATTEMPTS: usize = 5;
// eigenvalues of the random combination closer than this (relative) count
// as a cluster
const CLUSTER_TOL: f64 = 1e-8;
const COMPLEX_TOL: f64 = 1e-8;
// components below this fraction of the largest are skipped when fixing the phase
const GAUGE_TOL: f64 = 1e-9;

/// Ranks of `M_{t-1}` and `M_t` for a sequence truncated to degree `2t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatWitness {
    pub t: usize,
    /// Numeric rank of `M_t`.
    pub rank: usize,
    /// Numeric rank of `M_{t-1}`.
    pub rank_prev: usize,
    /// Singular values of `M_t`, nonincreasing.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

impl FlatWitness {
    pub fn is_flat(&self) -> bool {
        self.rank == self.rank_prev
    }
}

/// Number of singular values above `rank_tol` times the largest one.
pub fn numeric_rank(singular_values: &[f64], rank_tol: f64) -> usize {
    let top = singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    count_above(singular_values, rank_tol * top)
}

fn count_above(values: &[f64], threshold: f64) -> usize {
    values.iter().filter(|&&s| s > threshold && s > 0.0).count()
}

/// Compares the ranks of `M_{t-1}(z)` and `M_t(z)` for `z = y` restricted to
/// degree `2t`. Both ranks use the same absolute threshold,
/// `rank_tol * sigma_max(M_t)`.
pub fn is_flat(y: &TruncatedMomentSequence, t: usize, rank_tol: f64) -> Result<FlatWitness> {
    if t == 0 {
        return Err(Error::Order("flatness needs t >= 1".into()));
    }
    if !(rank_tol > 0.0) {
        return Err(Error::Problem("rank_tol must be positive".into()));
    }
    let z = y.truncate(2 * t)?;
    let sv = singular_values(moment_matrix(&z, t)?.as_ref())?;
    let sv_prev = singular_values(moment_matrix(&z, t - 1)?.as_ref())?;
    let threshold = rank_tol * sv.first().copied().unwrap_or(0.0);
    Ok(FlatWitness {
        t,
        rank: count_above(&sv, threshold),
        rank_prev: count_above(&sv_prev, threshold),
        singular_values: sv,
        tolerance: rank_tol,
    })
}

/// A weighted point of an atomic measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAtom {
    pub weight: f64,
    pub point: Vec<f64>,
}

/// `sum_i weight_i delta_{point_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    pub nvars: usize,
    pub atoms: Vec<PointAtom>,
}

impl AtomicMeasure {
    pub fn moments(&self, degree: usize) -> Result<TruncatedMomentSequence> {
        let pairs: Vec<(f64, Vec<f64>)> = self
            .atoms
            .iter()
            .map(|a| (a.weight, a.point.clone()))
            .collect();
        TruncatedMomentSequence::from_atoms(self.nvars, degree, &pairs)
    }

    /// Largest `|h(x_i)|` over the atoms and the given constraints.
    pub fn max_violation(&self, constraints: &[Polynomial]) -> Result<f64> {
        let mut worst = 0.0f64;
        for a in &self.atoms {
            for h in constraints {
                worst = worst.max(h.evaluate(&a.point)?.abs());
            }
        }
        Ok(worst)
    }
}

/// Recovers the atomic measure behind a flat sequence. `seed` drives the
/// random combination of multiplication matrices; a combination with
/// clustered or complex eigenvalues is redrawn up to five times.
pub fn extract_atoms(z: &TruncatedMomentSequence, witness: &FlatWitness, seed: u64) -> Result<AtomicMeasure> {
    let t = witness.t;
    if !witness.is_flat() {
        return Err(Error::Extraction(format!(
            "not flat at t = {t} (ranks {} and {})",
            witness.rank_prev, witness.rank
        )));
    }
    let r = witness.rank;
    if r == 0 {
        return Err(Error::Extraction("moment matrix is numerically zero".into()));
    }
    let nv = z.nvars();
    let z = z.truncate(2 * t)?;
    let mt = moment_matrix(&z, t)?;
    let n = mt.nrows();
    let (vals, vecs) = sym_eigen(mt.as_ref())?;
    // W with M_t ~ W W^T, columns for the r largest eigenvalues
    let w = Mat::from_fn(n, r, |i, c| {
        let k = n - 1 - c;
        vecs[(i, k)] * vals[k].max(0.0).sqrt()
    });

    let index = MonomialIndex::new(nv, t);
    let low = index.count(t - 1);
    let basis_rows = pivot_rows(&w, low, r)?;
    let w_b = Mat::from_fn(r, r, |i, c| w[(basis_rows[i], c)]);
    // U = W W_B^{-1}: row alpha expresses x^alpha in the basis
    let lu = w_b.transpose().partial_piv_lu();
    let u = lu.solve(w.transpose().to_owned()).transpose().to_owned();

    let labels = monomial_basis(nv, t);
    let mult: Vec<Mat<f64>> = (0..nv)
        .map(|j| {
            let var = Monomial::var(nv, j);
            Mat::from_fn(r, r, |i, c| {
                let row = index
                    .product_position(&labels[basis_rows[i]], &var)
                    .expect("basis has degree below t");
                u[(row, c)]
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let mut coef: Vec<f64> = (0..nv).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = coef.iter().sum();
        coef.iter_mut().for_each(|c| *c /= total);
        match joint_points(&mult, &coef) {
            Ok(points) => return finish(&z, points),
            Err(e) => last = e,
        }
    }
    Err(Error::Extraction(format!(
        "no usable combination in {MAX_ATTEMPTS} attempts: {last}"
    )))
}

// Greedy pivoted Gram-Schmidt over the first `low` rows of `w`.
fn pivot_rows(w: &Mat<f64>, low: usize, r: usize) -> Result<Vec<usize>> {
    if low < r {
        return Err(Error::Extraction(format!(
            "rank {r} exceeds the {low} monomials of degree below t"
        )));
    }
    let cols = w.ncols();
    let mut rows: Vec<Vec<f64>> = (0..low).map(|i| (0..cols).map(|c| w[(i, c)]).collect()).collect();
    let scale = rows.iter().map(|v| crate::dense::norm2(v)).fold(0.0f64, f64::max);
    let mut chosen = Vec::with_capacity(r);
    for _ in 0..r {
        let (best, norm) = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, v)| (i, crate::dense::norm2(v)))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best == usize::MAX || !(norm > 1e-12 * scale) {
            return Err(Error::Extraction("degree t-1 moments do not reach the rank".into()));
        }
        chosen.push(best);
        let q: Vec<f64> = rows[best].iter().map(|v| v / norm).collect();
        for (i, v) in rows.iter_mut().enumerate() {
            if i == best || chosen.contains(&i) {
                continue;
            }
            let d = crate::dense::dot(v, &q);
            v.iter_mut().zip(&q).for_each(|(a, b)| *a -= d * b);
        }
    }
    Ok(chosen)
}

// Points from the eigenvectors of sum_j coef_j N_j.
fn joint_points(mult: &[Mat<f64>], coef: &[f64]) -> std::result::Result<Vec<Vec<f64>>, String> {
    let r = mult[0].nrows();
    let mut comb = Mat::<f64>::zeros(r, r);
    for (m, &c) in mult.iter().zip(coef) {
        comb += m * c;
    }
    let evd = comb.eigen().map_err(|e| format!("eigendecomposition failed: {e:?}"))?;
    let lambda: Vec<C64> = evd.S().column_vector().iter().copied().collect();
    let scale = lambda.iter().fold(1.0f64, |m, l| m.max(l.norm()));
    if lambda.iter().any(|l| l.im.abs() > COMPLEX_TOL * scale) {
        return Err("complex eigenvalues".into());
    }
    let mut sorted: Vec<f64> = lambda.iter().map(|l| l.re).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|p| p[1] - p[0] < CLUSTER_TOL * scale) {
        return Err("clustered eigenvalues".into());
    }
    let vecs = evd.U();
    // eigenvectors of real eigenvalues are real up to a complex factor
    let p = Mat::from_fn(r, r, |i, c| {
        let pivot = (0..r)
            .map(|k| vecs[(k, c)])
            .fold(C64::new(0.0, 0.0), |m, v| if v.norm() > m.norm() { v } else { m });
        (vecs[(i, c)] / pivot).re
    });
    let p_inv = p.partial_piv_lu().inverse();
    Ok((0..r)
        .map(|i| {
            mult.iter()
                .map(|m| {
                    let row = p_inv.row(i) * m;
                    (0..r).map(|k| row[k] * p[(k, i)]).sum()
                })
                .collect()
        })
        .collect())
}

fn finish(z: &TruncatedMomentSequence, points: Vec<Vec<f64>>) -> Result<AtomicMeasure> {
    let nv = z.nvars();
    let basis = monomial_basis(nv, z.degree());
    let a = Mat::from_fn(basis.len(), points.len(), |i, k| basis[i].evaluate(&points[k]));
    let weights = lstsq(a.as_ref(), z.values());
    let total: f64 = weights.iter().map(|w| w.abs()).sum();
    let mut atoms = Vec::with_capacity(points.len());
    for (weight, point) in weights.into_iter().zip(points) {
        if weight.abs() <= 1e-12 * total {
            continue;
        }
        if weight < 0.0 {
            return Err(Error::Extraction(format!("negative atom weight {weight:e}")));
        }
        atoms.push(PointAtom { weight, point });
    }
    if atoms.is_empty() {
        return Err(Error::Extraction("all atom weights vanish".into()));
    }
    Ok(AtomicMeasure { nvars: nv, atoms })
}

/// Rescales every party block of every atom to unit norm, after checking
/// that no block is further than `atom_tol` from the spheres.
pub fn project_onto(mu: &AtomicMeasure, layout: &VariableLayout, atom_tol: f64) -> Result<AtomicMeasure> {
    if mu.nvars != layout.nvars() {
        return Err(Error::Dimension(format!(
            "measure in {} variables, layout has {}",
            mu.nvars,
            layout.nvars()
        )));
    }
    let mut atoms = mu.atoms.clone();
    for (i, atom) in atoms.iter_mut().enumerate() {
        for b in 0..layout.blocks() {
            let range = layout.block_range(b);
            let sq: f64 = atom.point[range.clone()].iter().map(|v| v * v).sum();
            if (sq - 1.0).abs() > atom_tol {
                return Err(Error::Extraction(format!(
                    "atom {i} block {b} has squared norm {sq}, off the sphere by more than {atom_tol:e}"
                )));
            }
            let s = sq.sqrt();
            atom.point[range].iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(AtomicMeasure { nvars: mu.nvars, atoms })
}

/// Complex party vectors of a point, normalised, with the first
/// non-negligible component of each made real and nonnegative.
pub fn point_vectors(point: &[f64], layout: &VariableLayout) -> Vec<Vec<C64>> {
    (0..layout.blocks())
        .map(|b| {
            let u = layout.block_vector(point, b);
            gauge(&u)
        })
        .collect()
}

fn gauge(u: &[C64]) -> Vec<C64> {
    let norm = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return u.to_vec();
    }
    let big = u.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let phase = u
        .iter()
        .find(|z| z.norm() > GAUGE_TOL * big)
        .map(|z| z.conj() / z.norm())
        .unwrap_or(C64::new(1.0, 0.0));
    u.iter().map(|z| z * phase / norm).collect()
}

/// Turns atoms into a decomposition of `h`, refitting the weights by
/// nonnegative least squares against the tensor and dropping atoms whose
/// weight fits to zero.
pub fn atoms_to_decomposition(mu: &AtomicMeasure, layout: &VariableLayout, h: &HermitianTensor) -> Result<Decomposition> {
    if mu.nvars != layout.nvars() {
        return Err(Error::Dimension(format!(
            "measure in {} variables, layout has {}",
            mu.nvars,
            layout.nvars()
        )));
    }
    if h.dims() != layout.dims() {
        return Err(Error::Dimension(format!(
            "tensor dims {:?}, layout dims {:?}",
            h.dims().as_slice(),
            layout.dims().as_slice()
        )));
    }
    let symmetric = layout.mode() == Mode::Symmetric;
    let candidates: Vec<Atom> = mu
        .atoms
        .iter()
        .map(|a| Atom {
            weight: 1.0,
            vectors: point_vectors(&a.point, layout),
        })
        .collect();
    let entries = h.entries().len();
    let mut a = Mat::<f64>::zeros(2 * entries, candidates.len());
    for (k, atom) in candidates.iter().enumerate() {
        let single = Decomposition {
            symmetric,
            atoms: vec![atom.clone()],
            residual: None,
        };
        let term = reconstruct(&single, layout.dims())?;
        for (i, z) in term.entries().iter().enumerate() {
            a[(i, k)] = z.re;
            a[(entries + i, k)] = z.im;
        }
    }
    let target: Vec<f64> = h
        .entries()
        .iter()
        .map(|z| z.re)
        .chain(h.entries().iter().map(|z| z.im))
        .collect();
    let weights = nnls(&a, &target);
    let atoms: Vec<Atom> = candidates
        .into_iter()
        .zip(weights)
        .filter(|(_, w)| *w > 0.0)
        .map(|(atom, weight)| Atom { weight, ..atom })
        .collect();
    if atoms.is_empty() {
        return Err(Error::Extraction("every atom weight fits to zero".into()));
    }
    let mut dec = Decomposition {
        symmetric,
        atoms,
        residual: None,
    };
    dec.residual = Some(residual(h, &reconstruct(&dec, layout.dims())?)?);
    Ok(dec)
}

/// Lawson-Hanson nonnegative least squares: `min |A x - b|`, `x >= 0`.
pub(crate) fn nnls(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let norm1 = (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let tol = 10.0 * f64::EPSILON * norm1 * m.max(n) as f64;
    let gradient = |x: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = (0..m)
            .map(|i| b[i] - (0..n).map(|j| a[(i, j)] * x[j]).sum::<f64>())
            .collect();
        (0..n).map(|j| (0..m).map(|i| a[(i, j)] * r[i]).sum()).collect()
    };
    let solve_passive = |passive: &[bool]| -> Vec<f64> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = Mat::from_fn(m, cols.len(), |i, k| a[(i, cols[k])]);
        let sol = lstsq(sub.as_ref(), b);
        let mut s = vec![0.0; n];
        for (k, &j) in cols.iter().enumerate() {
            s[j] = sol[k];
        }
        s
    };
    for _ in 0..3 * n.max(1) {
        let w = gradient(&x);
        let Some(j) = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&p, &q| w[p].total_cmp(&w[q]))
        else {
            break;
        };
        passive[j] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..n).filter(|&k| passive[k]).all(|k| s[k] > 0.0) {
                x = s;
                break;
            }
            let alpha = (0..n)
                .filter(|&k| passive[k] && s[k] <= 0.0)
                .map(|k| x[k] / (x[k] - s[k]))
                .fold(f64::INFINITY, f64::min);
            for k in 0..n {
                x[k] += alpha * (s[k] - x[k]);
                if passive[k] && x[k] <= tol {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}
