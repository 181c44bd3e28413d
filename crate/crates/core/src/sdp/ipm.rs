//! Primal-dual interior-point method on the homogeneous self-dual
//! embedding of
//!
//! ```text
//! minimise c.x  subject to  G x + s = h,  s >= 0
//! maximise -h.z subject to  G^T z + c = 0, z >= 0
//! ```
//!
//! where `x` are the free moment coordinates left by presolve and each PSD
//! block is restricted to the complement of its structural kernel, i.e.
//! `G x = -Q^T M(T x) Q` and `h = Q^T M(y_p) Q`.

use faer::linalg::solvers::Solve;
use faer::Mat;

use super::presolve::Reduction;
use super::IterationRecord;
use crate::dense::{cholesky, dot, frobenius, inner, min_eigenvalue, norm2, symmetrize_in_place};
use crate::moments::SymbolicMatrix;

const STEP_FRACTION: f64 = 0.98;
const STALL_MU: f64 = 1e-14;
const NEAR_FACTOR: f64 = 10.0;
const KKT_REFINE: usize = 2;
// relative error in the dual equations above which the normal equations
// are abandoned for the QR route
const KKT_ACCURACY: f64 = 1e-9;

pub(crate) struct BlockOp<'a> {
    pub sym: &'a SymbolicMatrix,
    /// Orthonormal basis (n x m) of the part of the block that can move.
    pub q: Mat<f64>,
    pub h: Mat<f64>,
    /// For every moment, the cells `(a, b, coeff)` that reference it.
    pub by_moment: Vec<Vec<(u32, u32, f64)>>,
}

impl<'a> BlockOp<'a> {
    pub fn new(sym: &'a SymbolicMatrix, q: Mat<f64>, y_p: &[f64], num_moments: usize) -> Self {
        let n = sym.size();
        let mut by_moment = vec![Vec::new(); num_moments];
        for a in 0..n {
            for b in 0..n {
                for &(i, c) in sym.cell(a, b) {
                    by_moment[i].push((a as u32, b as u32, c));
                }
            }
        }
        let h = {
            let m = sym.evaluate(y_p);
            q.transpose() * &m * &q
        };
        BlockOp {
            sym,
            q,
            h,
            by_moment,
        }
    }

    pub fn reduced_size(&self) -> usize {
        self.q.ncols()
    }

    /// `Q Z Q^T`.
    pub fn lift(&self, z: &Mat<f64>) -> Mat<f64> {
        &self.q * z * self.q.transpose()
    }
}

pub(crate) struct Conic<'a> {
    pub red: &'a Reduction,
    pub blocks: Vec<BlockOp<'a>>,
    pub c: Vec<f64>,
}

pub(crate) enum Outcome {
    Optimal {
        x: Vec<f64>,
        z: Vec<Mat<f64>>,
        tau: f64,
    },
    Infeasible,
    /// Carries the best iterate seen, if any.
    Unknown {
        why: String,
        best: Option<(Vec<f64>, Vec<Mat<f64>>, f64)>,
    },
}

pub(crate) struct RunStats {
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    pub log: Vec<IterationRecord>,
}

type Blocks = Vec<Mat<f64>>;

fn blocks_norm(b: &Blocks) -> f64 {
    b.iter()
        .map(|m| frobenius(m.as_ref()).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn blocks_inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| inner(x.as_ref(), y.as_ref()))
        .sum()
}

#[derive(Clone)]
struct Scaling {
    r: Mat<f64>,
    lambda: Vec<f64>,
    /// `P^{-1} = R^{-T} R^{-1}`
    v: Mat<f64>,
    /// `R^{-T}`
    rit: Mat<f64>,
}

fn nt_scaling(s: &Mat<f64>, z: &Mat<f64>) -> Option<Scaling> {
    let ls = cholesky(s.as_ref())?;
    let lz = cholesky(z.as_ref())?;
    let m = lz.transpose() * &ls;
    let svd = m.svd().ok()?;
    let lambda: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let n = lambda.len();
    let isq = Mat::from_fn(
        n,
        n,
        |a, b| if a == b { 1.0 / lambda[a].sqrt() } else { 0.0 },
    );
    let r = &ls * svd.V() * &isq;
    // R^{-T}
    let rit = &lz * svd.U() * &isq;
    let mut v = &rit * rit.transpose();
    symmetrize_in_place(&mut v);
    Some(Scaling { r, lambda, v, rit })
}

// largest alpha with Lambda + alpha D >= 0 (infinity if unbounded)
fn max_step(lambda: &[f64], d: &Mat<f64>) -> f64 {
    let n = lambda.len();
    if n == 0 {
        return f64::INFINITY;
    }
    let scaled = Mat::from_fn(n, n, |a, b| d[(a, b)] / (lambda[a] * lambda[b]).sqrt());
    match min_eigenvalue(scaled.as_ref()) {
        Ok(e) if e < 0.0 => -1.0 / e,
        Ok(_) => f64::INFINITY,
        Err(_) => 0.0,
    }
}

struct Direction {
    dx: Vec<f64>,
    dz: Blocks,
    ds: Blocks,
    ds_t: Blocks,
    dz_t: Blocks,
    dtau: f64,
    dkappa: f64,
}

impl Conic<'_> {
    fn p(&self) -> usize {
        self.c.len()
    }

    fn g_apply(&self, x: &[f64]) -> Blocks {
        let y = self.red.apply_t(x);
        self.blocks
            .iter()
            .map(|b| {
                let m = b.sym.evaluate(&y);
                (b.q.transpose() * &m * &b.q) * -1.0
            })
            .collect()
    }

    /// Moment-space adjoint `sum_b M_b^*(Q z_b Q^T)`.
    pub fn lifted_adjoint(&self, z: &Blocks) -> Vec<f64> {
        let n = self.red.num_moments;
        let mut g = vec![0.0; n];
        for (b, zb) in self.blocks.iter().zip(z) {
            let lifted = b.lift(zb);
            for (i, v) in b.sym.adjoint(lifted.as_ref(), n).into_iter().enumerate() {
                g[i] += v;
            }
        }
        g
    }

    fn gt_apply(&self, z: &Blocks) -> Vec<f64> {
        let g = self.lifted_adjoint(z);
        self.red.apply_tt(&g).into_iter().map(|v| -v).collect()
    }

    /// `sum_b T^T H_y(Q V_b Q^T) T` with `H_y[a, b] = <E_a, W E_b W>`.
    fn schur(&self, scalings: &[Scaling]) -> Mat<f64> {
        let nm = self.red.num_moments;
        let p = self.p();
        let mut total = Mat::<f64>::zeros(p, p);
        for (blk, sc) in self.blocks.iter().zip(scalings) {
            let w = blk.lift(&sc.v);
            let n = w.nrows();
            let mut hy = Mat::<f64>::zeros(nm, nm);
            for beta in 0..nm {
                let cells = &blk.by_moment[beta];
                if cells.is_empty() {
                    continue;
                }
                let k = cells.len();
                let a = Mat::from_fn(n, k, |r, t| cells[t].2 * w[(r, cells[t].0 as usize)]);
                let bm = Mat::from_fn(k, n, |t, r| w[(cells[t].1 as usize, r)]);
                let prod = &a * &bm;
                let mut col = hy.col_mut(beta);
                for rr in 0..n {
                    for cc in 0..n {
                        let v = prod[(rr, cc)];
                        for &(i, c) in blk.sym.cell(rr, cc) {
                            col[i] += c * v;
                        }
                    }
                }
            }
            // Y = H_y T, then T^T Y
            let mut y = Mat::<f64>::zeros(nm, p);
            for (j, tcol) in self.red.t_cols.iter().enumerate() {
                let mut yj = y.col_mut(j);
                for &(beta, c) in tcol {
                    let hcol = hy.col(beta);
                    for i in 0..nm {
                        yj[i] += c * hcol[i];
                    }
                }
            }
            for j in 0..p {
                let yj = y.col(j);
                for (i, tcol) in self.red.t_cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(alpha, c) in tcol {
                        acc += c * yj[alpha];
                    }
                    total[(i, j)] += acc;
                }
            }
        }
        symmetrize_in_place(&mut total);
        total
    }
}

enum Factor {
    /// Cholesky factor of the Schur complement `G^T P^{-1} G P^{-1}`.
    Normal {
        schur: Mat<f64>,
        llt: faer::linalg::solvers::Llt<f64>,
    },
    /// Thin QR of the scaled operator `B u = svec(R^{-1} G u R^{-T})`.
    Orthogonal {
        qr: faer::linalg::solvers::Qr<f64>,
        r: Mat<f64>,
    },
}

// applies Q or Q^T of a Householder QR to `x` in place
fn apply_q(qr: &faer::linalg::solvers::Qr<f64>, x: &mut Mat<f64>, transpose: bool) {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::linalg::householder as hh;
    let (basis, coeff) = (qr.Q_basis(), qr.Q_coeff());
    let (rows, block, cols) = (basis.nrows(), coeff.nrows(), x.ncols());
    if transpose {
        let req = hh::apply_block_householder_sequence_transpose_on_the_left_in_place_scratch::<f64>(rows, block, cols);
        hh::apply_block_householder_sequence_transpose_on_the_left_in_place_with_conj(
            basis,
            coeff,
            faer::Conj::No,
            x.as_mut(),
            faer::Par::Seq,
            MemStack::new(&mut MemBuffer::new(req)),
        );
    } else {
        let req = hh::apply_block_householder_sequence_on_the_left_in_place_scratch::<f64>(rows, block, cols);
        hh::apply_block_householder_sequence_on_the_left_in_place_with_conj(
            basis,
            coeff,
            faer::Conj::No,
            x.as_mut(),
            faer::Par::Seq,
            MemStack::new(&mut MemBuffer::new(req)),
        );
    }
}

struct KktSolution {
    u: Vec<f64>,
    /// `v` and its scaled form `R^T v R`.
    v: Blocks,
    vt: Blocks,
    /// `G u - q`
    diff: Blocks,
}

struct Kkt<'c, 'a> {
    conic: &'c Conic<'a>,
    scalings: Vec<Scaling>,
    factor: Factor,
    /// Largest relative error seen in `G^T v = p`.
    worst: std::cell::Cell<f64>,
}

fn svec_len(m: usize) -> usize {
    m * (m + 1) / 2
}

fn svec_into(m: &Mat<f64>, out: &mut [f64]) {
    let mut k = 0;
    for j in 0..m.ncols() {
        for i in 0..=j {
            out[k] = if i == j {
                m[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * m[(i, j)]
            };
            k += 1;
        }
    }
}

fn smat(v: &[f64], m: usize) -> Mat<f64> {
    let mut out = Mat::zeros(m, m);
    let mut k = 0;
    for j in 0..m {
        for i in 0..=j {
            let x = if i == j {
                v[k]
            } else {
                v[k] / std::f64::consts::SQRT_2
            };
            out[(i, j)] = x;
            out[(j, i)] = x;
            k += 1;
        }
    }
    out
}

impl<'c, 'a> Kkt<'c, 'a> {
    fn new(conic: &'c Conic<'a>, scalings: Vec<Scaling>, orthogonal: bool) -> Option<Self> {
        let factor = if orthogonal {
            Self::orthogonal(conic, &scalings)?
        } else {
            Self::normal(conic, &scalings)?
        };
        Some(Kkt {
            conic,
            scalings,
            factor,
            worst: std::cell::Cell::new(0.0),
        })
    }

    fn normal(conic: &Conic<'_>, scalings: &[Scaling]) -> Option<Factor> {
        let schur = conic.schur(scalings);
        let p = schur.nrows();
        let diag_max = (0..p)
            .fold(0.0f64, |m, i| m.max(schur[(i, i)].abs()))
            .max(1e-300);
        let mut reg = 0.0;
        for attempt in 0..8 {
            let mut h = schur.clone();
            for i in 0..p {
                h[(i, i)] += reg;
            }
            if let Ok(llt) = h.llt(faer::Side::Lower) {
                if attempt > 0 {
                    log::debug!("schur complement regularised by {reg:e}");
                }
                return Some(Factor::Normal { schur, llt });
            }
            reg = if reg == 0.0 {
                1e-14 * diag_max
            } else {
                reg * 100.0
            };
        }
        None
    }

    fn orthogonal(conic: &Conic<'_>, scalings: &[Scaling]) -> Option<Factor> {
        let p = conic.p();
        let rows: usize = scalings.iter().map(|s| svec_len(s.lambda.len())).sum();
        let mut t_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); conic.red.num_moments];
        for (j, col) in conic.red.t_cols.iter().enumerate() {
            for &(beta, c) in col {
                t_rows[beta].push((j, c));
            }
        }
        let mut b = Mat::<f64>::zeros(rows, p);
        let mut offset = 0;
        for (blk, sc) in conic.blocks.iter().zip(scalings) {
            let m = sc.lambda.len();
            let len = svec_len(m);
            let k = &blk.q * &sc.rit;
            let mut col = vec![0.0; len];
            for (beta, cells) in blk.by_moment.iter().enumerate() {
                if cells.is_empty() || t_rows[beta].is_empty() {
                    continue;
                }
                let left = Mat::from_fn(cells.len(), m, |t, r| {
                    -cells[t].2 * k[(cells[t].0 as usize, r)]
                });
                let right = Mat::from_fn(cells.len(), m, |t, r| k[(cells[t].1 as usize, r)]);
                let mut e = left.transpose() * &right;
                symmetrize_in_place(&mut e);
                svec_into(&e, &mut col);
                for &(j, c) in &t_rows[beta] {
                    let mut dst = b.col_mut(j);
                    for (i, v) in col.iter().enumerate() {
                        dst[offset + i] += c * v;
                    }
                }
            }
            offset += len;
        }
        let qr = b.qr();
        let r = qr.thin_R().to_owned();
        if (0..p).any(|i| !(r[(i, i)].abs() > 0.0) || !r[(i, i)].is_finite()) {
            return None;
        }
        Some(Factor::Orthogonal { qr, r })
    }

    fn vqv(&self, q: &Blocks) -> Blocks {
        self.scalings
            .iter()
            .zip(q)
            .map(|(sc, qb)| {
                let mut m = &sc.v * qb * &sc.v;
                symmetrize_in_place(&mut m);
                m
            })
            .collect()
    }

    fn solve_schur(
        schur: &Mat<f64>,
        llt: &faer::linalg::solvers::Llt<f64>,
        rhs: &[f64],
    ) -> Vec<f64> {
        let p = rhs.len();
        let b = Mat::from_fn(p, 1, |i, _| rhs[i]);
        let mut u = llt.solve(&b);
        let res = &b - schur * &u;
        let du = llt.solve(&res);
        u += &du;
        (0..p).map(|i| u[(i, 0)]).collect()
    }

    /// Solves `G^T v = p`, `G u - P v P = q` with `P = R R^T`.
    fn solve(&self, p: &[f64], q: &Blocks) -> KktSolution {
        let sol = match &self.factor {
            Factor::Normal { schur, llt } => {
                let vq = self.vqv(q);
                let gt = self.conic.gt_apply(&vq);
                let rhs: Vec<f64> = p.iter().zip(&gt).map(|(a, b)| a + b).collect();
                let mut u = Self::solve_schur(schur, llt, &rhs);
                let mut diff = self.diff(&u, q);
                let mut v = self.vqv(&diff);
                for _ in 0..KKT_REFINE {
                    let gtv = self.conic.gt_apply(&v);
                    let e: Vec<f64> = p.iter().zip(&gtv).map(|(a, b)| a - b).collect();
                    if norm2(&e) <= f64::EPSILON * norm2(p).max(norm2(&gtv)) {
                        break;
                    }
                    let du = Self::solve_schur(schur, llt, &e);
                    for (ui, di) in u.iter_mut().zip(&du) {
                        *ui += di;
                    }
                    diff = self.diff(&u, q);
                    v = self.vqv(&diff);
                }
                let vt = self
                    .scalings
                    .iter()
                    .zip(&diff)
                    .map(|(sc, d)| {
                        let mut m = sc.rit.transpose() * d * &sc.rit;
                        symmetrize_in_place(&mut m);
                        m
                    })
                    .collect();
                KktSolution { u, v, vt, diff }
            }
            Factor::Orthogonal { qr, r } => {
                // with B = Q R and d = svec(R^{-1} q R^{-T}):
                // w = R^{-T} p, u = R^{-1} (w + Q^T d), vt = Q (w + Q^T d) - d
                let mut d = vec![0.0; r_rows(qr)];
                let mut offset = 0;
                for (sc, qb) in self.scalings.iter().zip(q) {
                    let m = sc.lambda.len();
                    let qt = sc.rit.transpose() * qb * &sc.rit;
                    svec_into(&qt, &mut d[offset..offset + svec_len(m)]);
                    offset += svec_len(m);
                }
                let pn = p.len();
                let mut w = Mat::from_fn(pn, 1, |i, _| p[i]);
                faer::linalg::triangular_solve::solve_lower_triangular_in_place(
                    r.transpose(),
                    w.as_mut(),
                    faer::Par::Seq,
                );
                let dm = Mat::from_fn(d.len(), 1, |i, _| d[i]);
                let mut qtd = dm.clone();
                apply_q(qr, &mut qtd, true);
                let mut t = Mat::from_fn(pn, 1, |i, _| qtd[(i, 0)]);
                t += &w;
                let mut um = t.clone();
                faer::linalg::triangular_solve::solve_upper_triangular_in_place(
                    r.as_ref(),
                    um.as_mut(),
                    faer::Par::Seq,
                );
                let mut svt = Mat::from_fn(d.len(), 1, |i, _| if i < pn { t[(i, 0)] } else { 0.0 });
                apply_q(qr, &mut svt, false);
                svt -= &dm;
                let u: Vec<f64> = (0..pn).map(|i| um[(i, 0)]).collect();
                let mut vt = Vec::with_capacity(q.len());
                let mut v = Vec::with_capacity(q.len());
                let mut offset = 0;
                for sc in &self.scalings {
                    let m = sc.lambda.len();
                    let col: Vec<f64> = (offset..offset + svec_len(m))
                        .map(|i| svt[(i, 0)])
                        .collect();
                    let vtb = smat(&col, m);
                    let mut vb = &sc.rit * &vtb * sc.rit.transpose();
                    symmetrize_in_place(&mut vb);
                    vt.push(vtb);
                    v.push(vb);
                    offset += svec_len(m);
                }
                let diff = self.diff(&u, q);
                KktSolution { u, v, vt, diff }
            }
        };
        let gtv = self.conic.gt_apply(&sol.v);
        let e: f64 = p
            .iter()
            .zip(&gtv)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = norm2(p).max(f64::MIN_POSITIVE);
        self.worst.set(self.worst.get().max(e / scale));
        sol
    }

    fn diff(&self, u: &[f64], q: &Blocks) -> Blocks {
        let gu = self.conic.g_apply(u);
        gu.iter().zip(q).map(|(a, b)| a - b).collect()
    }
}

fn r_rows(qr: &faer::linalg::solvers::Qr<f64>) -> usize {
    qr.Q_basis().nrows()
}

fn jordan(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let ab = a * b;
    let mut out = &ab + ab.transpose();
    out *= 0.5;
    out
}

/// Runs the method. `accept_infeasible` receives a candidate dual ray and
/// decides whether it certifies infeasibility; if it refuses, iterations
/// continue.
pub(crate) fn run(
    conic: &Conic<'_>,
    feas_tol: f64,
    max_iter: usize,
    accept_infeasible: &mut dyn FnMut(&Blocks) -> bool,
) -> (Outcome, RunStats) {
    let p = conic.p();
    let sizes: Vec<usize> = conic.blocks.iter().map(BlockOp::reduced_size).collect();
    let nu: usize = sizes.iter().sum();
    let h: Blocks = conic.blocks.iter().map(|b| b.h.clone()).collect();
    let c = &conic.c;
    let resx0 = norm2(c).max(1.0);
    let resz0 = blocks_norm(&h).max(1.0);

    let mut x = vec![0.0; p];
    let mut s: Blocks = sizes.iter().map(|&m| Mat::identity(m, m)).collect();
    let mut z: Blocks = s.clone();
    let mut tau = 1.0;
    let mut kappa = 1.0;
    let mut stats = RunStats {
        iterations: 0,
        primal_res: f64::INFINITY,
        dual_res: f64::INFINITY,
        gap: f64::INFINITY,
        log: Vec::new(),
    };

    let mut best: Option<Iterate> = None;
    let mut orthogonal = false;
    for iter in 0..=max_iter {
        stats.iterations = iter;
        let gx = conic.g_apply(&x);
        let gtz = conic.gt_apply(&z);
        let hz = blocks_inner(&h, &z);
        let cx = dot(c, &x);
        let rx: Vec<f64> = gtz.iter().zip(c).map(|(a, b)| a + b * tau).collect();
        let rz: Blocks = (0..sizes.len())
            .map(|b| &gx[b] + &s[b] - &h[b] * tau)
            .collect();
        let rtau = kappa + cx + hz;
        let gap = blocks_inner(&s, &z);
        let mu = (gap + tau * kappa) / (nu as f64 + 1.0);
        let pcost = cx / tau;
        let pres = blocks_norm(&rz) / tau / resz0;
        let dres = norm2(&rx) / tau / resx0;
        let rel_gap = gap / (tau * tau);
        stats.primal_res = pres;
        stats.dual_res = dres;
        stats.gap = rel_gap;
        stats.log.push(IterationRecord {
            iter,
            mu,
            primal_res: pres,
            dual_res: dres,
            gap: rel_gap,
        });
        log::trace!("iter {iter}: mu {mu:.3e} pres {pres:.3e} dres {dres:.3e} gap {rel_gap:.3e} tau {tau:.3e} kappa {kappa:.3e}");

        let score = pres.max(dres).max(rel_gap / (1.0 + pcost.abs()));
        if score <= feas_tol {
            return (Outcome::Optimal { x, z, tau }, stats);
        }
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, x.clone(), z.clone(), tau));
        }
        // past this point roundoff dominates and further steps only drift
        let stalled = mu <= STALL_MU * (1.0 + pcost.abs()) * tau * tau;
        if hz < 0.0 && norm2(&gtz) / resx0 / -hz <= feas_tol {
            let ray: Blocks = z.iter().map(|m| m * (1.0 / -hz)).collect();
            if accept_infeasible(&ray) {
                return (Outcome::Infeasible, stats);
            }
        }
        if cx < 0.0 {
            let gxs: Blocks = gx.iter().zip(&s).map(|(a, b)| a + b).collect();
            if blocks_norm(&gxs) / resz0 / -cx <= feas_tol {
                return (
                    Outcome::Unknown {
                        why: "dual infeasible (unbounded objective)".into(),
                        best: None,
                    },
                    stats,
                );
            }
        }
        if iter == max_iter || stalled {
            break;
        }

        let mut scalings = Vec::with_capacity(sizes.len());
        for (sb, zb) in s.iter().zip(&z) {
            match nt_scaling(sb, zb) {
                Some(sc) => scalings.push(sc),
                None => {
                    let why = format!("lost positive definiteness at iteration {iter}");
                    return (near_optimal(best, feas_tol, why), stats);
                }
            }
        }
        let (d, alpha) = loop {
            let Some(kkt) = Kkt::new(conic, scalings.clone(), orthogonal) else {
                if !orthogonal {
                    orthogonal = true;
                    continue;
                }
                let why = format!("singular Schur complement at iteration {iter}");
                return (near_optimal(best, feas_tol, why), stats);
            };
            let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
            let k1 = kkt.solve(&neg_c, &h);
            let (x1, z1) = (&k1.u, &k1.v);
            let den = dot(c, x1) + blocks_inner(&h, z1) - kappa / tau;

            let direction = |sigma: f64, corr: Option<&Direction>| -> Direction {
                let f = 1.0 - sigma;
                let bx: Vec<f64> = rx.iter().map(|v| -f * v).collect();
                let btau = -f * rtau;
                let mut bkappa = -tau * kappa + sigma * mu;
                if let Some(d) = corr {
                    bkappa -= d.dtau * d.dkappa;
                }
                let mut gammas = Vec::with_capacity(sizes.len());
                let mut q = Vec::with_capacity(sizes.len());
                for (b, sc) in kkt.scalings.iter().enumerate() {
                    let m = sizes[b];
                    let lam = &sc.lambda;
                    let mut bs = Mat::from_fn(m, m, |i, j| {
                        if i == j {
                            -lam[i] * lam[i] + sigma * mu
                        } else {
                            0.0
                        }
                    });
                    if let Some(d) = corr {
                        bs -= jordan(&d.ds_t[b], &d.dz_t[b]);
                    }
                    let gamma = Mat::from_fn(m, m, |i, j| 2.0 * bs[(i, j)] / (lam[i] + lam[j]));
                    q.push(&rz[b] * -f - &sc.r * &gamma * sc.r.transpose());
                    gammas.push(gamma);
                }
                let k2 = kkt.solve(&bx, &q);
                let dtau = (btau - bkappa / tau - dot(c, &k2.u) - blocks_inner(&h, &k2.v)) / den;
                let dx: Vec<f64> = k2.u.iter().zip(x1).map(|(a, b)| a + dtau * b).collect();
                let dz: Blocks = k2.v.iter().zip(z1).map(|(a, b)| a + b * dtau).collect();
                let mut ds = Vec::with_capacity(sizes.len());
                let mut dz_t = Vec::with_capacity(sizes.len());
                let mut ds_t = Vec::with_capacity(sizes.len());
                for b in 0..sizes.len() {
                    let diff = &k2.diff[b] + &k1.diff[b] * dtau;
                    // the scaled dual step comes from the solver, not from dz:
                    // mapping dz back through R loses all accuracy near the boundary
                    let dzt = &k2.vt[b] + &k1.vt[b] * dtau;
                    // R Gamma R^T - diff, i.e. the primal equation solved for ds
                    let mut dsb = -(&q[b] + &rz[b] * f) - &diff;
                    symmetrize_in_place(&mut dsb);
                    ds_t.push(&gammas[b] - &dzt);
                    dz_t.push(dzt);
                    ds.push(dsb);
                }
                let dkappa = (bkappa - kappa * dtau) / tau;
                Direction {
                    dx,
                    dz,
                    ds,
                    ds_t,
                    dz_t,
                    dtau,
                    dkappa,
                }
            };
            let step = |d: &Direction| -> f64 {
                let mut a = f64::INFINITY;
                for (b, sc) in kkt.scalings.iter().enumerate() {
                    a = a.min(max_step(&sc.lambda, &d.ds_t[b]));
                    a = a.min(max_step(&sc.lambda, &d.dz_t[b]));
                }
                if d.dtau < 0.0 {
                    a = a.min(-tau / d.dtau);
                }
                if d.dkappa < 0.0 {
                    a = a.min(-kappa / d.dkappa);
                }
                a
            };

            let affine = direction(0.0, None);
            let alpha_a = step(&affine).min(1.0);
            let sigma = (1.0 - alpha_a).powi(3);
            let d = direction(sigma, Some(&affine));
            let alpha = (STEP_FRACTION * step(&d)).min(1.0);
            if !orthogonal && kkt.worst.get() > KKT_ACCURACY {
                log::debug!("switching to the orthogonal KKT solve at iteration {iter}");
                orthogonal = true;
                continue;
            }
            break (d, alpha);
        };

        for (xi, di) in x.iter_mut().zip(&d.dx) {
            *xi += alpha * di;
        }
        for b in 0..sizes.len() {
            s[b] += &d.ds[b] * alpha;
            z[b] += &d.dz[b] * alpha;
            symmetrize_in_place(&mut s[b]);
            symmetrize_in_place(&mut z[b]);
        }
        tau += alpha * d.dtau;
        kappa += alpha * d.dkappa;
    }
    let why = format!("no convergence in {} iterations", stats.iterations);
    (near_optimal(best, feas_tol, why), stats)
}

type Iterate = (f64, Vec<f64>, Blocks, f64);

// The best iterate is accepted when it misses the tolerances by a small
// factor; the caller still checks feasibility of the lifted point.
fn near_optimal(best: Option<Iterate>, feas_tol: f64, why: String) -> Outcome {
    match best {
        Some((score, x, z, tau)) if score <= NEAR_FACTOR * feas_tol => {
            Outcome::Optimal { x, z, tau }
        }
        Some((_, x, z, tau)) => Outcome::Unknown {
            why,
            best: Some((x, z, tau)),
        },
        None => Outcome::Unknown { why, best: None },
    }
}
