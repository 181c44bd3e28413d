//! Interior-point solver for the moment SDPs built by
//! [`assemble_sdp`](crate::moments::assemble_sdp).
//!
//! The solve runs in three stages:
//!
//! 1. the linear equalities (explicit rows and zero blocks) are eliminated,
//!    giving `y = y_p + T w`; an inconsistent system is reported as
//!    infeasible right away;
//! 2. each PSD block is restricted to the complement of the kernel shared
//!    by every matrix in the affine family `M(y_p + T w)`;
//! 3. the homogeneous self-dual method runs on the reduced problem.
//!
//! Infeasibility is only reported together with a certificate that passes
//! [`verify_certificate`].

mod certificate;
mod ipm;
mod presolve;

use faer::Mat;
use serde::{Deserialize, Serialize};

pub use certificate::{verify_certificate, InfeasibilityCertificate};

use crate::dense::{dot, min_eigenvalue, norm2, sym_eigen, to_rows};
use crate::error::{Error, Result};
use crate::moments::{SdpProblem, SymbolicMatrix};
use ipm::{BlockOp, Conic, Outcome};
use presolve::{presolve, Presolved, Reduction};

// eigenvalues of the kernel probe below this fraction of the largest are
// treated as structural zeros
const KERNEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Problems with more moments than this are not attempted (the dense
    /// Schur complement would not fit in memory); they return `Unknown`.
    pub max_moments: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            feas_tol: 1e-8,
            max_iter: 200,
            max_moments: 8000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mu: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Moment vector: the optimum, or the best iterate of an unconverged
    /// run when there is one.
    pub y: Option<Vec<f64>>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub certificate: Option<InfeasibilityCertificate>,
    /// Margin reported by [`verify_certificate`] when infeasible.
    pub margin: Option<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Largest violation of the linear equalities at `y`.
    pub equality_residual: f64,
    /// Smallest eigenvalue over the PSD blocks at `y`.
    pub min_eigenvalue: f64,
    pub free_variables: usize,
    pub reduced_block_sizes: Vec<usize>,
    pub message: String,
    pub log: Vec<IterationRecord>,
}

impl SdpSolution {
    fn empty(status: SolveStatus, message: impl Into<String>) -> Self {
        SdpSolution {
            status,
            y: None,
            objective_value: f64::NAN,
            dual_objective: f64::NAN,
            certificate: None,
            margin: None,
            iterations: 0,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            gap: f64::NAN,
            equality_residual: f64::NAN,
            min_eigenvalue: f64::NAN,
            free_variables: 0,
            reduced_block_sizes: Vec::new(),
            message: message.into(),
            log: Vec::new(),
        }
    }

    /// Iteration log as CSV with header `iter,mu,primal_res,dual_res,gap`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter,mu,primal_res,dual_res,gap\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.iter, r.mu, r.primal_res, r.dual_res, r.gap
            ));
        }
        out
    }
}

/// Solves `problem`; see the module docs for the stages.
pub fn solve(problem: &SdpProblem, options: &SolveOptions) -> Result<SdpSolution> {
    problem.validate()?;
    if !(options.feas_tol > 0.0) {
        return Err(Error::Problem("feas_tol must be positive".into()));
    }
    let nm = problem.num_moments;
    if nm > options.max_moments {
        return Ok(SdpSolution::empty(
            SolveStatus::Unknown,
            format!("{nm} moments exceed the limit of {}", options.max_moments),
        ));
    }
    let rows = problem.linear_rows();
    let red = match presolve(&rows, nm, options.feas_tol) {
        Presolved::Inconsistent { multipliers, gap } => {
            let cert = InfeasibilityCertificate {
                multipliers,
                blocks: problem
                    .psd_blocks
                    .iter()
                    .map(|b| vec![vec![0.0; b.size()]; b.size()])
                    .collect(),
            };
            return finish_infeasible(
                problem,
                cert,
                format!("linear equalities inconsistent (gap {gap:.3e})"),
                SdpSolution::empty(SolveStatus::Infeasible, ""),
            );
        }
        Presolved::Reduced(red) => red,
    };
    log::debug!(
        "presolve: {} rows, {} pivots, {} dropped, {} free moments",
        rows.len(),
        red.pivots.len(),
        red.dropped,
        red.free.len()
    );

    if red.free.is_empty() {
        return solve_fixed(problem, &red, &rows, options);
    }

    let mut blocks = Vec::new();
    for sym in &problem.psd_blocks {
        let q = movable_subspace(sym, &red)?;
        log::debug!("block of size {} reduced to {}", sym.size(), q.ncols());
        blocks.push(BlockOp::new(sym, q, &red.y_p, nm));
    }
    // a block that vanishes on the whole affine space constrains nothing
    let kept: Vec<usize> = (0..blocks.len())
        .filter(|&b| blocks[b].reduced_size() > 0)
        .collect();
    let mut blocks: Vec<Option<BlockOp>> = blocks.into_iter().map(Some).collect();
    let active: Vec<BlockOp> = kept
        .iter()
        .map(|&b| blocks[b].take().expect("kept"))
        .collect();
    let sizes: Vec<usize> = active.iter().map(BlockOp::reduced_size).collect();

    let c_full = red.apply_tt(&problem.objective);
    let c_norm = norm2(&c_full);
    let c_scale = if c_norm > 0.0 { c_norm } else { 1.0 };
    let conic = Conic {
        red: &red,
        blocks: active,
        c: c_full.iter().map(|v| v / c_scale).collect(),
    };
    let offset = dot(&problem.objective, &red.y_p);

    if conic.blocks.is_empty() {
        let status = if c_norm > 0.0 {
            SolveStatus::Unknown
        } else {
            SolveStatus::Optimal
        };
        let mut sol = SdpSolution::empty(status, "no PSD block restricts the affine space");
        if status == SolveStatus::Optimal {
            sol.y = Some(red.y_p.clone());
            sol.objective_value = offset;
            sol.dual_objective = offset;
        }
        return Ok(sol);
    }

    let mut found: Option<(InfeasibilityCertificate, f64)> = None;
    let mut accept = |ray: &Vec<Mat<f64>>| -> bool {
        let lifted: Vec<Mat<f64>> = conic
            .blocks
            .iter()
            .zip(ray)
            .map(|(b, z)| b.lift(z))
            .collect();
        let g = conic.lifted_adjoint(ray);
        let multipliers = red.multipliers_for(&g, rows.len());
        let mut mats: Vec<Vec<Vec<f64>>> = problem
            .psd_blocks
            .iter()
            .map(|b| vec![vec![0.0; b.size()]; b.size()])
            .collect();
        for (&b, m) in kept.iter().zip(&lifted) {
            mats[b] = to_rows(m.as_ref());
        }
        let cert = InfeasibilityCertificate {
            multipliers,
            blocks: mats,
        };
        match verify_certificate(problem, &cert) {
            Ok(margin) if margin > 0.0 => {
                found = Some((cert, margin));
                true
            }
            Ok(margin) => {
                log::debug!("candidate certificate rejected (margin {margin:.3e})");
                false
            }
            Err(_) => false,
        }
    };
    let (outcome, stats) = ipm::run(&conic, options.feas_tol, options.max_iter, &mut accept);

    let mut sol = SdpSolution::empty(SolveStatus::Unknown, "");
    sol.iterations = stats.iterations;
    sol.primal_residual = stats.primal_res;
    sol.dual_residual = stats.dual_res;
    sol.gap = stats.gap;
    sol.log = stats.log;
    sol.free_variables = red.free.len();
    sol.reduced_block_sizes = sizes;
    match outcome {
        Outcome::Optimal { x, z, tau } => {
            let y = evaluate_iterate(&mut sol, problem, &conic, &rows, (&x, &z, tau), offset, c_scale)?;
            let scale = y[0].abs().max(1.0);
            let duality = (sol.objective_value - sol.dual_objective).abs();
            if sol.min_eigenvalue < -options.feas_tol * scale
                || sol.equality_residual > options.feas_tol * scale
                || duality > 10.0 * options.feas_tol * (1.0 + sol.objective_value.abs())
            {
                sol.message = format!(
                    "converged point fails the post-check (min eigenvalue {:.3e}, equality residual {:.3e}, duality gap {duality:.3e})",
                    sol.min_eigenvalue, sol.equality_residual
                );
            } else {
                sol.status = SolveStatus::Optimal;
                sol.message = "optimal".into();
            }
            debug_assert!(
                sol.status != SolveStatus::Optimal || sol.min_eigenvalue >= -10.0 * options.feas_tol * scale
            );
            sol.y = Some(y);
        }
        Outcome::Infeasible => {
            let (cert, margin) = found.expect("accepted certificate");
            sol.status = SolveStatus::Infeasible;
            sol.certificate = Some(cert);
            sol.margin = Some(margin);
            sol.message = "dual ray certifies infeasibility".into();
        }
        Outcome::Unknown { why, best } => {
            sol.message = why;
            // the best point is still useful to callers that verify independently
            if let Some((x, z, tau)) = best {
                let y = evaluate_iterate(&mut sol, problem, &conic, &rows, (&x, &z, tau), offset, c_scale)?;
                sol.y = Some(y);
            }
        }
    }
    Ok(sol)
}

// maps an embedding iterate back to moments and fills in the diagnostics
fn evaluate_iterate(
    sol: &mut SdpSolution,
    problem: &SdpProblem,
    conic: &Conic<'_>,
    rows: &[crate::moments::LinearRow],
    (x, z, tau): (&[f64], &[Mat<f64>], f64),
    offset: f64,
    c_scale: f64,
) -> Result<Vec<f64>> {
    let red = conic.red;
    let w: Vec<f64> = x.iter().map(|v| v / tau).collect();
    let dir = red.apply_t(&w);
    let y: Vec<f64> = red.y_p.iter().zip(&dir).map(|(a, b)| a + b).collect();
    let hz: f64 = conic
        .blocks
        .iter()
        .zip(z)
        .map(|(b, zb)| crate::dense::inner(b.h.as_ref(), zb.as_ref()))
        .sum();
    sol.objective_value = dot(&problem.objective, &y);
    sol.dual_objective = offset - c_scale * hz / tau;
    sol.equality_residual = equality_residual(rows, &y);
    sol.min_eigenvalue = min_block_eigenvalue(&problem.psd_blocks, &y)?;
    Ok(y)
}

fn finish_infeasible(
    problem: &SdpProblem,
    cert: InfeasibilityCertificate,
    message: String,
    mut sol: SdpSolution,
) -> Result<SdpSolution> {
    let margin = verify_certificate(problem, &cert)?;
    if margin > 0.0 {
        sol.status = SolveStatus::Infeasible;
        sol.message = message;
    } else {
        sol.status = SolveStatus::Unknown;
        sol.message = format!("{message}, but the certificate margin {margin:.3e} is not positive");
    }
    sol.certificate = Some(cert);
    sol.margin = Some(margin);
    Ok(sol)
}

// every moment is fixed by the equalities: check the blocks directly
fn solve_fixed(
    problem: &SdpProblem,
    red: &Reduction,
    rows: &[crate::moments::LinearRow],
    options: &SolveOptions,
) -> Result<SdpSolution> {
    let y = red.y_p.clone();
    let mut worst: Option<(usize, f64, Vec<f64>)> = None;
    for (b, sym) in problem.psd_blocks.iter().enumerate() {
        let (vals, vecs) = sym_eigen(sym.evaluate(&y).as_ref())?;
        if let Some(&v0) = vals.first() {
            if worst.as_ref().is_none_or(|w| v0 < w.1) {
                worst = Some((b, v0, vecs.col(0).iter().copied().collect()));
            }
        }
    }
    let scale = y[0].abs().max(1.0);
    match worst {
        Some((b, v0, vec)) if v0 < -options.feas_tol * scale => {
            let n = vec.len();
            let x = Mat::from_fn(n, n, |i, j| vec[i] * vec[j]);
            let g = problem.psd_blocks[b].adjoint(x.as_ref(), problem.num_moments);
            let mut blocks: Vec<Vec<Vec<f64>>> = problem
                .psd_blocks
                .iter()
                .map(|s| vec![vec![0.0; s.size()]; s.size()])
                .collect();
            blocks[b] = to_rows(x.as_ref());
            let cert = InfeasibilityCertificate {
                multipliers: red.multipliers_for(&g, rows.len()),
                blocks,
            };
            finish_infeasible(
                problem,
                cert,
                format!("fixed moments give eigenvalue {v0:.3e}"),
                SdpSolution::empty(SolveStatus::Infeasible, ""),
            )
        }
        other => {
            let mut sol =
                SdpSolution::empty(SolveStatus::Optimal, "moments fixed by the equalities");
            sol.objective_value = dot(&problem.objective, &y);
            sol.dual_objective = sol.objective_value;
            sol.equality_residual = equality_residual(rows, &y);
            sol.min_eigenvalue = other.map_or(f64::INFINITY, |w| w.1);
            sol.y = Some(y);
            Ok(sol)
        }
    }
}

fn equality_residual(rows: &[crate::moments::LinearRow], y: &[f64]) -> f64 {
    rows.iter()
        .map(|r| (r.coeffs.iter().map(|&(i, c)| c * y[i]).sum::<f64>() - r.rhs).abs())
        .fold(0.0, f64::max)
}

fn min_block_eigenvalue(blocks: &[SymbolicMatrix], y: &[f64]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for b in blocks {
        worst = worst.min(min_eigenvalue(b.evaluate(y).as_ref())?);
    }
    Ok(worst)
}

/// Orthonormal basis of the complement of the common kernel of
/// `M(y_p)` and `M(T e_j)` for all free coordinates `j`.
fn movable_subspace(sym: &SymbolicMatrix, red: &Reduction) -> Result<Mat<f64>> {
    let n = sym.size();
    let mut k = Mat::<f64>::zeros(n, n);
    let mut by_moment: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); red.num_moments];
    for a in 0..n {
        for b in 0..n {
            for &(i, c) in sym.cell(a, b) {
                by_moment[i].push((a, b, c));
            }
        }
    }
    let mut add_square = |entries: &mut Vec<(usize, usize, f64)>| {
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(a, b, v) in entries.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == a && last.1 == b => last.2 += v,
                _ => merged.push((a, b, v)),
            }
        }
        let norm2: f64 = merged.iter().map(|e| e.2 * e.2).sum();
        if norm2 == 0.0 {
            return;
        }
        let mut starts = vec![usize::MAX; n + 1];
        for (t, e) in merged.iter().enumerate().rev() {
            starts[e.0] = t;
        }
        // K += G G / |G|^2, rows of G read from the sorted list
        for &(a, b, v) in &merged {
            let s = starts[b];
            if s == usize::MAX {
                continue;
            }
            for &(bb, c, w) in &merged[s..] {
                if bb != b {
                    break;
                }
                k[(a, c)] += v * w / norm2;
            }
        }
    };
    let mut entries = Vec::new();
    for i in 0..red.num_moments {
        let v = red.y_p[i];
        if v != 0.0 {
            entries.extend(by_moment[i].iter().map(|&(a, b, c)| (a, b, c * v)));
        }
    }
    add_square(&mut entries);
    for col in &red.t_cols {
        entries.clear();
        for &(i, c) in col {
            entries.extend(by_moment[i].iter().map(|&(a, b, w)| (a, b, w * c)));
        }
        add_square(&mut entries);
    }
    let (vals, vecs) = sym_eigen(k.as_ref())?;
    let top = vals.last().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Ok(Mat::zeros(n, 0));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| vals[i] > KERNEL_TOL * top).collect();
    Ok(Mat::from_fn(n, keep.len(), |a, j| vecs[(a, keep[j])]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{LinearRow, MonomialIndex};

    /// minimise y1 subject to M_1(y) >= 0 with y0 = y2 = 1 (one variable)
    fn boundary_problem() -> SdpProblem {
        let index = MonomialIndex::new(1, 2);
        SdpProblem {
            nvars: 1,
            order: 1,
            num_moments: 3,
            objective: vec![0.0, 1.0, 0.0],
            equalities: vec![
                LinearRow {
                    coeffs: vec![(0, 1.0)],
                    rhs: 1.0,
                    label: "y0".into(),
                },
                LinearRow {
                    coeffs: vec![(2, 1.0)],
                    rhs: 1.0,
                    label: "y2".into(),
                },
            ],
            psd_blocks: vec![SymbolicMatrix::moment(&index, 1).unwrap()],
            zero_blocks: vec![],
            moment_bound: 1.0,
        }
    }

    fn negative_mass_problem() -> SdpProblem {
        let index = MonomialIndex::new(1, 0);
        SdpProblem {
            nvars: 1,
            order: 0,
            num_moments: 1,
            objective: vec![0.0],
            equalities: vec![LinearRow {
                coeffs: vec![(0, 1.0)],
                rhs: -1.0,
                label: "y0".into(),
            }],
            psd_blocks: vec![SymbolicMatrix::moment(&index, 0).unwrap()],
            zero_blocks: vec![],
            moment_bound: 1.0,
        }
    }

    #[test]
    fn psd_boundary_optimum() {
        let sol = solve(&boundary_problem(), &SolveOptions::default()).unwrap();
        assert_eq!(
            sol.status,
            SolveStatus::Optimal,
            "{}\n{}",
            sol.message,
            sol.log_csv()
        );
        assert!(
            (sol.objective_value + 1.0).abs() < 1e-7,
            "{}",
            sol.objective_value
        );
        assert!((sol.objective_value - sol.dual_objective).abs() < 1e-7);
    }

    #[test]
    fn negative_mass_is_infeasible() {
        let p = negative_mass_problem();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        let cert = sol.certificate.unwrap();
        assert!(verify_certificate(&p, &cert).unwrap() >= 0.5 - 1e-12);
        let zeroed = InfeasibilityCertificate {
            multipliers: vec![0.0],
            blocks: vec![vec![vec![0.0]]],
        };
        assert!(verify_certificate(&p, &zeroed).unwrap() <= 0.0);
    }

    #[test]
    fn hand_certificate_margin() {
        // lambda = 1 on y0 = -1 and X = [1]: normalised to 1/2 each
        let p = negative_mass_problem();
        let cert = InfeasibilityCertificate {
            multipliers: vec![1.0],
            blocks: vec![vec![vec![1.0]]],
        };
        assert!((verify_certificate(&p, &cert).unwrap() - 0.5).abs() < 1e-15);
        let bad = InfeasibilityCertificate {
            multipliers: vec![1.0, 2.0],
            blocks: vec![vec![vec![1.0]]],
        };
        assert!(verify_certificate(&p, &bad).is_err());
    }

    #[test]
    fn interior_infeasibility_needs_the_ipm() {
        // y0 = 1, y2 = 1, y1 = 2: every moment fixed, [[1,2],[2,1]] indefinite
        let mut p = boundary_problem();
        p.equalities.push(LinearRow {
            coeffs: vec![(1, 1.0)],
            rhs: 2.0,
            label: "y1".into(),
        });
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.margin.unwrap() > 0.0);
    }

    #[test]
    fn feasibility_problem_with_free_moment() {
        // y0 = 1, y2 = 0.25, y1 free: any |y1| <= 0.5 is feasible
        let mut p = boundary_problem();
        p.objective = vec![0.0; 3];
        p.equalities[1].rhs = 0.25;
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "{}", sol.message);
        assert!(sol.y.unwrap()[1].abs() <= 0.5 + 1e-7);
    }

    #[test]
    fn ipm_certifies_negative_diagonal() {
        // y0 = 1, y2 = -1 with y1 free: consistent equalities, no PSD point
        let mut p = boundary_problem();
        p.equalities[1].rhs = -1.0;
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible, "{}", sol.message);
        assert!(sol.margin.unwrap() > 0.0);
        assert!(sol.iterations > 0);
    }
}
