//! Farkas-type infeasibility certificates and their independent check.

use serde::{Deserialize, Serialize};

use crate::dense::{from_rows, min_eigenvalue, symmetric_part};
use crate::error::{Error, Result};
use crate::moments::SdpProblem;

/// Multipliers `lambda` on [`SdpProblem::linear_rows`] and one symmetric
/// matrix `X_b` per PSD block such that `sum_b M_b^*(X_b) = A^T lambda`,
/// `X_b >= 0` and `b . lambda < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityCertificate {
    pub multipliers: Vec<f64>,
    pub blocks: Vec<Vec<Vec<f64>>>,
}

/// Certified margin of an infeasibility certificate; positive means the
/// problem has no feasible point.
///
/// After normalising `|lambda|_1 + sum_b tr X_b = 1`, let
/// `tau_b = max(0, -lambda_min(X_b))` and `r = sum_b M_b^*(X_b) - A^T lambda`.
/// Any feasible `y` satisfies `|y_i| <= B` (the problem's moment bound) and
/// `0 <= <X_b + tau_b I, M_b(y)> = b . lambda + r . y + tau_b tr M_b(y)`, so
/// `margin = -b . lambda - B (|r|_1 + sum_b tau_b t_b) > 0` rules it out,
/// where `t_b` bounds `tr M_b(y) / B`.
pub fn verify_certificate(problem: &SdpProblem, cert: &InfeasibilityCertificate) -> Result<f64> {
    let rows = problem.linear_rows();
    if cert.multipliers.len() != rows.len() {
        return Err(Error::Certificate(format!(
            "{} multipliers for {} linear rows",
            cert.multipliers.len(),
            rows.len()
        )));
    }
    if cert.blocks.len() != problem.psd_blocks.len() {
        return Err(Error::Certificate(format!(
            "{} matrices for {} PSD blocks",
            cert.blocks.len(),
            problem.psd_blocks.len()
        )));
    }
    let mut mats = Vec::with_capacity(cert.blocks.len());
    for (b, (rows_b, blk)) in cert.blocks.iter().zip(&problem.psd_blocks).enumerate() {
        let m = from_rows(rows_b)
            .filter(|m| m.nrows() == blk.size())
            .ok_or_else(|| Error::Certificate(format!("matrix {b} must be {0}x{0}", blk.size())))?;
        mats.push(symmetric_part(m.as_ref()));
    }
    let finite = cert.multipliers.iter().all(|v| v.is_finite())
        && cert
            .blocks
            .iter()
            .flatten()
            .flatten()
            .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Certificate("non-finite entry".into()));
    }

    let scale: f64 = cert.multipliers.iter().map(|v| v.abs()).sum::<f64>()
        + mats
            .iter()
            .map(|m| (0..m.nrows()).map(|a| m[(a, a)]).sum::<f64>())
            .sum::<f64>();
    if !(scale > 0.0) {
        return Ok(0.0);
    }
    let lambda: Vec<f64> = cert.multipliers.iter().map(|v| v / scale).collect();

    let mut r = vec![0.0; problem.num_moments];
    let mut slack = 0.0;
    for (m, blk) in mats.iter().zip(&problem.psd_blocks) {
        let x = m * (1.0 / scale);
        for (i, v) in blk
            .adjoint(x.as_ref(), problem.num_moments)
            .into_iter()
            .enumerate()
        {
            r[i] += v;
        }
        let tau = (-min_eigenvalue(x.as_ref())?).max(0.0);
        let trace_weight: f64 = (0..blk.size())
            .map(|a| blk.cell(a, a).iter().map(|e| e.1.abs()).sum::<f64>())
            .sum();
        slack += tau * trace_weight;
    }
    let mut b_lambda = 0.0;
    for (row, &l) in rows.iter().zip(&lambda) {
        if l != 0.0 {
            for &(i, c) in &row.coeffs {
                r[i] -= l * c;
            }
            b_lambda += l * row.rhs;
        }
    }
    let r1: f64 = r.iter().map(|v| v.abs()).sum();
    Ok(-b_lambda - problem.moment_bound * (r1 + slack))
}
