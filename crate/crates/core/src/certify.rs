//! The certification loop: relax, solve, test flatness, extract, and climb
//! the hierarchy until a decomposition or an infeasibility certificate is
//! found.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{
    atoms_to_decomposition, extract_atoms, is_flat, project_onto, DEFAULT_ATOM_TOL, DEFAULT_RANK_TOL,
};
use crate::moments::{assemble_sdp, SdpProblem, TruncatedMomentSequence};
use crate::poly::{random_sos, Mode, Polynomial, VariableLayout};
use crate::sdp::{solve, verify_certificate, InfeasibilityCertificate, SolveOptions, SolveStatus};
use crate::tensor::{check_structure, symmetrize, Decomposition, HermitianTensor};

/// Inputs whose trace differs from one by more than this get a warning.
pub const TRACE_TOL: f64 = 1e-9;
/// Tolerance on the party-permutation symmetry required by symmetric mode.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Sphere tolerance of the second projection attempt. Atoms from an
/// approximate optimum can miss the sphere by more than `atom_tol`; the
/// residual check still decides whether the result is accepted.
pub const RELAXED_ATOM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub mode: Mode,
    pub seed: u64,
    /// Highest relaxation order; defaults to `d/2 + 3`.
    pub k_max: Option<usize>,
    pub rank_tol: f64,
    pub feas_tol: f64,
    pub residual_tol: f64,
    pub atom_tol: f64,
    /// Degree of the objective; defaults to `2(m+1)`.
    pub d_override: Option<usize>,
    pub max_iter: usize,
    /// Scale the input to unit trace before certifying.
    pub rescale_trace: bool,
    /// Write every assembled relaxation here as a text dump.
    #[serde(skip)]
    pub dump_dir: Option<PathBuf>,
}

impl CertifyOptions {
    pub fn new(mode: Mode) -> Self {
        CertifyOptions {
            mode,
            seed: 0,
            k_max: None,
            rank_tol: DEFAULT_RANK_TOL,
            feas_tol: 1e-8,
            residual_tol: 1e-6,
            atom_tol: DEFAULT_ATOM_TOL,
            d_override: None,
            max_iter: 200,
            rescale_trace: false,
            dump_dir: None,
        }
    }

    fn validate(&self, parties: usize) -> Result<usize> {
        for (name, v) in [
            ("rank_tol", self.rank_tol),
            ("feas_tol", self.feas_tol),
            ("residual_tol", self.residual_tol),
            ("atom_tol", self.atom_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::Problem(format!("{name} must be positive, got {v}")));
            }
        }
        let d = self.d_override.unwrap_or(2 * (parties + 1));
        if !d.is_multiple_of(2) || d < 2 * parties + 2 {
            return Err(Error::Order(format!(
                "objective degree must be even and at least {}, got {d}",
                2 * parties + 2
            )));
        }
        if let Some(k) = self.k_max {
            if k < d / 2 {
                return Err(Error::Order(format!("k_max {k} is below d/2 = {}", d / 2)));
            }
        }
        Ok(d)
    }
}

/// Outcome of one flatness test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatCheck {
    pub t: usize,
    pub rank_prev: usize,
    pub rank: usize,
    /// Residual of the extracted decomposition, when extraction ran.
    pub residual: Option<f64>,
    pub note: Option<String>,
}

/// What happened at one relaxation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub k: usize,
    pub moment_block: usize,
    pub num_moments: usize,
    pub linear_rows: usize,
    pub free_variables: usize,
    pub status: SolveStatus,
    pub iterations: usize,
    pub seconds: f64,
    pub message: String,
    pub flat_checks: Vec<FlatCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Separable {
        decomposition: Decomposition,
        level_k: usize,
        flat_t: usize,
        residual: f64,
    },
    NotSeparable {
        level_k: usize,
        certificate: InfeasibilityCertificate,
        margin: f64,
    },
    Undetermined {
        k_max_reached: usize,
        diagnostics: Vec<String>,
    },
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Separable { .. } => "separable",
            Verdict::NotSeparable { .. } => "not_separable",
            Verdict::Undetermined { .. } => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub mode: Mode,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub d: usize,
    pub k_max: usize,
    pub rank_tol: f64,
    pub feas_tol: f64,
    pub residual_tol: f64,
    pub input_trace: f64,
    pub rescaled: bool,
    pub levels: Vec<LevelRecord>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub metadata: RunMetadata,
}

impl Certificate {
    /// Number of product terms, when separable.
    pub fn rank(&self) -> Option<usize> {
        match &self.verdict {
            Verdict::Separable { decomposition, .. } => Some(decomposition.rank()),
            _ => None,
        }
    }
}

// std::time::Instant is unavailable on wasm32-unknown-unknown
#[cfg(not(target_arch = "wasm32"))]
fn clock() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn clock() -> impl Fn() -> f64 {
    || 0.0
}

/// Tensor actually certified: symmetrised in symmetric mode, optionally
/// rescaled to unit trace.
pub fn prepare_tensor(h: &HermitianTensor, options: &CertifyOptions) -> Result<HermitianTensor> {
    let report = check_structure(h, SYMMETRY_TOL);
    if !report.hermitian {
        return Err(Error::NotHermitian {
            max_asymmetry: report.max_asymmetry,
        });
    }
    let mut h = match options.mode {
        Mode::Symmetric => {
            if !h.dims().is_uniform() {
                return Err(Error::UnequalDims(h.dims().as_slice().to_vec()));
            }
            if !report.symmetric {
                return Err(Error::NotSymmetric {
                    max_deviation: report.max_permutation_deviation,
                });
            }
            // removes the rounding-level asymmetry the check tolerates
            symmetrize(h)?
        }
        Mode::Partitioned => h.clone(),
    };
    if (report.trace - 1.0).abs() > TRACE_TOL {
        if options.rescale_trace && report.trace > 0.0 {
            log::warn!("input trace {} rescaled to 1", report.trace);
            h = h.scaled(1.0 / report.trace);
        } else {
            log::warn!("input trace is {}; weights will sum to it", report.trace);
        }
    }
    Ok(h)
}

/// The objective polynomial used by a run.
pub fn objective(layout: &VariableLayout, d: usize, seed: u64) -> Result<Polynomial> {
    random_sos(layout.nvars(), d, seed)
}

/// Rebuilds the relaxation a certificate refers to.
pub fn relaxation(h: &HermitianTensor, meta: &RunMetadata, k: usize) -> Result<SdpProblem> {
    let layout = VariableLayout::new(meta.mode, h.dims().clone())?;
    let f = objective(&layout, meta.d, meta.seed)?;
    assemble_sdp(h, meta.mode, k, &f)
}

/// Runs the hierarchy on `h`.
pub fn run_etkm_sdr(h: &HermitianTensor, options: &CertifyOptions) -> Result<Certificate> {
    let elapsed = clock();
    let dims = h.dims().clone();
    let m = dims.parties();
    let d = options.validate(m)?;
    let input_trace = h.trace();
    let h = prepare_tensor(h, options)?;
    let layout = VariableLayout::new(options.mode, dims.clone())?;
    let f = objective(&layout, d, options.seed)?;
    let k_min = d / 2;
    let k_max = options.k_max.unwrap_or(d / 2 + 3);
    let solve_options = SolveOptions {
        feas_tol: options.feas_tol,
        max_iter: options.max_iter,
        ..SolveOptions::default()
    };
    let mut meta = RunMetadata {
        mode: options.mode,
        dims: dims.as_slice().to_vec(),
        seed: options.seed,
        d,
        k_max,
        rank_tol: options.rank_tol,
        feas_tol: options.feas_tol,
        residual_tol: options.residual_tol,
        input_trace,
        rescaled: options.rescale_trace && (input_trace - 1.0).abs() > TRACE_TOL,
        levels: Vec::new(),
        seconds: 0.0,
    };
    let mut diagnostics = Vec::new();

    for k in k_min..=k_max {
        let level_start = elapsed();
        let problem = assemble_sdp(&h, options.mode, k, &f)?;
        if let Some(dir) = &options.dump_dir {
            let path = dir.join(format!("sdp_k{k}.txt"));
            problem.dump(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        }
        let sol = solve(&problem, &solve_options)?;
        log::info!(
            "k = {k}: {:?} after {} iterations ({})",
            sol.status,
            sol.iterations,
            sol.message
        );
        log::debug!("iteration log at k = {k}:\n{}", sol.log_csv());
        let mut record = LevelRecord {
            k,
            moment_block: problem.psd_blocks[0].size(),
            num_moments: problem.num_moments,
            linear_rows: problem.linear_rows().len(),
            free_variables: sol.free_variables,
            status: sol.status,
            iterations: sol.iterations,
            seconds: 0.0,
            message: sol.message.clone(),
            flat_checks: Vec::new(),
        };

        if sol.status == SolveStatus::Infeasible {
            let cert = sol.certificate.clone().expect("infeasible solutions carry a certificate");
            let margin = verify_certificate(&problem, &cert)?;
            record.seconds = elapsed() - level_start;
            meta.levels.push(record);
            if margin > 0.0 {
                meta.seconds = elapsed();
                return Ok(Certificate {
                    verdict: Verdict::NotSeparable {
                        level_k: k,
                        certificate: cert,
                        margin,
                    },
                    metadata: meta,
                });
            }
            diagnostics.push(format!("k = {k}: certificate margin {margin:e} is not positive"));
            break;
        }

        // An unconverged point is still worth a flatness test: any
        // decomposition found is checked against the tensor itself.
        let found = match &sol.y {
            Some(y) => {
                let y = TruncatedMomentSequence::new(layout.nvars(), 2 * k, y.clone())?;
                try_extract(&y, k, &layout, &h, options, &mut record.flat_checks)
            }
            None => None,
        };
        record.seconds = elapsed() - level_start;
        meta.levels.push(record);
        if let Some((decomposition, t)) = found {
            meta.seconds = elapsed();
            let residual = decomposition.residual.unwrap_or(f64::NAN);
            return Ok(Certificate {
                verdict: Verdict::Separable {
                    decomposition,
                    level_k: k,
                    flat_t: t,
                    residual,
                },
                metadata: meta,
            });
        }
        if sol.status == SolveStatus::Unknown {
            diagnostics.push(format!("k = {k}: solver gave no verdict ({})", sol.message));
            break;
        }
        diagnostics.push(format!("k = {k}: no flat truncation with an acceptable decomposition"));
    }
    meta.seconds = elapsed();
    let reached = meta.levels.last().map_or(k_min, |l| l.k);
    Ok(Certificate {
        verdict: Verdict::Undetermined {
            k_max_reached: reached,
            diagnostics,
        },
        metadata: meta,
    })
}

// Inner loop over t = 1..k.
fn try_extract(
    y: &TruncatedMomentSequence,
    k: usize,
    layout: &VariableLayout,
    h: &HermitianTensor,
    options: &CertifyOptions,
    checks: &mut Vec<FlatCheck>,
) -> Option<(Decomposition, usize)> {
    for t in 1..=k {
        let witness = match is_flat(y, t, options.rank_tol) {
            Ok(w) => w,
            Err(e) => {
                checks.push(FlatCheck {
                    t,
                    rank_prev: 0,
                    rank: 0,
                    residual: None,
                    note: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut check = FlatCheck {
            t,
            rank_prev: witness.rank_prev,
            rank: witness.rank,
            residual: None,
            note: None,
        };
        if witness.is_flat() {
            let attempt = y
                .truncate(2 * t)
                .and_then(|z| extract_atoms(&z, &witness, options.seed))
                .and_then(|mu| {
                    project_onto(&mu, layout, options.atom_tol).or_else(|e| {
                        log::debug!("{e}; projecting with tolerance {RELAXED_ATOM_TOL:e}");
                        project_onto(&mu, layout, options.atom_tol.max(RELAXED_ATOM_TOL))
                    })
                })
                .and_then(|mu| atoms_to_decomposition(&mu, layout, h));
            match attempt {
                Ok(dec) => {
                    let r = dec.residual.unwrap_or(f64::INFINITY);
                    check.residual = Some(r);
                    if r <= options.residual_tol {
                        checks.push(check);
                        return Some((dec, t));
                    }
                    log::debug!("false flat at t = {t}: residual {r:e}");
                    check.note = Some("residual above tolerance".into());
                }
                Err(e) => check.note = Some(e.to_string()),
            }
        }
        checks.push(check);
    }
    None
}
