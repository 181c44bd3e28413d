//! End-to-end acceptance checks, one printed line per criterion.
//!
//! Runs without the libtest harness so the lines reach the terminal:
//! `cargo test -p qsep --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qsep::catalog::{
    bell_pair_mixture, ghz_w_mixture, isotropic, random_separable, random_unit, seven_term_symmetric,
    swapped_product_mixture,
};
use qsep::certify::{run_etkm_sdr, Certificate, CertifyOptions, Verdict};
use qsep::extract::{extract_atoms, is_flat};
use qsep::io::check_certificate;
use qsep::moments::{
    assemble_sdp, localizing_matrix, moment_matrix, LinearRow, MonomialIndex, SdpProblem, SymbolicMatrix,
    TruncatedMomentSequence,
};
use qsep::poly::{expand_pij, random_sos, sphere_constraints, Mode, VariableLayout};
use qsep::sdp::{solve, verify_certificate, InfeasibilityCertificate, SolveOptions, SolveStatus};
use qsep::tensor::{ensemble_to_tensor, reduced_index_pairs, Decomposition, HermitianTensor, PartyDims, C64};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn certify(h: &HermitianTensor, mode: Mode) -> (Certificate, f64) {
    let start = Instant::now();
    let cert = run_etkm_sdr(h, &CertifyOptions::new(mode)).expect("certification run");
    (cert, start.elapsed().as_secs_f64())
}

fn separable(cert: &Certificate) -> Result<(&Decomposition, f64), String> {
    match &cert.verdict {
        Verdict::Separable { decomposition, residual, .. } => Ok((decomposition, *residual)),
        other => Err(format!("verdict {}", other_name(other))),
    }
}

fn other_name(v: &Verdict) -> String {
    match v {
        Verdict::Undetermined { diagnostics, .. } => format!("undetermined ({})", diagnostics.join("; ")),
        v => v.name().to_string(),
    }
}

fn not_separable(cert: &Certificate) -> Result<(usize, f64), String> {
    match &cert.verdict {
        Verdict::NotSeparable { level_k, margin, .. } => Ok((*level_k, *margin)),
        other => Err(format!("verdict {}", other_name(other))),
    }
}

fn projector(u: &[C64]) -> Vec<C64> {
    let norm2: f64 = u.iter().map(|z| z.norm_sqr()).sum();
    u.iter().flat_map(|a| u.iter().map(move |b| a * b.conj() / norm2)).collect()
}

fn projector_distance(a: &[C64], b: &[C64]) -> f64 {
    projector(a)
        .iter()
        .zip(projector(b))
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

// smallest worst-case projector distance over matchings of the two atom lists
fn match_atoms(found: &[Vec<C64>], expected: &[Vec<C64>]) -> f64 {
    fn go(found: &[Vec<C64>], expected: &[Vec<C64>], used: &mut Vec<bool>, i: usize) -> f64 {
        if i == expected.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..found.len() {
            if !used[j] {
                used[j] = true;
                let d = projector_distance(&found[j], &expected[i]).max(go(found, expected, used, i + 1));
                best = best.min(d);
                used[j] = false;
            }
        }
        best
    }
    if found.len() != expected.len() {
        return f64::INFINITY;
    }
    go(found, expected, &mut vec![false; found.len()], 0)
}

fn vectors(pairs: &[[(f64, f64); 2]]) -> Vec<Vec<C64>> {
    pairs
        .iter()
        .map(|v| v.iter().map(|&(re, im)| C64::new(re, im)).collect())
        .collect()
}

fn check_weights(dec: &Decomposition, r: usize, w: f64, tol: f64) -> Result<(), String> {
    ensure(dec.rank() == r, format!("rank {} instead of {r}", dec.rank()))?;
    for a in &dec.atoms {
        ensure((a.weight - w).abs() <= tol, format!("weight {} not within {tol} of {w}", a.weight))?;
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    let h = ensemble_to_tensor(&ghz_w_mixture()).unwrap();
    let (cert, secs) = certify(&h, Mode::Symmetric);
    let (dec, residual) = separable(&cert)?;
    check_weights(dec, 3, 1.0 / 3.0, 1e-3)?;
    ensure(residual <= 1e-6, format!("residual {residual:e}"))?;
    ensure(secs <= 120.0, format!("took {secs:.1} s"))?;
    check_certificate(&cert, &h).map_err(|e| e.to_string())?;
    let printed = vectors(&[
        [(0.1222, -0.6965), (0.1222, -0.6965)],
        [(0.5293, 0.4689), (0.1414, -0.6928)],
        [(-0.4830, -0.5165), (0.6888, -0.1601)],
    ]);
    let found: Vec<Vec<C64>> = dec.atoms.iter().map(|a| a.vectors[0].clone()).collect();
    let dist = match_atoms(&found, &printed);
    ensure(dist <= 2e-3, format!("atoms differ from the printed ones by {dist:e}"))?;
    Ok(format!("r = 3, residual {residual:.1e}, projector distance to printed atoms {dist:.1e}, {secs:.1} s"))
}

fn criterion_2() -> Outcome {
    let h = ensemble_to_tensor(&bell_pair_mixture()).unwrap();
    let (cert, secs) = certify(&h, Mode::Symmetric);
    let (dec, residual) = separable(&cert)?;
    check_weights(dec, 2, 0.5, 1e-3)?;
    ensure(residual <= 1e-6, format!("residual {residual:e}"))?;
    ensure(secs <= 30.0, format!("took {secs:.1} s"))?;
    check_certificate(&cert, &h).map_err(|e| e.to_string())?;
    let s = 0.5f64.sqrt();
    let expected = vectors(&[[(s, 0.0), (s, 0.0)], [(s, 0.0), (-s, 0.0)]]);
    let found: Vec<Vec<C64>> = dec.atoms.iter().map(|a| a.vectors[0].clone()).collect();
    let dist = match_atoms(&found, &expected);
    ensure(dist <= 1e-6, format!("atoms are not |+> and |->: {dist:e}"))?;
    Ok(format!("r = 2, residual {residual:.1e}, atoms |+>, |->, {secs:.1} s"))
}

fn criterion_3() -> Outcome {
    let h = isotropic(2, 0.5).unwrap();
    let (sym, _) = certify(&h, Mode::Symmetric);
    let (k, margin) = not_separable(&sym)?;
    ensure(margin > 0.0, format!("margin {margin:e}"))?;
    check_certificate(&sym, &h).map_err(|e| e.to_string())?;
    let (plain, secs) = certify(&h, Mode::Partitioned);
    let (dec, residual) = separable(&plain)?;
    ensure(residual <= 1e-6, format!("residual {residual:e}"))?;
    ensure((4..=9).contains(&dec.rank()), format!("rank {}", dec.rank()))?;
    ensure(secs <= 600.0, format!("partitioned run took {secs:.1} s"))?;
    Ok(format!(
        "symmetric: not separable at k = {k}, margin {margin:.2e}; partitioned: r = {}, residual {residual:.1e}, {secs:.1} s",
        dec.rank()
    ))
}

/// Smallest eigenvalue of the partial transpose on the second party.
fn ppt_min_eigenvalue(h: &HermitianTensor) -> f64 {
    let dims = h.dims().as_slice().to_vec();
    let (na, nb) = (dims[0], dims[1]);
    let d = na * nb;
    let pt = |a: usize, b: usize| {
        let (i, j) = (a / nb, a % nb);
        let (k, l) = (b / nb, b % nb);
        h.entry(i * nb + l, k * nb + j)
    };
    // real symmetric embedding [[Re, -Im], [Im, Re]] doubles every eigenvalue's multiplicity
    let m = Mat::from_fn(2 * d, 2 * d, |r, c| {
        let z = pt(r % d, c % d);
        match (r < d, c < d) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    m.self_adjoint_eigenvalues(Side::Lower)
        .unwrap()
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

fn criterion_4() -> Outcome {
    let h = isotropic(2, 1.0).unwrap();
    let (cert, secs) = certify(&h, Mode::Partitioned);
    let (k, margin) = not_separable(&cert)?;
    ensure(k == cert.metadata.d / 2, format!("first certificate at k = {k}"))?;
    ensure(margin > 0.0, format!("margin {margin:e}"))?;
    check_certificate(&cert, &h).map_err(|e| e.to_string())?;
    let ppt = ppt_min_eigenvalue(&h);
    ensure(ppt < -1e-9, format!("PPT oracle sees no entanglement ({ppt:e})"))?;
    let ppt_half = ppt_min_eigenvalue(&isotropic(2, 0.5).unwrap());
    ensure(ppt_half >= -1e-12, format!("PPT oracle flags F = 1/2 ({ppt_half:e})"))?;
    Ok(format!(
        "not separable at k = {k}, margin {margin:.2e}; partial transpose min eigenvalue {ppt:.3}; {secs:.1} s"
    ))
}

fn criterion_5() -> Outcome {
    let h = ensemble_to_tensor(&seven_term_symmetric()).unwrap();
    let (cert, secs) = certify(&h, Mode::Symmetric);
    let (dec, residual) = separable(&cert)?;
    ensure(residual <= 1e-6, format!("residual {residual:e}"))?;
    ensure(dec.rank() <= 7, format!("rank {}", dec.rank()))?;
    check_certificate(&cert, &h).map_err(|e| e.to_string())?;
    Ok(format!("r = {} (from 7 terms), residual {residual:.1e}, {secs:.1} s", dec.rank()))
}

fn criterion_6() -> Outcome {
    let mut total = 0.0;
    for seed in 0..10 {
        let h = ensemble_to_tensor(&swapped_product_mixture(seed)).unwrap();
        let (sym, _) = certify(&h, Mode::Symmetric);
        let (_, margin) = not_separable(&sym).map_err(|e| format!("seed {seed}, symmetric: {e}"))?;
        ensure(margin > 0.0, format!("seed {seed}: margin {margin:e}"))?;
        check_certificate(&sym, &h).map_err(|e| format!("seed {seed}: {e}"))?;
        let (plain, secs) = certify(&h, Mode::Partitioned);
        total += secs;
        let (dec, residual) = separable(&plain).map_err(|e| format!("seed {seed}, partitioned: {e}"))?;
        ensure(dec.rank() == 2, format!("seed {seed}: rank {}", dec.rank()))?;
        ensure(residual <= 1e-6, format!("seed {seed}: residual {residual:e}"))?;
    }
    Ok(format!("10 seeds: symmetric not separable, partitioned r = 2; {total:.1} s partitioned total"))
}

fn layout(kind: usize) -> (VariableLayout, usize) {
    // (layout, relaxation order)
    match kind {
        0 => (VariableLayout::new(Mode::Symmetric, PartyDims::uniform(2, 2).unwrap()).unwrap(), 3),
        1 => (VariableLayout::new(Mode::Symmetric, PartyDims::uniform(2, 3).unwrap()).unwrap(), 2),
        _ => (VariableLayout::new(Mode::Partitioned, PartyDims::uniform(2, 2).unwrap()).unwrap(), 2),
    }
}

fn random_point(layout: &VariableLayout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; layout.nvars()];
    for b in 0..layout.blocks() {
        let u = random_unit(rng, layout.block_range(b).len() / 2);
        layout.set_block_vector(&mut x, b, &u);
    }
    x
}

fn criterion_7a(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst_eig = f64::INFINITY;
    let mut worst_loc = 0.0f64;
    for trial in 0..100 {
        let (layout, k) = layout(trial % 3);
        let r = rng.random_range(1..6);
        let atoms: Vec<(f64, Vec<f64>)> =
            (0..r).map(|_| (rng.random_range(0.1..1.0), random_point(&layout, rng))).collect();
        let y = TruncatedMomentSequence::from_atoms(layout.nvars(), 2 * k, &atoms).unwrap();
        let m = moment_matrix(&y, k).unwrap();
        let e = m.self_adjoint_eigenvalues(Side::Lower).unwrap().into_iter().fold(f64::INFINITY, f64::min);
        worst_eig = worst_eig.min(e);
        for h in sphere_constraints(&layout) {
            let l = localizing_matrix(&h, &y, k).unwrap();
            for c in 0..l.ncols() {
                for r in 0..l.nrows() {
                    worst_loc = worst_loc.max(l[(r, c)].abs());
                }
            }
        }
    }
    ensure(worst_eig >= -1e-9, format!("moment matrix eigenvalue {worst_eig:e}"))?;
    ensure(worst_loc <= 1e-9, format!("localizing entry {worst_loc:e}"))?;
    Ok(format!("min eig {worst_eig:.1e}, max localizing {worst_loc:.1e}"))
}

fn criterion_7b(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let (layout, _) = layout(if trial % 2 == 0 { 0 } else { 2 });
        let r = rng.random_range(1..5);
        let atoms: Vec<(f64, Vec<f64>)> =
            (0..r).map(|_| (rng.random_range(0.1..1.0), random_point(&layout, rng))).collect();
        let y = TruncatedMomentSequence::from_atoms(layout.nvars(), 4, &atoms).unwrap();
        let w = is_flat(&y, 2, 1e-6).map_err(|e| e.to_string())?;
        ensure(w.is_flat() && w.rank == r, format!("trial {trial}: ranks {} / {} for {r} atoms", w.rank_prev, w.rank))?;
        let mu = extract_atoms(&y, &w, trial).map_err(|e| format!("trial {trial}: {e}"))?;
        ensure(mu.atoms.len() == r, format!("trial {trial}: {} atoms", mu.atoms.len()))?;
        for (weight, x) in &atoms {
            let truth: Vec<Vec<C64>> = (0..layout.blocks()).map(|b| layout.block_vector(x, b)).collect();
            let best = mu
                .atoms
                .iter()
                .map(|a| {
                    let dw = (a.weight - weight).abs();
                    let dp = (0..layout.blocks())
                        .map(|b| projector_distance(&layout.block_vector(&a.point, b), &truth[b]))
                        .fold(0.0, f64::max);
                    dw.max(dp)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
    }
    ensure(worst <= 1e-6, format!("atom recovery error {worst:e}"))?;
    Ok(format!("50 flat sequences, worst atom error {worst:.1e}"))
}

fn criterion_7c() -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut count = [0usize; 3];
    let start = Instant::now();
    for trial in 0..50u64 {
        let (dims, symmetric, r) = match trial % 5 {
            0 | 1 => (PartyDims::uniform(2, 2).unwrap(), true, 1 + (trial as usize / 5) % 4),
            2 | 3 => (PartyDims::uniform(2, 3).unwrap(), true, 1 + (trial as usize / 5) % 4),
            _ => (PartyDims::uniform(2, 2).unwrap(), false, 1 + (trial as usize / 5) % 3),
        };
        count[if !symmetric { 2 } else if dims.local(0) == 2 { 0 } else { 1 }] += 1;
        let (ens, _) = random_separable(&dims, r, symmetric, 100 + trial).unwrap();
        let h = ensemble_to_tensor(&ens).unwrap();
        let mode = if symmetric { Mode::Symmetric } else { Mode::Partitioned };
        let (cert, _) = certify(&h, mode);
        let (_, residual) = separable(&cert).map_err(|e| format!("trial {trial} ({mode:?}, dims {:?}, r = {r}): {e}", dims.as_slice()))?;
        check_certificate(&cert, &h).map_err(|e| format!("trial {trial}: {e}"))?;
        worst = worst.max(residual);
    }
    ensure(worst <= 1e-6, format!("residual {worst:e}"))?;
    Ok(format!(
        "{} symmetric n=2, {} symmetric n=3, {} partitioned (2,2); worst residual {worst:.1e}, {:.1} s",
        count[0],
        count[1],
        count[2],
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_7d(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let cases = [
        (Mode::Symmetric, vec![2, 2]),
        (Mode::Symmetric, vec![2, 2, 2]),
        (Mode::Partitioned, vec![2, 2]),
        (Mode::Partitioned, vec![2, 3]),
    ];
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for (mode, d) in cases {
        let dims = PartyDims::new(d).unwrap();
        let layout = VariableLayout::new(mode, dims.clone()).unwrap();
        for pair in reduced_index_pairs(&dims, mode == Mode::Symmetric).unwrap() {
            pairs += 1;
            let (re, im) = expand_pij(&layout, &pair.i, &pair.j).unwrap();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..layout.nvars()).map(|_| rng.random_range(-1.5..1.5)).collect();
                let mut direct = C64::new(1.0, 0.0);
                for k in 0..dims.parties() {
                    let u = layout.block_vector(&x, if mode == Mode::Symmetric { 0 } else { k });
                    direct *= u[pair.i[k]] * u[pair.j[k]].conj();
                }
                let got = C64::new(re.evaluate(&x).unwrap(), im.evaluate(&x).unwrap());
                worst = worst.max((got - direct).norm());
            }
        }
    }
    ensure(worst <= 1e-10, format!("error {worst:e}"))?;
    Ok(format!("{pairs} pairs x 1000 points, worst error {worst:.1e}"))
}

fn criterion_7e() -> Result<String, String> {
    let index = MonomialIndex::new(1, 2);
    let row = |i: usize, rhs: f64| LinearRow { coeffs: vec![(i, 1.0)], rhs, label: format!("y{i}") };
    let boundary = SdpProblem {
        nvars: 1,
        order: 1,
        num_moments: 3,
        objective: vec![0.0, 1.0, 0.0],
        equalities: vec![row(0, 1.0), row(2, 1.0)],
        psd_blocks: vec![SymbolicMatrix::moment(&index, 1).unwrap()],
        zero_blocks: vec![],
        moment_bound: 1.0,
    };
    let sol = solve(&boundary, &SolveOptions::default()).map_err(|e| e.to_string())?;
    ensure(sol.status == SolveStatus::Optimal, format!("boundary problem: {:?}", sol.status))?;
    ensure((sol.objective_value + 1.0).abs() <= 1e-7, format!("boundary optimum {}", sol.objective_value))?;

    let negative = SdpProblem {
        nvars: 1,
        order: 0,
        num_moments: 1,
        objective: vec![0.0],
        equalities: vec![row(0, -1.0)],
        psd_blocks: vec![SymbolicMatrix::moment(&MonomialIndex::new(1, 0), 0).unwrap()],
        zero_blocks: vec![],
        moment_bound: 1.0,
    };
    let sol = solve(&negative, &SolveOptions::default()).map_err(|e| e.to_string())?;
    ensure(sol.status == SolveStatus::Infeasible, format!("negative mass: {:?}", sol.status))?;
    let margin = verify_certificate(&negative, sol.certificate.as_ref().unwrap()).unwrap();
    ensure(margin >= 0.5 - 1e-12, format!("negative mass margin {margin}"))?;
    let zeroed = InfeasibilityCertificate { multipliers: vec![0.0], blocks: vec![vec![vec![0.0]]] };
    ensure(verify_certificate(&negative, &zeroed).unwrap() <= 0.0, "zeroed certificate accepted")?;

    let (ens, _) = random_separable(&PartyDims::uniform(2, 2).unwrap(), 3, true, 9).unwrap();
    let h = ensemble_to_tensor(&ens).unwrap();
    let problem = assemble_sdp(&h, Mode::Symmetric, 3, &random_sos(4, 6, 9).unwrap()).unwrap();
    let sol = solve(&problem, &SolveOptions::default()).map_err(|e| e.to_string())?;
    ensure(sol.status == SolveStatus::Optimal, format!("separable instance: {:?}", sol.status))?;
    ensure(sol.equality_residual <= 1e-8, format!("equality residual {:e}", sol.equality_residual))?;

    let iso = isotropic(2, 0.5).unwrap();
    let problem = assemble_sdp(&iso, Mode::Symmetric, 3, &random_sos(4, 6, 0).unwrap()).unwrap();
    let sol = solve(&problem, &SolveOptions::default()).map_err(|e| e.to_string())?;
    ensure(sol.status == SolveStatus::Infeasible, format!("isotropic symmetric: {:?}", sol.status))?;
    let iso_margin = verify_certificate(&problem, sol.certificate.as_ref().unwrap()).unwrap();
    ensure(iso_margin > 0.0, format!("isotropic margin {iso_margin:e}"))?;
    Ok(format!("boundary optimum -1, toy margin {margin:.2}, isotropic margin {iso_margin:.2e}"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let parts = [
        ("a", criterion_7a(&mut rng)),
        ("b", criterion_7b(&mut rng)),
        ("d", criterion_7d(&mut rng)),
        ("e", criterion_7e()),
        ("c", criterion_7c()),
    ];
    let mut lines = Vec::new();
    let mut failed = false;
    for (name, r) in parts {
        match r {
            Ok(s) => lines.push(format!("({name}) {s}")),
            Err(e) => {
                failed = true;
                lines.push(format!("({name}) FAILED: {e}"));
            }
        }
    }
    let text = lines.join("; ");
    if failed {
        Err(text)
    } else {
        Ok(text)
    }
}

// Reported, not asserted.
fn criterion_8() -> String {
    let dims = PartyDims::uniform(2, 2).unwrap();
    let mut ranks = Vec::new();
    let mut other = 0;
    for seed in 0..50u64 {
        let terms = 2 + (seed as usize % 7);
        let (ens, _) = random_separable(&dims, terms, true, 500 + seed).unwrap();
        let h = ensemble_to_tensor(&ens).unwrap();
        let (cert, _) = certify(&h, Mode::Symmetric);
        match cert.rank() {
            Some(r) => ranks.push(r),
            None => other += 1,
        }
    }
    let within = ranks.iter().filter(|&&r| r <= 4).count();
    let max = ranks.iter().copied().max().unwrap_or(0);
    format!(
        "{within}/{} decompositions have r <= 4 (max r = {max}, inputs built from 2..8 terms); {other} runs without a decomposition",
        ranks.len()
    )
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filter.is_empty() || filter.iter().any(|f| f == name);
    let mut failures = 0;
    for (name, run) in criteria {
        if !selected(name) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {name}: PASS [{secs:.1} s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {name}: FAIL [{secs:.1} s] {detail}");
            }
        }
    }
    if selected("8") {
        let start = Instant::now();
        let detail = criterion_8();
        println!("criterion 8: REPORT [{:.1} s] {detail}", start.elapsed().as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
