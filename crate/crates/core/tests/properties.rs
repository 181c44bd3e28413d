use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qsep::catalog::{random_separable, random_unit};
use qsep::extract::{atoms_to_decomposition, extract_atoms, is_flat, project_onto, AtomicMeasure, PointAtom};
use qsep::moments::{
    assemble_sdp, localizing_matrix, moment_matrix, MonomialIndex, TruncatedMomentSequence,
};
use qsep::poly::{
    binomial, expand_pij, monomial_basis, random_sos, sphere_constraints, Mode, VariableLayout,
};
use qsep::sdp::{solve, SolveOptions, SolveStatus};
use qsep::tensor::{
    density_to_tensor, ensemble_to_tensor, reconstruct, reduced_index_pairs, residual, Atom,
    Decomposition, EnsembleTerm, HermitianTensor, PartyDims, StateEnsemble, C64,
};

const DIMS: &[&[usize]] = &[&[2], &[3], &[2, 2], &[2, 3], &[3, 3], &[2, 2, 2]];

fn dims_strategy() -> impl Strategy<Value = PartyDims> {
    prop::sample::select(DIMS).prop_map(|d| PartyDims::new(d.to_vec()).unwrap())
}

fn random_ensemble(dims: &PartyDims, terms: usize, seed: u64) -> StateEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..terms).map(|i| 1.0 + (seed % 7 + i as u64) as f64).collect();
    let total: f64 = raw.iter().sum();
    let terms = raw
        .iter()
        .map(|w| EnsembleTerm {
            weight: w / total,
            amplitudes: random_unit(&mut rng, dims.size()),
        })
        .collect();
    StateEnsemble::new(dims.clone(), terms).unwrap()
}

fn random_hermitian(dims: &PartyDims, seed: u64) -> HermitianTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims.size();
    let raw: Vec<Vec<C64>> = (0..d).map(|_| random_unit(&mut rng, d)).collect();
    let rows: Vec<Vec<C64>> = (0..d)
        .map(|a| (0..d).map(|b| raw[a][b] + raw[b][a].conj()).collect())
        .collect();
    density_to_tensor(&rows, dims).unwrap()
}

// point of the layout carrying the given party vectors
fn atom_point(layout: &VariableLayout, vectors: &[Vec<C64>]) -> Vec<f64> {
    let mut x = vec![0.0; layout.nvars()];
    for (b, v) in vectors.iter().enumerate() {
        layout.set_block_vector(&mut x, b, v);
    }
    x
}

fn exhaustive_pairs(dims: &PartyDims) -> Vec<(Vec<usize>, Vec<usize>)> {
    let all: Vec<Vec<usize>> = dims.multi_indices().collect();
    all.iter()
        .flat_map(|i| all.iter().map(move |j| (i.clone(), j.clone())))
        .collect()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..m {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn plain_pairs_cover_each_pair_exactly_once() {
    for d in [vec![2, 2], vec![2, 2, 2], vec![3, 3]] {
        let dims = PartyDims::new(d).unwrap();
        let reps = reduced_index_pairs(&dims, false).unwrap();
        for (i, j) in exhaustive_pairs(&dims) {
            let hits = reps
                .iter()
                .filter(|r| (r.i == i && r.j == j) || (r.i == j && r.j == i))
                .count();
            assert_eq!(hits, 1, "{i:?} {j:?}");
        }
    }
}

#[test]
fn symmetric_pairs_reach_every_pair() {
    for d in [vec![2, 2], vec![2, 2, 2], vec![3, 3]] {
        let dims = PartyDims::new(d).unwrap();
        let reps = reduced_index_pairs(&dims, true).unwrap();
        let perms = permutations(dims.parties());
        for (i, j) in exhaustive_pairs(&dims) {
            let reached = perms.iter().any(|p| {
                let pi: Vec<usize> = p.iter().map(|&k| i[k]).collect();
                let pj: Vec<usize> = p.iter().map(|&k| j[k]).collect();
                reps.iter()
                    .any(|r| (r.i == pi && r.j == pj) || (r.i == pj && r.j == pi))
            });
            assert!(reached, "{i:?} {j:?}");
        }
        // representatives are distinct entries of the tensor
        let mut seen = std::collections::HashSet::new();
        for r in &reps {
            assert!(seen.insert((r.i.clone(), r.j.clone())));
            assert!(r.i.windows(2).all(|w| w[0] <= w[1]) && r.i <= r.j);
        }
    }
}

#[test]
fn random_sos_has_full_degree() {
    for seed in 0..20 {
        let f = random_sos(4, 6, seed).unwrap();
        assert_eq!(f.degree(), 6, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ensemble_tensor_is_hermitian_with_trace_one(dims in dims_strategy(), terms in 1usize..4, seed: u64) {
        let ens = random_ensemble(&dims, terms, seed);
        let h = ensemble_to_tensor(&ens).unwrap();
        prop_assert!(h.max_asymmetry() <= 1e-14);
        let total: f64 = ens.terms().iter().map(|t| t.weight).sum();
        prop_assert!((h.trace() - total).abs() <= 1e-14);
    }

    #[test]
    fn density_and_ensemble_agree(dims in dims_strategy(), terms in 1usize..4, seed: u64) {
        let ens = random_ensemble(&dims, terms, seed);
        let d = dims.size();
        let mut rows = vec![vec![C64::new(0.0, 0.0); d]; d];
        for t in ens.terms() {
            for a in 0..d {
                for b in 0..d {
                    rows[a][b] += t.amplitudes[a] * t.amplitudes[b].conj() * t.weight;
                }
            }
        }
        let from_density = density_to_tensor(&rows, &dims).unwrap();
        let from_ensemble = ensemble_to_tensor(&ens).unwrap();
        prop_assert!(residual(&from_density, &from_ensemble).unwrap() <= 1e-12);
    }

    #[test]
    fn real_atoms_give_real_tensors(dims in dims_strategy(), weights in prop::collection::vec(0.1f64..1.0, 1..4), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms = weights
            .iter()
            .map(|&w| Atom {
                weight: w,
                vectors: dims
                    .as_slice()
                    .iter()
                    .map(|&n| random_unit(&mut rng, n).iter().map(|z| C64::new(z.re, 0.0)).collect::<Vec<_>>())
                    .map(|v: Vec<C64>| {
                        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                        v.iter().map(|z| z / norm).collect()
                    })
                    .collect(),
            })
            .collect();
        let dec = Decomposition { symmetric: false, atoms, residual: None };
        let h = reconstruct(&dec, &dims).unwrap();
        prop_assert!(h.entries().iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn residual_is_a_metric(dims in dims_strategy(), seeds in prop::array::uniform3(any::<u64>())) {
        let [a, b, c] = seeds.map(|s| random_hermitian(&dims, s));
        let ab = residual(&a, &b).unwrap();
        let ba = residual(&b, &a).unwrap();
        let bc = residual(&b, &c).unwrap();
        let ac = residual(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(residual(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn basis_is_sorted_and_indexed(nvars in 1usize..7, d in 0usize..6) {
        let basis = monomial_basis(nvars, d);
        prop_assert_eq!(basis.len(), binomial(nvars + d, d));
        for w in basis.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            // graded; within a degree the larger leading exponent comes first
            prop_assert!(a.degree() < b.degree() || (a.degree() == b.degree() && a.exponents() > b.exponents()));
        }
        let index = MonomialIndex::new(nvars, d);
        for (pos, m) in basis.iter().enumerate() {
            prop_assert_eq!(index.position(m.exponents()), Some(pos));
        }
    }

    #[test]
    fn pij_structure(dims in dims_strategy(), symmetric: bool, a: prop::sample::Index, b: prop::sample::Index) {
        let mode = if symmetric && dims.is_uniform() { Mode::Symmetric } else { Mode::Partitioned };
        let layout = VariableLayout::new(mode, dims.clone()).unwrap();
        let all: Vec<Vec<usize>> = dims.multi_indices().collect();
        let i = a.get(&all);
        let j = b.get(&all);
        let (r, t) = expand_pij(&layout, i, j).unwrap();
        let (r2, t2) = expand_pij(&layout, j, i).unwrap();
        prop_assert_eq!(&r, &r2);
        prop_assert_eq!(&t, &t2.scale(-1.0));
        if i == j {
            prop_assert!(t.is_zero());
        }
        let m = dims.parties();
        for (mono, _) in r.terms().chain(t.terms()) {
            prop_assert_eq!(mono.degree(), 2 * m);
            for blk in 0..layout.blocks() {
                let deg: u32 = mono.exponents()[layout.block_range(blk)].iter().sum();
                prop_assert_eq!(deg % 2, 0);
            }
        }
    }

    #[test]
    fn sphere_constraints_vanish_on_unit_blocks(dims in dims_strategy(), symmetric: bool, seed: u64) {
        let mode = if symmetric && dims.is_uniform() { Mode::Symmetric } else { Mode::Partitioned };
        let layout = VariableLayout::new(mode, dims.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Vec<C64>> = (0..layout.blocks())
            .map(|b| random_unit(&mut rng, layout.block_range(b).len() / 2))
            .collect();
        let x = atom_point(&layout, &vectors);
        for h in sphere_constraints(&layout) {
            prop_assert!(h.evaluate(&x).unwrap().abs() <= 1e-14);
        }
    }

    #[test]
    fn moment_matrices_are_linear(nvars in 1usize..4, alpha in -2.0f64..2.0, beta in -2.0f64..2.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = binomial(nvars + 4, 4);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { random_unit(rng, n).iter().map(|z| z.re).collect() };
        let (v1, v2) = (draw(&mut rng), draw(&mut rng));
        let comb: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| alpha * a + beta * b).collect();
        let y1 = TruncatedMomentSequence::new(nvars, 4, v1).unwrap();
        let y2 = TruncatedMomentSequence::new(nvars, 4, v2).unwrap();
        let y = TruncatedMomentSequence::new(nvars, 4, comb).unwrap();
        let (m1, m2, m) = (moment_matrix(&y1, 2).unwrap(), moment_matrix(&y2, 2).unwrap(), moment_matrix(&y, 2).unwrap());
        let h = &sphere_constraints(&VariableLayout::new(Mode::Partitioned, PartyDims::new(vec![1]).unwrap()).unwrap())[0];
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                prop_assert_eq!(m[(r, c)], alpha * m1[(r, c)] + beta * m2[(r, c)]);
            }
        }
        if nvars == 2 {
            let (l1, l2, l) = (localizing_matrix(h, &y1, 2).unwrap(), localizing_matrix(h, &y2, 2).unwrap(), localizing_matrix(h, &y, 2).unwrap());
            for r in 0..l.nrows() {
                for c in 0..l.ncols() {
                    prop_assert!((l[(r, c)] - alpha * l1[(r, c)] - beta * l2[(r, c)]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn phases_per_party_leave_the_tensor_unchanged(dims in dims_strategy(), seed: u64, theta in prop::collection::vec(0.0f64..6.3, 9)) {
        let (_, dec) = random_separable(&dims, 3, false, seed).unwrap();
        let mut rotated = dec.clone();
        for (k, atom) in rotated.atoms.iter_mut().enumerate() {
            for (p, v) in atom.vectors.iter_mut().enumerate() {
                let phase = C64::from_polar(1.0, theta[(3 * k + p) % theta.len()]);
                v.iter_mut().for_each(|z| *z *= phase);
            }
        }
        let a = reconstruct(&dec, &dims).unwrap();
        let b = reconstruct(&rotated, &dims).unwrap();
        prop_assert!(residual(&a, &b).unwrap() <= 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn separable_moments_satisfy_every_row(symmetric: bool, r in 1usize..4, seed: u64) {
        let (dims, mode, k) = if symmetric {
            (PartyDims::uniform(2, 2).unwrap(), Mode::Symmetric, 3)
        } else {
            (PartyDims::new(vec![2, 2]).unwrap(), Mode::Partitioned, 2)
        };
        let (ens, dec) = random_separable(&dims, r, symmetric, seed).unwrap();
        let h = ensemble_to_tensor(&ens).unwrap();
        let layout = VariableLayout::new(mode, dims.clone()).unwrap();
        let atoms: Vec<(f64, Vec<f64>)> = dec.atoms.iter().map(|a| (a.weight, atom_point(&layout, &a.vectors))).collect();
        let y = TruncatedMomentSequence::from_atoms(layout.nvars(), 2 * k, &atoms).unwrap();
        let f = random_sos(layout.nvars(), 2 * k, seed).unwrap();
        let problem = assemble_sdp(&h, mode, k, &f).unwrap();
        for row in problem.linear_rows() {
            let lhs: f64 = row.coeffs.iter().map(|&(i, c)| c * y.values()[i]).sum();
            prop_assert!((lhs - row.rhs).abs() <= 1e-9, "{}: {} vs {}", row.label, lhs, row.rhs);
        }
    }

    #[test]
    fn extracted_weights_are_positive_and_sum_to_the_trace(symmetric: bool, r in 1usize..4, seed: u64) {
        let dims = PartyDims::uniform(2, 2).unwrap();
        let mode = if symmetric { Mode::Symmetric } else { Mode::Partitioned };
        let (ens, dec) = random_separable(&dims, r, symmetric, seed).unwrap();
        let h = ensemble_to_tensor(&ens).unwrap();
        let layout = VariableLayout::new(mode, dims).unwrap();
        let points: Vec<(f64, Vec<f64>)> = dec.atoms.iter().map(|a| (a.weight, atom_point(&layout, &a.vectors))).collect();
        let y = TruncatedMomentSequence::from_atoms(layout.nvars(), 6, &points).unwrap();
        let w = is_flat(&y, 3, 1e-6).unwrap();
        prop_assume!(w.is_flat());
        let z = y.truncate(6).unwrap();
        let mu = extract_atoms(&z, &w, seed).unwrap();
        let spheres = sphere_constraints(&layout);
        prop_assert!(mu.max_violation(&spheres).unwrap() <= 1e-6);
        let projected = project_onto(&mu, &layout, 1e-6).unwrap();
        prop_assert!(projected.max_violation(&spheres).unwrap() <= 1e-14);
        let out = atoms_to_decomposition(&projected, &layout, &h).unwrap();
        prop_assert!(out.atoms.iter().all(|a| a.weight > 0.0));
        prop_assert!((out.total_weight() - h.trace()).abs() <= 1e-6);
        prop_assert!(out.residual.unwrap() <= 1e-6);
    }
}

#[test]
fn solves_are_deterministic() {
    let dims = PartyDims::uniform(2, 2).unwrap();
    let (ens, _) = random_separable(&dims, 3, true, 11).unwrap();
    let h = ensemble_to_tensor(&ens).unwrap();
    let f = random_sos(4, 6, 11).unwrap();
    let problem = assemble_sdp(&h, Mode::Symmetric, 3, &f).unwrap();
    let a = solve(&problem, &SolveOptions::default()).unwrap();
    let b = solve(&problem, &SolveOptions::default()).unwrap();
    assert_eq!(a.status, SolveStatus::Optimal);
    assert_eq!(a.status, b.status);
    assert!((a.objective_value - b.objective_value).abs() <= 1e-10);
    assert!(a.equality_residual <= 1e-8);
}

#[test]
fn atomic_measure_moments_roundtrip() {
    let mu = AtomicMeasure {
        nvars: 2,
        atoms: vec![
            PointAtom { weight: 0.5, point: vec![1.0, 0.0] },
            PointAtom { weight: 0.5, point: vec![0.0, 1.0] },
        ],
    };
    let y = mu.moments(4).unwrap();
    let w = is_flat(&y, 2, 1e-6).unwrap();
    assert!(w.is_flat() && w.rank == 2);
}
