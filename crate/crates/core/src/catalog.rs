//! Named test states and random generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::{kron, Atom, Decomposition, EnsembleTerm, HermitianTensor, PartyDims, StateEnsemble, C64};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn basis_state(dims: &PartyDims, terms: &[(&[usize], f64)]) -> Vec<C64> {
    let mut v = vec![c(0.0, 0.0); dims.size()];
    for (idx, amp) in terms {
        v[dims.flatten(idx)] += amp;
    }
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter().map(|z| z / norm).collect()
}

/// Three-qubit mixture `1/4 GHZ + 3/8 W + 3/8 W~`, where `W~` is `W`
/// with every qubit flipped.
pub fn ghz_w_mixture() -> StateEnsemble {
    let dims = PartyDims::uniform(3, 2).unwrap();
    let ghz = basis_state(&dims, &[(&[0, 0, 0], 1.0), (&[1, 1, 1], 1.0)]);
    let w = basis_state(&dims, &[(&[0, 0, 1], 1.0), (&[0, 1, 0], 1.0), (&[1, 0, 0], 1.0)]);
    let wt = basis_state(&dims, &[(&[1, 1, 0], 1.0), (&[1, 0, 1], 1.0), (&[0, 1, 1], 1.0)]);
    StateEnsemble::new(
        dims,
        vec![
            EnsembleTerm { weight: 0.25, amplitudes: ghz },
            EnsembleTerm { weight: 0.375, amplitudes: w },
            EnsembleTerm { weight: 0.375, amplitudes: wt },
        ],
    )
    .unwrap()
}

/// Equal mixture of `(|00> + |11>)/sqrt2` and `(|01> + |10>)/sqrt2`.
pub fn bell_pair_mixture() -> StateEnsemble {
    let dims = PartyDims::uniform(2, 2).unwrap();
    let a = basis_state(&dims, &[(&[0, 0], 1.0), (&[1, 1], 1.0)]);
    let b = basis_state(&dims, &[(&[0, 1], 1.0), (&[1, 0], 1.0)]);
    StateEnsemble::new(
        dims,
        vec![
            EnsembleTerm { weight: 0.5, amplitudes: a },
            EnsembleTerm { weight: 0.5, amplitudes: b },
        ],
    )
    .unwrap()
}

/// `1/2 (|ab><ab| + |ba><ba|)` for two random qubit states `a != b`.
/// Separable, but with no symmetric decomposition.
pub fn swapped_product_mixture(seed: u64) -> StateEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_unit(&mut rng, 2);
    let b = random_unit(&mut rng, 2);
    let dims = PartyDims::uniform(2, 2).unwrap();
    StateEnsemble::new(
        dims,
        vec![
            EnsembleTerm { weight: 0.5, amplitudes: kron(&[&a, &b]) },
            EnsembleTerm { weight: 0.5, amplitudes: kron(&[&b, &a]) },
        ],
    )
    .unwrap()
}

const SEVEN_QUBIT_STATES: [[(f64, f64); 2]; 7] = [
    [(0.1865, -0.0210), (0.7198, 0.6684)],
    [(0.3857, 0.5437), (0.4330, 0.6067)],
    [(0.5296, 0.6557), (0.3881, 0.3800)],
    [(-0.0967, 0.8886), (0.0243, 0.4477)],
    [(0.7262, 0.4409), (0.1067, 0.5166)],
    [(-0.1165, 0.4494), (0.8815, -0.0864)],
    [(0.9394, 0.0557), (0.2231, 0.2544)],
];

/// Uniform mixture of seven symmetric two-qubit products `|phi phi>`.
/// The listed amplitudes carry four decimals and are renormalised.
pub fn seven_term_symmetric() -> StateEnsemble {
    let dims = PartyDims::uniform(2, 2).unwrap();
    let terms = SEVEN_QUBIT_STATES
        .iter()
        .map(|phi| {
            let v: Vec<C64> = phi.iter().map(|&(re, im)| c(re, im)).collect();
            EnsembleTerm { weight: 1.0, amplitudes: kron(&[&v, &v]) }
        })
        .collect();
    StateEnsemble::normalized(dims, terms).unwrap()
}

/// Isotropic state `(1-F)/(n^2-1) (I - |Phi+><Phi+|) + F |Phi+><Phi+|` on
/// two `n`-level systems, as a tensor.
pub fn isotropic(n: usize, fidelity: f64) -> Result<HermitianTensor> {
    let dims = PartyDims::uniform(2, n)?;
    let d = n * n;
    let mut rows = vec![vec![c(0.0, 0.0); d]; d];
    let noise = (1.0 - fidelity) / (d as f64 - 1.0);
    for (a, row) in rows.iter_mut().enumerate() {
        row[a] += noise;
    }
    let scale = (fidelity - noise) / n as f64;
    for i in 0..n {
        for j in 0..n {
            rows[i * n + i][j * n + j] += scale;
        }
    }
    crate::tensor::density_to_tensor(&rows, &dims)
}

/// Product of the given local pure states, weight one.
pub fn product_state(vectors: &[Vec<C64>]) -> Result<StateEnsemble> {
    let dims = PartyDims::new(vectors.iter().map(Vec::len).collect())?;
    let refs: Vec<&[C64]> = vectors.iter().map(Vec::as_slice).collect();
    StateEnsemble::new(dims, vec![EnsembleTerm { weight: 1.0, amplitudes: kron(&refs) }])
}

/// Haar-random unit vector in `C^n`.
pub fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..n)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter().map(|z| z / norm).collect()
}

/// A random separable state with `r` product terms and the decomposition
/// it was built from. With `symmetric` every term is `u ⊗ ... ⊗ u`, which
/// needs uniform dims.
pub fn random_separable(dims: &PartyDims, r: usize, symmetric: bool, seed: u64) -> Result<(StateEnsemble, Decomposition)> {
    if symmetric && !dims.is_uniform() {
        return Err(crate::Error::UnequalDims(dims.as_slice().to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..r).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut terms = Vec::with_capacity(r);
    let mut atoms = Vec::with_capacity(r);
    for w in raw {
        let weight = w / total;
        let vectors: Vec<Vec<C64>> = if symmetric {
            vec![random_unit(&mut rng, dims.local(0))]
        } else {
            dims.as_slice().iter().map(|&n| random_unit(&mut rng, n)).collect()
        };
        let factors: Vec<&[C64]> = if symmetric {
            vec![vectors[0].as_slice(); dims.parties()]
        } else {
            vectors.iter().map(Vec::as_slice).collect()
        };
        terms.push(EnsembleTerm { weight, amplitudes: kron(&factors) });
        atoms.push(Atom { weight, vectors });
    }
    let ensemble = StateEnsemble::new(dims.clone(), terms)?;
    let decomposition = Decomposition { symmetric, atoms, residual: None };
    Ok((ensemble, decomposition))
}
