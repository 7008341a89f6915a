//! Seeded sampling of random quantum objects.
//!
//! Every sampler takes an explicit [`ChaCha20Rng`] so that test corpora and
//! report inputs are reproducible from a single `u64` seed.  Unitaries are
//! drawn from the Haar measure by orthonormalizing a complex Ginibre matrix
//! (Gram–Schmidt with positive pivots is the QR decomposition with positive
//! diagonal `R`, which maps the Ginibre ensemble exactly onto Haar).

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quantum_ops::{ClassicalInput, InstrumentOutcome, Povm, QuantumInstrument};
use crate::tensor_core::{c64, ComplexMatrix, StateVector};

/// Deterministic RNG for a given seed; all CLI and test sampling goes
/// through this single entry point.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn standard_complex(rng: &mut ChaCha20Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re, im)
}

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn ginibre(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, standard_complex(rng));
        }
    }
    m
}

/// Haar-random unitary of the given dimension.
pub fn haar_unitary(dim: usize, rng: &mut ChaCha20Rng) -> ComplexMatrix {
    assert!(dim > 0, "haar_unitary needs dim >= 1");
    let mut q = ginibre(dim, dim, rng);
    for j in 0..dim {
        loop {
            // Two orthogonalization passes keep the columns orthonormal to
            // machine precision without changing the sampled Q factor.
            for _ in 0..2 {
                for i in 0..j {
                    let mut ip = Complex64::new(0.0, 0.0);
                    for r in 0..dim {
                        ip += q.get(r, i).conj() * q.get(r, j);
                    }
                    for r in 0..dim {
                        let v = q.get(r, j) - ip * q.get(r, i);
                        q.set(r, j, v);
                    }
                }
            }
            let norm: f64 = (0..dim).map(|r| q.get(r, j).norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for r in 0..dim {
                    let v = q.get(r, j) / norm;
                    q.set(r, j, v);
                }
                break;
            }
            // Almost surely unreachable: the column collapsed, redraw it.
            for r in 0..dim {
                q.set(r, j, standard_complex(rng));
            }
        }
    }
    q
}

/// Haar-random pure state (Gaussian amplitudes, normalized).
pub fn random_state(dim: usize, rng: &mut ChaCha20Rng) -> StateVector {
    loop {
        let amps: Vec<Complex64> = (0..dim).map(|_| standard_complex(rng)).collect();
        if amps.iter().map(|a| a.norm_sqr()).sum::<f64>() > 1e-12 {
            let raw = StateVector::new(amps).expect("finite Gaussian amplitudes");
            return raw.normalized().expect("norm checked above");
        }
    }
}

/// Principal square root of a positive semidefinite matrix.  Slightly
/// negative eigenvalues from roundoff are clamped to zero.
pub fn sqrtm_psd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = m.eig_hermitian()?;
    let d = m.rows();
    let mut out = ComplexMatrix::zeros(d, d);
    for t in 0..d {
        let lam = eig.eigenvalues[t].max(0.0);
        let s = lam.sqrt();
        for r in 0..d {
            for c in 0..d {
                let v = out.get(r, c)
                    + eig.eigenvectors.get(r, t) * eig.eigenvectors.get(c, t).conj() * s;
                out.set(r, c, v);
            }
        }
    }
    Ok(out)
}

/// Inverse square root of a positive definite matrix.
fn inv_sqrtm_pd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = m.eig_hermitian()?;
    let d = m.rows();
    if eig.eigenvalues[0] < 1e-12 {
        return Err(Error::Numerical(format!(
            "matrix is numerically singular (min eigenvalue {:.3e})",
            eig.eigenvalues[0]
        )));
    }
    let mut out = ComplexMatrix::zeros(d, d);
    for t in 0..d {
        let s = 1.0 / eig.eigenvalues[t].sqrt();
        for r in 0..d {
            for c in 0..d {
                let v = out.get(r, c)
                    + eig.eigenvectors.get(r, t) * eig.eigenvectors.get(c, t).conj() * s;
                out.set(r, c, v);
            }
        }
    }
    Ok(out)
}

/// Random POVM with `n` outcomes on a `dim`-dimensional space: Wishart raws
/// with random weights, whitened by the inverse square root of their sum.
pub fn random_povm(dim: usize, n: usize, rng: &mut ChaCha20Rng) -> Result<Povm> {
    if n == 0 {
        return Err(Error::Dimension("POVM needs at least one outcome".into()));
    }
    let mut raws = Vec::with_capacity(n);
    let mut sum = ComplexMatrix::zeros(dim, dim);
    for _ in 0..n {
        let g = ginibre(dim, dim, rng);
        let w: f64 = rng.sample::<f64, _>(StandardNormal).abs();
        let raw = g.matmul(&g.dagger())?.scale_re(w);
        sum = sum.add(&raw)?;
        raws.push(raw);
    }
    let whiten = inv_sqrtm_pd(&sum)?;
    let elements = raws
        .into_iter()
        .map(|r| whiten.matmul(&r)?.matmul(&whiten))
        .collect::<Result<Vec<_>>>()?;
    Povm::new(elements)
}

/// Kraus operators of a random CPTP map from `in_dim` to `out_dim`.
///
/// Ginibre blocks are normalized jointly by `S^{-1/2}` with
/// `S = Σ_k A_k† A_k`, so `Σ_k E_k† E_k = I` holds exactly up to roundoff.
pub fn random_cptp_kraus(
    in_dim: usize,
    out_dim: usize,
    n_kraus: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<ComplexMatrix>> {
    if n_kraus * out_dim < in_dim {
        return Err(Error::Dimension(format!(
            "{n_kraus} Kraus operators of shape {out_dim}x{in_dim} cannot be trace-preserving"
        )));
    }
    let blocks: Vec<ComplexMatrix> = (0..n_kraus)
        .map(|_| ginibre(out_dim, in_dim, rng))
        .collect();
    let mut s = ComplexMatrix::zeros(in_dim, in_dim);
    for a in &blocks {
        s = s.add(&a.dagger().matmul(a)?)?;
    }
    let norm = inv_sqrtm_pd(&s)?;
    blocks.into_iter().map(|a| a.matmul(&norm)).collect()
}

/// Random quantum instrument: `n_outcomes` CP branches of
/// `kraus_per_outcome` operators each, jointly trace-preserving.
pub fn random_instrument(
    in_dim: usize,
    out_dim: usize,
    n_outcomes: usize,
    kraus_per_outcome: usize,
    rng: &mut ChaCha20Rng,
) -> Result<QuantumInstrument> {
    let all = random_cptp_kraus(in_dim, out_dim, n_outcomes * kraus_per_outcome, rng)?;
    let outcomes = all
        .chunks(kraus_per_outcome)
        .enumerate()
        .map(|(o, ks)| InstrumentOutcome {
            label: o.to_string(),
            kraus: ks.to_vec(),
        })
        .collect();
    QuantumInstrument::new(
        in_dim,
        out_dim,
        vec![ClassicalInput {
            label: String::new(),
            outcomes,
        }],
    )
}

/// Random separable trace-preserving map on a `d_a ⊗ d_b` system, returned
/// as `branches` Kraus pairs `(A_k, B_k)` with `Σ_k A_k†A_k ⊗ B_k†B_k = I`.
///
/// Construction: `{A_k†A_k}` forms a POVM on the A side scaled by `1/c_k²`,
/// and `B_k = c_k · (Haar unitary)` restores the balance, so the joint map is
/// trace-preserving while each branch weights the two sides unevenly.
pub fn random_sep_tp_map(
    d_a: usize,
    d_b: usize,
    branches: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<(ComplexMatrix, ComplexMatrix)>> {
    let povm = random_povm(d_a, branches, rng)?;
    let mut pairs = Vec::with_capacity(branches);
    for el in povm.elements() {
        let c: f64 = 0.5 + 1.1 * rng.gen::<f64>();
        let a = haar_unitary(d_a, rng).matmul(&sqrtm_psd(el)?)?.scale_re(1.0 / c);
        let b = haar_unitary(d_b, rng).scale_re(c);
        pairs.push((a, b));
    }
    Ok(pairs)
}
