//! Quantum states, instruments, channel representations, and their validity
//! predicates.
//!
//! The central object is the Choi–Jamiołkowski (CJ) operator of a map
//! `𝓜: L(H_in) → L(H_out)`, taken in the *unnormalized, input-factor-first*
//! convention
//!
//! ```text
//! M = Σ_{k,l} |k⟩⟨l| ⊗ 𝓜(|k⟩⟨l|)      ∈  L(H_in ⊗ H_out)
//! ```
//!
//! with the inverse action `𝓜(ρ) = tr_in[ M (ρᵀ ⊗ I_out) ]`, all transposes in
//! the computational basis.  Under this convention `𝓜` is completely positive
//! iff `M ⪰ 0` and trace-preserving iff `tr_out M = I_in`.
//!
//! The module provides:
//!
//! * [`DensityOperator`], [`Povm`], [`QuantumInstrument`] with their validity
//!   invariants enforced at construction;
//! * conversions [`kraus_to_choi`] / [`choi_to_kraus`] and the CJ calculus
//!   ([`ChoiOperator::apply`], [`choi_of_composition`], [`choi_tensor`]);
//! * a unitary dilation of any instrument ([`dilate_instrument`]) realizing
//!   it as attach-ancilla → unitary → projective measurement;
//! * assembly of separable-operator decompositions
//!   ([`is_separable_operator_decomposition`]);
//! * a registry of named gates used throughout the test corpus ([`gates`]).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::{c64, ComplexMatrix, StateVector};

/// Hermiticity / positivity slack for density operators.
pub const DENSITY_TOL: f64 = 1e-10;

/// Completeness tolerance for instruments and POVMs.
pub const COMPLETENESS_TOL: f64 = 1e-9;

/// Default eigenvalue floor below which Choi→Kraus extraction drops a
/// component.
pub const KRAUS_EIG_FLOOR: f64 = 1e-10;

/// Density operator: Hermitian (to [`DENSITY_TOL`]), positive semidefinite
/// (eigenvalues ≥ −[`DENSITY_TOL`]), unit trace (±[`DENSITY_TOL`]).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityOperator {
    matrix: ComplexMatrix,
    /// Tensor factor dimensions; product equals the matrix size.
    dims: Vec<usize>,
}

impl DensityOperator {
    /// Validate and wrap a matrix as a density operator.
    pub fn new(matrix: ComplexMatrix, dims: Vec<usize>) -> Result<Self> {
        let total: usize = dims.iter().product();
        if !matrix.is_square() || matrix.rows() != total {
            return Err(Error::Dimension(format!(
                "density operator: matrix is {}x{}, dims product {total}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_hermitian(DENSITY_TOL) {
            return Err(Error::Validation("density operator is not Hermitian".into()));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > DENSITY_TOL || tr.im.abs() > DENSITY_TOL {
            return Err(Error::Validation(format!(
                "density operator trace {tr} is not 1"
            )));
        }
        let eig = matrix.eig_hermitian()?;
        if eig.eigenvalues[0] < -DENSITY_TOL {
            return Err(Error::Validation(format!(
                "density operator has negative eigenvalue {}",
                eig.eigenvalues[0]
            )));
        }
        Ok(DensityOperator { matrix, dims })
    }

    /// Density operator of a pure state.
    pub fn from_pure(state: &StateVector, dims: Vec<usize>) -> Result<Self> {
        Self::new(state.to_density(), dims)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Reduced state on the listed (strictly increasing) factors.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityOperator> {
        let m = self.matrix.partial_trace(&self.dims, keep)?;
        let dims = keep.iter().map(|&k| self.dims[k]).collect();
        DensityOperator::new(m, dims)
    }

    /// `tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        self.matrix
            .matmul(&self.matrix)
            .expect("square")
            .trace()
            .re
    }
}

/// Positive operator-valued measure: positive elements summing to the
/// identity within [`COMPLETENESS_TOL`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Povm {
    elements: Vec<ComplexMatrix>,
}

impl Povm {
    /// Validate and wrap POVM elements.
    pub fn new(elements: Vec<ComplexMatrix>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Dimension("POVM needs at least one element".into()));
        }
        let d = elements[0].rows();
        let mut sum = ComplexMatrix::zeros(d, d);
        for (i, e) in elements.iter().enumerate() {
            if !e.is_square() || e.rows() != d {
                return Err(Error::Dimension(format!("POVM element {i} has wrong shape")));
            }
            let eig = e.eig_hermitian().map_err(|_| {
                Error::Validation(format!("POVM element {i} is not Hermitian"))
            })?;
            if eig.eigenvalues[0] < -DENSITY_TOL {
                return Err(Error::Validation(format!(
                    "POVM element {i} has negative eigenvalue {}",
                    eig.eigenvalues[0]
                )));
            }
            sum = sum.add(e)?;
        }
        let dev = sum.frobenius_distance(&ComplexMatrix::identity(d))?;
        if dev > COMPLETENESS_TOL {
            return Err(Error::Validation(format!(
                "POVM completeness violated by {dev:.3e}"
            )));
        }
        Ok(Povm { elements })
    }

    pub fn elements(&self) -> &[ComplexMatrix] {
        &self.elements
    }

    pub fn dim(&self) -> usize {
        self.elements[0].rows()
    }

    /// Outcome probabilities `tr(M_m ρ)`.
    pub fn probabilities(&self, rho: &ComplexMatrix) -> Result<Vec<f64>> {
        self.elements
            .iter()
            .map(|e| Ok(e.matmul(rho)?.trace().re))
            .collect()
    }
}

/// One classical outcome of an instrument: a labelled set of Kraus operators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstrumentOutcome {
    pub label: String,
    pub kraus: Vec<ComplexMatrix>,
}

/// One classical input setting of an instrument.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassicalInput {
    pub label: String,
    pub outcomes: Vec<InstrumentOutcome>,
}

/// Quantum instrument `{𝓜_{o|i}}`: for each classical input `i`, a family of
/// CP maps indexed by the classical output `o` whose sum is trace-preserving:
/// `Σ_{k,o} E_{k,o}† E_{k,o} = I_in` within [`COMPLETENESS_TOL`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantumInstrument {
    pub in_dim: usize,
    pub out_dim: usize,
    pub classical_inputs: Vec<ClassicalInput>,
}

impl QuantumInstrument {
    /// Validate and build an instrument.
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        classical_inputs: Vec<ClassicalInput>,
    ) -> Result<Self> {
        let inst = QuantumInstrument {
            in_dim,
            out_dim,
            classical_inputs,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Instrument with a single classical input ("" label).
    pub fn single_input(
        in_dim: usize,
        out_dim: usize,
        outcomes: Vec<InstrumentOutcome>,
    ) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            vec![ClassicalInput {
                label: String::new(),
                outcomes,
            }],
        )
    }

    /// Check shapes and per-input completeness; call after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.classical_inputs.is_empty() {
            return Err(Error::Dimension("instrument has no classical inputs".into()));
        }
        for ci in &self.classical_inputs {
            if ci.outcomes.is_empty() {
                return Err(Error::Dimension(format!(
                    "instrument input '{}' has no outcomes",
                    ci.label
                )));
            }
            let mut acc = ComplexMatrix::zeros(self.in_dim, self.in_dim);
            for oc in &ci.outcomes {
                for k in &oc.kraus {
                    if k.rows() != self.out_dim || k.cols() != self.in_dim {
                        return Err(Error::Dimension(format!(
                            "Kraus operator in '{}'/'{}' is {}x{}, expected {}x{}",
                            ci.label,
                            oc.label,
                            k.rows(),
                            k.cols(),
                            self.out_dim,
                            self.in_dim
                        )));
                    }
                    acc = acc.add(&k.dagger().matmul(k)?)?;
                }
            }
            let dev = acc.frobenius_distance(&ComplexMatrix::identity(self.in_dim))?;
            if dev > COMPLETENESS_TOL {
                return Err(Error::Validation(format!(
                    "instrument input '{}' violates completeness by {dev:.3e}",
                    ci.label
                )));
            }
        }
        Ok(())
    }

    /// Look up a classical input by label.
    pub fn input(&self, label: &str) -> Result<&ClassicalInput> {
        self.classical_inputs
            .iter()
            .find(|ci| ci.label == label)
            .ok_or_else(|| Error::Dimension(format!("no classical input '{label}'")))
    }

    /// Apply input `i` to `ρ`: returns `(outcome label, p(o), normalized
    /// post-state)` per outcome (post-state arbitrary when `p(o) ≈ 0`).
    pub fn apply(
        &self,
        input_label: &str,
        rho: &ComplexMatrix,
    ) -> Result<Vec<(String, f64, ComplexMatrix)>> {
        let ci = self.input(input_label)?;
        let mut out = Vec::new();
        for oc in &ci.outcomes {
            let mut m = ComplexMatrix::zeros(self.out_dim, self.out_dim);
            for k in &oc.kraus {
                m = m.add(&k.matmul(rho)?.matmul(&k.dagger())?)?;
            }
            let p = m.trace().re;
            let post = if p > 1e-14 { m.scale_re(1.0 / p) } else { m };
            out.push((oc.label.clone(), p, post));
        }
        Ok(out)
    }

    /// CJ operator of the instrument element `𝓜_{o|i}`.
    pub fn choi(&self, input_label: &str, outcome_label: &str) -> Result<ChoiOperator> {
        let ci = self.input(input_label)?;
        let oc = ci
            .outcomes
            .iter()
            .find(|o| o.label == outcome_label)
            .ok_or_else(|| Error::Dimension(format!("no outcome '{outcome_label}'")))?;
        kraus_to_choi(&oc.kraus, self.in_dim, self.out_dim)
    }
}

/// Choi–Jamiołkowski operator of a map `L(H_in) → L(H_out)` in the
/// unnormalized input-first convention (see module docs).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChoiOperator {
    pub matrix: ComplexMatrix,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ChoiOperator {
    /// Wrap a matrix as a CJ operator; checks only the shape (validity
    /// predicates are separate, since instrument elements are not TP).
    pub fn new(matrix: ComplexMatrix, in_dim: usize, out_dim: usize) -> Result<Self> {
        let d = in_dim * out_dim;
        if !matrix.is_square() || matrix.rows() != d {
            return Err(Error::Dimension(format!(
                "Choi operator: matrix is {}x{}, expected {d}x{d}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(ChoiOperator {
            matrix,
            in_dim,
            out_dim,
        })
    }

    /// CJ operator of the identity channel on dimension `d`.
    pub fn identity(d: usize) -> Self {
        let omega = crate::tensor_core::unnormalized_bell(d);
        ChoiOperator {
            matrix: omega.to_density(),
            in_dim: d,
            out_dim: d,
        }
    }

    /// CJ operator of conjugation by `u` (`ρ ↦ u ρ u†`).
    pub fn of_unitary(u: &ComplexMatrix) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::Dimension("unitary conjugation: non-square".into()));
        }
        kraus_to_choi(std::slice::from_ref(u), u.cols(), u.rows())
    }

    /// Smallest eigenvalue (complete positivity measure; `≥ −tol` ⇔ CP).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.matrix.eig_hermitian()?.eigenvalues[0])
    }

    /// `true` when the map is completely positive within `tol`
    /// (all eigenvalues ≥ −tol).
    pub fn is_cp(&self, tol: f64) -> Result<bool> {
        Ok(self.min_eigenvalue()? >= -tol)
    }

    /// Frobenius deviation of `tr_out M` from `I_in`.
    pub fn tp_deviation(&self) -> Result<f64> {
        let tr_out = self
            .matrix
            .partial_trace(&[self.in_dim, self.out_dim], &[0])?;
        tr_out.frobenius_distance(&ComplexMatrix::identity(self.in_dim))
    }

    /// `true` when the map is trace-preserving within `tol`.
    pub fn is_tp(&self, tol: f64) -> Result<bool> {
        Ok(self.tp_deviation()? <= tol)
    }

    /// Apply the map: `tr_in[M (ρᵀ ⊗ I_out)]`.
    ///
    /// For a single instrument element the result is unnormalized and its
    /// trace is the outcome probability.
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if !rho.is_square() || rho.rows() != self.in_dim {
            return Err(Error::Dimension(format!(
                "choi_apply: state is {}x{}, expected {}",
                rho.rows(),
                rho.cols(),
                self.in_dim
            )));
        }
        let (din, dout) = (self.in_dim, self.out_dim);
        let mut out = ComplexMatrix::zeros(dout, dout);
        for o in 0..dout {
            for op in 0..dout {
                let mut acc = c64(0.0, 0.0);
                for k in 0..din {
                    for m in 0..din {
                        acc += self.matrix.get(k * dout + o, m * dout + op) * rho.get(k, m);
                    }
                }
                out.set(o, op, acc);
            }
        }
        Ok(out)
    }

    /// Channel distance: Frobenius distance of the CJ matrices.
    pub fn distance(&self, other: &ChoiOperator) -> Result<f64> {
        if self.in_dim != other.in_dim || self.out_dim != other.out_dim {
            return Err(Error::Dimension("choi distance: dim mismatch".into()));
        }
        self.matrix.frobenius_distance(&other.matrix)
    }
}

/// CJ operator `Σ_{k,l} |k⟩⟨l| ⊗ Σ_j E_j |k⟩⟨l| E_j†` of the CP map with the
/// given Kraus operators (each `out_dim × in_dim`).
pub fn kraus_to_choi(
    kraus: &[ComplexMatrix],
    in_dim: usize,
    out_dim: usize,
) -> Result<ChoiOperator> {
    if kraus.is_empty() {
        return Err(Error::Dimension("kraus_to_choi: empty Kraus set".into()));
    }
    for (j, k) in kraus.iter().enumerate() {
        if k.rows() != out_dim || k.cols() != in_dim {
            return Err(Error::Dimension(format!(
                "kraus_to_choi: operator {j} is {}x{}, expected {out_dim}x{in_dim}",
                k.rows(),
                k.cols()
            )));
        }
    }
    let d = in_dim * out_dim;
    let mut m = ComplexMatrix::zeros(d, d);
    for e in kraus {
        // M += (Σ_k |k⟩ ⊗ E|k⟩)(Σ_l |l⟩ ⊗ E|l⟩)†, assembled entrywise.
        for k in 0..in_dim {
            for o in 0..out_dim {
                let a = e.get(o, k);
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for l in 0..in_dim {
                    for op in 0..out_dim {
                        m.add_at(k * out_dim + o, l * out_dim + op, a * e.get(op, l).conj());
                    }
                }
            }
        }
    }
    ChoiOperator::new(m, in_dim, out_dim)
}

/// Extract Kraus operators from a CJ operator by eigendecomposition,
/// dropping eigenvalues below `floor` (see [`KRAUS_EIG_FLOOR`]).
///
/// Errors when the operator fails CP within `floor` (an eigenvalue below
/// `−floor`).
pub fn choi_to_kraus(choi: &ChoiOperator, floor: f64) -> Result<Vec<ComplexMatrix>> {
    let eig = choi.matrix.eig_hermitian()?;
    if eig.eigenvalues[0] < -floor {
        return Err(Error::Validation(format!(
            "choi_to_kraus: operator is not CP (eigenvalue {})",
            eig.eigenvalues[0]
        )));
    }
    let (din, dout) = (choi.in_dim, choi.out_dim);
    let mut kraus = Vec::new();
    for (t, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= floor {
            continue;
        }
        let w = lam.sqrt();
        let mut e = ComplexMatrix::zeros(dout, din);
        for k in 0..din {
            for o in 0..dout {
                e.set(o, k, eig.eigenvectors.get(k * dout + o, t) * w);
            }
        }
        kraus.push(e);
    }
    if kraus.is_empty() {
        return Err(Error::Validation(
            "choi_to_kraus: no eigenvalue above the floor (zero map)".into(),
        ));
    }
    Ok(kraus)
}

/// CJ operator of the sequential composition `second ∘ first`.
pub fn choi_of_composition(first: &ChoiOperator, second: &ChoiOperator) -> Result<ChoiOperator> {
    if first.out_dim != second.in_dim {
        return Err(Error::Dimension(format!(
            "composition: first outputs dim {}, second expects {}",
            first.out_dim, second.in_dim
        )));
    }
    let (da, db, dc) = (first.in_dim, first.out_dim, second.out_dim);
    let mut m = ComplexMatrix::zeros(da * dc, da * dc);
    for a in 0..da {
        for ap in 0..da {
            for c in 0..dc {
                for cp in 0..dc {
                    let mut acc = c64(0.0, 0.0);
                    for b in 0..db {
                        for bp in 0..db {
                            acc += first.matrix.get(a * db + b, ap * db + bp)
                                * second.matrix.get(b * dc + c, bp * dc + cp);
                        }
                    }
                    m.set(a * dc + c, ap * dc + cp, acc);
                }
            }
        }
    }
    ChoiOperator::new(m, da, dc)
}

/// CJ operator of the parallel tensor product, with factors reordered to the
/// joint convention `(A_in B_in) ⊗ (A_out B_out)`.
pub fn choi_tensor(a: &ChoiOperator, b: &ChoiOperator) -> Result<ChoiOperator> {
    let raw = a.matrix.kron(&b.matrix);
    // kron ordering is (A_in, A_out, B_in, B_out); swap the middle factors.
    let m = raw.permute_systems(&[a.in_dim, a.out_dim, b.in_dim, b.out_dim], &[0, 2, 1, 3])?;
    ChoiOperator::new(m, a.in_dim * b.in_dim, a.out_dim * b.out_dim)
}

/// Unitary dilation of one classical input of an instrument.
///
/// Realizes `{𝓜_o}_o` as: attach `|0⟩` on an ancilla of dimension
/// `ancilla_in_dim`, apply `unitary`, and measure `povm` (projective) on the
/// measured factor of dimension `measured_dim` (the output space factors as
/// `H_out ⊗ H_M`).
#[derive(Clone, Debug)]
pub struct InstrumentDilation {
    pub input_label: String,
    pub ancilla_in_dim: usize,
    pub measured_dim: usize,
    pub unitary: ComplexMatrix,
    pub povm: Povm,
    pub outcome_labels: Vec<String>,
    in_dim: usize,
    out_dim: usize,
}

impl InstrumentDilation {
    /// Run the dilation on `ρ`: returns `(outcome label, p(o), normalized
    /// post-state on H_out)` per outcome.
    pub fn simulate(&self, rho: &ComplexMatrix) -> Result<Vec<(String, f64, ComplexMatrix)>> {
        if !rho.is_square() || rho.rows() != self.in_dim {
            return Err(Error::Dimension("dilation simulate: state dim mismatch".into()));
        }
        let mut anc = ComplexMatrix::zeros(self.ancilla_in_dim, self.ancilla_in_dim);
        anc.set(0, 0, c64(1.0, 0.0));
        let joint = rho.kron(&anc);
        let evolved = self
            .unitary
            .matmul(&joint)?
            .matmul(&self.unitary.dagger())?;
        let mut results = Vec::new();
        for (label, proj) in self.outcome_labels.iter().zip(self.povm.elements()) {
            let full_proj = ComplexMatrix::identity(self.out_dim).kron(proj);
            let selected = full_proj.matmul(&evolved)?.matmul(&full_proj)?;
            let p = selected.trace().re;
            let post = selected.partial_trace(&[self.out_dim, self.measured_dim], &[0])?;
            let post = if p > 1e-14 { post.scale_re(1.0 / p) } else { post };
            results.push((label.clone(), p, post));
        }
        Ok(results)
    }
}

/// Dilate every classical input of `inst` (see [`InstrumentDilation`]).
///
/// The isometry `V|ψ⟩ = Σ_{k,o} (E_{k,o}|ψ⟩)|k,o⟩_M` is padded to a unitary by
/// Gram–Schmidt over the computational basis in index order, which makes the
/// completion deterministic.  The measured space `H_M` carries one basis
/// state per Kraus operator plus the padding needed so that
/// `dim(H_in)·dim(H_R) = dim(H_out)·dim(H_M)`; padding states are appended to
/// the final outcome's projector and are never populated.
pub fn dilate_instrument(inst: &QuantumInstrument) -> Result<Vec<InstrumentDilation>> {
    inst.validate()?;
    let (din, dout) = (inst.in_dim, inst.out_dim);
    let mut dilations = Vec::new();
    for ci in &inst.classical_inputs {
        let r: usize = ci.outcomes.iter().map(|o| o.kraus.len()).sum();
        if r == 0 {
            return Err(Error::Dimension(format!(
                "input '{}' has no Kraus operators",
                ci.label
            )));
        }
        // Smallest measured dimension ≥ r with dout·dM divisible by din.
        let step = din / gcd(din, dout);
        let dm = r.div_ceil(step) * step;
        let dr = dout * dm / din;
        let total = din * dr;

        // Isometry columns: |ψ⟩|0⟩_R ↦ Σ_{k,o} E_{k,o}|ψ⟩ ⊗ |k,o⟩_M.
        let mut u = ComplexMatrix::zeros(total, total);
        let mut filled = vec![false; total];
        for i in 0..din {
            let col = i * dr;
            let mut flat = 0usize;
            for oc in &ci.outcomes {
                for kr in &oc.kraus {
                    for o in 0..dout {
                        u.set(o * dm + flat, col, kr.get(o, i));
                    }
                    flat += 1;
                }
            }
            filled[col] = true;
        }
        gram_schmidt_complete(&mut u, &mut filled)?;
        let dev = u
            .dagger()
            .matmul(&u)?
            .frobenius_distance(&ComplexMatrix::identity(total))?;
        if dev > 1e-9 {
            return Err(Error::Numerical(format!(
                "dilation unitary completion failed (deviation {dev:.3e})"
            )));
        }

        // Projective POVM on H_M: P_o = Σ_k |k,o⟩⟨k,o|, padding folded into
        // the last outcome.
        let mut elements = Vec::new();
        let mut flat = 0usize;
        for (oi, oc) in ci.outcomes.iter().enumerate() {
            let mut p = ComplexMatrix::zeros(dm, dm);
            for _ in 0..oc.kraus.len() {
                p.set(flat, flat, c64(1.0, 0.0));
                flat += 1;
            }
            if oi == ci.outcomes.len() - 1 {
                for pad in flat..dm {
                    p.set(pad, pad, c64(1.0, 0.0));
                }
            }
            elements.push(p);
        }
        dilations.push(InstrumentDilation {
            input_label: ci.label.clone(),
            ancilla_in_dim: dr,
            measured_dim: dm,
            unitary: u,
            povm: Povm::new(elements)?,
            outcome_labels: ci.outcomes.iter().map(|o| o.label.clone()).collect(),
            in_dim: din,
            out_dim: dout,
        });
    }
    Ok(dilations)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Fill the unfilled columns of `u` with an orthonormal completion of the
/// filled ones, drawing candidate vectors from the computational basis in
/// index order (deterministic).
fn gram_schmidt_complete(u: &mut ComplexMatrix, filled: &mut [bool]) -> Result<()> {
    let n = u.rows();
    let mut basis: Vec<Vec<Complex64>> = (0..n)
        .filter(|&c| filled[c])
        .map(|c| u.column(c))
        .collect();
    let mut free: Vec<usize> = (0..n).filter(|&c| !filled[c]).collect();
    free.reverse(); // pop() yields ascending column order
    for t in 0..n {
        if free.is_empty() {
            break;
        }
        let mut v: Vec<Complex64> = (0..n)
            .map(|i| if i == t { c64(1.0, 0.0) } else { c64(0.0, 0.0) })
            .collect();
        // Two-pass classical Gram-Schmidt for numerical stability.
        for _ in 0..2 {
            for b in &basis {
                let ip: Complex64 = b.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= ip * bi;
                }
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-7 {
            continue; // e_t already (numerically) in the span
        }
        for z in v.iter_mut() {
            *z /= norm;
        }
        let col = free.pop().expect("checked non-empty");
        for (i, z) in v.iter().enumerate() {
            u.set(i, col, *z);
        }
        filled[col] = true;
        basis.push(v);
    }
    if free.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(
            "Gram-Schmidt completion exhausted the basis".into(),
        ))
    }
}

/// Verdict of [`is_separable_operator_decomposition`].
#[derive(Clone, Debug, Serialize)]
pub struct SepDecompositionCheck {
    /// CJ operator of the assembled joint map (input factors = ⊗ party
    /// inputs, output factors = ⊗ party outputs).
    pub choi: ChoiOperator,
    pub is_cp: bool,
    pub is_tp: bool,
    pub min_eigenvalue: f64,
    pub tp_deviation: f64,
}

/// Assemble `Φ(ρ) = Σ_k (⊗_n E_k^{(n)}) ρ (⊗_n E_k^{(n)})†` from per-term,
/// per-party Kraus factors and report its CP/TP predicates (tolerance `tol`).
///
/// `terms[k][n]` is party `n`'s factor in term `k`, of shape
/// `party_dims[n].1 × party_dims[n].0` (out × in).
pub fn is_separable_operator_decomposition(
    terms: &[Vec<ComplexMatrix>],
    party_dims: &[(usize, usize)],
    tol: f64,
) -> Result<SepDecompositionCheck> {
    if terms.is_empty() || party_dims.is_empty() {
        return Err(Error::Dimension("separable decomposition: empty input".into()));
    }
    let din: usize = party_dims.iter().map(|d| d.0).product();
    let dout: usize = party_dims.iter().map(|d| d.1).product();
    let mut joint_kraus = Vec::with_capacity(terms.len());
    for (k, term) in terms.iter().enumerate() {
        if term.len() != party_dims.len() {
            return Err(Error::Dimension(format!(
                "term {k} has {} factors, expected {}",
                term.len(),
                party_dims.len()
            )));
        }
        let mut joint = ComplexMatrix::identity(1);
        for (n, f) in term.iter().enumerate() {
            if f.rows() != party_dims[n].1 || f.cols() != party_dims[n].0 {
                return Err(Error::Dimension(format!(
                    "term {k}, party {n}: factor is {}x{}, expected {}x{}",
                    f.rows(),
                    f.cols(),
                    party_dims[n].1,
                    party_dims[n].0
                )));
            }
            joint = joint.kron(f);
        }
        joint_kraus.push(joint);
    }
    let choi = kraus_to_choi(&joint_kraus, din, dout)?;
    let min_eigenvalue = choi.min_eigenvalue()?;
    let tp_deviation = choi.tp_deviation()?;
    Ok(SepDecompositionCheck {
        is_cp: min_eigenvalue >= -tol,
        is_tp: tp_deviation <= tol,
        min_eigenvalue,
        tp_deviation,
        choi,
    })
}

/// Named constant gates and small-gate constructors.
pub mod gates {
    use super::*;

    /// 2×2 identity.
    pub fn id2() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    /// Pauli X.
    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    /// Pauli Y.
    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_vec(
            2,
            2,
            vec![c64(0.0, 0.0), c64(0.0, -1.0), c64(0.0, 1.0), c64(0.0, 0.0)],
        )
        .unwrap()
    }

    /// Pauli Z.
    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]).unwrap()
    }

    /// Hadamard.
    pub fn h() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[1.0, 1.0, 1.0, -1.0])
            .unwrap()
            .scale_re(1.0 / 2.0f64.sqrt())
    }

    /// Phase gate diag(1, e^{iθ}).
    pub fn phase(theta: f64) -> ComplexMatrix {
        ComplexMatrix::from_diag(&[c64(1.0, 0.0), Complex64::from_polar(1.0, theta)]).unwrap()
    }

    /// S = diag(1, i).
    pub fn s() -> ComplexMatrix {
        phase(std::f64::consts::FRAC_PI_2)
    }

    /// T = diag(1, e^{iπ/4}).
    pub fn t() -> ComplexMatrix {
        phase(std::f64::consts::FRAC_PI_4)
    }

    /// Rotation e^{-iθX/2}.
    pub fn rx(theta: f64) -> ComplexMatrix {
        let (ch, sh) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        ComplexMatrix::from_vec(
            2,
            2,
            vec![c64(ch, 0.0), c64(0.0, -sh), c64(0.0, -sh), c64(ch, 0.0)],
        )
        .unwrap()
    }

    /// Rotation e^{-iθY/2}.
    pub fn ry(theta: f64) -> ComplexMatrix {
        let (ch, sh) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        ComplexMatrix::from_real(2, 2, &[ch, -sh, sh, ch]).unwrap()
    }

    /// Rotation e^{-iθZ/2}.
    pub fn rz(theta: f64) -> ComplexMatrix {
        ComplexMatrix::from_diag(&[
            Complex64::from_polar(1.0, -theta / 2.0),
            Complex64::from_polar(1.0, theta / 2.0),
        ])
        .unwrap()
    }

    /// CNOT (control = first factor).
    pub fn cnot() -> ComplexMatrix {
        ComplexMatrix::from_real(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap()
    }

    /// CNOT with control on the second factor.
    pub fn cnot_reversed() -> ComplexMatrix {
        ComplexMatrix::from_real(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 0.0,
            ],
        )
        .unwrap()
    }

    /// Controlled-Z.
    pub fn cz() -> ComplexMatrix {
        ComplexMatrix::from_diag(&[c64(1.0, 0.0), c64(1.0, 0.0), c64(1.0, 0.0), c64(-1.0, 0.0)])
            .unwrap()
    }

    /// SWAP.
    pub fn swap() -> ComplexMatrix {
        ComplexMatrix::from_real(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap()
    }

    /// iSWAP.
    pub fn iswap() -> ComplexMatrix {
        ComplexMatrix::from_vec(
            4,
            4,
            vec![
                c64(1.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 1.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 1.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(1.0, 0.0),
            ],
        )
        .unwrap()
    }

    /// √SWAP.
    pub fn sqrt_swap() -> ComplexMatrix {
        let a = c64(0.5, 0.5);
        let b = c64(0.5, -0.5);
        ComplexMatrix::from_vec(
            4,
            4,
            vec![
                c64(1.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                a,
                b,
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                b,
                a,
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(1.0, 0.0),
            ],
        )
        .unwrap()
    }

    /// Controlled-phase diag(1, 1, 1, e^{iθ}).
    pub fn cphase(theta: f64) -> ComplexMatrix {
        ComplexMatrix::from_diag(&[
            c64(1.0, 0.0),
            c64(1.0, 0.0),
            c64(1.0, 0.0),
            Complex64::from_polar(1.0, theta),
        ])
        .unwrap()
    }

    /// Controlled-U (control = first factor): |0⟩⟨0|⊗I + |1⟩⟨1|⊗u.
    pub fn controlled(u: &ComplexMatrix) -> ComplexMatrix {
        assert!(u.is_square() && u.rows() == 2, "controlled() expects a 1-qubit gate");
        let mut m = ComplexMatrix::identity(4);
        for i in 0..2 {
            for j in 0..2 {
                m.set(2 + i, 2 + j, u.get(i, j));
            }
        }
        m
    }

    /// Magic (Bell) basis change: columns are the magic-basis vectors.
    pub fn magic_basis() -> ComplexMatrix {
        let s = 1.0 / 2.0f64.sqrt();
        ComplexMatrix::from_vec(
            4,
            4,
            vec![
                c64(s, 0.0),
                c64(0.0, s),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, s),
                c64(s, 0.0),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
                c64(0.0, s),
                c64(-s, 0.0),
                c64(s, 0.0),
                c64(0.0, -s),
                c64(0.0, 0.0),
                c64(0.0, 0.0),
            ],
        )
        .unwrap()
    }

    /// Normalized Bell state (|00⟩ + |11⟩)/√2.
    pub fn bell_phi_plus() -> StateVector {
        let s = 1.0 / 2.0f64.sqrt();
        StateVector::new_normalized(vec![c64(s, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(s, 0.0)])
            .unwrap()
    }

    /// Look up a gate by registry name (used by the CLI).
    ///
    /// Two-qubit entries: `cnot`, `cnotr`, `cz`, `swap`, `iswap`, `sqrtswap`,
    /// `magic`, `dcnot`, `identity2q` and the product gates `hxi`, `ixh`,
    /// `hxh`.
    pub fn named_gate(name: &str) -> Option<ComplexMatrix> {
        match name {
            "identity2q" => Some(ComplexMatrix::identity(4)),
            "cnot" => Some(cnot()),
            "cnotr" => Some(cnot_reversed()),
            "cz" => Some(cz()),
            "swap" => Some(swap()),
            "iswap" => Some(iswap()),
            "sqrtswap" => Some(sqrt_swap()),
            "magic" => Some(magic_basis()),
            // Double-CNOT (CNOT followed by reversed CNOT).
            "dcnot" => Some(cnot_reversed().matmul(&cnot()).ok()?),
            "hxi" => Some(h().kron(&id2())),
            "ixh" => Some(id2().kron(&h())),
            "hxh" => Some(h().kron(&h())),
            _ => None,
        }
    }

    /// All registry names, in deterministic order.
    pub fn registry_names() -> Vec<&'static str> {
        vec![
            "identity2q",
            "cnot",
            "cnotr",
            "cz",
            "swap",
            "iswap",
            "sqrtswap",
            "magic",
            "dcnot",
            "hxi",
            "ixh",
            "hxh",
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::unnormalized_bell;

    fn plus_state() -> ComplexMatrix {
        let s = 1.0 / 2.0f64.sqrt();
        StateVector::new(vec![c64(s, 0.0), c64(s, 0.0)])
            .unwrap()
            .to_density()
    }

    #[test]
    fn density_operator_validation() {
        let ok = DensityOperator::new(plus_state(), vec![2]).unwrap();
        assert!((ok.purity() - 1.0).abs() < 1e-12);
        // Wrong trace.
        assert!(DensityOperator::new(ComplexMatrix::identity(2), vec![2]).is_err());
        // Negative eigenvalue.
        let neg = ComplexMatrix::from_real(2, 2, &[1.5, 0.0, 0.0, -0.5]).unwrap();
        assert!(matches!(
            DensityOperator::new(neg, vec![2]),
            Err(Error::Validation(_))
        ));
        // Non-Hermitian.
        let nh = ComplexMatrix::from_vec(
            2,
            2,
            vec![c64(0.5, 0.0), c64(0.1, 0.0), c64(0.0, 0.0), c64(0.5, 0.0)],
        )
        .unwrap();
        assert!(DensityOperator::new(nh, vec![2]).is_err());
    }

    #[test]
    fn kraus_to_choi_identity_channel() {
        let choi = kraus_to_choi(&[ComplexMatrix::identity(2)], 2, 2).unwrap();
        let expect = unnormalized_bell(2).to_density();
        assert!(choi.matrix.approx_eq(&expect, 1e-15));
        assert!((choi.matrix.trace().re - 2.0).abs() < 1e-15);
        assert!(choi.is_tp(1e-12).unwrap());
        assert!(choi.is_cp(1e-12).unwrap());
    }

    #[test]
    fn kraus_to_choi_depolarizing_is_maximally_mixed() {
        let ks: Vec<ComplexMatrix> = [gates::id2(), gates::x(), gates::y(), gates::z()]
            .into_iter()
            .map(|g| g.scale_re(0.5))
            .collect();
        let choi = kraus_to_choi(&ks, 2, 2).unwrap();
        assert!(choi
            .matrix
            .approx_eq(&ComplexMatrix::identity(4).scale_re(0.5), 1e-12));
    }

    #[test]
    fn kraus_to_choi_z_measurement_channel() {
        let p0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let p1 = ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        let choi = kraus_to_choi(&[p0, p1], 2, 2).unwrap();
        // diag CJ with 1 at |00⟩⟨00| and |11⟩⟨11| only.
        let mut expect = ComplexMatrix::zeros(4, 4);
        expect.set(0, 0, c64(1.0, 0.0));
        expect.set(3, 3, c64(1.0, 0.0));
        assert!(choi.matrix.approx_eq(&expect, 1e-15));
    }

    #[test]
    fn choi_apply_matches_direct_action() {
        // Identity CJ acts as identity.
        let rho = plus_state();
        let id = ChoiOperator::identity(2);
        assert!(id.apply(&rho).unwrap().approx_eq(&rho, 1e-14));

        // Z-measurement outcome-0 element on |+⟩⟨+| is ½|0⟩⟨0|.
        let p0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let m0 = kraus_to_choi(std::slice::from_ref(&p0), 2, 2).unwrap();
        let got = m0.apply(&rho).unwrap();
        assert!(got.approx_eq(&p0.scale_re(0.5), 1e-14));
        assert!((got.trace().re - 0.5).abs() < 1e-14, "trace is the outcome probability");

        // Unitary conjugation CJ reproduces u ρ u† for a non-trivial u.
        let u = gates::rx(0.7).matmul(&gates::phase(0.3)).unwrap();
        let cj = ChoiOperator::of_unitary(&u).unwrap();
        let direct = u.matmul(&rho).unwrap().matmul(&u.dagger()).unwrap();
        assert!(cj.apply(&rho).unwrap().approx_eq(&direct, 1e-12));
    }

    #[test]
    fn composition_and_tensor_of_identities() {
        let z = ChoiOperator::of_unitary(&gates::z()).unwrap();
        let zz = choi_of_composition(&z, &z).unwrap();
        assert!(zz.matrix.approx_eq(&ChoiOperator::identity(2).matrix, 1e-12));

        let id = ChoiOperator::identity(2);
        let both = choi_tensor(&id, &id).unwrap();
        assert!(both.matrix.approx_eq(&ChoiOperator::identity(4).matrix, 1e-12));
    }

    #[test]
    fn composition_matches_matrix_product_for_unitaries() {
        let u = gates::ry(0.4);
        let v = gates::rz(1.1);
        let uv = ChoiOperator::of_unitary(&v.matmul(&u).unwrap()).unwrap();
        let composed = choi_of_composition(
            &ChoiOperator::of_unitary(&u).unwrap(),
            &ChoiOperator::of_unitary(&v).unwrap(),
        )
        .unwrap();
        assert!(composed.matrix.approx_eq(&uv.matrix, 1e-12));
    }

    #[test]
    fn choi_kraus_round_trip_is_channel_identical() {
        // Amplitude-damping-like channel with two Kraus operators.
        let g: f64 = 0.3;
        let k0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, (1.0 - g).sqrt()]).unwrap();
        let k1 = ComplexMatrix::from_real(2, 2, &[0.0, g.sqrt(), 0.0, 0.0]).unwrap();
        let choi = kraus_to_choi(&[k0, k1], 2, 2).unwrap();
        let back = choi_to_kraus(&choi, KRAUS_EIG_FLOOR).unwrap();
        let choi2 = kraus_to_choi(&back, 2, 2).unwrap();
        assert!(choi.matrix.approx_eq(&choi2.matrix, 1e-9));
        // Same action on a full operator basis.
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut e = ComplexMatrix::zeros(2, 2);
            e.set(i, j, c64(1.0, 0.0));
            let a = choi.apply(&e).unwrap();
            let b = choi2.apply(&e).unwrap();
            assert!(a.approx_eq(&b, 1e-9));
        }
    }

    #[test]
    fn instrument_completeness_is_enforced() {
        let p0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        // Missing the second projector: completeness fails.
        let bad = QuantumInstrument::single_input(
            2,
            2,
            vec![InstrumentOutcome {
                label: "0".into(),
                kraus: vec![p0.clone()],
            }],
        );
        assert!(matches!(bad, Err(Error::Validation(_))));

        let p1 = ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        let good = QuantumInstrument::single_input(
            2,
            2,
            vec![
                InstrumentOutcome {
                    label: "0".into(),
                    kraus: vec![p0],
                },
                InstrumentOutcome {
                    label: "1".into(),
                    kraus: vec![p1],
                },
            ],
        )
        .unwrap();
        let results = good.apply("", &plus_state()).unwrap();
        assert_eq!(results.len(), 2);
        assert!((results[0].1 - 0.5).abs() < 1e-12);
        assert!((results[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn instrument_json_round_trip() {
        let p0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let p1 = ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        let inst = QuantumInstrument::single_input(
            2,
            2,
            vec![
                InstrumentOutcome {
                    label: "0".into(),
                    kraus: vec![p0],
                },
                InstrumentOutcome {
                    label: "1".into(),
                    kraus: vec![p1],
                },
            ],
        )
        .unwrap();
        let s = serde_json::to_string(&inst).unwrap();
        let back: QuantumInstrument = serde_json::from_str(&s).unwrap();
        back.validate().unwrap();
        assert_eq!(back.classical_inputs[0].outcomes[1].label, "1");
    }

    #[test]
    fn dilation_of_identity_channel_is_deterministic() {
        let inst = QuantumInstrument::single_input(
            2,
            2,
            vec![InstrumentOutcome {
                label: "ok".into(),
                kraus: vec![ComplexMatrix::identity(2)],
            }],
        )
        .unwrap();
        let dil = dilate_instrument(&inst).unwrap().remove(0);
        let rho = plus_state();
        let res = dil.simulate(&rho).unwrap();
        assert_eq!(res.len(), 1);
        assert!((res[0].1 - 1.0).abs() < 1e-10);
        assert!(res[0].2.approx_eq(&rho, 1e-9));
    }

    #[test]
    fn dilation_of_z_measurement_on_plus() {
        let p0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let p1 = ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        let inst = QuantumInstrument::single_input(
            2,
            2,
            vec![
                InstrumentOutcome {
                    label: "0".into(),
                    kraus: vec![p0.clone()],
                },
                InstrumentOutcome {
                    label: "1".into(),
                    kraus: vec![p1.clone()],
                },
            ],
        )
        .unwrap();
        let dil = dilate_instrument(&inst).unwrap().remove(0);
        assert!(dil.unitary.is_unitary(1e-10));
        let res = dil.simulate(&plus_state()).unwrap();
        assert!((res[0].1 - 0.5).abs() < 1e-10);
        assert!((res[1].1 - 0.5).abs() < 1e-10);
        assert!(res[0].2.approx_eq(&p0, 1e-9), "post-state |0⟩⟨0|");
        assert!(res[1].2.approx_eq(&p1, 1e-9), "post-state |1⟩⟨1|");
    }

    #[test]
    fn dilation_handles_unequal_in_out_dims() {
        // Qutrit → qubit instrument: outcome "low" maps |0⟩→|0⟩, outcome
        // "high" maps |1⟩→|0⟩, |2⟩→|1⟩.
        let mut e0 = ComplexMatrix::zeros(2, 3);
        e0.set(0, 0, c64(1.0, 0.0));
        let mut e1 = ComplexMatrix::zeros(2, 3);
        e1.set(0, 1, c64(1.0, 0.0));
        e1.set(1, 2, c64(1.0, 0.0));
        let inst = QuantumInstrument::single_input(
            3,
            2,
            vec![
                InstrumentOutcome {
                    label: "low".into(),
                    kraus: vec![e0],
                },
                InstrumentOutcome {
                    label: "high".into(),
                    kraus: vec![e1],
                },
            ],
        )
        .unwrap();
        let dil = dilate_instrument(&inst).unwrap().remove(0);
        assert_eq!(dil.in_dim * dil.ancilla_in_dim, dil.out_dim * dil.measured_dim);
        assert!(dil.unitary.is_unitary(1e-10));
        // Uniform qutrit input: p(low) = 1/3, p(high) = 2/3.
        let rho = ComplexMatrix::identity(3).scale_re(1.0 / 3.0);
        let res = dil.simulate(&rho).unwrap();
        let direct = inst.apply("", &rho).unwrap();
        for (got, want) in res.iter().zip(&direct) {
            assert!((got.1 - want.1).abs() < 1e-9, "p({}) mismatch", got.0);
            assert!(got.2.approx_eq(&want.2, 1e-9), "post-state {} mismatch", got.0);
        }
    }

    #[test]
    fn separable_decomposition_reports_cp_tp() {
        // Single identity⊗identity term: the 2-party identity channel.
        let check = is_separable_operator_decomposition(
            &[vec![ComplexMatrix::identity(2), ComplexMatrix::identity(2)]],
            &[(2, 2), (2, 2)],
            1e-9,
        )
        .unwrap();
        assert!(check.is_cp && check.is_tp);
        assert!(check
            .choi
            .matrix
            .approx_eq(&ChoiOperator::identity(4).matrix, 1e-12));

        // A single projector term is CP but not TP.
        let p0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let check = is_separable_operator_decomposition(
            &[vec![p0, ComplexMatrix::identity(2)]],
            &[(2, 2), (2, 2)],
            1e-9,
        )
        .unwrap();
        assert!(check.is_cp);
        assert!(!check.is_tp);
    }

    #[test]
    fn named_gate_registry_is_consistent() {
        for name in gates::registry_names() {
            let g = gates::named_gate(name).expect("registered name resolves");
            assert_eq!(g.rows(), 4, "{name} is a 2-qubit gate");
            assert!(g.is_unitary(1e-12), "{name} is unitary");
        }
        assert!(gates::named_gate("nope").is_none());
    }

    #[test]
    fn magic_basis_maps_bell_states() {
        let m = gates::magic_basis();
        assert!(m.is_unitary(1e-12));
        // First column is |Φ+⟩.
        let col0 = m.column(0);
        let s = 1.0 / 2.0f64.sqrt();
        assert!((col0[0] - c64(s, 0.0)).norm() < 1e-12);
        assert!((col0[3] - c64(s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn povm_validation() {
        let half = ComplexMatrix::identity(2).scale_re(0.5);
        let povm = Povm::new(vec![half.clone(), half.clone()]).unwrap();
        let p = povm.probabilities(&plus_state()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!(Povm::new(vec![half]).is_err(), "incomplete POVM rejected");
        let neg = ComplexMatrix::from_real(2, 2, &[1.5, 0.0, 0.0, 1.5]).unwrap();
        let fix = ComplexMatrix::from_real(2, 2, &[-0.5, 0.0, 0.0, -0.5]).unwrap();
        assert!(Povm::new(vec![neg, fix]).is_err(), "negative element rejected");
    }
}
