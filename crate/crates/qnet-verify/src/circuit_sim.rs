//! Classically controlled quantum circuits: IR, exact simulator, and the
//! reusable protocol gadgets (teleportation, disentanglers, distributed
//! controlled unitaries).
//!
//! A [`Circuit`] is a flat gate list over globally numbered wires, each wire
//! carrying a label, an owning network node and a dimension.  Wires come to
//! life either as circuit inputs or through [`Gate::Alloc`], and can be
//! retired with [`Gate::Dealloc`] once they factor out of the global state.
//! Measurements produce named, single-assignment classical bits that later
//! gates may consume through boolean [`CondExpr`] conditions (XOR/AND over
//! bits and constants).
//!
//! [`simulate`] enumerates every measurement branch exhaustively
//! (depth-first, outcome 0 before 1), so protocol identities can be checked
//! as certificates on each branch rather than statistically.  The live
//! state is a dense vector over the live wires in ascending wire-id order,
//! with the **lowest wire id as the most significant ket factor**.
//!
//! [`locc_validate`] checks that a circuit is implementable by local
//! operations and classical communication on a given node graph: quantum
//! gates never span nodes, classical bits may travel freely, and cross-node
//! entanglement enters only by allocating EPR pairs on declared resource
//! edges (one allocation consumes one edge instance).  A successful run
//! yields a [`LoccTranscript`] of local operations, messages, and consumed
//! pairs.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum_ops::{gates, ChoiOperator};
use crate::tensor_core::{c64, ComplexMatrix, StateVector};
use crate::MAX_TOTAL_DIM;

/// Probability below which a measurement branch is dropped from the
/// exhaustive enumeration (branches at this weight are numerically zero).
pub const BRANCH_PRUNE_TOL: f64 = 1e-14;

/// Tolerance on the purity of a deallocated wire's reduced state.
pub const DEALLOC_PURITY_TOL: f64 = 1e-10;

/// A declared wire: owning node, display label, and local dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDecl {
    pub label: String,
    pub node: String,
    pub dim: usize,
}

/// Boolean condition over named classical bits (XOR/AND and constants).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CondExpr {
    Const { value: bool },
    Bit { name: String },
    Xor { lhs: Box<CondExpr>, rhs: Box<CondExpr> },
    And { lhs: Box<CondExpr>, rhs: Box<CondExpr> },
}

impl CondExpr {
    pub fn bit(name: impl Into<String>) -> Self {
        CondExpr::Bit { name: name.into() }
    }

    pub fn constant(value: bool) -> Self {
        CondExpr::Const { value }
    }

    pub fn xor(lhs: CondExpr, rhs: CondExpr) -> Self {
        CondExpr::Xor {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn and(lhs: CondExpr, rhs: CondExpr) -> Self {
        CondExpr::And {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// XOR of a list of bits (`false` when empty).
    pub fn parity(names: &[String]) -> Self {
        let mut it = names.iter();
        match it.next() {
            None => CondExpr::constant(false),
            Some(first) => it.fold(CondExpr::bit(first.clone()), |acc, n| {
                CondExpr::xor(acc, CondExpr::bit(n.clone()))
            }),
        }
    }

    /// Bit names referenced by the expression, in first-appearance order.
    pub fn bits(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_bits(&mut out);
        out
    }

    fn collect_bits(&self, out: &mut Vec<String>) {
        match self {
            CondExpr::Const { .. } => {}
            CondExpr::Bit { name } => {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
            CondExpr::Xor { lhs, rhs } | CondExpr::And { lhs, rhs } => {
                lhs.collect_bits(out);
                rhs.collect_bits(out);
            }
        }
    }

    /// Evaluate against an assignment; every referenced bit must be present.
    pub fn eval(&self, bits: &BTreeMap<String, bool>) -> Result<bool> {
        Ok(match self {
            CondExpr::Const { value } => *value,
            CondExpr::Bit { name } => *bits
                .get(name)
                .ok_or_else(|| Error::Validation(format!("condition reads unset bit '{name}'")))?,
            CondExpr::Xor { lhs, rhs } => lhs.eval(bits)? ^ rhs.eval(bits)?,
            CondExpr::And { lhs, rhs } => lhs.eval(bits)? & rhs.eval(bits)?,
        })
    }
}

/// One circuit instruction.
///
/// Multi-wire operands are listed in the gate's own order: the first listed
/// wire is the most significant index of the attached matrix (or of the
/// branch-unitary table for [`Gate::Controlled`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gate {
    /// Apply `u` to the listed wires.
    Unitary { wires: Vec<usize>, u: ComplexMatrix },
    /// Apply `us[a]` to `targets` when the control wires hold the (mixed
    /// radix) configuration `a`; `us` has one entry per configuration.
    Controlled {
        controls: Vec<usize>,
        targets: Vec<usize>,
        us: Vec<ComplexMatrix>,
    },
    /// Computational-basis measurement of a dimension-2 wire into a named
    /// classical bit.  The wire stays live in the post-measurement basis
    /// state.
    Measure { wire: usize, bit: String },
    /// Apply `u` to the listed wires iff `cond` evaluates true.
    Conditioned {
        cond: CondExpr,
        wires: Vec<usize>,
        u: ComplexMatrix,
    },
    /// Bring declared-but-dead wires to life in the given joint state
    /// (indexed in the listed wire order).
    Alloc { wires: Vec<usize>, state: StateVector },
    /// Retire a live wire; its reduced state must be pure (it must factor
    /// out of the global state) and is contracted away.
    Dealloc { wire: usize },
}

impl Gate {
    /// Wires the gate touches quantumly.
    fn quantum_wires(&self) -> Vec<usize> {
        match self {
            Gate::Unitary { wires, .. } => wires.clone(),
            Gate::Controlled {
                controls, targets, ..
            } => controls.iter().chain(targets).copied().collect(),
            Gate::Measure { wire, .. } => vec![*wire],
            Gate::Conditioned { wires, .. } => wires.clone(),
            Gate::Alloc { wires, .. } => wires.clone(),
            Gate::Dealloc { wire } => vec![*wire],
        }
    }
}

/// A classically controlled quantum circuit.
///
/// `wires` declares every wire the circuit ever references; `inputs` lists
/// the wires live at the start (their joint state is the `simulate` input,
/// ordered ascending by wire id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub wires: Vec<WireDecl>,
    pub inputs: Vec<usize>,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn wire(&self, id: usize) -> Result<&WireDecl> {
        self.wires
            .get(id)
            .ok_or_else(|| Error::Validation(format!("undeclared wire {id}")))
    }

    /// Product of the input wire dimensions.
    pub fn input_dim(&self) -> usize {
        self.inputs
            .iter()
            .map(|&w| self.wires[w].dim)
            .product()
    }
}

/// One exhaustive-simulation branch: the classical record, its probability,
/// and the final state on the remaining live wires (ascending id order).
#[derive(Clone, Debug)]
pub struct BranchRecord {
    pub bits: BTreeMap<String, bool>,
    pub probability: f64,
    pub state: StateVector,
    pub live_wires: Vec<usize>,
}

/// All measurement branches of one simulation, in depth-first order
/// (outcome 0 explored before outcome 1 at every measurement).
#[derive(Clone, Debug)]
pub struct SimulationTrace {
    pub branches: Vec<BranchRecord>,
}

impl SimulationTrace {
    pub fn total_probability(&self) -> f64 {
        self.branches.iter().map(|b| b.probability).sum()
    }

    /// JSON rendering; per-branch states are included only on request.
    pub fn to_json(&self, include_states: bool) -> serde_json::Value {
        let branches: Vec<serde_json::Value> = self
            .branches
            .iter()
            .map(|b| {
                let mut obj = serde_json::json!({
                    "bits": b.bits,
                    "probability": b.probability,
                    "live_wires": b.live_wires,
                });
                if include_states {
                    obj["state"] = serde_json::to_value(&b.state).expect("state serializes");
                }
                obj
            })
            .collect();
        serde_json::json!({
            "total_probability": self.total_probability(),
            "branches": branches,
        })
    }
}

// ---------------------------------------------------------------------------
// Simulator internals
// ---------------------------------------------------------------------------

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut st = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * dims[i + 1];
    }
    st
}

/// Offsets into a flat amplitude vector for every configuration of the
/// factors at `positions` (first listed = most significant digit).
fn config_offsets(positions: &[usize], dims: &[usize], st: &[usize]) -> Vec<usize> {
    let count: usize = positions.iter().map(|&p| dims[p]).product();
    (0..count)
        .map(|mut idx| {
            let mut off = 0;
            for &p in positions.iter().rev() {
                off += (idx % dims[p]) * st[p];
                idx /= dims[p];
            }
            off
        })
        .collect()
}

/// Base indices whose digits vanish at all `positions`.
fn base_indices(positions: &[usize], dims: &[usize], st: &[usize]) -> Vec<usize> {
    let total: usize = dims.iter().product();
    (0..total)
        .filter(|&idx| positions.iter().all(|&p| (idx / st[p]) % dims[p] == 0))
        .collect()
}

fn apply_matrix(
    amps: &mut [Complex64],
    dims: &[usize],
    positions: &[usize],
    u: &ComplexMatrix,
) -> Result<()> {
    let st = strides(dims);
    let offs = config_offsets(positions, dims, &st);
    let d = offs.len();
    if u.rows() != d || u.cols() != d {
        return Err(Error::Dimension(format!(
            "gate matrix is {}x{}, acted subspace has dimension {d}",
            u.rows(),
            u.cols()
        )));
    }
    let mut gathered = vec![c64(0.0, 0.0); d];
    for base in base_indices(positions, dims, &st) {
        for (t, &off) in offs.iter().enumerate() {
            gathered[t] = amps[base + off];
        }
        for (r, &off) in offs.iter().enumerate() {
            let mut acc = c64(0.0, 0.0);
            for (c, &x) in gathered.iter().enumerate() {
                if x.re != 0.0 || x.im != 0.0 {
                    acc += u.get(r, c) * x;
                }
            }
            amps[base + off] = acc;
        }
    }
    Ok(())
}

fn apply_controlled(
    amps: &mut [Complex64],
    dims: &[usize],
    cpos: &[usize],
    tpos: &[usize],
    us: &[ComplexMatrix],
) -> Result<()> {
    let st = strides(dims);
    let coffs = config_offsets(cpos, dims, &st);
    let toffs = config_offsets(tpos, dims, &st);
    if us.len() != coffs.len() {
        return Err(Error::Dimension(format!(
            "controlled gate lists {} branch unitaries for {} control configurations",
            us.len(),
            coffs.len()
        )));
    }
    let dt = toffs.len();
    let mut all: Vec<usize> = cpos.iter().chain(tpos).copied().collect();
    all.sort_unstable();
    all.dedup();
    if all.len() != cpos.len() + tpos.len() {
        return Err(Error::Validation(
            "controlled gate reuses a wire as both control and target".into(),
        ));
    }
    let mut gathered = vec![c64(0.0, 0.0); dt];
    for (a, &coff) in coffs.iter().enumerate() {
        let u = &us[a];
        if u.rows() != dt || u.cols() != dt {
            return Err(Error::Dimension(format!(
                "branch unitary {a} is {}x{}, target subspace has dimension {dt}",
                u.rows(),
                u.cols()
            )));
        }
        for base in base_indices(&all, dims, &st) {
            for (t, &toff) in toffs.iter().enumerate() {
                gathered[t] = amps[base + coff + toff];
            }
            for (r, &toff) in toffs.iter().enumerate() {
                let mut acc = c64(0.0, 0.0);
                for (c, &x) in gathered.iter().enumerate() {
                    if x.re != 0.0 || x.im != 0.0 {
                        acc += u.get(r, c) * x;
                    }
                }
                amps[base + coff + toff] = acc;
            }
        }
    }
    Ok(())
}

struct SimCursor {
    live: Vec<usize>,
    amps: Vec<Complex64>,
    prob: f64,
    bits: BTreeMap<String, bool>,
}

struct Simulator<'a> {
    circuit: &'a Circuit,
    branches: Vec<BranchRecord>,
}

impl Simulator<'_> {
    fn dims(&self, live: &[usize]) -> Vec<usize> {
        live.iter().map(|&w| self.circuit.wires[w].dim).collect()
    }

    fn positions(&self, live: &[usize], wires: &[usize], gate_idx: usize) -> Result<Vec<usize>> {
        wires
            .iter()
            .map(|&w| {
                live.binary_search(&w).map_err(|_| {
                    Error::Validation(format!("gate {gate_idx} references dead wire {w}"))
                })
            })
            .collect()
    }

    fn run(&mut self, gate_idx: usize, mut cur: SimCursor) -> Result<()> {
        let mut idx = gate_idx;
        while idx < self.circuit.gates.len() {
            let gate = &self.circuit.gates[idx];
            let dims = self.dims(&cur.live);
            match gate {
                Gate::Unitary { wires, u } => {
                    let pos = self.positions(&cur.live, wires, idx)?;
                    apply_matrix(&mut cur.amps, &dims, &pos, u)?;
                }
                Gate::Controlled {
                    controls,
                    targets,
                    us,
                } => {
                    let cpos = self.positions(&cur.live, controls, idx)?;
                    let tpos = self.positions(&cur.live, targets, idx)?;
                    apply_controlled(&mut cur.amps, &dims, &cpos, &tpos, us)?;
                }
                Gate::Conditioned { cond, wires, u } => {
                    if cond.eval(&cur.bits)? {
                        let pos = self.positions(&cur.live, wires, idx)?;
                        apply_matrix(&mut cur.amps, &dims, &pos, u)?;
                    }
                }
                Gate::Measure { wire, bit } => {
                    if cur.bits.contains_key(bit) {
                        return Err(Error::Validation(format!(
                            "gate {idx} reassigns classical bit '{bit}'"
                        )));
                    }
                    let pos = self.positions(&cur.live, &[*wire], idx)?[0];
                    if dims[pos] != 2 {
                        return Err(Error::Unsupported(format!(
                            "gate {idx} measures wire {wire} of dimension {} (only 2 supported)",
                            dims[pos]
                        )));
                    }
                    let st = strides(&dims);
                    for outcome in [false, true] {
                        let k = usize::from(outcome);
                        let mut proj = cur.amps.clone();
                        let mut p = 0.0f64;
                        for (i, amp) in proj.iter_mut().enumerate() {
                            if (i / st[pos]) % 2 == k {
                                p += amp.norm_sqr();
                            } else {
                                *amp = c64(0.0, 0.0);
                            }
                        }
                        let branch_prob = cur.prob * p;
                        if branch_prob < BRANCH_PRUNE_TOL {
                            continue;
                        }
                        let scale = 1.0 / p.sqrt();
                        for amp in proj.iter_mut() {
                            *amp *= scale;
                        }
                        let mut bits = cur.bits.clone();
                        bits.insert(bit.clone(), outcome);
                        self.run(
                            idx + 1,
                            SimCursor {
                                live: cur.live.clone(),
                                amps: proj,
                                prob: branch_prob,
                                bits,
                            },
                        )?;
                    }
                    return Ok(());
                }
                Gate::Alloc { wires, state } => {
                    for &w in wires {
                        self.circuit.wire(w)?;
                        if cur.live.binary_search(&w).is_ok() {
                            return Err(Error::Validation(format!(
                                "gate {idx} allocates already-live wire {w}"
                            )));
                        }
                    }
                    let mut listed = wires.clone();
                    listed.sort_unstable();
                    listed.dedup();
                    if listed.len() != wires.len() {
                        return Err(Error::Validation(format!(
                            "gate {idx} allocates a wire twice"
                        )));
                    }
                    let alloc_dims: Vec<usize> =
                        wires.iter().map(|&w| self.circuit.wires[w].dim).collect();
                    let alloc_total: usize = alloc_dims.iter().product();
                    if state.dim() != alloc_total {
                        return Err(Error::Dimension(format!(
                            "gate {idx} allocates dimension {alloc_total} with a state of dimension {}",
                            state.dim()
                        )));
                    }
                    if (state.norm() - 1.0).abs() > 1e-10 {
                        return Err(Error::Validation(format!(
                            "gate {idx} allocates an unnormalized state"
                        )));
                    }
                    let new_total = cur.amps.len() * alloc_total;
                    if new_total > MAX_TOTAL_DIM {
                        return Err(Error::Dimension(format!(
                            "gate {idx} would grow the state to dimension {new_total} (cap {MAX_TOTAL_DIM})"
                        )));
                    }
                    let mut new_live: Vec<usize> =
                        cur.live.iter().chain(wires.iter()).copied().collect();
                    new_live.sort_unstable();
                    let new_dims = self.dims(&new_live);
                    let new_st = strides(&new_dims);
                    let old_st = strides(&dims);
                    let alloc_st = strides(&alloc_dims);
                    let mut new_amps = vec![c64(0.0, 0.0); new_total];
                    let old_map: Vec<usize> = cur
                        .live
                        .iter()
                        .map(|w| new_live.binary_search(w).expect("live wire"))
                        .collect();
                    let alloc_map: Vec<usize> = wires
                        .iter()
                        .map(|w| new_live.binary_search(w).expect("alloc wire"))
                        .collect();
                    for (oi, &oa) in cur.amps.iter().enumerate() {
                        if oa.re == 0.0 && oa.im == 0.0 {
                            continue;
                        }
                        let old_base: usize = old_map
                            .iter()
                            .enumerate()
                            .map(|(j, &np)| ((oi / old_st[j]) % dims[j]) * new_st[np])
                            .sum();
                        for (ai, &aa) in state.data().iter().enumerate() {
                            if aa.re == 0.0 && aa.im == 0.0 {
                                continue;
                            }
                            let add: usize = alloc_map
                                .iter()
                                .enumerate()
                                .map(|(j, &np)| {
                                    ((ai / alloc_st[j]) % alloc_dims[j]) * new_st[np]
                                })
                                .sum();
                            new_amps[old_base + add] = oa * aa;
                        }
                    }
                    cur.live = new_live;
                    cur.amps = new_amps;
                }
                Gate::Dealloc { wire } => {
                    let pos = self.positions(&cur.live, &[*wire], idx)?[0];
                    let psi = StateVector::new(cur.amps.clone())?;
                    let rho = psi.reduced_density(&dims, &[pos])?;
                    let purity = rho.matmul(&rho)?.trace().re;
                    if purity < 1.0 - DEALLOC_PURITY_TOL {
                        return Err(Error::Validation(format!(
                            "gate {idx} deallocates entangled wire {wire} (purity {purity:.12})"
                        )));
                    }
                    let eig = rho.eig_hermitian()?;
                    let d = dims[pos];
                    let phi: Vec<Complex64> =
                        (0..d).map(|k| eig.eigenvectors.get(k, d - 1)).collect();
                    let st = strides(&dims);
                    let mut new_amps =
                        vec![c64(0.0, 0.0); cur.amps.len() / d];
                    let mut out_i = 0;
                    for base in base_indices(&[pos], &dims, &st) {
                        let mut acc = c64(0.0, 0.0);
                        for (k, ph) in phi.iter().enumerate() {
                            acc += ph.conj() * cur.amps[base + k * st[pos]];
                        }
                        new_amps[out_i] = acc;
                        out_i += 1;
                    }
                    let norm: f64 = new_amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-8 {
                        return Err(Error::Numerical(format!(
                            "dealloc of wire {wire} lost norm ({norm})"
                        )));
                    }
                    for amp in new_amps.iter_mut() {
                        *amp /= norm;
                    }
                    cur.live.remove(pos);
                    cur.amps = new_amps;
                }
            }
            idx += 1;
        }
        self.branches.push(BranchRecord {
            bits: cur.bits,
            probability: cur.prob,
            state: StateVector::new(cur.amps)?,
            live_wires: cur.live,
        });
        Ok(())
    }
}

/// Exhaustively simulate `circuit` on `input` (the joint state of
/// `circuit.inputs` in ascending wire-id order).
///
/// Branches are enumerated depth-first with outcome 0 before outcome 1;
/// branches of probability below [`BRANCH_PRUNE_TOL`] are dropped.  The
/// surviving branch probabilities must sum to 1 within 1e-10.
pub fn simulate(circuit: &Circuit, input: &StateVector) -> Result<SimulationTrace> {
    let mut live: Vec<usize> = circuit.inputs.clone();
    live.sort_unstable();
    live.dedup();
    if live.len() != circuit.inputs.len() {
        return Err(Error::Validation("duplicate input wire".into()));
    }
    for &w in &live {
        circuit.wire(w)?;
    }
    let in_dim: usize = live.iter().map(|&w| circuit.wires[w].dim).product();
    if input.dim() != in_dim {
        return Err(Error::Dimension(format!(
            "input dimension {} does not match the {} input wires (dimension {in_dim})",
            input.dim(),
            live.len()
        )));
    }
    if (input.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Validation("unnormalized simulation input".into()));
    }
    if in_dim > MAX_TOTAL_DIM {
        return Err(Error::Dimension(format!(
            "input dimension {in_dim} exceeds the cap {MAX_TOTAL_DIM}"
        )));
    }
    let mut sim = Simulator {
        circuit,
        branches: Vec::new(),
    };
    sim.run(
        0,
        SimCursor {
            live,
            amps: input.data().to_vec(),
            prob: 1.0,
            bits: BTreeMap::new(),
        },
    )?;
    let trace = SimulationTrace {
        branches: sim.branches,
    };
    let total = trace.total_probability();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Numerical(format!(
            "branch probabilities sum to {total}, not 1"
        )));
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Channels and deferred measurement
// ---------------------------------------------------------------------------

/// Choi operator of the channel the circuit induces from `input_wires` to
/// `output_wires`.
///
/// `input_wires` must be exactly the circuit inputs; on every branch the
/// output wires must be live, and any other surviving wires are traced out.
/// Both Choi indices follow ascending wire-id order, input factor first.
pub fn channel_choi(
    circuit: &Circuit,
    input_wires: &[usize],
    output_wires: &[usize],
) -> Result<ChoiOperator> {
    let mut ins: Vec<usize> = input_wires.to_vec();
    ins.sort_unstable();
    ins.dedup();
    let mut declared: Vec<usize> = circuit.inputs.clone();
    declared.sort_unstable();
    if ins != declared {
        return Err(Error::Validation(
            "channel_choi: input wires must be exactly the circuit inputs".into(),
        ));
    }
    let mut outs: Vec<usize> = output_wires.to_vec();
    outs.sort_unstable();
    outs.dedup();
    if outs.len() != output_wires.len() {
        return Err(Error::Validation("channel_choi: duplicate output wire".into()));
    }

    // Extend the circuit with one reference wire per input wire.
    let mut ext = circuit.clone();
    let mut ref_ids = Vec::with_capacity(ins.len());
    for (i, &w) in ins.iter().enumerate() {
        let id = ext.wires.len();
        ext.wires.push(WireDecl {
            label: format!("ref{i}"),
            node: "__reference".into(),
            dim: circuit.wires[w].dim,
        });
        ext.inputs.push(id);
        ref_ids.push(id);
    }
    let d_in: usize = ins.iter().map(|&w| circuit.wires[w].dim).product();
    // Initial live order is `ins` then refs (reference ids are largest), and
    // the reference digits mirror the input digits, so the maximally
    // entangled input is diagonal in the combined index.
    let mut amps = vec![c64(0.0, 0.0); d_in * d_in];
    let root = 1.0 / (d_in as f64).sqrt();
    for k in 0..d_in {
        amps[k * d_in + k] = c64(root, 0.0);
    }
    let trace = simulate(&ext, &StateVector::new(amps)?)?;

    let d_out: usize = outs.iter().map(|&w| circuit.wires[w].dim).product();
    let mut m = ComplexMatrix::zeros(d_in * d_out, d_in * d_out);
    for branch in &trace.branches {
        let live = &branch.live_wires;
        let dims: Vec<usize> = live.iter().map(|&w| ext.wires[w].dim).collect();
        let mut keep_pos = Vec::new();
        for &w in outs.iter().chain(ref_ids.iter()) {
            let pos = live.binary_search(&w).map_err(|_| {
                Error::Validation(format!("channel_choi: wire {w} dead at circuit end"))
            })?;
            keep_pos.push(pos);
        }
        keep_pos.sort_unstable();
        let rho = branch.state.reduced_density(&dims, &keep_pos)?;
        // Reduced order is [outputs..., refs...]; the Choi convention wants
        // the reference (input) factor first.
        let red_dims: Vec<usize> = keep_pos.iter().map(|&p| dims[p]).collect();
        let n_out = outs.len();
        let n_ref = ref_ids.len();
        let perm: Vec<usize> = (0..n_ref)
            .map(|i| n_out + i)
            .chain(0..n_out)
            .collect();
        let rho = rho.permute_systems(&red_dims, &perm)?;
        m = m.add(&rho.scale_re(branch.probability * d_in as f64))?;
    }
    ChoiOperator::new(m, d_in, d_out)
}

/// Rewrite a circuit in deferred-measurement form: measurements are removed
/// (wires stay coherent) and classically conditioned gates become quantum
/// controlled gates on the would-be measured wires.
///
/// Deallocation of measured wires is dropped (they no longer factor out);
/// any later quantum use of a measured wire is rejected.
pub fn defer_measurements(circuit: &Circuit) -> Result<Circuit> {
    let mut out = Circuit {
        wires: circuit.wires.clone(),
        inputs: circuit.inputs.clone(),
        gates: Vec::new(),
    };
    let mut bit_wire: BTreeMap<String, usize> = BTreeMap::new();
    let mut measured: BTreeSet<usize> = BTreeSet::new();
    for (idx, gate) in circuit.gates.iter().enumerate() {
        match gate {
            Gate::Measure { wire, bit } => {
                if bit_wire.insert(bit.clone(), *wire).is_some() {
                    return Err(Error::Validation(format!(
                        "gate {idx} reassigns classical bit '{bit}'"
                    )));
                }
                measured.insert(*wire);
            }
            Gate::Conditioned { cond, wires, u } => {
                let names = cond.bits();
                let mut controls = Vec::with_capacity(names.len());
                for name in &names {
                    let w = *bit_wire.get(name).ok_or_else(|| {
                        Error::Validation(format!(
                            "gate {idx} conditions on bit '{name}' measured later or never"
                        ))
                    })?;
                    if circuit.wires[w].dim != 2 {
                        return Err(Error::Unsupported(
                            "deferred control on a non-qubit wire".into(),
                        ));
                    }
                    controls.push(w);
                }
                if names.is_empty() {
                    if cond.eval(&BTreeMap::new())? {
                        out.gates.push(Gate::Unitary {
                            wires: wires.clone(),
                            u: u.clone(),
                        });
                    }
                    continue;
                }
                let dt = u.rows();
                let mut us = Vec::with_capacity(1 << names.len());
                for config in 0..(1usize << names.len()) {
                    let mut assignment = BTreeMap::new();
                    for (j, name) in names.iter().enumerate() {
                        let digit = (config >> (names.len() - 1 - j)) & 1;
                        assignment.insert(name.clone(), digit == 1);
                    }
                    us.push(if cond.eval(&assignment)? {
                        u.clone()
                    } else {
                        ComplexMatrix::identity(dt)
                    });
                }
                out.gates.push(Gate::Controlled {
                    controls,
                    targets: wires.clone(),
                    us,
                });
            }
            Gate::Dealloc { wire } if measured.contains(wire) => {}
            other => {
                for w in other.quantum_wires() {
                    if measured.contains(&w) {
                        return Err(Error::Validation(format!(
                            "gate {idx} uses wire {w} quantumly after measurement"
                        )));
                    }
                }
                out.gates.push(other.clone());
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// LOCC validation
// ---------------------------------------------------------------------------

/// One entry of a [`LoccTranscript`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LoccEvent {
    /// A purely local operation at `node`.
    LocalOp { node: String, gate_index: usize },
    /// A classical bit travelling between nodes for a conditioned gate.
    Message {
        from: String,
        to: String,
        bit: String,
        gate_index: usize,
    },
    /// Allocation of a pre-shared EPR pair on a declared resource edge.
    EprConsumed {
        node_a: String,
        node_b: String,
        gate_index: usize,
    },
}

/// Ordered record of local operations, classical messages, and consumed
/// entanglement of an LOCC-valid circuit.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LoccTranscript {
    pub events: Vec<LoccEvent>,
}

impl LoccTranscript {
    /// Number of distinct `(bit, destination)` classical messages crossing
    /// nodes.
    pub fn cross_node_bit_count(&self) -> usize {
        self.events
            .iter()
            .filter_map(|e| match e {
                LoccEvent::Message { to, bit, .. } => Some((bit.clone(), to.clone())),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Number of EPR pairs consumed.
    pub fn epr_consumed(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, LoccEvent::EprConsumed { .. }))
            .count()
    }
}

/// Why a circuit is not LOCC over the declared network.
#[derive(Clone, Debug)]
pub struct LoccViolation {
    pub gate_index: usize,
    pub reason: String,
}

impl std::fmt::Display for LoccViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gate {}: {}", self.gate_index, self.reason)
    }
}

fn norm_edge(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Check that `circuit` is implementable with local operations and free
/// classical communication, drawing cross-node entanglement only from
/// `epr_edges` (an undirected multiset of node pairs; each allocation of a
/// cross-node EPR pair consumes one instance).
pub fn locc_validate(
    circuit: &Circuit,
    epr_edges: &[(String, String)],
) -> std::result::Result<LoccTranscript, LoccViolation> {
    let mut budget: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (a, b) in epr_edges {
        *budget.entry(norm_edge(a, b)).or_insert(0) += 1;
    }
    let mut transcript = LoccTranscript::default();
    let mut producer: BTreeMap<String, String> = BTreeMap::new();
    let node_of = |w: usize| circuit.wires[w].node.clone();
    let bell = gates::bell_phi_plus();

    for (idx, gate) in circuit.gates.iter().enumerate() {
        for &w in &gate.quantum_wires() {
            if w >= circuit.wires.len() {
                return Err(LoccViolation {
                    gate_index: idx,
                    reason: format!("undeclared wire {w}"),
                });
            }
        }
        match gate {
            Gate::Unitary { wires, .. } => {
                let nodes: BTreeSet<String> = wires.iter().map(|&w| node_of(w)).collect();
                if nodes.len() > 1 {
                    return Err(LoccViolation {
                        gate_index: idx,
                        reason: format!("quantum gate spans nodes {nodes:?}"),
                    });
                }
                transcript.events.push(LoccEvent::LocalOp {
                    node: nodes.into_iter().next().unwrap_or_default(),
                    gate_index: idx,
                });
            }
            Gate::Controlled {
                controls, targets, ..
            } => {
                let nodes: BTreeSet<String> = controls
                    .iter()
                    .chain(targets)
                    .map(|&w| node_of(w))
                    .collect();
                if nodes.len() > 1 {
                    return Err(LoccViolation {
                        gate_index: idx,
                        reason: format!("controlled quantum gate spans nodes {nodes:?}"),
                    });
                }
                transcript.events.push(LoccEvent::LocalOp {
                    node: nodes.into_iter().next().unwrap_or_default(),
                    gate_index: idx,
                });
            }
            Gate::Measure { wire, bit } => {
                let node = node_of(*wire);
                if producer.insert(bit.clone(), node.clone()).is_some() {
                    return Err(LoccViolation {
                        gate_index: idx,
                        reason: format!("classical bit '{bit}' reassigned"),
                    });
                }
                transcript.events.push(LoccEvent::LocalOp {
                    node,
                    gate_index: idx,
                });
            }
            Gate::Conditioned { cond, wires, .. } => {
                let nodes: BTreeSet<String> = wires.iter().map(|&w| node_of(w)).collect();
                if nodes.len() > 1 {
                    return Err(LoccViolation {
                        gate_index: idx,
                        reason: format!("conditioned quantum gate spans nodes {nodes:?}"),
                    });
                }
                let node = nodes.into_iter().next().unwrap_or_default();
                for bit in cond.bits() {
                    let Some(from) = producer.get(&bit) else {
                        return Err(LoccViolation {
                            gate_index: idx,
                            reason: format!("condition reads bit '{bit}' never measured"),
                        });
                    };
                    if *from != node {
                        transcript.events.push(LoccEvent::Message {
                            from: from.clone(),
                            to: node.clone(),
                            bit,
                            gate_index: idx,
                        });
                    }
                }
                transcript.events.push(LoccEvent::LocalOp {
                    node,
                    gate_index: idx,
                });
            }
            Gate::Alloc { wires, state } => {
                let nodes: BTreeSet<String> = wires.iter().map(|&w| node_of(w)).collect();
                if nodes.len() == 1 {
                    transcript.events.push(LoccEvent::LocalOp {
                        node: nodes.into_iter().next().unwrap_or_default(),
                        gate_index: idx,
                    });
                    continue;
                }
                // Cross-node allocation: must be an EPR pair on a declared
                // resource edge.
                let is_epr = wires.len() == 2
                    && wires.iter().all(|&w| circuit.wires[w].dim == 2)
                    && state
                        .data()
                        .iter()
                        .zip(bell.data())
                        .all(|(a, b)| (a - b).norm() < 1e-9);
                if !is_epr {
                    return Err(LoccViolation {
                        gate_index: idx,
                        reason: format!(
                            "cross-node allocation of a non-EPR state over nodes {nodes:?}"
                        ),
                    });
                }
                let key = norm_edge(&node_of(wires[0]), &node_of(wires[1]));
                match budget.get_mut(&key) {
                    Some(n) if *n > 0 => *n -= 1,
                    _ => {
                        return Err(LoccViolation {
                            gate_index: idx,
                            reason: format!(
                                "no remaining resource edge between {} and {}",
                                key.0, key.1
                            ),
                        });
                    }
                }
                transcript.events.push(LoccEvent::EprConsumed {
                    node_a: key.0,
                    node_b: key.1,
                    gate_index: idx,
                });
            }
            Gate::Dealloc { wire } => {
                transcript.events.push(LoccEvent::LocalOp {
                    node: node_of(*wire),
                    gate_index: idx,
                });
            }
        }
    }
    Ok(transcript)
}

// ---------------------------------------------------------------------------
// Builder and gadgets
// ---------------------------------------------------------------------------

/// Incremental circuit assembly with automatic wire ids and deterministic
/// classical bit names (`k0`, `k1`, … in creation order).
#[derive(Default)]
pub struct CircuitBuilder {
    wires: Vec<WireDecl>,
    inputs: Vec<usize>,
    gates: Vec<Gate>,
    bit_counter: usize,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a wire that is live from the start.
    pub fn input_wire(&mut self, label: &str, node: &str, dim: usize) -> usize {
        let id = self.declare(label, node, dim);
        self.inputs.push(id);
        id
    }

    /// Declare a wire that must be brought to life by an `Alloc` gate.
    pub fn aux_wire(&mut self, label: &str, node: &str, dim: usize) -> usize {
        self.declare(label, node, dim)
    }

    fn declare(&mut self, label: &str, node: &str, dim: usize) -> usize {
        self.wires.push(WireDecl {
            label: label.into(),
            node: node.into(),
            dim,
        });
        self.wires.len() - 1
    }

    pub fn node_of(&self, wire: usize) -> &str {
        &self.wires[wire].node
    }

    /// Number of gates appended so far — usable as a segment cut point.
    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    pub fn dim_of(&self, wire: usize) -> usize {
        self.wires[wire].dim
    }

    pub fn unitary(&mut self, wires: &[usize], u: ComplexMatrix) {
        self.gates.push(Gate::Unitary {
            wires: wires.to_vec(),
            u,
        });
    }

    pub fn controlled(&mut self, controls: &[usize], targets: &[usize], us: Vec<ComplexMatrix>) {
        self.gates.push(Gate::Controlled {
            controls: controls.to_vec(),
            targets: targets.to_vec(),
            us,
        });
    }

    /// Measure into an automatically named fresh bit; returns the name.
    pub fn measure(&mut self, wire: usize) -> String {
        let bit = format!("k{}", self.bit_counter);
        self.bit_counter += 1;
        self.gates.push(Gate::Measure {
            wire,
            bit: bit.clone(),
        });
        bit
    }

    pub fn conditioned(&mut self, cond: CondExpr, wires: &[usize], u: ComplexMatrix) {
        self.gates.push(Gate::Conditioned {
            cond,
            wires: wires.to_vec(),
            u,
        });
    }

    pub fn alloc(&mut self, wires: &[usize], state: StateVector) {
        self.gates.push(Gate::Alloc {
            wires: wires.to_vec(),
            state,
        });
    }

    /// Allocate `(|00⟩+|11⟩)/√2` on two dead qubit wires.
    pub fn alloc_epr(&mut self, a: usize, b: usize) {
        self.alloc(&[a, b], gates::bell_phi_plus());
    }

    pub fn dealloc(&mut self, wire: usize) {
        self.gates.push(Gate::Dealloc { wire });
    }

    pub fn build(self) -> Circuit {
        Circuit {
            wires: self.wires,
            inputs: self.inputs,
            gates: self.gates,
        }
    }
}

/// Teleport the state of `sender` onto `epr_r` using the pre-shared EPR pair
/// `(epr_s, epr_r)`; `epr_s` must be at the sender's node.
///
/// Appends the standard gadget: Bell measurement of `(sender, epr_s)` (two
/// classical bits), then the conditional corrections `X` and `Z` on the
/// receiver side, matching the correction set `{I, Z, X, ZX}`.  The sender
/// wires are measured out and deallocated.
pub fn teleport_gadget(b: &mut CircuitBuilder, sender: usize, epr_s: usize, epr_r: usize) {
    b.unitary(&[sender, epr_s], gates::cnot());
    b.unitary(&[sender], gates::h());
    let k1 = b.measure(sender);
    let k2 = b.measure(epr_s);
    b.conditioned(CondExpr::bit(k2), &[epr_r], gates::x());
    b.conditioned(CondExpr::bit(k1), &[epr_r], gates::z());
    b.dealloc(sender);
    b.dealloc(epr_s);
}

/// Disentangler Γ_d2: on inputs of the form `Σ_z α_z |z⟩_1 |z⟩_2`, removes
/// wire 1, leaving `Σ_z α_z |z⟩` on wire 2 (every branch).
pub fn gamma_d2(b: &mut CircuitBuilder, w1: usize, w2: usize) {
    b.unitary(&[w1], gates::h());
    let k = b.measure(w1);
    b.conditioned(CondExpr::bit(k), &[w2], gates::z());
    b.dealloc(w1);
}

/// Disentangler Γ_d3: on inputs of the form
/// `Σ_{x,y} λ_{xy} |x⟩_1 |y⟩_2 |x⊕y⟩_3`, removes wire 3, leaving
/// `Σ λ_{xy} |x⟩|y⟩` on wires 1–2 (every branch).
pub fn gamma_d3(b: &mut CircuitBuilder, w1: usize, w2: usize, w3: usize) {
    b.unitary(&[w3], gates::h());
    let k = b.measure(w3);
    b.conditioned(CondExpr::bit(k.clone()), &[w1], gates::z());
    b.conditioned(CondExpr::bit(k), &[w2], gates::z());
    b.dealloc(w3);
}

/// Distributed controlled unitary `|0⟩⟨0|⊗I + |1⟩⟨1|⊗u` between `ctrl` and
/// `tgt` at different nodes, using one pre-shared EPR pair
/// `(epr_c, epr_t)` (`epr_c` at the control node) and three classical bits:
/// copy the control onto an ancilla, teleport it to the target node, apply
/// the controlled gate there, then uncompute the ancilla by a Hadamard
/// measurement with a conditional `Z` back on the control.
pub fn eisert_controlled_u(
    b: &mut CircuitBuilder,
    ctrl: usize,
    epr_c: usize,
    epr_t: usize,
    tgt: usize,
    u: &ComplexMatrix,
) {
    let ctrl_node = b.node_of(ctrl).to_string();
    let anc = b.aux_wire("anc", &ctrl_node, 2);
    b.alloc(&[anc], StateVector::basis(2, 0));
    b.unitary(&[ctrl, anc], gates::cnot());
    teleport_gadget(b, anc, epr_c, epr_t);
    b.controlled(&[epr_t], &[tgt], vec![ComplexMatrix::identity(u.rows()), u.clone()]);
    b.unitary(&[epr_t], gates::h());
    let k3 = b.measure(epr_t);
    b.conditioned(CondExpr::bit(k3), &[ctrl], gates::z());
    b.dealloc(epr_t);
}

/// Teleport `sender` along a chain of pre-shared EPR pairs
/// `(s_i, r_i)`, hop by hop; returns the final carrier wire.
pub fn teleport_chain(b: &mut CircuitBuilder, sender: usize, chain: &[(usize, usize)]) -> usize {
    let mut carrier = sender;
    for &(s, r) in chain {
        teleport_gadget(b, carrier, s, r);
        carrier = r;
    }
    carrier
}

/// Distributed three-qubit fully controlled unitary
/// `Σ_{ab} |ab⟩⟨ab| ⊗ u^{(ab)}` with controls `ctrl_l`, `ctrl_m` and target
/// `tgt` at (possibly) three different nodes.
///
/// `chain_l` and `chain_m` are chains of pre-shared EPR pairs leading from
/// the respective control node to the target node.  Control copies are made
/// on local ancillas, teleported to the target, used as controls of the
/// local fully controlled gate, and uncomputed by Hadamard measurements with
/// conditional `Z` corrections on the original controls; `us` is indexed as
/// `[u00, u01, u10, u11]`.
pub fn fully_controlled_3q(
    b: &mut CircuitBuilder,
    ctrl_l: usize,
    ctrl_m: usize,
    tgt: usize,
    chain_l: &[(usize, usize)],
    chain_m: &[(usize, usize)],
    us: Vec<ComplexMatrix>,
) {
    let node_l = b.node_of(ctrl_l).to_string();
    let node_m = b.node_of(ctrl_m).to_string();
    let anc_l = b.aux_wire("anc_l", &node_l, 2);
    let anc_m = b.aux_wire("anc_m", &node_m, 2);
    b.alloc(&[anc_l], StateVector::basis(2, 0));
    b.alloc(&[anc_m], StateVector::basis(2, 0));
    b.unitary(&[ctrl_l, anc_l], gates::cnot());
    b.unitary(&[ctrl_m, anc_m], gates::cnot());
    let copy_l = teleport_chain(b, anc_l, chain_l);
    let copy_m = teleport_chain(b, anc_m, chain_m);
    b.controlled(&[copy_l, copy_m], &[tgt], us);
    b.unitary(&[copy_l], gates::h());
    b.unitary(&[copy_m], gates::h());
    let kl = b.measure(copy_l);
    let km = b.measure(copy_m);
    b.conditioned(CondExpr::bit(kl), &[ctrl_l], gates::z());
    b.conditioned(CondExpr::bit(km), &[ctrl_m], gates::z());
    b.dealloc(copy_l);
    b.dealloc(copy_m);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_ops::kraus_to_choi;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn random_state(dim: usize, rng: &mut ChaCha20Rng) -> StateVector {
        let data: Vec<Complex64> = (0..dim)
            .map(|_| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        StateVector::new(data).unwrap().normalized().unwrap()
    }

    fn random_unitary_2(rng: &mut ChaCha20Rng) -> ComplexMatrix {
        // Gram–Schmidt on a random 2x2.
        let a = random_state(2, rng);
        let mut b0 = c64(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let mut b1 = c64(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let ip = a.get(0).conj() * b0 + a.get(1).conj() * b1;
        b0 -= ip * a.get(0);
        b1 -= ip * a.get(1);
        let n = (b0.norm_sqr() + b1.norm_sqr()).sqrt();
        ComplexMatrix::from_rows(vec![
            vec![a.get(0), b0 / n],
            vec![a.get(1), b1 / n],
        ])
        .unwrap()
    }

    fn fidelity(a: &StateVector, b: &StateVector) -> f64 {
        a.inner(b).unwrap().norm()
    }

    #[test]
    fn empty_circuit_passes_state_through() {
        let mut b = CircuitBuilder::new();
        b.input_wire("q", "n0", 2);
        let c = b.build();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let psi = random_state(2, &mut rng);
        let trace = simulate(&c, &psi).unwrap();
        assert_eq!(trace.branches.len(), 1);
        assert!((trace.branches[0].probability - 1.0).abs() < 1e-12);
        assert!(fidelity(&trace.branches[0].state, &psi) > 1.0 - 1e-12);
    }

    #[test]
    fn measuring_plus_splits_evenly() {
        let mut b = CircuitBuilder::new();
        let q = b.input_wire("q", "n0", 2);
        b.unitary(&[q], gates::h());
        let bit = b.measure(q);
        let c = b.build();
        let trace = simulate(&c, &StateVector::basis(2, 0)).unwrap();
        assert_eq!(trace.branches.len(), 2);
        for (i, branch) in trace.branches.iter().enumerate() {
            assert!((branch.probability - 0.5).abs() < 1e-12);
            assert_eq!(branch.bits[&bit], i == 1);
        }
    }

    #[test]
    fn teleportation_moves_arbitrary_states() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..5 {
            let psi = random_state(2, &mut rng);
            let mut b = CircuitBuilder::new();
            let s = b.input_wire("msg", "alice", 2);
            let ea = b.aux_wire("epr_a", "alice", 2);
            let eb = b.aux_wire("epr_b", "bob", 2);
            b.alloc_epr(ea, eb);
            teleport_gadget(&mut b, s, ea, eb);
            let c = b.build();
            let trace = simulate(&c, &psi).unwrap();
            assert_eq!(trace.branches.len(), 4);
            for branch in &trace.branches {
                assert!((branch.probability - 0.25).abs() < 1e-12);
                assert_eq!(branch.live_wires, vec![eb]);
                assert!(fidelity(&branch.state, &psi) > 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn teleporting_half_a_pair_preserves_entanglement() {
        // Input: a fixed entangled pair on (spectator, message).
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let joint = random_state(4, &mut rng);
        let mut b = CircuitBuilder::new();
        let spect = b.input_wire("spectator", "charlie", 2);
        let s = b.input_wire("msg", "alice", 2);
        let ea = b.aux_wire("epr_a", "alice", 2);
        let eb = b.aux_wire("epr_b", "bob", 2);
        b.alloc_epr(ea, eb);
        teleport_gadget(&mut b, s, ea, eb);
        let c = b.build();
        let trace = simulate(&c, &joint).unwrap();
        for branch in &trace.branches {
            assert_eq!(branch.live_wires, vec![spect, eb]);
            // Wire ids (spect < eb) keep the factor order, so the final
            // state must equal the input exactly.
            assert!(fidelity(&branch.state, &joint) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn gamma_d2_disentangles_correlated_pairs() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for trial in 0..50 {
            let alpha = random_state(2, &mut rng);
            let mut amps = vec![c64(0.0, 0.0); 4];
            amps[0] = alpha.get(0);
            amps[3] = alpha.get(1);
            let input = StateVector::new(amps).unwrap();
            let mut b = CircuitBuilder::new();
            let w1 = b.input_wire("w1", "n0", 2);
            let w2 = b.input_wire("w2", "n1", 2);
            gamma_d2(&mut b, w1, w2);
            let c = b.build();
            let trace = simulate(&c, &input).unwrap();
            assert_eq!(trace.branches.len(), 2, "trial {trial}");
            for branch in &trace.branches {
                assert!((branch.probability - 0.5).abs() < 1e-12);
                assert_eq!(branch.live_wires, vec![w2]);
                assert!(fidelity(&branch.state, &alpha) > 1.0 - 1e-10);
            }
        }
    }

    #[test]
    fn gamma_d3_removes_the_parity_qubit() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let lam = random_state(4, &mut rng);
            let mut amps = vec![c64(0.0, 0.0); 8];
            for x in 0..2 {
                for y in 0..2 {
                    amps[(x << 2) | (y << 1) | (x ^ y)] = lam.get((x << 1) | y);
                }
            }
            let input = StateVector::new(amps).unwrap();
            let mut b = CircuitBuilder::new();
            let w1 = b.input_wire("w1", "n0", 2);
            let w2 = b.input_wire("w2", "n1", 2);
            let w3 = b.input_wire("w3", "n2", 2);
            gamma_d3(&mut b, w1, w2, w3);
            let c = b.build();
            let trace = simulate(&c, &input).unwrap();
            assert_eq!(trace.branches.len(), 2);
            for branch in &trace.branches {
                assert_eq!(branch.live_wires, vec![w1, w2]);
                assert!(fidelity(&branch.state, &lam) > 1.0 - 1e-10);
            }
        }
    }

    fn eisert_circuit(u: &ComplexMatrix) -> (Circuit, usize, usize) {
        let mut b = CircuitBuilder::new();
        let ctrl = b.input_wire("ctrl", "alice", 2);
        let tgt = b.input_wire("tgt", "bob", 2);
        let ea = b.aux_wire("epr_a", "alice", 2);
        let eb = b.aux_wire("epr_b", "bob", 2);
        b.alloc_epr(ea, eb);
        eisert_controlled_u(&mut b, ctrl, ea, eb, tgt, u);
        (b.build(), ctrl, tgt)
    }

    #[test]
    fn eisert_gadget_implements_controlled_u() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        // u = X on |+0⟩ gives a Bell state.
        let (c, ctrl, tgt) = eisert_circuit(&gates::x());
        let plus = StateVector::new(vec![
            c64(1.0 / 2.0f64.sqrt(), 0.0),
            c64(0.0, 0.0),
            c64(1.0 / 2.0f64.sqrt(), 0.0),
            c64(0.0, 0.0),
        ])
        .unwrap();
        let trace = simulate(&c, &plus).unwrap();
        for branch in &trace.branches {
            assert_eq!(branch.live_wires, vec![ctrl, tgt]);
            assert!(fidelity(&branch.state, &gates::bell_phi_plus()) > 1.0 - 1e-12);
        }

        for _ in 0..20 {
            let u = random_unitary_2(&mut rng);
            let (c, _, _) = eisert_circuit(&u);
            let input = random_state(4, &mut rng);
            let expected = input.apply(&gates::controlled(&u)).unwrap();
            let trace = simulate(&c, &input).unwrap();
            assert_eq!(trace.branches.len(), 8);
            for branch in &trace.branches {
                assert!(fidelity(&branch.state, &expected) > 1.0 - 1e-10);
            }
        }
    }

    #[test]
    fn eisert_identity_gives_identity_channel() {
        let (c, ctrl, tgt) = eisert_circuit(&ComplexMatrix::identity(2));
        let choi = channel_choi(&c, &[ctrl, tgt], &[ctrl, tgt]).unwrap();
        let direct = ChoiOperator::of_unitary(&gates::controlled(&ComplexMatrix::identity(2))).unwrap();
        assert!(choi.distance(&ChoiOperator::identity(4)).unwrap() < 1e-10);
        assert!(choi.distance(&direct).unwrap() < 1e-10);
    }

    fn fully_controlled_direct(us: &[ComplexMatrix]) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(8, 8);
        for (a, u) in us.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    m.set(a * 2 + i, a * 2 + j, u.get(i, j));
                }
            }
        }
        m
    }

    fn fully_controlled_circuit(us: Vec<ComplexMatrix>) -> Circuit {
        let mut b = CircuitBuilder::new();
        let l = b.input_wire("l", "v1", 2);
        let m = b.input_wire("m", "v3", 2);
        let n = b.input_wire("n", "v2", 2);
        let s1a = b.aux_wire("s1a", "v1", 2);
        let s1b = b.aux_wire("s1b", "v2", 2);
        let s2a = b.aux_wire("s2a", "v3", 2);
        let s2b = b.aux_wire("s2b", "v2", 2);
        b.alloc_epr(s1a, s1b);
        b.alloc_epr(s2a, s2b);
        // us is indexed with the l digit most significant.
        fully_controlled_3q(&mut b, l, m, n, &[(s1a, s1b)], &[(s2a, s2b)], us);
        b.build()
    }

    #[test]
    fn fully_controlled_gadget_matches_direct_unitary() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let id = ComplexMatrix::identity(2);

        // All-identity is the identity channel.
        let c = fully_controlled_circuit(vec![id.clone(), id.clone(), id.clone(), id.clone()]);
        let input = random_state(8, &mut rng);
        for branch in &simulate(&c, &input).unwrap().branches {
            assert!(fidelity(&branch.state, &input) > 1.0 - 1e-10);
        }

        // The parity-Z gate used by the encoding-stage protocols.
        let z = gates::z();
        let us = vec![id.clone(), z.clone(), z.clone(), id.clone()];
        // Wire order in the circuit is (l, m, n) by id, but the branch table
        // of the gate matches (l, m); the direct 8x8 oracle multiplies
        // accordingly: basis |l m n⟩ with l most significant.
        let direct = fully_controlled_direct(&us);
        let c = fully_controlled_circuit(us.clone());
        for _ in 0..5 {
            let input = random_state(8, &mut rng);
            let expected = input.apply(&direct).unwrap();
            for branch in &simulate(&c, &input).unwrap().branches {
                assert!(fidelity(&branch.state, &expected) > 1.0 - 1e-10);
            }
        }

        // Random target sets.
        for _ in 0..10 {
            let us: Vec<ComplexMatrix> =
                (0..4).map(|_| random_unitary_2(&mut rng)).collect();
            let direct = fully_controlled_direct(&us);
            let c = fully_controlled_circuit(us);
            let input = random_state(8, &mut rng);
            let expected = input.apply(&direct).unwrap();
            let trace = simulate(&c, &input).unwrap();
            for branch in &trace.branches {
                assert!(fidelity(&branch.state, &expected) > 1.0 - 1e-10);
            }
        }
    }

    #[test]
    fn fully_controlled_direct_basis_order() {
        // |l m n⟩ = |1 0 1⟩ must pick u^{(10)}.
        let id = ComplexMatrix::identity(2);
        let us = vec![id.clone(), id.clone(), gates::x(), id.clone()];
        let direct = fully_controlled_direct(&us);
        let input = StateVector::basis(8, 0b100);
        let out = input.apply(&direct).unwrap();
        assert!((out.get(0b101).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn locc_validator_accepts_teleport_and_rejects_bare_cnot() {
        let edge = vec![("alice".to_string(), "bob".to_string())];

        let mut b = CircuitBuilder::new();
        let s = b.input_wire("msg", "alice", 2);
        let ea = b.aux_wire("epr_a", "alice", 2);
        let eb = b.aux_wire("epr_b", "bob", 2);
        b.alloc_epr(ea, eb);
        teleport_gadget(&mut b, s, ea, eb);
        let c = b.build();
        let transcript = locc_validate(&c, &edge).unwrap();
        assert_eq!(transcript.epr_consumed(), 1);
        assert_eq!(transcript.cross_node_bit_count(), 2);

        // Same circuit with no declared edge: the allocation is refused.
        let err = locc_validate(&c, &[]).unwrap_err();
        assert_eq!(err.gate_index, 0);

        // A bare cross-node CNOT is flagged with its gate index.
        let mut b = CircuitBuilder::new();
        let q0 = b.input_wire("q0", "alice", 2);
        let q1 = b.input_wire("q1", "bob", 2);
        b.unitary(&[q0], gates::h());
        b.unitary(&[q0, q1], gates::cnot());
        let c = b.build();
        let err = locc_validate(&c, &edge).unwrap_err();
        assert_eq!(err.gate_index, 1);
        assert!(err.reason.contains("spans"));
    }

    #[test]
    fn deferred_measurement_preserves_channels() {
        // Teleportation: identity channel from msg to receiver.
        let mut b = CircuitBuilder::new();
        let s = b.input_wire("msg", "alice", 2);
        let ea = b.aux_wire("epr_a", "alice", 2);
        let eb = b.aux_wire("epr_b", "bob", 2);
        b.alloc_epr(ea, eb);
        teleport_gadget(&mut b, s, ea, eb);
        let c = b.build();
        let orig = channel_choi(&c, &[s], &[eb]).unwrap();
        let deferred = defer_measurements(&c).unwrap();
        let def = channel_choi(&deferred, &[s], &[eb]).unwrap();
        assert!(orig.distance(&ChoiOperator::identity(2)).unwrap() < 1e-10);
        assert!(orig.distance(&def).unwrap() < 1e-9);

        // Eisert gadget with a non-trivial target unitary.
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let u = random_unitary_2(&mut rng);
        let (c, ctrl, tgt) = eisert_circuit(&u);
        let orig = channel_choi(&c, &[ctrl, tgt], &[ctrl, tgt]).unwrap();
        let def = channel_choi(&defer_measurements(&c).unwrap(), &[ctrl, tgt], &[ctrl, tgt])
            .unwrap();
        assert!(orig.distance(&def).unwrap() < 1e-9);
        assert!(
            orig.distance(&ChoiOperator::of_unitary(&gates::controlled(&u)).unwrap())
                .unwrap()
                < 1e-9
        );

        // Γ_d2 as a channel from two wires to one.
        let mut b = CircuitBuilder::new();
        let w1 = b.input_wire("w1", "n0", 2);
        let w2 = b.input_wire("w2", "n1", 2);
        gamma_d2(&mut b, w1, w2);
        let c = b.build();
        let orig = channel_choi(&c, &[w1, w2], &[w2]).unwrap();
        let def = channel_choi(&defer_measurements(&c).unwrap(), &[w1, w2], &[w2]).unwrap();
        assert!(orig.distance(&def).unwrap() < 1e-9);
    }

    #[test]
    fn gamma_d2_channel_matches_kraus_oracle() {
        // Global channel of the gadget (X-basis measurement of wire 1 with
        // a conditional Z on wire 2): one Kraus operator per outcome,
        // E_k = Z^k ⟨k|_X ⊗ I = (1/√2) Σ_{z₁z₂} (-1)^{k(z₁⊕z₂)} |z₂⟩⟨z₁z₂|,
        // verified against the simulator-derived Choi operator.
        let mut b = CircuitBuilder::new();
        let w1 = b.input_wire("w1", "n0", 2);
        let w2 = b.input_wire("w2", "n1", 2);
        gamma_d2(&mut b, w1, w2);
        let c = b.build();
        let choi = channel_choi(&c, &[w1, w2], &[w2]).unwrap();
        let mut kraus = Vec::new();
        for k in 0..2 {
            let mut e = ComplexMatrix::zeros(2, 4);
            for z1 in 0..2 {
                for z2 in 0..2 {
                    let sign = if k == 1 && (z1 ^ z2) == 1 { -1.0 } else { 1.0 };
                    e.set(z2, z1 * 2 + z2, c64(sign / 2.0f64.sqrt(), 0.0));
                }
            }
            kraus.push(e);
        }
        let direct = kraus_to_choi(&kraus, 4, 2).unwrap();
        assert!(choi.distance(&direct).unwrap() < 1e-10);
    }

    #[test]
    fn conditioned_gates_honor_xor_and_expressions() {
        let mut b = CircuitBuilder::new();
        let q0 = b.input_wire("q0", "n0", 2);
        let q1 = b.input_wire("q1", "n0", 2);
        let tgt = b.input_wire("t", "n0", 2);
        let b0 = b.measure(q0);
        let b1 = b.measure(q1);
        b.conditioned(
            CondExpr::xor(CondExpr::bit(b0.clone()), CondExpr::bit(b1.clone())),
            &[tgt],
            gates::x(),
        );
        b.conditioned(
            CondExpr::and(CondExpr::bit(b0), CondExpr::bit(b1)),
            &[tgt],
            gates::z(),
        );
        let c = b.build();
        // Input |1⟩|0⟩|0⟩: XOR fires, AND does not → target |1⟩.
        let trace = simulate(&c, &StateVector::basis(8, 0b100)).unwrap();
        assert_eq!(trace.branches.len(), 1);
        assert!((trace.branches[0].state.get(0b101).norm() - 1.0).abs() < 1e-12);
        // Input |1⟩|1⟩|0⟩: XOR silent, AND fires → phase only, target |0⟩.
        let trace = simulate(&c, &StateVector::basis(8, 0b110)).unwrap();
        assert!((trace.branches[0].state.get(0b110).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dealloc_rejects_entangled_wires() {
        let mut b = CircuitBuilder::new();
        let q0 = b.input_wire("q0", "n0", 2);
        let _q1 = b.input_wire("q1", "n0", 2);
        b.dealloc(q0);
        let c = b.build();
        let err = simulate(&c, &gates::bell_phi_plus()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn bits_are_single_assignment() {
        let mut b = CircuitBuilder::new();
        let q = b.input_wire("q", "n0", 2);
        b.gates.push(Gate::Measure {
            wire: q,
            bit: "k".into(),
        });
        b.gates.push(Gate::Measure {
            wire: q,
            bit: "k".into(),
        });
        let c = b.build();
        assert!(matches!(
            simulate(&c, &StateVector::basis(2, 0)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn dead_wire_reference_is_reported() {
        let mut b = CircuitBuilder::new();
        let q = b.input_wire("q", "n0", 2);
        let ghost = b.aux_wire("ghost", "n0", 2);
        b.unitary(&[q, ghost], gates::cnot());
        let c = b.build();
        let err = simulate(&c, &StateVector::basis(2, 0)).unwrap_err();
        assert!(err.to_string().contains("dead wire"));
    }

    #[test]
    fn circuit_json_round_trip() {
        let mut b = CircuitBuilder::new();
        let q0 = b.input_wire("q0", "alice", 2);
        let q1 = b.input_wire("q1", "bob", 2);
        let k = b.measure(q0);
        b.conditioned(CondExpr::bit(k), &[q1], gates::z());
        b.dealloc(q0);
        let c = b.build();
        let json = serde_json::to_string(&c).unwrap();
        let back: Circuit = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
        // Trace JSON carries states only on request.
        let trace = simulate(&back, &gates::bell_phi_plus()).unwrap();
        let with = trace.to_json(true);
        let without = trace.to_json(false);
        assert!(with["branches"][0].get("state").is_some());
        assert!(without["branches"][0].get("state").is_none());
    }

    #[test]
    fn qutrit_controls_are_supported() {
        // Controlled gate with a qutrit control: us[a] applied per level.
        let mut b = CircuitBuilder::new();
        let ctl = b.input_wire("ctl", "n0", 3);
        let tgt = b.input_wire("tgt", "n0", 2);
        b.controlled(
            &[ctl],
            &[tgt],
            vec![ComplexMatrix::identity(2), gates::x(), gates::z()],
        );
        let c = b.build();
        // |2⟩ ⊗ |1⟩ → Z on target: phase -1, basis unchanged.
        let mut amps = vec![c64(0.0, 0.0); 6];
        amps[2 * 2 + 1] = c64(1.0, 0.0);
        let trace = simulate(&c, &StateVector::new(amps).unwrap()).unwrap();
        let out = &trace.branches[0].state;
        assert!((out.get(5) - c64(-1.0, 0.0)).norm() < 1e-12);
        // |1⟩ ⊗ |0⟩ → X on target.
        let mut amps = vec![c64(0.0, 0.0); 6];
        amps[2] = c64(1.0, 0.0);
        let trace = simulate(&c, &StateVector::new(amps).unwrap()).unwrap();
        assert!((trace.branches[0].state.get(3).norm() - 1.0).abs() < 1e-12);
    }
}
