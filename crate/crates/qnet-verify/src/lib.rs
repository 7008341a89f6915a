//! qnet-verify: a verification toolkit for distributed quantum information
//! protocols.
//!
//! The crate verifies, end to end and against explicit numerical tolerances:
//!
//! * dense complex linear algebra with strict shape/finiteness invariants
//!   ([`tensor_core`]);
//! * channels in the Choi representation, quantum instruments, unitary
//!   dilations and separable-operator decompositions ([`quantum_ops`]);
//! * Schmidt and canonical two-qubit decompositions ([`decomp`]);
//! * a branching state-vector circuit simulator with classical control and
//!   LOCC transcript validation ([`circuit_sim`]);
//! * quantum network-coding protocols on cluster and butterfly networks,
//!   ladder-form implementability deciders, and focused gflow search
//!   ([`netcode`]);
//! * LOCC* maps (LOCC with a classical no-signaling resource), loop-form and
//!   separable-map embeddings, and process-matrix validity ([`locc_star`]);
//! * local discrimination of product bases and the entanglement cost gap
//!   between one-way and two-way protocols ([`discrimination`]).
//!
//! All verdicts carry the tolerance they were checked against.  Every
//! randomized routine takes an explicit seed and is deterministic given that
//! seed.

pub mod circuit_sim;
pub mod decomp;
pub mod error;
pub mod netcode;
pub mod quantum_ops;
pub mod sampling;
pub mod tensor_core;

pub use error::{Error, Result};

/// Hard cap on the total Hilbert-space dimension of any materialized state or
/// operator (2^12).  Constructors that would exceed it return
/// [`Error::Unsupported`].
pub const MAX_TOTAL_DIM: usize = 1 << 12;

/// Default absolute tolerance (Frobenius distance) for equality predicates.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Version string embedded in every CLI report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
