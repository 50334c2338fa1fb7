//! Lagrangian particle solver and verification harness for non-local
//! transport equations `ρ_t + v·∇ρ = 0`, `v = k∗ρ`, with `k` homogeneous of
//! degree `-(n-1)` and smooth away from the origin.
//!
//! The crate is organised by subsystem:
//!
//! - [`kernels`]: the admissible kernel family, derivative kernels and the
//!   Dirac correction matrix.
//! - [`function_spaces`]: Hölder and Zygmund (semi)norms of sampled fields,
//!   vanishing moduli and randomized inequality verifiers.
//! - [`singular_integrals`]: lattice quadrature for `k∗f` and the
//!   principal-value operator `p.v. ∂_i k_j ∗ f`.
//! - [`flow`]: the marker lattice, flow-map integrators and density
//!   reconstruction.
//! - [`experiments`]: continuity sweeps, convergence studies and the lemma
//!   suite.
//! - [`config`], [`output`] and [`runner`]: run configuration, CSV/JSON
//!   persistence and command execution.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod flow;
pub mod function_spaces;
mod grid;
pub mod kernels;
pub mod lattice;
mod nbody;
pub mod output;
pub mod quadrature;
pub mod runner;
pub mod singular_integrals;
pub mod stats;

pub use error::{Error, Result};
pub use kernels::{Builtin, KernelSpec};
pub use lattice::Lattice;
