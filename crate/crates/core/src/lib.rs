//! Coupled-cluster downfolding and quantum-flow solvers at desk scale.
//!
//! The crate builds effective Hamiltonians over small complete active spaces,
//! runs coupled variational flows with single-shot commutator gradients, and
//! ships brute-force oracles (exact diagonalization, resolvent perturbation
//! theory, finite differences) so every structural claim can be checked
//! against an independent route.

pub mod active_space;
pub mod cluster;
pub mod downfolding;
pub mod error;
pub mod flow;
pub mod fock;
pub mod hamiltonian;
pub mod integrals;
pub mod linop;
pub mod oracle;
pub mod perturbative;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
