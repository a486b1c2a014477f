//! Quench dynamics of free lattice fermions and stationary ensemble
//! approximations of the long-time state.
//!
//! The pipeline is: build the superlattice Hamiltonian ([`lattice`]), express
//! the pre-quench Slater determinant in the post-quench modes, enumerate the
//! diagonal ensemble over Fock configurations ([`fock`]), fit GGE, GCE and
//! correlated GGE models ([`fit`]) and compare them ([`metrics`]).

pub mod error;
pub mod fit;
pub mod fock;
pub mod lattice;
pub mod metrics;
pub mod sum;

pub use error::{Error, Result};
