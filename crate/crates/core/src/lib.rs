//! Exact diagonalization of spin-1 tilted-field Ising chains and
//! eigenstate-thermalization diagnostics built on top of it.
//!
//! The crate is organised bottom-up:
//!
//! - [`hilbert`]: spin-1 matrices, tensor-product embedding, Hamiltonians
//!   and observables as dense real matrices.
//! - [`symmetry`]: one-site translations, quasimomentum sectors and the
//!   block-diagonal form of the periodic Hamiltonian.
//! - [`spectra`]: diagonalization, thermal averages, the Heisenberg
//!   frequency and finite-size scaling fits.
//! - [`eth`]: eigenbasis matrix elements, spectral functions and their
//!   distance / quasimomentum decompositions, and the windowed extraction
//!   of the momentum-resolved ETH function.
//!
//! Basis states of an `L`-site chain are labelled by base-3 integers with
//! site 1 as the most significant trit; trit values `0, 1, 2` stand for
//! `S_z = +1, 0, -1`.

extern crate openblas_src;

pub mod error;
pub mod eth;
pub mod hilbert;
pub mod linalg;
pub mod spectra;
pub mod symmetry;

pub use error::{Error, Result};
pub use hilbert::{Axis, Boundary, ChainSpec, DenseOperator, ObservableSpec, Support};
pub use spectra::EigenSystem;
pub use symmetry::{BlockEigenSystem, MomentumSector};
