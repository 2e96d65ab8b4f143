//! Power-system dynamics solved two ways: classical explicit integrators and
//! an emulated quantum pipeline (amplitude encoding, quadratized dynamics,
//! Von-Neumann Hamiltonian evolution, HHL linear update).

pub mod expr;
pub mod qcore;
pub mod hhl;
pub mod dae;
pub mod classical;
pub mod qsolve;
pub mod powsys;
pub mod cli;
