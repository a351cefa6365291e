//! Desk-scale simulation and analysis of counter-propagating decoherence-free
//! subspace (DFS) entanglement distribution.
//!
//! The crate is layered bottom-up:
//!
//! - [`polarization`]: qubit kets, density matrices, Jones matrices, optical
//!   elements and fidelities.
//! - [`protocol`]: the idealized single-ancilla DFS protocol (collective
//!   noise, PBS post-selection, quantum parity check, phase correction) and
//!   the transmittance-scaling experiment.
//! - [`fock`]: a truncated multi-mode Fock-space simulator used as an
//!   independent oracle for the multi-photon model.
//! - [`model`]: closed-form coincidence probabilities, visibilities and
//!   fidelity under multi-photon noise, plus parameter estimation from counts.
//! - [`timetag`]: Monte Carlo time-tag streams and the coincidence
//!   post-processing chain.
//! - [`tomography`]: two-qubit state tomography with iterative maximum
//!   likelihood reconstruction.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fock;
pub mod model;
pub mod polarization;
pub mod protocol;
pub mod rng;
pub mod timetag;
pub mod tomography;

pub use error::{Error, Result};
pub use num_complex::Complex64;
