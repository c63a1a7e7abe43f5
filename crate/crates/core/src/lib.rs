// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Derivative-free quantum optimal control.
//!
//! Pulses are expanded in small randomized Fourier bases (CRAB) and refined
//! through a sequence of basis changes ("super-iterations", dCRAB), each one
//! searched with a Nelder-Mead simplex. The crate bundles everything needed
//! to run such optimizations end to end:
//!
//! - [`pulses`]: time grids, random chopped bases, pulse assembly and
//!   amplitude constraints.
//! - [`dynamics`]: dense Schrödinger and Lindblad propagation for small
//!   systems plus a model library.
//! - [`objectives`]: state and gate fidelities, two-qubit local invariants,
//!   entanglement entropy, filter functions and penalties.
//! - [`optimizer`]: the simplex search and the CRAB / dCRAB drivers.
//! - [`diagnostics`]: speed limits, channel capacities and information
//!   bounds on the reachable control error.
//! - [`loop_server`]: closed-loop optimization against an external
//!   figure-of-merit oracle over TCP or an exchange directory.

// `!(x > y)` deliberately treats NaN as a failed check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod loop_server;
pub mod objectives;
pub mod optimizer;
pub mod pulses;
pub mod seed;

pub use error::{Error, Result};
