// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Figures of merit.
//!
//! Raw fidelities are plain functions of states, gates or pulses.
//! [`ObjectiveSpec`] ties one of them to penalties and an amplitude
//! constraint, and [`evaluate`] turns a set of control pulses into the
//! scalar `J` the optimizer maximizes.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, DensityMatrix, InitialState, Model, QuantumState};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c, pauli_x, pauli_y, pauli_z, CMatrix, C64, I, ONE, ZERO};
use crate::pulses::{self, Pulse, Spectrum};

const UNITARY_TOL: f64 = 1e-8;
const DIAGONAL_TOL: f64 = 1e-8;
const CHAMBER_TOL: f64 = 1e-9;

fn same_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// `|<target|psi>|^2`.
pub fn state_fidelity(state: &QuantumState, target: &QuantumState) -> Result<f64> {
    same_dim(target.dim(), state.dim())?;
    Ok(target.vector().dotc(state.vector()).norm_sqr())
}

/// `<target| rho |target>`.
pub fn mixed_fidelity(rho: &DensityMatrix, target: &QuantumState) -> Result<f64> {
    same_dim(target.dim(), rho.dim())?;
    let z = target.vector();
    Ok(z.dotc(&(rho.matrix() * z)).re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateFidelityMode {
    /// `(1/N) Re tr(U^dagger V)`; sensitive to the global phase.
    Re,
    /// `(1/N^2) |tr(U^dagger V)|^2`; global phase free.
    Sm,
    /// `(1/N^2) sum_kl |u_kl^* v_kl|^2`; ignores every element phase.
    Ss,
}

pub fn gate_fidelity(u: &CMatrix, v: &CMatrix, mode: GateFidelityMode) -> Result<f64> {
    if !u.is_square() || !v.is_square() {
        return Err(invalid("gates must be square"));
    }
    same_dim(v.nrows(), u.nrows())?;
    let n = u.nrows() as f64;
    Ok(match mode {
        GateFidelityMode::Re => (u.adjoint() * v).trace().re / n,
        GateFidelityMode::Sm => (u.adjoint() * v).trace().norm_sqr() / (n * n),
        GateFidelityMode::Ss => {
            u.iter()
                .zip(v.iter())
                .map(|(a, b)| (a.conj() * b).norm_sqr())
                .sum::<f64>()
                / (n * n)
        }
    })
}

/// Weyl-chamber coordinates of a two-qubit gate.
///
/// A gate `U` is locally equivalent to
/// `exp(i/2 (c1 XX + c2 YY + c3 ZZ))`. The representative returned by
/// [`local_invariants`] satisfies `pi/2 >= c1 >= c2 >= |c3|`, with `c3 >= 0`
/// whenever `c1 = pi/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalInvariants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl LocalInvariants {
    pub fn as_array(&self) -> [f64; 3] {
        [self.c1, self.c2, self.c3]
    }

    /// Coordinates in the chamber `pi >= c1 >= c2 >= c3 >= 0`,
    /// `c1 + c2 <= pi`, where the perfect-entangler inequalities are stated.
    pub fn unfolded(&self) -> [f64; 3] {
        if self.c3 < 0.0 {
            [PI - self.c1, self.c2, -self.c3]
        } else {
            self.as_array()
        }
    }

    pub fn max_abs_diff(&self, other: &LocalInvariants) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `exp(i/2 (c1 XX + c2 YY + c3 ZZ))`.
pub fn cartan_gate(c1: f64, c2: f64, c3: f64) -> CMatrix {
    let id = CMatrix::identity(4, 4);
    let factor = |theta: f64, p: &CMatrix| {
        let pp = linalg::kron(p, p);
        &id * C64::from((theta / 2.0).cos()) + pp * (I * (theta / 2.0).sin())
    };
    factor(c1, &pauli_x()) * factor(c2, &pauli_y()) * factor(c3, &pauli_z())
}

/// Columns are the Bell-type "magic" basis in which `SU(2) x SU(2)` acts as
/// `SO(4)`.
pub fn magic_basis() -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let r = C64::from(s);
    let i = c(0.0, s);
    CMatrix::from_row_slice(
        4,
        4,
        &[
            r, i, ZERO, ZERO, ZERO, ZERO, i, r, ZERO, ZERO, i, -r, r, -i, ZERO, ZERO,
        ],
    )
}

fn check_two_qubit_unitary(u: &CMatrix) -> Result<()> {
    if u.nrows() != 4 || u.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: u.nrows().max(u.ncols()),
        });
    }
    linalg::check_unitary(u, UNITARY_TOL)
}

/// `M = (Q^dagger U Q)^T (Q^dagger U Q)`, the local-invariant matrix.
fn magic_gram(u: &CMatrix) -> CMatrix {
    let q = magic_basis();
    let ub = q.adjoint() * u * &q;
    ub.transpose() * ub
}

/// Makhlin's invariants `(G1, G2)` with
/// `G1 = tr^2(M) / (16 det U)`, `G2 = (tr^2(M) - tr(M^2)) / (4 det U)`.
pub fn makhlin_invariants(u: &CMatrix) -> Result<(C64, f64)> {
    check_two_qubit_unitary(u)?;
    let m = magic_gram(u);
    let det = u.determinant();
    let tr = m.trace();
    let tr2 = (&m * &m).trace();
    let g1 = tr * tr / (det * 16.0);
    let g2 = (tr * tr - tr2) / (det * 4.0);
    Ok((g1, g2.re))
}

/// Reduces any coordinate triple to the canonical chamber representative.
pub fn canonicalize(c: [f64; 3]) -> LocalInvariants {
    // each c_j is defined modulo pi
    let mut negatives = 0;
    let mut v: Vec<f64> = c
        .iter()
        .map(|&x| {
            let mut y = x - PI * (x / PI).round();
            if y <= -FRAC_PI_2 + CHAMBER_TOL {
                y += PI;
            }
            if y < 0.0 {
                negatives += 1;
            }
            y.abs()
        })
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let (c1, c2, mut c3) = (v[0], v[1], v[2]);
    // pairs of signs flip freely; one leftover sign lives on the smallest
    // coordinate unless c1 = pi/2 or c3 = 0 absorbs it
    let absorbed = (c1 - FRAC_PI_2).abs() < CHAMBER_TOL || c3 < CHAMBER_TOL;
    if negatives % 2 == 1 && !absorbed {
        c3 = -c3;
    }
    LocalInvariants {
        c1: c1.min(FRAC_PI_2),
        c2,
        c3,
    }
}

/// Canonical Cartan coordinates of a two-qubit unitary.
///
/// `U` is first brought to `SU(4)`; in the magic basis the eigenphases
/// `2 lambda_k` of `M = U_B^T U_B` determine the coordinates through
/// `c1 = lambda_1 + lambda_3`, `c2 = lambda_2 + lambda_3`,
/// `c3 = lambda_1 + lambda_2`. Branch and ordering ambiguities are all local
/// equivalences and are removed by [`canonicalize`].
pub fn local_invariants(u: &CMatrix) -> Result<LocalInvariants> {
    check_two_qubit_unitary(u)?;
    let det = u.determinant();
    let su = u * C64::from_polar(1.0, -det.arg() / 4.0);
    let m = magic_gram(&su);
    let eig = m
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Numerical("Schur decomposition of the invariant matrix".into()))?;
    let mut lambda: Vec<f64> = eig.iter().map(|z| z.arg() / 2.0).collect();
    // the four half-phases sum to a multiple of pi; fix the branch so they
    // sum to zero exactly as for diag(exp(i lambda)) in SU(4)
    let total: f64 = lambda.iter().sum();
    let shift = PI * (total / PI).round();
    lambda[3] -= shift;
    let (l1, l2, l3) = (lambda[0], lambda[1], lambda[2]);
    Ok(canonicalize([l1 + l3, l2 + l3, l1 + l2]))
}

/// `prod_i cos(dc_i / 2)` between the closest unitary to `U` and `V`,
/// minus the distance to that unitary when `U` is not unitary.
pub fn nonlocal_fidelity(u: &CMatrix, v: &CMatrix) -> Result<f64> {
    if u.nrows() != 4 || u.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: u.nrows().max(u.ncols()),
        });
    }
    let cv = local_invariants(v)?;
    let closest = linalg::closest_unitary(u)?;
    let distance = (u - &closest).norm();
    let cu = local_invariants(&closest)?;
    let f: f64 = cu
        .as_array()
        .iter()
        .zip(cv.as_array())
        .map(|(a, b)| ((a - b) / 2.0).cos())
        .product();
    Ok(if distance > UNITARY_TOL {
        f - distance
    } else {
        f
    })
}

/// Whether the (unfolded) coordinates satisfy the perfect-entangler
/// inequalities.
pub fn is_perfect_entangler(inv: &LocalInvariants) -> bool {
    let [c1, c2, c3] = inv.unfolded();
    let tol = CHAMBER_TOL;
    c1 + c2 >= FRAC_PI_2 - tol && c1 - c2 <= FRAC_PI_2 + tol && c2 + c3 <= FRAC_PI_2 + tol
}

/// 1 inside the perfect-entangler polytope, otherwise the largest of
/// `cos^2((c1 + c2 - pi/2)/4)`, `cos^2((c1 - c2 - pi/2)/4)`,
/// `cos^2((c2 + c3 - pi/2)/4)`.
pub fn perfect_entangler_fidelity(u: &CMatrix) -> Result<f64> {
    let inv = local_invariants(u)?;
    Ok(perfect_entangler_value(&inv))
}

pub fn perfect_entangler_value(inv: &LocalInvariants) -> f64 {
    if is_perfect_entangler(inv) {
        return 1.0;
    }
    let [c1, c2, c3] = inv.unfolded();
    let sq = |x: f64| (x / 4.0).cos().powi(2);
    sq(c1 + c2 - FRAC_PI_2)
        .max(sq(c1 - c2 - FRAC_PI_2))
        .max(sq(c2 + c3 - FRAC_PI_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseGateMode {
    /// `(1/N) sum_i cos(dphi_i)`.
    #[default]
    Plain,
    /// `cos(dphi / 4)` with `dphi = dphi_1 - dphi_2 - dphi_3 + dphi_4`,
    /// blind to single-qubit phases.
    LocalPhase,
}

fn check_diagonal(m: &CMatrix) -> Result<()> {
    let off: f64 = m
        .iter()
        .enumerate()
        .filter(|(k, _)| k % m.nrows() != k / m.nrows())
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        .sqrt();
    if off > DIAGONAL_TOL {
        return Err(invalid(format!(
            "phase gate is not diagonal (off-diagonal norm {off:e})"
        )));
    }
    Ok(())
}

pub fn phase_gate_fidelity(u: &CMatrix, v: &CMatrix, mode: PhaseGateMode) -> Result<f64> {
    if !u.is_square() || !v.is_square() {
        return Err(invalid("gates must be square"));
    }
    same_dim(v.nrows(), u.nrows())?;
    check_diagonal(u)?;
    check_diagonal(v)?;
    let n = u.nrows();
    // e^{i dphi_k}
    let rel: Vec<C64> = (0..n).map(|k| u[(k, k)] * v[(k, k)].conj()).collect();
    match mode {
        PhaseGateMode::Plain => Ok(rel.iter().map(|z| z.arg().cos()).sum::<f64>() / n as f64),
        PhaseGateMode::LocalPhase => {
            same_dim(4, n)?;
            let combined = rel[0] * rel[1].conj() * rel[2].conj() * rel[3];
            Ok((combined.arg() / 4.0).cos())
        }
    }
}

/// Von Neumann entropy (nats) of the sites left of `cut`.
pub fn entanglement_entropy(state: &QuantumState, cut: usize, local_dims: &[usize]) -> Result<f64> {
    if cut == 0 || cut >= local_dims.len() {
        return Err(invalid(format!(
            "cut must lie in 1..{} for {} sites, got {cut}",
            local_dims.len(),
            local_dims.len()
        )));
    }
    let total: usize = local_dims.iter().product();
    same_dim(total, state.dim())?;
    let left: usize = local_dims[..cut].iter().product();
    let right = total / left;
    let psi = CMatrix::from_row_slice(left, right, state.vector().as_slice());
    let rho = &psi * psi.adjoint();
    Ok(rho
        .symmetric_eigenvalues()
        .iter()
        .filter(|&&p| p > 1e-14)
        .map(|&p| -p * p.ln())
        .sum())
}

/// `F(omega) = |int_0^T y(t) exp(-i omega t) dt|^2`, trapezoid rule.
pub fn filter_function(y: &Pulse, omegas: &[f64]) -> Vec<f64> {
    let grid = y.grid();
    let dt = grid.dt();
    let last = grid.steps();
    omegas
        .iter()
        .map(|&w| {
            let mut acc = ZERO;
            for (i, &v) in y.values().iter().enumerate() {
                let weight = if i == 0 || i == last { 0.5 } else { 1.0 };
                acc += C64::from_polar(weight * v, -w * grid.time(i));
            }
            (acc * dt).norm_sqr()
        })
        .collect()
}

/// Modulation function plus the noise spectrum it is weighed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub modulation: Pulse,
    pub spectrum: Spectrum,
}

fn check_spectrum(s: &Spectrum) -> Result<()> {
    if s.omegas.len() != s.values.len() {
        return Err(Error::GridMismatch(format!(
            "spectrum has {} frequencies and {} values",
            s.omegas.len(),
            s.values.len()
        )));
    }
    if s.omegas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch(
            "spectrum frequencies must increase".into(),
        ));
    }
    if s.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("noise spectrum must be finite and nonnegative"));
    }
    Ok(())
}

/// `chi(T) = int F(omega) S(omega) d omega` on the spectrum's frequency grid.
pub fn filter_overlap(spec: &FilterSpec) -> Result<f64> {
    check_spectrum(&spec.spectrum)?;
    let f = filter_function(&spec.modulation, &spec.spectrum.omegas);
    let w = &spec.spectrum.omegas;
    let s = &spec.spectrum.values;
    Ok((1..w.len())
        .map(|k| 0.5 * (f[k] * s[k] + f[k - 1] * s[k - 1]) * (w[k] - w[k - 1]))
        .sum())
}

/// Complex matrix target, serialized as row-major `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GateMatrix(#[serde(with = "linalg::json::matrix")] pub CMatrix);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    StateFidelity {
        target: QuantumState,
    },
    MixedFidelity {
        target: QuantumState,
    },
    GateRe {
        target: GateMatrix,
    },
    GateSm {
        target: GateMatrix,
    },
    GateSs {
        target: GateMatrix,
    },
    Nonlocal {
        target: GateMatrix,
    },
    PerfectEntangler,
    PhaseGate {
        target: GateMatrix,
        #[serde(default)]
        mode: PhaseGateMode,
    },
    Entropy {
        cut: usize,
        local_dims: Vec<usize>,
    },
    /// Decoherence integral of the first control as modulation function.
    /// Minimized (`J = -chi`) unless `maximize` is set.
    FilterOverlap {
        spectrum: Spectrum,
        #[serde(default)]
        maximize: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `lambda * max_t |f(t)|`.
    Height { lambda: f64 },
    /// `lambda * int_0^T f(t)^2 dt`, not normalized by `T`.
    Energy { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    None,
    HardWall {
        f_max: f64,
    },
    Rescale {
        f_max: f64,
    },
}

impl Constraint {
    pub fn apply(&self, pulse: &Pulse) -> Result<Pulse> {
        match *self {
            Constraint::None => Ok(pulse.clone()),
            Constraint::HardWall { f_max } => pulses::clip_hard_wall(pulse, f_max),
            Constraint::Rescale { f_max } => pulses::rescale_to_bound(pulse, f_max),
        }
    }

    pub fn bound(&self) -> Option<f64> {
        match *self {
            Constraint::None => None,
            Constraint::HardWall { f_max } | Constraint::Rescale { f_max } => Some(f_max),
        }
    }
}

/// Declarative figure of merit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(flatten)]
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub penalties: Vec<Penalty>,
    #[serde(default)]
    pub constraint: Constraint,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            penalties: Vec::new(),
            constraint: Constraint::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.penalties {
            let (Penalty::Height { lambda } | Penalty::Energy { lambda }) = *p;
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(invalid(format!(
                    "penalty weight must be >= 0, got {lambda}"
                )));
            }
        }
        if let Some(f_max) = self.constraint.bound() {
            if !(f_max.is_finite() && f_max > 0.0) {
                return Err(invalid(format!(
                    "constraint bound must be > 0, got {f_max}"
                )));
            }
        }
        if let ObjectiveKind::FilterOverlap { spectrum, .. } = &self.kind {
            check_spectrum(spectrum)?;
        }
        Ok(())
    }

    /// Whether the raw figure of merit needs the final propagator.
    fn needs_unitary(&self) -> bool {
        matches!(
            self.kind,
            ObjectiveKind::GateRe { .. }
                | ObjectiveKind::GateSm { .. }
                | ObjectiveKind::GateSs { .. }
                | ObjectiveKind::Nonlocal { .. }
                | ObjectiveKind::PerfectEntangler
                | ObjectiveKind::PhaseGate { .. }
        )
    }
}

/// Sum of the configured penalties for the given control pulses.
pub fn penalty_total(penalties: &[Penalty], pulses: &[Pulse]) -> f64 {
    penalties
        .iter()
        .map(|p| match *p {
            Penalty::Height { lambda } => {
                lambda * pulses.iter().map(Pulse::max_abs).fold(0.0, f64::max)
            }
            Penalty::Energy { lambda } => {
                lambda * pulses.iter().map(pulses::pulse_energy).sum::<f64>()
            }
        })
        // an empty float sum is -0.0
        .fold(0.0, |a, b| a + b)
}

/// `J = F - sum(penalties)`.
pub fn compose_objective(spec: &ObjectiveSpec, raw: f64, pulses: &[Pulse]) -> f64 {
    raw - penalty_total(&spec.penalties, pulses)
}

/// Raw value, penalty total and resulting `J` of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub raw: f64,
    pub penalty: f64,
    pub j: f64,
}

/// Simulates `pulses` and scores them. Pulses are taken as given; the
/// amplitude constraint is the caller's business.
pub fn evaluate(
    spec: &ObjectiveSpec,
    model: &Model,
    initial: &InitialState,
    pulses: &[Pulse],
) -> Result<Breakdown> {
    let raw = raw_figure(spec, model, initial, pulses)?;
    if !raw.is_finite() {
        return Err(Error::NonFinite("figure of merit".into()));
    }
    let penalty = penalty_total(&spec.penalties, pulses);
    Ok(Breakdown {
        raw,
        penalty,
        j: raw - penalty,
    })
}

fn raw_figure(
    spec: &ObjectiveSpec,
    model: &Model,
    initial: &InitialState,
    pulses: &[Pulse],
) -> Result<f64> {
    if let ObjectiveKind::FilterOverlap { spectrum, maximize } = &spec.kind {
        let modulation = pulses
            .first()
            .ok_or_else(|| invalid("filter objective needs a modulation pulse"))?
            .clone();
        let chi = filter_overlap(&FilterSpec {
            modulation,
            spectrum: spectrum.clone(),
        })?;
        return Ok(if *maximize { chi } else { -chi });
    }
    if spec.needs_unitary() {
        let start = QuantumState::basis(model.dim(), 0)?.into();
        let prop = dynamics::propagate(model, pulses, &start, true)?;
        let u = prop.unitary.expect("unitary was requested");
        return match &spec.kind {
            ObjectiveKind::GateRe { target } => gate_fidelity(&u, &target.0, GateFidelityMode::Re),
            ObjectiveKind::GateSm { target } => gate_fidelity(&u, &target.0, GateFidelityMode::Sm),
            ObjectiveKind::GateSs { target } => gate_fidelity(&u, &target.0, GateFidelityMode::Ss),
            ObjectiveKind::Nonlocal { target } => nonlocal_fidelity(&u, &target.0),
            ObjectiveKind::PerfectEntangler => perfect_entangler_fidelity(&u),
            ObjectiveKind::PhaseGate { target, mode } => phase_gate_fidelity(&u, &target.0, *mode),
            _ => unreachable!("needs_unitary covers only gate objectives"),
        };
    }
    let prop = dynamics::propagate(model, pulses, initial, false)?;
    match &spec.kind {
        ObjectiveKind::StateFidelity { target } => {
            let psi = prop
                .final_state()
                .ok_or_else(|| invalid("state fidelity needs a pure initial state"))?;
            state_fidelity(&psi, target)
        }
        ObjectiveKind::MixedFidelity { target } => mixed_fidelity(&prop.final_density(), target),
        ObjectiveKind::Entropy { cut, local_dims } => {
            let psi = prop
                .final_state()
                .ok_or_else(|| invalid("entropy objective needs a pure initial state"))?;
            entanglement_entropy(&psi, *cut, local_dims)
        }
        _ => unreachable!("gate and filter objectives handled above"),
    }
}

/// `2 <target|psi> |target>`: the costate whose overlap with a state
/// variation gives the first-order change of `|<target|psi>|^2`.
pub fn state_fidelity_costate(
    state: &QuantumState,
    target: &QuantumState,
) -> Result<linalg::CVector> {
    same_dim(target.dim(), state.dim())?;
    let overlap = target.vector().dotc(state.vector());
    Ok(target.vector() * (overlap * 2.0))
}

/// Bell-state preparation through a phase gate: local `3pi/2` x-rotations
/// `exp(-i theta X/2)` on both qubits, `diag(1, -1, -1, -1)`, then a `pi/2`
/// x-rotation of the opposite sense on qubit 2.
pub fn bell_synthesis_sequence() -> Vec<CMatrix> {
    let rx = |theta: f64| {
        let h = pauli_x() * C64::from(0.5);
        linalg::hermitian_propagator(&h, theta)
    };
    let id = CMatrix::identity(2, 2);
    let both = linalg::kron(&rx(1.5 * PI), &rx(1.5 * PI));
    let phase = CMatrix::from_diagonal(&linalg::CVector::from_vec(vec![ONE, -ONE, -ONE, -ONE]));
    let second = linalg::kron(&id, &rx(-FRAC_PI_2));
    vec![both, phase, second]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelSpec;
    use crate::linalg::CVector;
    use crate::pulses::TimeGrid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ket(v: &[C64]) -> QuantumState {
        QuantumState::normalized(CVector::from_vec(v.to_vec())).unwrap()
    }

    fn cnot() -> CMatrix {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = ONE;
        m[(1, 1)] = ONE;
        m[(2, 3)] = ONE;
        m[(3, 2)] = ONE;
        m
    }

    fn cz() -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_vec(vec![ONE, ONE, ONE, -ONE]))
    }

    fn swap() -> CMatrix {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = ONE;
        m[(1, 2)] = ONE;
        m[(2, 1)] = ONE;
        m[(3, 3)] = ONE;
        m
    }

    /// Haar-ish random SU(2) from a unit quaternion.
    fn random_su2(rng: &mut impl Rng) -> CMatrix {
        let q: Vec<f64> = (0..4).map(|_| dynamics::rand_distr_normal(rng)).collect();
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (a, b, cc, d) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        CMatrix::from_row_slice(2, 2, &[c(a, b), c(cc, d), c(-cc, d), c(a, -b)])
    }

    fn random_local(rng: &mut impl Rng) -> CMatrix {
        linalg::kron(&random_su2(rng), &random_su2(rng))
    }

    fn random_unitary4(rng: &mut impl Rng) -> CMatrix {
        let a = CMatrix::from_fn(4, 4, |_, _| {
            c(
                dynamics::rand_distr_normal(rng),
                dynamics::rand_distr_normal(rng),
            )
        });
        linalg::closest_unitary(&a).unwrap()
    }

    #[test]
    fn state_fidelity_examples() {
        let zero = ket(&[ONE, ZERO]);
        let one = ket(&[ZERO, ONE]);
        let plus = ket(&[ONE, ONE]);
        assert_relative_eq!(state_fidelity(&zero, &zero).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(state_fidelity(&zero, &one).unwrap(), 0.0);
        assert_relative_eq!(state_fidelity(&plus, &zero).unwrap(), 0.5, epsilon = 1e-15);
        let three = QuantumState::basis(3, 0).unwrap();
        assert!(state_fidelity(&three, &zero).is_err());
    }

    #[test]
    fn mixed_fidelity_examples() {
        let z = ket(&[ONE, c(0.0, 1.0)]);
        assert_relative_eq!(
            mixed_fidelity(&z.to_density(), &z).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        let mm = DensityMatrix::maximally_mixed(2);
        assert_relative_eq!(mixed_fidelity(&mm, &z).unwrap(), 0.5, epsilon = 1e-15);

        let model = dynamics::build_model(&ModelSpec::DecayingQubit {
            delta_omega: 0.4,
            gamma: 0.25,
        })
        .unwrap();
        let pulse = Pulse::constant(TimeGrid::new(4.0, 30).unwrap(), 0.0).unwrap();
        let one = QuantumState::basis(2, 1).unwrap();
        let rho = dynamics::propagate(&model, &[pulse], &one.to_density().into(), false)
            .unwrap()
            .final_density();
        assert_relative_eq!(
            mixed_fidelity(&rho, &one).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn gate_fidelity_examples() {
        let mut rng = crate::seed::rng(1);
        let v = random_unitary4(&mut rng);
        for mode in [GateFidelityMode::Re, GateFidelityMode::Sm] {
            assert_relative_eq!(gate_fidelity(&v, &v, mode).unwrap(), 1.0, epsilon = 1e-12);
        }
        let theta = 0.7;
        let u = &v * C64::from_polar(1.0, theta);
        assert_relative_eq!(
            gate_fidelity(&u, &v, GateFidelityMode::Sm).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            gate_fidelity(&u, &v, GateFidelityMode::Re).unwrap(),
            theta.cos(),
            epsilon = 1e-12
        );
        assert!(gate_fidelity(&v, &CMatrix::identity(2, 2), GateFidelityMode::Re).is_err());
    }

    #[test]
    fn gate_ss_of_cnot_against_cz_by_explicit_sum() {
        let (u, v) = (cnot(), cz());
        let mut sum = 0.0;
        for k in 0..4 {
            for l in 0..4 {
                let prod = u[(k, l)].conj() * v[(k, l)];
                sum += prod.re * prod.re + prod.im * prod.im;
            }
        }
        // the two diagonal 1 entries overlap
        assert_eq!(sum, 2.0);
        assert_relative_eq!(
            gate_fidelity(&u, &v, GateFidelityMode::Ss).unwrap(),
            sum / 16.0,
            epsilon = 1e-15
        );
    }

    fn assert_invariants(u: &CMatrix, expected: [f64; 3]) {
        let inv = local_invariants(u).unwrap();
        for (a, b) in inv.as_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{inv:?} vs {expected:?}");
        }
    }

    /// Independent route: Makhlin invariants of the gate and of the Cartan
    /// gate rebuilt from the returned coordinates must agree.
    fn assert_makhlin_consistent(u: &CMatrix) {
        let inv = local_invariants(u).unwrap();
        let rebuilt = cartan_gate(inv.c1, inv.c2, inv.c3);
        let (g1a, g2a) = makhlin_invariants(u).unwrap();
        let (g1b, g2b) = makhlin_invariants(&rebuilt).unwrap();
        assert!((g1a - g1b).norm() < 1e-9, "G1 {g1a} vs {g1b}");
        assert!((g2a - g2b).abs() < 1e-9, "G2 {g2a} vs {g2b}");
    }

    #[test]
    fn invariants_of_standard_gates() {
        // Makhlin values: identity (1, 3), CNOT (0, 1), SWAP (-1, -3)
        let (g1, g2) = makhlin_invariants(&CMatrix::identity(4, 4)).unwrap();
        assert!((g1 - ONE).norm() < 1e-12 && (g2 - 3.0).abs() < 1e-12);
        let (g1, g2) = makhlin_invariants(&cnot()).unwrap();
        assert!(g1.norm() < 1e-12 && (g2 - 1.0).abs() < 1e-12);
        let (g1, g2) = makhlin_invariants(&swap()).unwrap();
        assert!((g1 + ONE).norm() < 1e-12 && (g2 + 3.0).abs() < 1e-12);

        assert_invariants(&CMatrix::identity(4, 4), [0.0, 0.0, 0.0]);
        assert_invariants(&cnot(), [FRAC_PI_2, 0.0, 0.0]);
        assert_invariants(&cz(), [FRAC_PI_2, 0.0, 0.0]);
        assert_invariants(&swap(), [FRAC_PI_2, FRAC_PI_2, FRAC_PI_2]);
        for g in [CMatrix::identity(4, 4), cnot(), swap()] {
            assert_makhlin_consistent(&g);
        }
    }

    #[test]
    fn invariants_recover_chamber_coordinates_with_chirality() {
        let mut rng = crate::seed::rng(5);
        for _ in 0..50 {
            let c1 = rng.gen_range(0.05..FRAC_PI_2 - 0.05);
            let c2 = rng.gen_range(0.02..c1);
            let c3 = rng.gen_range(-c2..c2);
            let u = random_local(&mut rng)
                * cartan_gate(c1, c2, c3)
                * random_local(&mut rng)
                * C64::from_polar(1.0, rng.gen_range(0.0..6.0));
            assert_invariants(&u, [c1, c2, c3]);
        }
    }

    #[test]
    fn invariants_reject_bad_input() {
        assert!(local_invariants(&CMatrix::identity(2, 2)).is_err());
        let mut m = CMatrix::identity(4, 4);
        m[(0, 0)] = c(1.1, 0.0);
        assert!(matches!(local_invariants(&m), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn random_gates_match_makhlin_oracle() {
        let mut rng = crate::seed::rng(17);
        for _ in 0..100 {
            assert_makhlin_consistent(&random_unitary4(&mut rng));
        }
    }

    #[test]
    fn nonlocal_fidelity_examples() {
        let mut rng = crate::seed::rng(3);
        let v = random_unitary4(&mut rng);
        assert_relative_eq!(nonlocal_fidelity(&v, &v).unwrap(), 1.0, epsilon = 1e-12);
        let id = CMatrix::identity(2, 2);
        for _ in 0..10 {
            let (r, r2) = (random_su2(&mut rng), random_su2(&mut rng));
            let u = linalg::kron(&id, &r) * &v * linalg::kron(&r2, &id);
            assert!((nonlocal_fidelity(&u, &v).unwrap() - 1.0).abs() < 1e-8);
        }
        assert!((nonlocal_fidelity(&cnot(), &cz()).unwrap() - 1.0).abs() < 1e-8);
        assert!(nonlocal_fidelity(&cnot(), &swap()).unwrap() < 0.99);
    }

    #[test]
    fn nonlocal_fidelity_penalizes_non_unitary_input() {
        let scaled = cnot() * C64::from(0.9);
        let f = nonlocal_fidelity(&scaled, &cz()).unwrap();
        // closest unitary is CNOT itself, at Frobenius distance 0.1 * 2
        assert_relative_eq!(f, 1.0 - 0.2, epsilon = 1e-10);
    }

    #[test]
    fn perfect_entangler_examples() {
        assert_eq!(perfect_entangler_fidelity(&cnot()).unwrap(), 1.0);
        let expected = (PI / 8.0).cos().powi(2);
        assert_relative_eq!(
            perfect_entangler_fidelity(&CMatrix::identity(4, 4)).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert!(!is_perfect_entangler(&local_invariants(&swap()).unwrap()));
        // (pi/2, pi/2, pi/2): terms cos^2(pi/8), cos^2(-pi/8), cos^2(pi/8)
        let swap_expected = [PI - FRAC_PI_2, -FRAC_PI_2, PI - FRAC_PI_2]
            .iter()
            .map(|x| (x / 4.0).cos().powi(2))
            .fold(0.0, f64::max);
        assert_relative_eq!(
            perfect_entangler_fidelity(&swap()).unwrap(),
            swap_expected,
            epsilon = 1e-9
        );
        // sqrt(SWAP) at (pi/4, pi/4, pi/4) is a perfect entangler
        assert_eq!(
            perfect_entangler_fidelity(&cartan_gate(PI / 4.0, PI / 4.0, PI / 4.0)).unwrap(),
            1.0
        );
    }

    #[test]
    fn perfect_entangler_is_continuous_along_paths() {
        // straight lines in c-space realized by Cartan gates, crossing the
        // polytope boundary
        let paths = [
            ([0.0, 0.0, 0.0], [FRAC_PI_2, 0.0, 0.0]),
            (
                [FRAC_PI_2, FRAC_PI_2, 0.0],
                [FRAC_PI_2, FRAC_PI_2, FRAC_PI_2],
            ),
            ([0.1, 0.05, 0.0], [1.2, 0.9, 0.3]),
        ];
        for (a, b) in paths {
            let steps = 2000;
            let mut prev: Option<f64> = None;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let p: Vec<f64> = (0..3).map(|k| a[k] + t * (b[k] - a[k])).collect();
                let f = perfect_entangler_fidelity(&cartan_gate(p[0], p[1], p[2])).unwrap();
                if let Some(q) = prev {
                    assert!((f - q).abs() < 2e-3, "jump {q} -> {f} at {p:?}");
                }
                prev = Some(f);
            }
        }
        // value on the boundary itself equals 1 from both formulas
        let on = LocalInvariants {
            c1: 0.9,
            c2: FRAC_PI_2 - 0.9,
            c3: 0.1,
        };
        assert_eq!(perfect_entangler_value(&on), 1.0);
        let just_out = LocalInvariants {
            c1: 0.9,
            c2: FRAC_PI_2 - 0.9 - 1e-7,
            c3: 0.1,
        };
        assert!((perfect_entangler_value(&just_out) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phase_gate_examples() {
        let v = cz();
        for mode in [PhaseGateMode::Plain, PhaseGateMode::LocalPhase] {
            assert_relative_eq!(
                phase_gate_fidelity(&v, &v, mode).unwrap(),
                1.0,
                epsilon = 1e-15
            );
        }
        let u = CMatrix::from_diagonal(&CVector::from_vec(vec![-ONE, ONE, ONE, -ONE]));
        assert_relative_eq!(
            phase_gate_fidelity(&u, &v, PhaseGateMode::LocalPhase).unwrap(),
            (PI / 4.0).cos(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            phase_gate_fidelity(&u, &v, PhaseGateMode::Plain).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert!(phase_gate_fidelity(&cnot(), &v, PhaseGateMode::Plain).is_err());
    }

    #[test]
    fn local_phases_leave_local_phase_fidelity_at_one() {
        let mut rng = crate::seed::rng(8);
        let v = CMatrix::from_diagonal(&CVector::from_iterator(
            4,
            (0..4).map(|_| C64::from_polar(1.0, rng.gen_range(-PI..PI))),
        ));
        for _ in 0..20 {
            let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let q1 = CMatrix::from_diagonal(&CVector::from_vec(vec![
                C64::from_polar(1.0, s[0]),
                C64::from_polar(1.0, s[1]),
            ]));
            let q2 = CMatrix::from_diagonal(&CVector::from_vec(vec![
                C64::from_polar(1.0, s[2]),
                C64::from_polar(1.0, s[3]),
            ]));
            let u = linalg::kron(&q1, &q2) * &v;
            assert_relative_eq!(
                phase_gate_fidelity(&u, &v, PhaseGateMode::LocalPhase).unwrap(),
                1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn entropy_examples() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let product = QuantumState::basis(4, 0).unwrap();
        assert_eq!(entanglement_entropy(&product, 1, &[2, 2]).unwrap(), 0.0);
        let bell = ket(&[C64::from(s), ZERO, ZERO, C64::from(s)]);
        assert_relative_eq!(
            entanglement_entropy(&bell, 1, &[2, 2]).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
        let mut ghz = vec![ZERO; 8];
        ghz[0] = ONE;
        ghz[7] = ONE;
        let ghz = ket(&ghz);
        for cut in 1..3 {
            assert_relative_eq!(
                entanglement_entropy(&ghz, cut, &[2, 2, 2]).unwrap(),
                2f64.ln(),
                epsilon = 1e-12
            );
        }
        assert!(entanglement_entropy(&ghz, 0, &[2, 2, 2]).is_err());
        assert!(entanglement_entropy(&ghz, 1, &[2, 3]).is_err());
    }

    #[test]
    fn ghz_reduced_state_by_partial_trace() {
        // explicit partial trace oracle for qubit 0 of GHZ_3
        let mut amp = vec![ZERO; 8];
        amp[0] = ONE;
        amp[7] = ONE;
        let psi = ket(&amp);
        let mut rho = CMatrix::zeros(2, 2);
        for a in 0..2 {
            for b in 0..2 {
                for rest in 0..4 {
                    rho[(a, b)] += psi.vector()[a * 4 + rest] * psi.vector()[b * 4 + rest].conj();
                }
            }
        }
        let eig = rho.symmetric_eigenvalues();
        let s: f64 = eig
            .iter()
            .filter(|p| **p > 1e-14)
            .map(|p| -p * p.ln())
            .sum();
        assert_relative_eq!(
            entanglement_entropy(&psi, 1, &[2, 2, 2]).unwrap(),
            s,
            epsilon = 1e-12
        );
    }

    #[test]
    fn filter_function_of_rectangle() {
        let t = 2.0;
        let y = Pulse::constant(TimeGrid::new(t, 4001).unwrap(), 1.0).unwrap();
        let f0 = filter_function(&y, &[0.0]);
        assert_relative_eq!(f0[0], t * t, max_relative = 1e-12);
        let omegas = [0.3, 1.0, 2.5, 7.0];
        for (w, f) in omegas.iter().zip(filter_function(&y, &omegas)) {
            let exact = 4.0 * (w * t / 2.0).sin().powi(2) / (w * w);
            assert!((f - exact).abs() < 1e-5 * t * t, "{w}: {f} vs {exact}");
        }
    }

    #[test]
    fn filter_overlap_zero_spectrum() {
        let y = Pulse::constant(TimeGrid::new(1.0, 101).unwrap(), 1.0).unwrap();
        let spectrum = Spectrum {
            omegas: vec![0.0, 1.0, 2.0],
            values: vec![0.0; 3],
        };
        assert_eq!(
            filter_overlap(&FilterSpec {
                modulation: y.clone(),
                spectrum
            })
            .unwrap(),
            0.0
        );
        let flat = Spectrum {
            omegas: vec![0.0, 0.5],
            values: vec![1.0, 1.0],
        };
        assert!(
            filter_overlap(&FilterSpec {
                modulation: y.clone(),
                spectrum: flat
            })
            .unwrap()
                > 0.0
        );
        let bad = Spectrum {
            omegas: vec![0.0, 1.0],
            values: vec![1.0],
        };
        assert!(filter_overlap(&FilterSpec {
            modulation: y,
            spectrum: bad
        })
        .is_err());
    }

    #[test]
    fn compose_objective_examples() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let p = Pulse::new(g, vec![0.1, -0.3, 0.2]).unwrap();
        let target = QuantumState::basis(2, 0).unwrap();
        let mut spec = ObjectiveSpec::new(ObjectiveKind::StateFidelity { target });
        assert_eq!(compose_objective(&spec, 0.9, std::slice::from_ref(&p)), 0.9);
        spec.penalties.push(Penalty::Height { lambda: 1.0 });
        assert_relative_eq!(compose_objective(&spec, 0.9, &[p]), 0.6, epsilon = 1e-15);
        spec.penalties = vec![Penalty::Energy { lambda: 3.0 }];
        let zero = Pulse::constant(g, 0.0).unwrap();
        assert_eq!(compose_objective(&spec, 0.9, &[zero]), 0.9);
        // energy penalty is int f^2 dt, no 1/T
        let long = Pulse::constant(TimeGrid::new(2.0, 5).unwrap(), 1.0).unwrap();
        assert_relative_eq!(
            compose_objective(&spec, 0.0, &[long]),
            -6.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn objective_spec_json() {
        let json = r#"{"kind":"state_fidelity","target":[[0,0],[1,0]],
                       "penalties":[{"height":{"lambda":0.1}}],
                       "constraint":{"mode":"rescale","f_max":2.0}}"#;
        let spec: ObjectiveSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.constraint, Constraint::Rescale { f_max: 2.0 });
        assert_eq!(spec.penalties, vec![Penalty::Height { lambda: 0.1 }]);
        let back: ObjectiveSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let pe: ObjectiveSpec = serde_json::from_str(r#"{"kind":"perfect_entangler"}"#).unwrap();
        assert_eq!(pe.constraint, Constraint::None);
        let bad = ObjectiveSpec {
            penalties: vec![Penalty::Energy { lambda: -1.0 }],
            ..pe
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bell_synthesis_reaches_bell_state() {
        let mut psi = CVector::zeros(4);
        psi[0] = ONE;
        for g in bell_synthesis_sequence() {
            psi = g * psi;
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = ket(&[C64::from(s), ZERO, ZERO, C64::from(s)]);
        let out = QuantumState::new(psi).unwrap();
        assert!((state_fidelity(&out, &bell).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn evaluate_gate_objective_through_dynamics() {
        // exp(-i J T ZZ) with J T = pi/4 is locally a CZ
        let zz = linalg::kron(&pauli_z(), &pauli_z());
        let model = Model::new(zz, vec![linalg::embed(&pauli_x(), 0, 2)], vec![], "zz").unwrap();
        let pulse = Pulse::constant(TimeGrid::new(PI / 4.0, 11).unwrap(), 0.0).unwrap();
        let spec = ObjectiveSpec::new(ObjectiveKind::Nonlocal {
            target: GateMatrix(cz()),
        });
        let start = QuantumState::basis(4, 0).unwrap().into();
        let b = evaluate(&spec, &model, &start, &[pulse]).unwrap();
        assert!((b.j - 1.0).abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn invariants_are_local_invariant(seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let u = random_unitary4(&mut rng);
            let base = local_invariants(&u).unwrap();
            let dressed = random_local(&mut rng) * &u * random_local(&mut rng);
            let inv = local_invariants(&dressed).unwrap();
            prop_assert!(inv.max_abs_diff(&base) < 1e-8, "{:?} vs {:?}", inv, base);
        }

        #[test]
        fn fidelities_are_bounded(seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let u = random_unitary4(&mut rng);
            let v = random_unitary4(&mut rng);
            for mode in [GateFidelityMode::Sm, GateFidelityMode::Ss] {
                let f = gate_fidelity(&u, &v, mode).unwrap();
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
            }
            let re = gate_fidelity(&u, &v, GateFidelityMode::Re).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&re));
            let nl = nonlocal_fidelity(&u, &v).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&nl));
            let pe = perfect_entangler_fidelity(&u).unwrap();
            prop_assert!((0.0..=1.0).contains(&pe));
            let phase = C64::from_polar(1.0, rng.gen_range(-PI..PI));
            let sm = gate_fidelity(&(&u * phase), &v, GateFidelityMode::Sm).unwrap();
            prop_assert!((sm - gate_fidelity(&u, &v, GateFidelityMode::Sm).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn nonlocal_one_iff_same_invariants(seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let u = random_unitary4(&mut rng);
            let v = random_unitary4(&mut rng);
            let same = random_local(&mut rng) * &u * random_local(&mut rng);
            prop_assert!((nonlocal_fidelity(&same, &u).unwrap() - 1.0).abs() < 1e-8);
            let dc = local_invariants(&u).unwrap().max_abs_diff(&local_invariants(&v).unwrap());
            let f = nonlocal_fidelity(&u, &v).unwrap();
            prop_assert_eq!(dc < 1e-8, (f - 1.0).abs() < 1e-8);
        }

        #[test]
        fn entropy_is_bounded(seed in any::<u64>()) {
            let psi = QuantumState::random(12, seed).unwrap();
            let s = entanglement_entropy(&psi, 1, &[3, 4]).unwrap();
            prop_assert!(s >= -1e-12 && s <= 3f64.ln() + 1e-12);
        }
    }
}
