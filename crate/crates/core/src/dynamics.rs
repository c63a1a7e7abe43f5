// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Dense propagation of closed and open quantum dynamics.
//!
//! Controls are piecewise constant: on grid interval `k` each control takes
//! the average of its two end samples. A closed step is the exact propagator
//! `exp(-i H dt)` of that constant Hamiltonian; an open step is `exp(L dt)`
//! of the vectorized Lindblad generator. Both are second order in the grid
//! spacing for smooth pulses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    self, embed, expm, hermitian_propagator, kron, pauli_x, pauli_z, sigma_minus, CMatrix, CVector,
    C64, ONE,
};
use crate::pulses::{Pulse, TimeGrid};
use crate::seed;

/// Largest Hilbert-space dimension the dense backend accepts (5 qubits).
pub const MAX_DIM: usize = 32;
const HERMITIAN_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-10;

/// Reconstructible description of a library model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `H_0 = (delta_omega / 2) sigma_z`, `H_1 = sigma_x / 2`.
    TwoLevel { delta_omega: f64 },
    /// Nearest-neighbour `zz` couplings and local `z` fields drawn uniformly
    /// from `[-1, 1]`, one global `x` control.
    RandomIsing { qubits: usize, seed: u64 },
    /// Two-level model with amplitude damping `sigma_-` at rate `gamma`.
    DecayingQubit { delta_omega: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseOp {
    #[serde(with = "linalg::json::matrix")]
    pub op: CMatrix,
    pub rate: f64,
}

/// Drift, control and collapse operators of a controlled system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct Model {
    label: String,
    spec: Option<ModelSpec>,
    drift: CMatrix,
    controls: Vec<CMatrix>,
    collapse: Vec<CollapseOp>,
}

impl Model {
    pub fn new(
        drift: CMatrix,
        controls: Vec<CMatrix>,
        collapse: Vec<CollapseOp>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = drift.nrows();
        if n == 0 || n > MAX_DIM {
            return Err(Error::Unsupported(format!(
                "dense backend supports dimensions 1..={MAX_DIM}, got {n}"
            )));
        }
        let square = |m: &CMatrix| {
            if m.nrows() != n || m.ncols() != n {
                Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.nrows().max(m.ncols()),
                })
            } else {
                Ok(())
            }
        };
        for h in std::iter::once(&drift).chain(&controls) {
            square(h)?;
            let dev = linalg::hermiticity_error(h);
            if dev > HERMITIAN_TOL {
                return Err(Error::NotHermitian(dev));
            }
        }
        for c in &collapse {
            square(&c.op)?;
            if !(c.rate.is_finite() && c.rate >= 0.0) {
                return Err(invalid(format!(
                    "collapse rate must be >= 0, got {}",
                    c.rate
                )));
            }
        }
        Ok(Self {
            label: label.into(),
            spec: None,
            drift,
            controls,
            collapse,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn drift(&self) -> &CMatrix {
        &self.drift
    }

    pub fn controls(&self) -> &[CMatrix] {
        &self.controls
    }

    pub fn collapse_ops(&self) -> &[CollapseOp] {
        &self.collapse
    }

    pub fn is_open(&self) -> bool {
        !self.collapse.is_empty()
    }

    /// `H_0 + sum_k u_k H_k`.
    pub fn hamiltonian(&self, amplitudes: &[f64]) -> CMatrix {
        let mut h = self.drift.clone();
        for (u, hk) in amplitudes.iter().zip(&self.controls) {
            h += hk * C64::from(*u);
        }
        h
    }

    /// Vectorized (column stacking) Lindblad generator for fixed amplitudes.
    pub fn lindbladian(&self, amplitudes: &[f64]) -> CMatrix {
        let n = self.dim();
        let id = CMatrix::identity(n, n);
        let h = self.hamiltonian(amplitudes);
        let mut gen = (kron(&id, &h) - kron(&h.transpose(), &id)) * C64::new(0.0, -1.0);
        for c in &self.collapse {
            if c.rate == 0.0 {
                continue;
            }
            let l = &c.op;
            let ldl = l.adjoint() * l;
            let g = C64::from(c.rate);
            gen += (kron(&l.conjugate(), l)
                - (kron(&id, &ldl) + kron(&ldl.transpose(), &id)) * C64::from(0.5))
                * g;
        }
        gen
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    #[serde(default)]
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix")]
    drift: Option<CMatrix>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "opt_matrices"
    )]
    controls: Option<Vec<CMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    collapse: Option<Vec<CollapseOp>>,
}

mod opt_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &Option<CMatrix>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(linalg::json::matrix_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<CMatrix>, D::Error> {
        use serde::de::Error as _;
        Option::<Vec<Vec<[f64; 2]>>>::deserialize(d)?
            .map(|rows| linalg::json::matrix_from_rows(&rows).map_err(D::Error::custom))
            .transpose()
    }
}

mod opt_matrices {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &Option<Vec<CMatrix>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|ms| ms.iter().map(linalg::json::matrix_rows).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<Vec<CMatrix>>, D::Error> {
        use serde::de::Error as _;
        Option::<Vec<Vec<Vec<[f64; 2]>>>>::deserialize(d)?
            .map(|all| {
                all.iter()
                    .map(|rows| linalg::json::matrix_from_rows(rows).map_err(D::Error::custom))
                    .collect()
            })
            .transpose()
    }
}

impl From<Model> for ModelRepr {
    fn from(m: Model) -> Self {
        ModelRepr {
            label: m.label,
            spec: m.spec,
            drift: Some(m.drift),
            controls: Some(m.controls),
            collapse: Some(m.collapse),
        }
    }
}

impl TryFrom<ModelRepr> for Model {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        match (r.drift, r.spec) {
            (Some(drift), spec) => {
                let mut m = Model::new(
                    drift,
                    r.controls.unwrap_or_default(),
                    r.collapse.unwrap_or_default(),
                    r.label,
                )?;
                m.spec = spec;
                Ok(m)
            }
            (None, Some(spec)) => {
                let mut m = build_model(&spec)?;
                if !r.label.is_empty() {
                    m.label = r.label;
                }
                Ok(m)
            }
            (None, None) => Err(invalid("model needs either matrices or a spec")),
        }
    }
}

/// Builds a model from the library.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    let half = C64::from(0.5);
    let mut model = match *spec {
        ModelSpec::TwoLevel { delta_omega } => {
            check_finite(delta_omega, "delta_omega")?;
            Model::new(
                pauli_z() * (half * delta_omega),
                vec![pauli_x() * half],
                vec![],
                "two_level",
            )?
        }
        ModelSpec::DecayingQubit { delta_omega, gamma } => {
            check_finite(delta_omega, "delta_omega")?;
            if !(gamma.is_finite() && gamma >= 0.0) {
                return Err(invalid(format!("decay rate must be >= 0, got {gamma}")));
            }
            Model::new(
                pauli_z() * (half * delta_omega),
                vec![pauli_x() * half],
                vec![CollapseOp {
                    op: sigma_minus(),
                    rate: gamma,
                }],
                "decaying_qubit",
            )?
        }
        ModelSpec::RandomIsing { qubits, seed } => {
            if !(2..=5).contains(&qubits) {
                return Err(Error::Unsupported(format!(
                    "random Ising model supports 2..=5 qubits, got {qubits}"
                )));
            }
            let mut rng = seed::rng(seed);
            let dim = 1 << qubits;
            let z: Vec<CMatrix> = (0..qubits).map(|k| embed(&pauli_z(), k, qubits)).collect();
            let mut drift = CMatrix::zeros(dim, dim);
            for k in 0..qubits - 1 {
                let j: f64 = rng.gen_range(-1.0..=1.0);
                drift += &z[k] * &z[k + 1] * C64::from(j);
            }
            for zk in &z {
                let h: f64 = rng.gen_range(-1.0..=1.0);
                drift += zk * C64::from(h);
            }
            let control = (0..qubits)
                .map(|k| embed(&pauli_x(), k, qubits))
                .fold(CMatrix::zeros(dim, dim), |acc, x| acc + x);
            Model::new(
                drift,
                vec![control],
                vec![],
                format!("random_ising_{qubits}"),
            )?
        }
    };
    model.spec = Some(spec.clone());
    Ok(model)
}

fn check_finite(x: f64, name: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

/// Normalized pure state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct QuantumState(CVector);

#[derive(Serialize, Deserialize)]
struct StateRepr(#[serde(with = "linalg::json::vector")] CVector);

impl From<QuantumState> for StateRepr {
    fn from(s: QuantumState) -> Self {
        StateRepr(s.0)
    }
}

impl TryFrom<StateRepr> for QuantumState {
    type Error = Error;
    fn try_from(r: StateRepr) -> Result<Self> {
        QuantumState::new(r.0)
    }
}

impl QuantumState {
    pub fn new(v: CVector) -> Result<Self> {
        if v.is_empty() {
            return Err(invalid("empty state vector"));
        }
        let norm = v.norm();
        if !((norm - 1.0).abs() <= NORM_TOL) {
            return Err(invalid(format!("state norm is {norm}, expected 1")));
        }
        Ok(Self(v))
    }

    /// Normalizes `v` before wrapping it.
    pub fn normalized(v: CVector) -> Result<Self> {
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(Self(v.unscale(norm)))
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: index + 1,
            });
        }
        let mut v = CVector::zeros(dim);
        v[index] = ONE;
        Ok(Self(v))
    }

    /// Haar-random pure state.
    pub fn random(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let v = CVector::from_fn(dim, |_, _| {
            C64::new(rand_distr_normal(&mut rng), rand_distr_normal(&mut rng))
        });
        Self::normalized(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn vector(&self) -> &CVector {
        &self.0
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix(&self.0 * self.0.adjoint())
    }
}

/// Standard normal sample via Box-Muller.
pub(crate) fn rand_distr_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityRepr", into = "DensityRepr")]
pub struct DensityMatrix(CMatrix);

#[derive(Serialize, Deserialize)]
struct DensityRepr(#[serde(with = "linalg::json::matrix")] CMatrix);

impl From<DensityMatrix> for DensityRepr {
    fn from(d: DensityMatrix) -> Self {
        DensityRepr(d.0)
    }
}

impl TryFrom<DensityRepr> for DensityMatrix {
    type Error = Error;
    fn try_from(r: DensityRepr) -> Result<Self> {
        DensityMatrix::new(r.0)
    }
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(invalid("density matrix must be square and nonempty"));
        }
        let dev = linalg::hermiticity_error(&m);
        if dev > NORM_TOL {
            return Err(Error::NotHermitian(dev));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > NORM_TOL {
            return Err(invalid(format!("density matrix trace is {tr}, expected 1")));
        }
        let rho = Self(m);
        let min = rho.min_eigenvalue();
        if min < -NORM_TOL {
            return Err(invalid(format!("density matrix has eigenvalue {min} < 0")));
        }
        Ok(rho)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim) * C64::from(1.0 / dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.0 + self.0.adjoint()) * C64::from(0.5);
        herm.symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// `<i| rho |i>` (real part).
    pub fn population(&self, i: usize) -> f64 {
        self.0[(i, i)].re
    }
}

/// Initial condition for [`propagate`].
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Pure(QuantumState),
    Mixed(DensityMatrix),
}

impl From<QuantumState> for InitialState {
    fn from(s: QuantumState) -> Self {
        InitialState::Pure(s)
    }
}

impl From<DensityMatrix> for InitialState {
    fn from(r: DensityMatrix) -> Self {
        InitialState::Mixed(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Pure(Vec<CVector>),
    Mixed(Vec<CMatrix>),
}

/// Result of a propagation: one state per grid time, plus `U(T)` on request.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub trajectory: Trajectory,
    pub unitary: Option<CMatrix>,
}

impl Propagation {
    pub fn final_state(&self) -> Option<QuantumState> {
        match &self.trajectory {
            Trajectory::Pure(states) => states.last().map(|v| QuantumState(v.clone())),
            Trajectory::Mixed(_) => None,
        }
    }

    pub fn final_density(&self) -> DensityMatrix {
        match &self.trajectory {
            Trajectory::Pure(states) => QuantumState(states.last().unwrap().clone()).to_density(),
            Trajectory::Mixed(rhos) => DensityMatrix(rhos.last().unwrap().clone()),
        }
    }

    pub fn len(&self) -> usize {
        match &self.trajectory {
            Trajectory::Pure(s) => s.len(),
            Trajectory::Mixed(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_pulses<'a>(model: &Model, pulses: &'a [Pulse]) -> Result<&'a TimeGrid> {
    if pulses.len() != model.controls().len() {
        return Err(Error::DimensionMismatch {
            expected: model.controls().len(),
            got: pulses.len(),
        });
    }
    let grid = match pulses.first() {
        Some(p) => p.grid(),
        None => {
            return Err(invalid(
                "at least one pulse is needed to define the time grid",
            ))
        }
    };
    for p in pulses {
        p.grid().check_same(grid, "control pulses")?;
        if p.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pulse sample".into()));
        }
    }
    Ok(grid)
}

fn amplitudes(pulses: &[Pulse], k: usize) -> Vec<f64> {
    pulses.iter().map(|p| p.midpoint(k)).collect()
}

/// Step propagators `exp(-i H_k dt)` for every grid interval.
pub fn step_propagators(model: &Model, pulses: &[Pulse]) -> Result<Vec<CMatrix>> {
    let grid = check_pulses(model, pulses)?;
    let dt = grid.dt();
    Ok((0..grid.steps())
        .map(|k| hermitian_propagator(&model.hamiltonian(&amplitudes(pulses, k)), dt))
        .collect())
}

/// Propagates `initial` under `model` driven by one pulse per control.
pub fn propagate(
    model: &Model,
    pulses: &[Pulse],
    initial: &InitialState,
    want_unitary: bool,
) -> Result<Propagation> {
    let grid = *check_pulses(model, pulses)?;
    let n = model.dim();
    let dt = grid.dt();
    match initial {
        InitialState::Pure(psi) => {
            if psi.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: psi.dim(),
                });
            }
            if model.is_open() {
                return Err(Error::Unsupported(
                    "model has collapse operators; propagate a density matrix instead".into(),
                ));
            }
            let mut states = Vec::with_capacity(grid.samples());
            let mut state = psi.vector().clone();
            let mut unitary = want_unitary.then(|| CMatrix::identity(n, n));
            states.push(state.clone());
            for k in 0..grid.steps() {
                let step = hermitian_propagator(&model.hamiltonian(&amplitudes(pulses, k)), dt);
                state = &step * state;
                if let Some(u) = unitary.as_mut() {
                    *u = &step * &*u;
                }
                states.push(state.clone());
            }
            Ok(Propagation {
                trajectory: Trajectory::Pure(states),
                unitary,
            })
        }
        InitialState::Mixed(rho) => {
            if rho.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: rho.dim(),
                });
            }
            if want_unitary {
                return Err(Error::Unsupported(
                    "a final unitary is only defined for closed dynamics".into(),
                ));
            }
            let mut rhos = Vec::with_capacity(grid.samples());
            let mut vec_rho = linalg::vectorize(rho.matrix());
            rhos.push(rho.matrix().clone());
            for k in 0..grid.steps() {
                let gen = model.lindbladian(&amplitudes(pulses, k)) * C64::from(dt);
                let map = expm(&gen)?;
                vec_rho = map * vec_rho;
                rhos.push(linalg::unvectorize(&vec_rho, n));
            }
            Ok(Propagation {
                trajectory: Trajectory::Mixed(rhos),
                unitary: None,
            })
        }
    }
}

/// First-order sensitivity of a final-state functional to the control.
///
/// For a functional whose variation reads `Re <costate | delta psi(T)>`, the
/// returned samples `k(t_i)` satisfy `delta J = int k(t) delta f(t) dt`.
/// With `i d/dt psi = (H_0 + f H_1) psi` this is
/// `k(t) = Im <costate| U(T) U(t)^dagger H_1 U(t) |initial>`, evaluated by
/// pulling the costate back along the stored step propagators.
pub fn gradient_kernel(
    model: &Model,
    pulse: &Pulse,
    initial: &QuantumState,
    costate: &CVector,
) -> Result<Vec<f64>> {
    if model.is_open() {
        return Err(Error::Unsupported(
            "gradient kernel needs closed dynamics".into(),
        ));
    }
    if model.controls().len() != 1 {
        return Err(Error::Unsupported(format!(
            "gradient kernel needs exactly one control, model has {}",
            model.controls().len()
        )));
    }
    let n = model.dim();
    for d in [initial.dim(), costate.len()] {
        if d != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: d,
            });
        }
    }
    let pulses = std::slice::from_ref(pulse);
    let steps = step_propagators(model, pulses)?;
    let h1 = &model.controls()[0];

    let mut forward = Vec::with_capacity(steps.len() + 1);
    forward.push(initial.vector().clone());
    for step in &steps {
        let next = step * forward.last().unwrap();
        forward.push(next);
    }
    let mut kernel = vec![0.0; forward.len()];
    let mut adjoint = costate.clone();
    for i in (0..forward.len()).rev() {
        if i < steps.len() {
            adjoint = steps[i].adjoint() * adjoint;
        }
        kernel[i] = adjoint.dotc(&(h1 * &forward[i])).im;
    }
    Ok(kernel)
}

/// Energy spread `sqrt(<H^2> - <H>^2)` of `state` under `h`.
pub fn energy_spread(h: &CMatrix, state: &QuantumState) -> f64 {
    let v = state.vector();
    let hv = h * v;
    let mean = v.dotc(&hv).re;
    (hv - v * C64::from(mean)).norm()
}
