// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Time grids, randomized chopped bases and pulse assembly.
//!
//! A [`Pulse`] is always a uniformly sampled waveform. Basis functions are
//! sampled onto the pulse grid when a pulse is assembled; no closures cross
//! module boundaries.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

/// Uniform sampling of `[0, duration]` with both endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    duration: f64,
    samples: usize,
}

impl TimeGrid {
    pub fn new(duration: f64, samples: usize) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invalid(format!(
                "grid duration must be positive, got {duration}"
            )));
        }
        if samples < 2 {
            return Err(invalid(format!(
                "grid needs at least 2 samples, got {samples}"
            )));
        }
        Ok(Self { duration, samples })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Number of intervals, `samples - 1`.
    pub fn steps(&self) -> usize {
        self.samples - 1
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.steps() as f64
    }

    /// The i-th sample time. The last sample is exactly `duration`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps() {
            self.duration
        } else {
            self.duration * i as f64 / self.steps() as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples).map(|i| self.time(i)).collect()
    }

    pub(crate) fn check_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: ({}, {}) vs ({}, {})",
                self.duration, self.samples, other.duration, other.samples
            )));
        }
        Ok(())
    }
}

/// Trigonometric family of a basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Cos,
    Sin,
}

/// Shape function multiplying every basis function.
///
/// `Sine` and `Blackman` vanish at both ends of the grid, which pins the
/// assembled pulse to its guess at `t = 0` and `t = T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    Flat,
    #[default]
    Sine,
    Blackman,
}

impl Envelope {
    pub fn value(self, t: f64, duration: f64) -> f64 {
        let x = t / duration;
        match self {
            Envelope::Flat => 1.0,
            Envelope::Sine => (PI * x).sin(),
            Envelope::Blackman => 0.42 - 0.5 * (2.0 * PI * x).cos() + 0.08 * (4.0 * PI * x).cos(),
        }
    }

    fn sample(self, grid: &TimeGrid) -> Vec<f64> {
        let last = grid.steps();
        (0..grid.samples())
            .map(|i| match self {
                // exact zeros at the ends; sin(pi) is not
                Envelope::Sine | Envelope::Blackman if i == 0 || i == last => 0.0,
                _ => self.value(grid.time(i), grid.duration()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisFunctionSpec {
    pub kind: BasisKind,
    /// Angular frequency in rad/time.
    pub omega: f64,
}

/// One super-iteration's worth of random basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub seed: u64,
    pub omega_max: f64,
    pub envelope: Envelope,
    pub duration: f64,
    pub functions: Vec<BasisFunctionSpec>,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Samples every (enveloped) basis function on `grid`.
    pub fn sample(&self, grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
        if grid.duration() != self.duration {
            return Err(Error::GridMismatch(format!(
                "basis drawn for T = {} used on grid with T = {}",
                self.duration,
                grid.duration()
            )));
        }
        let env = self.envelope.sample(grid);
        Ok(self
            .functions
            .iter()
            .map(|f| {
                (0..grid.samples())
                    .map(|i| {
                        let phase = f.omega * grid.time(i);
                        let trig = match f.kind {
                            BasisKind::Cos => phase.cos(),
                            BasisKind::Sin => phase.sin(),
                        };
                        trig * env[i]
                    })
                    .collect()
            })
            .collect())
    }
}

/// Draws `n_funcs` basis functions alternating cosine / sine.
///
/// Function `i` (1-based) sits around the principal harmonic `ceil(i/2)`:
/// `omega_i = 2 pi (ceil(i/2) + r) / T` with `r` uniform in `(-0.5, 0.5)`,
/// clipped to `omega_max`.
pub fn sample_basis(
    n_funcs: usize,
    grid: &TimeGrid,
    omega_max: f64,
    envelope: Envelope,
    seed: u64,
) -> Result<BasisSet> {
    if n_funcs == 0 {
        return Err(invalid("basis needs at least one function"));
    }
    if !(omega_max.is_finite() && omega_max > 0.0) {
        return Err(invalid(format!(
            "omega_max must be positive, got {omega_max}"
        )));
    }
    let duration = grid.duration();
    // every candidate frequency exceeds pi/T
    if omega_max <= PI / duration {
        return Err(Error::DegenerateBasis(format!(
            "omega_max = {omega_max} is below the lowest candidate frequency pi/T = {}",
            PI / duration
        )));
    }
    let mut rng = seed::rng(seed);
    let functions: Vec<_> = (1..=n_funcs)
        .map(|i| {
            let harmonic = i.div_ceil(2) as f64;
            let r = loop {
                let r: f64 = rng.gen_range(-0.5..0.5);
                if r != -0.5 {
                    break r;
                }
            };
            let omega = (2.0 * PI * (harmonic + r) / duration).min(omega_max);
            let kind = if i % 2 == 1 {
                BasisKind::Cos
            } else {
                BasisKind::Sin
            };
            BasisFunctionSpec { kind, omega }
        })
        .collect();
    if n_funcs > 1 && functions.iter().all(|f| f.omega == omega_max) {
        return Err(Error::DegenerateBasis(format!(
            "all {n_funcs} frequencies clipped to omega_max = {omega_max}"
        )));
    }
    Ok(BasisSet {
        seed,
        omega_max,
        envelope,
        duration,
        functions,
    })
}

/// A real control waveform on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    grid: TimeGrid,
    values: Vec<f64>,
    #[serde(default)]
    label: String,
}

impl Pulse {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.samples() {
            return Err(Error::DimensionMismatch {
                expected: grid.samples(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "pulse sample {i} is {}",
                values[i]
            )));
        }
        Ok(Self {
            grid,
            values,
            label: String::new(),
        })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.samples()])
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.times().into_iter().map(f).collect())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Piecewise-constant value on interval `k`: the average of its two ends.
    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.values[k] + self.values[k + 1])
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Pulse {
        Pulse {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            label: self.label.clone(),
        }
    }

    /// CSV with a `time,value` header, one sample per LF-terminated row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.grid.time(i), v);
        }
        out
    }

    /// Parses the CSV pulse format. The grid is rebuilt from the first and
    /// last time stamps and every row is checked against it.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("time,value") => {}
            other => {
                return Err(Error::PulseFormat(format!(
                    "expected header \"time,value\", found {other:?}"
                )))
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let (t, v) = line.trim().split_once(',').ok_or_else(|| {
                Error::PulseFormat(format!("row {}: expected two columns", row + 1))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::PulseFormat(format!("row {}: {e} in {s:?}", row + 1)))
            };
            times.push(parse(t)?);
            values.push(parse(v)?);
        }
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::PulseFormat(
                "need at least two rows starting at time 0".into(),
            ));
        }
        let grid = TimeGrid::new(*times.last().unwrap(), times.len())?;
        for (i, &t) in times.iter().enumerate() {
            if (t - grid.time(i)).abs() > 1e-9 * grid.duration().max(1.0) {
                return Err(Error::PulseFormat(format!(
                    "row {}: time {t} is off the uniform grid (expected {})",
                    i + 1,
                    grid.time(i)
                )));
            }
        }
        Pulse::new(grid, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Expansion coefficients; `c0` scales the incumbent pulse in dressed mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrabCoefficients {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    pub c: Vec<f64>,
}

impl CrabCoefficients {
    pub fn zeros(n: usize) -> Self {
        Self {
            c0: None,
            c: vec![0.0; n],
        }
    }

    pub fn dressed_identity(n: usize) -> Self {
        Self {
            c0: Some(1.0),
            c: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssemblyMode {
    /// `f = g + sum c_i f_i`, usable when the guess has zeros.
    Additive,
    /// `f = g (1 + sum c_i f_i)`.
    #[default]
    Multiplicative,
    /// `f = c_0 f_prev + sum c_i f_i`.
    Dressed,
}

/// Builds a pulse from a guess, a basis and its coefficients.
pub fn assemble_pulse(
    guess: &Pulse,
    basis: &BasisSet,
    coeffs: &CrabCoefficients,
    mode: AssemblyMode,
    previous: Option<&Pulse>,
) -> Result<Pulse> {
    let sampled = basis.sample(guess.grid())?;
    assemble_sampled(guess, &sampled, coeffs, mode, previous)
}

/// Same as [`assemble_pulse`] with the basis already sampled on the guess grid.
pub(crate) fn assemble_sampled(
    guess: &Pulse,
    sampled: &[Vec<f64>],
    coeffs: &CrabCoefficients,
    mode: AssemblyMode,
    previous: Option<&Pulse>,
) -> Result<Pulse> {
    if coeffs.c.len() != sampled.len() {
        return Err(Error::CoefficientMismatch {
            expected: sampled.len(),
            got: coeffs.c.len(),
        });
    }
    let n = guess.grid().samples();
    let mut sum = vec![0.0; n];
    for (c, f) in coeffs.c.iter().zip(sampled) {
        for (s, v) in sum.iter_mut().zip(f) {
            *s += c * v;
        }
    }
    let values: Vec<f64> = match mode {
        AssemblyMode::Additive | AssemblyMode::Multiplicative => {
            if coeffs.c0.is_some() {
                return Err(Error::CoefficientMismatch {
                    expected: sampled.len(),
                    got: sampled.len() + 1,
                });
            }
            if mode == AssemblyMode::Additive {
                guess
                    .values()
                    .iter()
                    .zip(&sum)
                    .map(|(g, s)| g + s)
                    .collect()
            } else {
                guess
                    .values()
                    .iter()
                    .zip(&sum)
                    .map(|(g, s)| g * (1.0 + s))
                    .collect()
            }
        }
        AssemblyMode::Dressed => {
            let prev =
                previous.ok_or_else(|| invalid("dressed assembly needs the previous pulse"))?;
            prev.grid()
                .check_same(guess.grid(), "previous pulse vs guess")?;
            let c0 = coeffs.c0.ok_or(Error::CoefficientMismatch {
                expected: sampled.len() + 1,
                got: sampled.len(),
            })?;
            prev.values()
                .iter()
                .zip(&sum)
                .map(|(p, s)| c0 * p + s)
                .collect()
        }
    };
    Ok(Pulse::new(*guess.grid(), values)?.with_label(guess.label()))
}

fn check_bound(f_max: f64) -> Result<()> {
    if !(f_max.is_finite() && f_max > 0.0) {
        return Err(invalid(format!(
            "amplitude bound must be positive, got {f_max}"
        )));
    }
    Ok(())
}

/// Pointwise clipping to `[-f_max, f_max]`.
pub fn clip_hard_wall(pulse: &Pulse, f_max: f64) -> Result<Pulse> {
    check_bound(f_max)?;
    Ok(pulse.map(|v| {
        if v.abs() < f_max {
            v
        } else {
            f_max.copysign(v)
        }
    }))
}

/// Uniform rescaling so that `max |f| <= f_max`; keeps the pulse shape.
pub fn rescale_to_bound(pulse: &Pulse, f_max: f64) -> Result<Pulse> {
    check_bound(f_max)?;
    let peak = pulse.max_abs();
    if peak <= f_max {
        return Ok(pulse.clone());
    }
    let scale = f_max / peak;
    Ok(pulse.map(|v| (v * scale).clamp(-f_max, f_max)))
}

fn trapezoid(values: impl Iterator<Item = f64>, n: usize, dt: f64) -> f64 {
    let mut acc = 0.0;
    for (i, v) in values.enumerate() {
        acc += if i == 0 || i + 1 == n { 0.5 * v } else { v };
    }
    acc * dt
}

/// Pulse energy `int_0^T f^2 dt` (trapezoid rule).
pub fn pulse_energy(pulse: &Pulse) -> f64 {
    let n = pulse.values.len();
    trapezoid(pulse.values.iter().map(|v| v * v), n, pulse.grid.dt())
}

/// Mean power `P_f = (1/T) int_0^T f^2 dt`.
pub fn pulse_power(pulse: &Pulse) -> f64 {
    pulse_energy(pulse) / pulse.grid.duration()
}

/// One-sided sampled spectrum with the frequency axis in rad/time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub omegas: Vec<f64>,
    pub values: Vec<f64>,
}

/// One-sided power spectral density (power per rad/time).
///
/// Normalized so that the rectangle sum `sum_k S_k d_omega` equals the
/// discrete mean power of the samples.
pub fn pulse_psd(pulse: &Pulse) -> Spectrum {
    let n = pulse.values.len();
    let dt = pulse.grid.dt();
    let mut buf: Vec<Complex64> = pulse
        .values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let span = n as f64 * dt;
    let d_omega = 2.0 * PI / span;
    let half = n / 2;
    let omegas = (0..=half).map(|k| k as f64 * d_omega).collect();
    let values = (0..=half)
        .map(|k| {
            let x = buf[k] * dt;
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == half) {
                1.0
            } else {
                2.0
            };
            one_sided * x.norm_sqr() / (2.0 * PI * span)
        })
        .collect();
    Spectrum { omegas, values }
}
