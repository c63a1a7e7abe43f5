// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Speed limits, channel capacities and information bounds on the
//! achievable control error, plus ensemble statistics for optimization runs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::QuantumState;
use crate::error::{invalid, Error, Result};
use crate::optimizer::{nelder_mead, NelderMeadConfig};
use crate::pulses::{BasisSet, TimeGrid};

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be > 0, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be >= 0, got {v}")))
    }
}

/// Bhattacharyya bound `arccos|<target|initial>| / dE`.
pub fn qsl_bhattacharyya(
    delta_e: f64,
    initial: &QuantumState,
    target: &QuantumState,
) -> Result<f64> {
    positive("energy spread", delta_e)?;
    if initial.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: initial.dim(),
            got: target.dim(),
        });
    }
    let overlap = target.vector().dotc(initial.vector()).norm().min(1.0);
    Ok(overlap.acos() / delta_e)
}

/// `pi / gap`.
pub fn qsl_gap(gap: f64) -> Result<f64> {
    positive("spectral gap", gap)?;
    Ok(PI / gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CapacityInputs {
    /// `dOmega log2(1 + f_max / df)`: amplitude range over resolution.
    Hartley {
        bandwidth: f64,
        f_max: f64,
        delta_f: f64,
    },
    /// `dOmega log2(1 + P_f / P_n)` for white Gaussian noise.
    Gaussian { bandwidth: f64, p_f: f64, p_n: f64 },
    /// `int_0^omega_max log2(1 + f(w) / n(w)) dw` on the sampled grid.
    Colored {
        omegas: Vec<f64>,
        signal: Vec<f64>,
        noise: Vec<f64>,
    },
}

/// Channel capacity in bits per unit time.
pub fn capacity(inputs: &CapacityInputs) -> Result<f64> {
    match inputs {
        CapacityInputs::Hartley {
            bandwidth,
            f_max,
            delta_f,
        } => {
            nonnegative("bandwidth", *bandwidth)?;
            nonnegative("f_max", *f_max)?;
            positive("delta_f", *delta_f)?;
            Ok(bandwidth * (1.0 + f_max / delta_f).log2())
        }
        CapacityInputs::Gaussian {
            bandwidth,
            p_f,
            p_n,
        } => {
            nonnegative("bandwidth", *bandwidth)?;
            nonnegative("p_f", *p_f)?;
            positive("p_n", *p_n)?;
            Ok(bandwidth * (1.0 + p_f / p_n).log2())
        }
        CapacityInputs::Colored {
            omegas,
            signal,
            noise,
        } => {
            if omegas.len() != signal.len() || omegas.len() != noise.len() {
                return Err(Error::GridMismatch(format!(
                    "{} frequencies, {} signal and {} noise samples",
                    omegas.len(),
                    signal.len(),
                    noise.len()
                )));
            }
            if omegas.len() < 2 || omegas.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::GridMismatch(
                    "need at least two increasing frequencies".into(),
                ));
            }
            let mut density = Vec::with_capacity(omegas.len());
            for ((w, f), n) in omegas.iter().zip(signal).zip(noise) {
                nonnegative("signal spectrum", *f)?;
                nonnegative("noise spectrum", *n)?;
                if *n == 0.0 && *f > 0.0 {
                    return Err(invalid(format!(
                        "noise vanishes at omega = {w} where the signal does not"
                    )));
                }
                density.push(if *f == 0.0 { 0.0 } else { (1.0 + f / n).log2() });
            }
            Ok(omegas
                .windows(2)
                .zip(density.windows(2))
                .map(|(w, d)| 0.5 * (d[0] + d[1]) * (w[1] - w[0]))
                .sum())
        }
    }
}

/// Smallest error reachable with `I_f` bits over `D_r` real directions:
/// `2^(-I_f / D_r)`.
pub fn error_bound(info_bits: f64, reachable_dim: f64) -> Result<f64> {
    nonnegative("information", info_bits)?;
    if !(reachable_dim >= 1.0) {
        return Err(invalid(format!(
            "reachable dimension must be >= 1, got {reachable_dim}"
        )));
    }
    Ok((-info_bits / reachable_dim).exp2())
}

/// Shortest time to reach error `epsilon` at capacity `C`:
/// `-(D_r / C) log2(epsilon)`.
pub fn time_bound(reachable_dim: f64, capacity: f64, epsilon: f64) -> Result<f64> {
    if !(reachable_dim >= 1.0) {
        return Err(invalid(format!(
            "reachable dimension must be >= 1, got {reachable_dim}"
        )));
    }
    positive("capacity", capacity)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(-(reachable_dim / capacity) * epsilon.log2())
}

/// `2N - 2`: real dimension of the pure-state manifold of an `N`-level system.
pub fn state_transfer_dimension(hilbert_dim: usize) -> Result<usize> {
    if hilbert_dim < 2 {
        return Err(invalid(format!(
            "Hilbert space dimension must be >= 2, got {hilbert_dim}"
        )));
    }
    Ok(2 * hilbert_dim - 2)
}

/// Fit of `epsilon = exp(-b1 dOmega) + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub b1: f64,
    pub b2: f64,
    pub rms_residual: f64,
    /// `false` when `b1 <= 0`, i.e. the error does not fall with bandwidth.
    pub decaying: bool,
}

/// Least-squares fit of `epsilon = exp(-b1 dOmega) + b2` by Nelder-Mead
/// with restarts.
pub fn fit_error_scaling(samples: &[(f64, f64)]) -> Result<ScalingFit> {
    if samples.len() < 3 {
        return Err(invalid(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    for &(w, e) in samples {
        if !w.is_finite() || !(e > 0.0 && e <= 1.0) {
            return Err(invalid(format!(
                "sample ({w}, {e}) needs finite bandwidth and error in (0, 1]"
            )));
        }
    }
    let w0 = samples[0].0;
    if samples.iter().all(|s| s.0 == w0) {
        return Err(invalid(
            "all samples share one bandwidth; the fit is degenerate",
        ));
    }

    let sse = |p: &[f64]| -> f64 {
        samples
            .iter()
            .map(|&(w, e)| ((-p[0] * w).exp() + p[1] - e).powi(2))
            .sum()
    };
    // start from a log-linear fit with b2 = 0
    let n = samples.len() as f64;
    let mean_w = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_l = samples.iter().map(|s| s.1.ln()).sum::<f64>() / n;
    let cov: f64 = samples
        .iter()
        .map(|s| (s.0 - mean_w) * (s.1.ln() - mean_l))
        .sum();
    let var: f64 = samples.iter().map(|s| (s.0 - mean_w).powi(2)).sum();
    let mut x = vec![-cov / var, 0.0];
    let mut scales = vec![
        0.1 * x[0].abs().max(0.1),
        0.1 * samples.iter().map(|s| s.1).fold(0.0, f64::max),
    ];
    let config = NelderMeadConfig {
        max_evals: 4000,
        tolerance: 0.0,
        target: None,
    };
    let mut best = f64::INFINITY;
    for _ in 0..20 {
        let out = nelder_mead(|p| Ok(-sse(p)), &x, &scales, &config)?;
        let improved = best - (-out.j_best);
        x = out.x_best;
        best = -out.j_best;
        if improved.abs() <= 1e-14 * best.max(1e-300) {
            break;
        }
        for (s, v) in scales.iter_mut().zip(&x) {
            *s = 0.05 * v.abs().max(1e-6);
        }
    }
    let (b1, b2) = (x[0], x[1]);
    Ok(ScalingFit {
        b1,
        b2,
        rms_residual: (best / n).sqrt(),
        decaying: b1 > 0.0,
    })
}

/// Trapezoid projections `int k(t) f_i(t) dt` of a gradient kernel onto a
/// basis: the first-order gain available along each basis direction. All
/// of them vanishing while the kernel itself does not marks a trap created
/// by the truncated basis.
pub fn basis_gradient(kernel: &[f64], basis: &BasisSet, grid: &TimeGrid) -> Result<Vec<f64>> {
    if kernel.len() != grid.samples() {
        return Err(Error::DimensionMismatch {
            expected: grid.samples(),
            got: kernel.len(),
        });
    }
    let sampled = basis.sample(grid)?;
    Ok(sampled
        .iter()
        .map(|f| trapezoid_product(kernel, f, grid.dt()))
        .collect())
}

fn trapezoid_product(a: &[f64], b: &[f64], dt: f64) -> f64 {
    let last = a.len() - 1;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            if i == 0 || i == last {
                0.5 * x * y
            } else {
                x * y
            }
        })
        .sum::<f64>()
        * dt
}

/// Success statistics of an ensemble of final errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub best_error: f64,
    pub median_error: f64,
    pub worst_error: f64,
}

/// Counts runs with error strictly below `threshold`.
pub fn ensemble_stats(errors: &[f64], threshold: f64) -> Result<EnsembleStats> {
    if errors.is_empty() {
        return Err(invalid("ensemble is empty"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let successes = errors.iter().filter(|&&e| e < threshold).count();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(EnsembleStats {
        runs: errors.len(),
        successes,
        success_rate: successes as f64 / errors.len() as f64,
        best_error: sorted[0],
        median_error: median,
        worst_error: sorted[sorted.len() - 1],
    })
}

/// Inputs of the `diagnose` report; every quantity is optional and only
/// the bounds whose inputs are present get computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub delta_e: Option<f64>,
    pub initial: Option<QuantumState>,
    pub target: Option<QuantumState>,
    pub gap: Option<f64>,
    pub bandwidth: Option<f64>,
    pub f_max: Option<f64>,
    pub delta_f: Option<f64>,
    pub p_f: Option<f64>,
    pub p_n: Option<f64>,
    pub spectrum: Option<ColoredSpectrum>,
    /// Information content `I_f` in bits; defaults to `C T`.
    pub i_f: Option<f64>,
    pub d_r: Option<f64>,
    /// Hilbert-space dimension, used for `D_r = 2N - 2` when `d_r` is absent.
    pub hilbert_dim: Option<usize>,
    pub epsilon: Option<f64>,
    pub duration: Option<f64>,
    /// Capacity to use in the time bound; defaults to the first computed one.
    pub capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoredSpectrum {
    pub omegas: Vec<f64>,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qsl_bhattacharyya: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qsl_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_hartley: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_gaussian: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_colored: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_bound: Option<f64>,
}

/// Evaluates every bound the inputs allow.
pub fn bound_report(inputs: &BoundInputs) -> Result<BoundReport> {
    let mut r = BoundReport::default();
    if let (Some(de), Some(a), Some(b)) = (inputs.delta_e, &inputs.initial, &inputs.target) {
        r.qsl_bhattacharyya = Some(qsl_bhattacharyya(de, a, b)?);
    }
    if let Some(gap) = inputs.gap {
        r.qsl_gap = Some(qsl_gap(gap)?);
    }
    if let (Some(bandwidth), Some(f_max), Some(delta_f)) =
        (inputs.bandwidth, inputs.f_max, inputs.delta_f)
    {
        r.capacity_hartley = Some(capacity(&CapacityInputs::Hartley {
            bandwidth,
            f_max,
            delta_f,
        })?);
    }
    if let (Some(bandwidth), Some(p_f), Some(p_n)) = (inputs.bandwidth, inputs.p_f, inputs.p_n) {
        r.capacity_gaussian = Some(capacity(&CapacityInputs::Gaussian {
            bandwidth,
            p_f,
            p_n,
        })?);
    }
    if let Some(s) = &inputs.spectrum {
        r.capacity_colored = Some(capacity(&CapacityInputs::Colored {
            omegas: s.omegas.clone(),
            signal: s.signal.clone(),
            noise: s.noise.clone(),
        })?);
    }
    let cap = inputs
        .capacity
        .or(r.capacity_colored)
        .or(r.capacity_gaussian)
        .or(r.capacity_hartley);
    r.i_f = inputs
        .i_f
        .or_else(|| cap.zip(inputs.duration).map(|(c, t)| c * t));
    r.d_r = match (inputs.d_r, inputs.hilbert_dim) {
        (Some(d), _) => Some(d),
        (None, Some(n)) => Some(state_transfer_dimension(n)? as f64),
        _ => None,
    };
    if let (Some(i_f), Some(d_r)) = (r.i_f, r.d_r) {
        r.error_bound = Some(error_bound(i_f, d_r)?);
    }
    if let (Some(d_r), Some(c), Some(eps)) = (r.d_r, cap, inputs.epsilon) {
        r.time_bound = Some(time_bound(d_r, c, eps)?);
    }
    Ok(r)
}
