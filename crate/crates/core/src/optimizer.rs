// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Nelder-Mead search and the CRAB / dCRAB drivers.
//!
//! The drivers never look at the physics. They assemble pulses, apply the
//! amplitude constraint and ask a [`FomEvaluator`] for `J`. A simulated
//! evaluator is provided by [`SimulatedFom`]; the loop server supplies one
//! that talks to an external client.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dynamics::{InitialState, Model};
use crate::error::{invalid, Error, Result};
use crate::objectives::{self, Constraint, ObjectiveSpec};
use crate::pulses::{self, AssemblyMode, BasisSet, CrabCoefficients, Envelope, Pulse};
use crate::seed;

/// Stopping rule and move coefficients are the textbook ones: reflection 1,
/// expansion 2, contraction 0.5, shrink 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Stop once `J_best - J_worst` over the simplex drops below this.
    pub tolerance: f64,
    /// Stop as soon as an evaluation reaches this `J`.
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStop {
    Converged,
    Budget,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub x_best: Vec<f64>,
    pub j_best: f64,
    pub evals: usize,
    pub stop: SearchStop,
}

/// Maximizes `fom` starting from the simplex `x0, x0 + scales[i] e_i`.
///
/// Non-finite `J` counts as the worst possible value. An `Err` from `fom`
/// aborts the search and is returned unchanged.
pub fn nelder_mead<F>(
    mut fom: F,
    x0: &[f64],
    scales: &[f64],
    config: &NelderMeadConfig,
) -> Result<SearchOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    if n == 0 {
        return Err(invalid("search space is empty"));
    }
    if scales.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: scales.len(),
        });
    }
    if x0.iter().chain(scales).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial simplex".into()));
    }
    if !(config.tolerance >= 0.0) {
        return Err(invalid("simplex tolerance must be >= 0"));
    }

    let mut evals = 0usize;
    // cost = -J, lower is better
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let j = fom(x)?;
        Ok(if j.is_finite() { -j } else { f64::INFINITY })
    };
    let target_cost = config.target.map(|t| -t);
    let hit = |cost: f64| target_cost.is_some_and(|t| cost <= t);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let finish = |simplex: &mut Vec<(Vec<f64>, f64)>, evals: usize, stop: SearchStop| {
        let best = simplex
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("simplex has at least one vertex");
        SearchOutcome {
            x_best: best.0.clone(),
            j_best: -best.1,
            evals,
            stop,
        }
    };

    for i in 0..=n {
        if evals >= config.max_evals {
            if simplex.is_empty() {
                return Ok(SearchOutcome {
                    x_best: x0.to_vec(),
                    j_best: f64::NEG_INFINITY,
                    evals,
                    stop: SearchStop::Budget,
                });
            }
            return Ok(finish(&mut simplex, evals, SearchStop::Budget));
        }
        let mut x = x0.to_vec();
        if i > 0 {
            x[i - 1] += scales[i - 1];
        }
        let cost = eval(&x, &mut evals)?;
        simplex.push((x, cost));
        if hit(cost) {
            return Ok(finish(&mut simplex, evals, SearchStop::Target));
        }
    }

    loop {
        // stable sort keeps x0 first among ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.is_finite() && spread < config.tolerance {
            return Ok(finish(&mut simplex, evals, SearchStop::Converged));
        }
        if evals >= config.max_evals {
            return Ok(finish(&mut simplex, evals, SearchStop::Budget));
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals)?;
        if hit(fr) {
            simplex[n] = (xr, fr);
            return Ok(finish(&mut simplex, evals, SearchStop::Target));
        }

        if fr < simplex[0].1 {
            if evals >= config.max_evals {
                simplex[n] = (xr, fr);
                continue;
            }
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            if hit(fe) {
                return Ok(finish(&mut simplex, evals, SearchStop::Target));
            }
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        if evals >= config.max_evals {
            if fr < worst.1 {
                simplex[n] = (xr, fr);
            }
            continue;
        }
        let (xc, fc, accept) = if fr < worst.1 {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals)?;
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals)?;
            let ok = fc < worst.1;
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = (xc, fc);
            if hit(fc) {
                return Ok(finish(&mut simplex, evals, SearchStop::Target));
            }
            continue;
        }
        if fr < worst.1 {
            simplex[n] = (xr, fr);
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            if evals >= config.max_evals {
                break;
            }
            let x: Vec<f64> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            let f = eval(&x, &mut evals)?;
            *vertex = (x, f);
            if hit(f) {
                return Ok(finish(&mut simplex, evals, SearchStop::Target));
            }
        }
    }
}

/// Value returned by a figure-of-merit oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub j: f64,
    /// Standard error reported by a measuring client, if any.
    pub err: Option<f64>,
}

impl Evaluation {
    pub fn exact(j: f64) -> Self {
        Self { j, err: None }
    }
}

/// Anything that scores a set of control pulses.
///
/// Errors of kind [`Error::Protocol`], [`Error::Timeout`], [`Error::Io`] and
/// [`Error::Json`] abort the run; any other error marks that single
/// evaluation as failed (`J = -inf`) and the search carries on.
pub trait FomEvaluator {
    fn evaluate(&mut self, iter: usize, pulses: &[Pulse]) -> Result<Evaluation>;
}

impl<F> FomEvaluator for F
where
    F: FnMut(usize, &[Pulse]) -> Result<Evaluation>,
{
    fn evaluate(&mut self, iter: usize, pulses: &[Pulse]) -> Result<Evaluation> {
        self(iter, pulses)
    }
}

fn is_fatal(e: &Error) -> bool {
    matches!(
        e,
        Error::Protocol(_) | Error::Timeout(_) | Error::Io(_) | Error::Json(_)
    )
}

/// Scores pulses by simulating `model` from `initial` and applying `objective`.
#[derive(Debug, Clone)]
pub struct SimulatedFom {
    pub model: Model,
    pub initial: InitialState,
    pub objective: ObjectiveSpec,
}

impl SimulatedFom {
    pub fn new(model: Model, initial: InitialState, objective: ObjectiveSpec) -> Self {
        Self {
            model,
            initial,
            objective,
        }
    }

    pub fn breakdown(&self, pulses: &[Pulse]) -> Result<objectives::Breakdown> {
        objectives::evaluate(&self.objective, &self.model, &self.initial, pulses)
    }
}

impl FomEvaluator for SimulatedFom {
    fn evaluate(&mut self, _iter: usize, pulses: &[Pulse]) -> Result<Evaluation> {
        Ok(Evaluation::exact(self.breakdown(pulses)?.j))
    }
}

/// Guess pulses (one per control) plus the amplitude constraint applied to
/// every candidate before it is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub guess: Vec<Pulse>,
    #[serde(default)]
    pub constraint: Constraint,
}

impl Problem {
    pub fn new(guess: Vec<Pulse>, constraint: Constraint) -> Self {
        Self { guess, constraint }
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .guess
            .first()
            .ok_or_else(|| invalid("at least one guess pulse is required"))?;
        for g in &self.guess[1..] {
            g.grid().check_same(first.grid(), "guess pulses")?;
        }
        if let Some(f_max) = self.constraint.bound() {
            if !(f_max.is_finite() && f_max > 0.0) {
                return Err(invalid(format!(
                    "constraint bound must be > 0, got {f_max}"
                )));
            }
        }
        Ok(())
    }
}

fn default_super_iterations() -> usize {
    10
}
fn default_evals() -> usize {
    500
}
fn default_tolerance() -> f64 {
    1e-9
}
fn default_c0_scale() -> f64 {
    0.05
}
fn default_stall() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Basis functions per control and super-iteration.
    pub n_funcs: usize,
    #[serde(default = "default_super_iterations")]
    pub max_super_iterations: usize,
    #[serde(default = "default_evals")]
    pub max_evals_per_super_iteration: usize,
    #[serde(default = "default_tolerance")]
    pub simplex_tolerance: f64,
    /// Per-coordinate offset of the initial simplex. Defaults to a tenth of
    /// the incumbent amplitude (additive / dressed) or 0.1 (multiplicative).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simplex_scale: Option<f64>,
    #[serde(default = "default_c0_scale")]
    pub c0_scale: f64,
    /// dCRAB stops when a super-iteration improves the best `J` by less
    /// than this fraction.
    #[serde(default = "default_stall")]
    pub stall_threshold: f64,
    /// Frequency cutoff in rad/time; defaults to one harmonic above the
    /// highest principal harmonic in use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    #[serde(default)]
    pub envelope: Envelope,
    /// Stop once the best `J` reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_j: Option<f64>,
    /// Assembly rule for plain CRAB.
    #[serde(default)]
    pub crab_mode: AssemblyMode,
}

impl SearchConfig {
    pub fn new(n_funcs: usize) -> Self {
        Self {
            n_funcs,
            max_super_iterations: default_super_iterations(),
            max_evals_per_super_iteration: default_evals(),
            simplex_tolerance: default_tolerance(),
            simplex_scale: None,
            c0_scale: default_c0_scale(),
            stall_threshold: default_stall(),
            omega_max: None,
            envelope: Envelope::default(),
            target_j: None,
            crab_mode: AssemblyMode::Multiplicative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_funcs == 0 {
            return Err(invalid("n_funcs must be >= 1"));
        }
        if self.max_super_iterations == 0 {
            return Err(invalid("max_super_iterations must be >= 1"));
        }
        let unit = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("simplex_tolerance", self.simplex_tolerance)?;
        unit("stall_threshold", self.stall_threshold)?;
        for (name, v) in [
            ("simplex_scale", self.simplex_scale),
            ("omega_max", self.omega_max),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        if !(self.c0_scale.is_finite() && self.c0_scale > 0.0) {
            return Err(invalid(format!(
                "c0_scale must be > 0, got {}",
                self.c0_scale
            )));
        }
        if self.crab_mode == AssemblyMode::Dressed {
            return Err(invalid("crab_mode must be additive or multiplicative"));
        }
        Ok(())
    }

    fn omega_max_for(&self, duration: f64) -> f64 {
        self.omega_max
            .unwrap_or_else(|| 2.0 * PI * (self.n_funcs.div_ceil(2) + 1) as f64 / duration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Crab,
    Dcrab,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Termination {
    /// Best `J` reached the configured target.
    TargetReached,
    /// The simplex collapsed (CRAB) or a super-iteration brought no relative
    /// improvement above the stall threshold (dCRAB).
    Stalled,
    /// Evaluation budget or super-iteration count used up.
    BudgetExhausted,
    /// The evaluator failed irrecoverably; the record is partial.
    Aborted(String),
}

impl Termination {
    pub fn is_clean(&self) -> bool {
        !matches!(self, Termination::Aborted(_))
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::TargetReached => f.write_str("target reached"),
            Termination::Stalled => f.write_str("stalled"),
            Termination::BudgetExhausted => f.write_str("budget exhausted"),
            Termination::Aborted(why) => write!(f, "aborted: {why}"),
        }
    }
}

/// One call of the figure-of-merit oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub iter: usize,
    pub super_iter: usize,
    /// Full search vector; per control `[c0?, c_1..c_Nc]`.
    pub coefficients: Vec<f64>,
    /// `None` when the evaluation failed.
    #[serde(rename = "J")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperIterationRecord {
    /// 1-based.
    pub index: usize,
    pub mode: AssemblyMode,
    /// One basis per control.
    pub bases: Vec<BasisSet>,
    pub best_coefficients: Vec<CrabCoefficients>,
    #[serde(rename = "best_J")]
    pub best_j: f64,
    pub evaluations: usize,
    /// Constrained best pulses, one per control.
    pub best_pulses: Vec<Pulse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config: SearchConfig,
    pub constraint: Constraint,
    pub guess: Vec<Pulse>,
    #[serde(rename = "guess_J", default, skip_serializing_if = "Option::is_none")]
    pub guess_j: Option<f64>,
    pub evaluations: Vec<EvaluationRecord>,
    pub super_iterations: Vec<SuperIterationRecord>,
    pub final_pulses: Vec<Pulse>,
    #[serde(rename = "final_J")]
    pub final_j: f64,
    pub termination: Termination,
    pub total_evaluations: usize,
    /// Not serialized so that records stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Everything in the record except the per-evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config: SearchConfig,
    pub constraint: Constraint,
    #[serde(rename = "guess_J", default, skip_serializing_if = "Option::is_none")]
    pub guess_j: Option<f64>,
    pub super_iterations: Vec<SuperIterationRecord>,
    #[serde(rename = "final_J")]
    pub final_j: f64,
    pub termination: Termination,
    pub total_evaluations: usize,
}

impl OptimizationRecord {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            algorithm: self.algorithm,
            seed: self.seed,
            config: self.config.clone(),
            constraint: self.constraint,
            guess_j: self.guess_j,
            super_iterations: self.super_iterations.clone(),
            final_j: self.final_j,
            termination: self.termination.clone(),
            total_evaluations: self.total_evaluations,
        }
    }

    /// `J` of the running best after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.evaluations
            .iter()
            .map(|e| {
                if let Some(j) = e.j {
                    best = best.max(j);
                }
                best
            })
            .collect()
    }

    /// JSON lines, one evaluation each.
    pub fn evaluations_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.evaluations {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `records.jsonl`, `summary.json` and `final_pulse.csv` (with
    /// `final_pulse_<k>.csv` for further controls) into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("records.jsonl"), self.evaluations_jsonl()?)?;
        let mut summary = std::fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(&mut summary, &self.summary())?;
        summary.write_all(b"\n")?;
        for (k, p) in self.final_pulses.iter().enumerate() {
            let name = if k == 0 {
                "final_pulse.csv".to_string()
            } else {
                format!("final_pulse_{k}.csv")
            };
            p.write_csv(dir.join(name))?;
        }
        Ok(())
    }

    /// Rebuilds the final pulses from the guess and the stored per
    /// super-iteration bases and coefficients.
    pub fn replay(&self) -> Result<Vec<Pulse>> {
        let mut incumbent = self.guess.clone();
        for si in &self.super_iterations {
            let mut next = Vec::with_capacity(incumbent.len());
            for (k, (basis, coeffs)) in si.bases.iter().zip(&si.best_coefficients).enumerate() {
                let guess = &self.guess[k];
                let sampled = basis.sample(guess.grid())?;
                let previous = (si.mode == AssemblyMode::Dressed).then_some(&incumbent[k]);
                let raw = pulses::assemble_sampled(guess, &sampled, coeffs, si.mode, previous)?;
                next.push(self.constraint.apply(&raw)?);
            }
            incumbent = next;
        }
        Ok(incumbent)
    }
}

/// Per-control layout of the search vector of one super-iteration.
struct Layout {
    mode: AssemblyMode,
    n_funcs: usize,
    controls: usize,
}

impl Layout {
    fn stride(&self) -> usize {
        self.n_funcs + usize::from(self.mode == AssemblyMode::Dressed)
    }

    fn split(&self, x: &[f64]) -> Vec<CrabCoefficients> {
        x.chunks(self.stride())
            .map(|chunk| match self.mode {
                AssemblyMode::Dressed => CrabCoefficients {
                    c0: Some(chunk[0]),
                    c: chunk[1..].to_vec(),
                },
                _ => CrabCoefficients {
                    c0: None,
                    c: chunk.to_vec(),
                },
            })
            .collect()
    }

    fn start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.stride() * self.controls];
        if self.mode == AssemblyMode::Dressed {
            for k in 0..self.controls {
                x[k * self.stride()] = 1.0;
            }
        }
        x
    }
}

struct Driver<'a> {
    problem: &'a Problem,
    config: &'a SearchConfig,
    evaluator: &'a mut dyn FomEvaluator,
    evaluations: Vec<EvaluationRecord>,
    best_j: f64,
}

/// Result of one inner search over a fixed basis.
struct SuperIterationRun {
    record: SuperIterationRecord,
    stop: SearchStop,
}

impl Driver<'_> {
    fn run_super_iteration(
        &mut self,
        index: usize,
        mode: AssemblyMode,
        bases: Vec<BasisSet>,
        incumbent: &[Pulse],
    ) -> Result<SuperIterationRun> {
        let problem = self.problem;
        let config = self.config;
        let layout = Layout {
            mode,
            n_funcs: config.n_funcs,
            controls: problem.guess.len(),
        };
        let sampled: Vec<Vec<Vec<f64>>> = bases
            .iter()
            .zip(&problem.guess)
            .map(|(b, g)| b.sample(g.grid()))
            .collect::<Result<_>>()?;

        let scale = match (config.simplex_scale, mode) {
            (Some(s), _) => s,
            (None, AssemblyMode::Multiplicative) => 0.1,
            (None, _) => {
                let amp = incumbent.iter().map(Pulse::max_abs).fold(0.0, f64::max);
                if amp > 0.0 {
                    0.1 * amp
                } else {
                    1.0
                }
            }
        };
        let mut scales = vec![scale; layout.stride() * layout.controls];
        if mode == AssemblyMode::Dressed {
            for k in 0..layout.controls {
                scales[k * layout.stride()] = config.c0_scale;
            }
        }

        let build = |x: &[f64]| -> Result<Vec<Pulse>> {
            layout
                .split(x)
                .iter()
                .enumerate()
                .map(|(k, coeffs)| {
                    let previous = (mode == AssemblyMode::Dressed).then_some(&incumbent[k]);
                    let raw = pulses::assemble_sampled(
                        &problem.guess[k],
                        &sampled[k],
                        coeffs,
                        mode,
                        previous,
                    )?;
                    problem.constraint.apply(&raw)
                })
                .collect()
        };

        let mut si_best: Option<(f64, Vec<f64>, Vec<Pulse>)> = None;
        let mut si_evals = 0usize;
        let nm = NelderMeadConfig {
            max_evals: config.max_evals_per_super_iteration,
            tolerance: config.simplex_tolerance,
            target: config.target_j,
        };
        let outcome = nelder_mead(
            |x| {
                si_evals += 1;
                let iter = self.evaluations.len();
                let result =
                    build(x).and_then(|p| self.evaluator.evaluate(iter, &p).map(|e| (e, p)));
                let mut rec = EvaluationRecord {
                    iter,
                    super_iter: index,
                    coefficients: x.to_vec(),
                    j: None,
                    err: None,
                    failure: None,
                };
                match result {
                    Ok((e, p)) if e.j.is_finite() => {
                        rec.j = Some(e.j);
                        rec.err = e.err;
                        self.evaluations.push(rec);
                        if si_best.as_ref().is_none_or(|b| e.j > b.0) {
                            si_best = Some((e.j, x.to_vec(), p));
                        }
                        Ok(e.j)
                    }
                    Ok((e, _)) => {
                        rec.failure = Some(format!("non-finite J ({})", e.j));
                        self.evaluations.push(rec);
                        Ok(f64::NEG_INFINITY)
                    }
                    Err(e) if is_fatal(&e) => Err(e),
                    Err(e) => {
                        log::debug!("evaluation {iter} failed: {e}");
                        rec.failure = Some(e.to_string());
                        self.evaluations.push(rec);
                        Ok(f64::NEG_INFINITY)
                    }
                }
            },
            &layout.start(),
            &scales,
            &nm,
        )?;

        let (best_j, best_x, best_pulses) = match si_best {
            Some(b) => b,
            // nothing evaluable: keep the incumbent
            None => (f64::NEG_INFINITY, layout.start(), incumbent.to_vec()),
        };
        if best_j > self.best_j {
            self.best_j = best_j;
        }
        Ok(SuperIterationRun {
            record: SuperIterationRecord {
                index,
                mode,
                bases,
                best_coefficients: layout.split(&best_x),
                best_j,
                evaluations: si_evals,
                best_pulses,
            },
            stop: outcome.stop,
        })
    }
}

fn draw_bases(
    problem: &Problem,
    config: &SearchConfig,
    master: u64,
    si: usize,
) -> Result<Vec<BasisSet>> {
    let grid = problem.guess[0].grid();
    let omega_max = config.omega_max_for(grid.duration());
    (0..problem.guess.len())
        .map(|k| {
            let s = seed::derive(master, &[si as u64, k as u64]);
            pulses::sample_basis(config.n_funcs, grid, omega_max, config.envelope, s)
        })
        .collect()
}

fn empty_record(
    algorithm: Algorithm,
    problem: &Problem,
    config: &SearchConfig,
    seed: u64,
) -> OptimizationRecord {
    OptimizationRecord {
        algorithm,
        seed,
        config: config.clone(),
        constraint: problem.constraint,
        guess: problem.guess.clone(),
        guess_j: None,
        evaluations: Vec::new(),
        super_iterations: Vec::new(),
        final_pulses: problem.guess.clone(),
        final_j: f64::NEG_INFINITY,
        termination: Termination::BudgetExhausted,
        total_evaluations: 0,
        wall_clock: Duration::ZERO,
    }
}

/// Plain CRAB: one random basis, coefficients optimized from zero.
pub fn run_crab(
    problem: &Problem,
    config: &SearchConfig,
    seed: u64,
    evaluator: &mut dyn FomEvaluator,
) -> Result<OptimizationRecord> {
    run(Algorithm::Crab, problem, config, seed, evaluator)
}

/// dCRAB: repeated super-iterations, each dressing the incumbent pulse with
/// a fresh random basis. The first evaluation of every super-iteration
/// (`c0 = 1`, `c_i = 0`) reproduces the incumbent.
pub fn run_dcrab(
    problem: &Problem,
    config: &SearchConfig,
    seed: u64,
    evaluator: &mut dyn FomEvaluator,
) -> Result<OptimizationRecord> {
    run(Algorithm::Dcrab, problem, config, seed, evaluator)
}

/// Runs `algorithm`. Configuration errors are returned as `Err`; evaluator
/// failures end the run with [`Termination::Aborted`] and a partial record.
pub fn run(
    algorithm: Algorithm,
    problem: &Problem,
    config: &SearchConfig,
    seed: u64,
    evaluator: &mut dyn FomEvaluator,
) -> Result<OptimizationRecord> {
    problem.validate()?;
    config.validate()?;
    if algorithm == Algorithm::Crab && config.crab_mode == AssemblyMode::Multiplicative {
        if let Some(k) = problem.guess.iter().position(|g| g.max_abs() == 0.0) {
            return Err(invalid(format!(
                "guess {k} is identically zero; multiplicative CRAB cannot move it (use additive mode)"
            )));
        }
    }
    let started = Instant::now();
    let mut record = empty_record(algorithm, problem, config, seed);
    if config.max_evals_per_super_iteration == 0 {
        record.wall_clock = started.elapsed();
        return Ok(record);
    }

    let mut driver = Driver {
        problem,
        config,
        evaluator,
        evaluations: Vec::new(),
        best_j: f64::NEG_INFINITY,
    };
    let mut incumbent = problem.guess.clone();
    let mut incumbent_j = f64::NEG_INFINITY;
    let rounds = match algorithm {
        Algorithm::Crab => 1,
        Algorithm::Dcrab => config.max_super_iterations,
    };
    let mode = match algorithm {
        Algorithm::Crab => config.crab_mode,
        Algorithm::Dcrab => AssemblyMode::Dressed,
    };

    let termination = 'outer: {
        for j in 1..=rounds {
            let bases = match draw_bases(problem, config, seed, j) {
                Ok(b) => b,
                Err(e) => {
                    record.evaluations = std::mem::take(&mut driver.evaluations);
                    return Err(e);
                }
            };
            let run = match driver.run_super_iteration(j, mode, bases, &incumbent) {
                Ok(run) => run,
                Err(e) if is_fatal(&e) => break 'outer Termination::Aborted(e.to_string()),
                Err(e) => {
                    record.evaluations = std::mem::take(&mut driver.evaluations);
                    return Err(e);
                }
            };
            if j == 1 {
                // the search starts at the identity coefficients
                record.guess_j = driver.evaluations.first().and_then(|e| e.j);
            }
            let previous_j = incumbent_j;
            let mut si = run.record;
            if si.best_j >= incumbent_j {
                incumbent = si.best_pulses.clone();
                incumbent_j = si.best_j;
            } else {
                // the incumbent stays; record it as this round's best
                let layout = Layout {
                    mode,
                    n_funcs: config.n_funcs,
                    controls: incumbent.len(),
                };
                si.best_coefficients = layout.split(&layout.start());
                si.best_j = incumbent_j;
                si.best_pulses = incumbent.clone();
            }
            record.super_iterations.push(si);

            if config.target_j.is_some_and(|t| incumbent_j >= t) || run.stop == SearchStop::Target {
                break 'outer Termination::TargetReached;
            }
            if algorithm == Algorithm::Crab {
                break 'outer match run.stop {
                    SearchStop::Converged => Termination::Stalled,
                    _ => Termination::BudgetExhausted,
                };
            }
            if j > 1 && previous_j.is_finite() {
                let gain = (incumbent_j - previous_j) / previous_j.abs().max(f64::MIN_POSITIVE);
                if gain < config.stall_threshold {
                    break 'outer Termination::Stalled;
                }
            }
        }
        Termination::BudgetExhausted
    };

    record.evaluations = driver.evaluations;
    record.total_evaluations = record.evaluations.len();
    if incumbent_j.is_finite() {
        record.final_pulses = incumbent;
        record.final_j = incumbent_j;
    }
    record.termination = termination;
    record.wall_clock = started.elapsed();
    Ok(record)
}
