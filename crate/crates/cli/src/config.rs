// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dcrab::dynamics::{build_model, DensityMatrix, InitialState, Model, ModelSpec, QuantumState};
use dcrab::loop_server::{SessionConfig, Transport};
use dcrab::objectives::ObjectiveSpec;
use dcrab::optimizer::{Algorithm, Problem, SearchConfig, SimulatedFom};
use dcrab::pulses::{Pulse, TimeGrid};

/// A configuration problem located by a JSON pointer into the document.
#[derive(Debug)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() {
            "/"
        } else {
            &self.pointer
        };
        write!(f, "{at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn at(pointer: &str, message: impl fmt::Display) -> Self {
        Self {
            pointer: pointer.to_string(),
            message: message.to_string(),
        }
    }
}

fn escape(segment: &str) -> String {
    segment.replace('~', "~0").replace('/', "~1")
}

/// Parses `text` into `T`, reporting failures with the JSON pointer of the
/// offending value. Missing fields point at the field itself.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut pointer = String::new();
        for seg in e.path().iter() {
            use serde_path_to_error::Segment;
            match seg {
                Segment::Seq { index } => pointer += &format!("/{index}"),
                Segment::Map { key } => pointer += &format!("/{}", escape(key)),
                Segment::Enum { .. } | Segment::Unknown => {}
            }
        }
        let message = e.inner().to_string();
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|m| m.split('`').next())
        {
            pointer += &format!("/{}", escape(field));
        }
        ConfigError { pointer, message }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub duration: f64,
    pub samples: usize,
}

/// Where a guess pulse comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuessSpec {
    Constant {
        value: f64,
    },
    /// Constant pulse with the given area `int f dt`.
    Area {
        area: f64,
    },
    /// CSV file (`t,f` rows); relative paths resolve against the config file.
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Basis { index: usize },
    Random { seed: u64 },
    Vector { amplitudes: QuantumState },
    Density { matrix: DensityMatrix },
}

impl Default for StateSpec {
    fn default() -> Self {
        StateSpec::Basis { index: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSpec {
    pub transport: Transport,
    /// Seconds to wait for each reply.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_algorithm() -> Algorithm {
    Algorithm::Dcrab
}

fn one() -> usize {
    1
}

/// Everything one optimization run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub guess: OneOrMany<GuessSpec>,
    #[serde(default)]
    pub initial: StateSpec,
    pub objective: ObjectiveSpec,
    pub search: SearchConfig,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    /// Number of consecutive seeds to run, starting at `seed`.
    #[serde(default = "one")]
    pub ensemble: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serve: Option<ServeSpec>,
}

/// A config with every reference resolved.
pub struct Resolved {
    pub model: Model,
    pub initial: InitialState,
    pub guess: Vec<Pulse>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let OneOrMany::One(g) = &mut cfg.guess {
            absolutize(g, base);
        }
        if let OneOrMany::Many(gs) = &mut cfg.guess {
            gs.iter_mut().for_each(|g| absolutize(g, base));
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let model = build_model(&self.model).map_err(|e| ConfigError::at("/model", e))?;
        let grid = TimeGrid::new(self.grid.duration, self.grid.samples)
            .map_err(|e| ConfigError::at("/grid", e))?;
        let specs = self.guess.to_vec();
        if specs.len() != model.controls().len() {
            return Err(ConfigError::at(
                "/guess",
                format!(
                    "{} guess pulses for a model with {} controls",
                    specs.len(),
                    model.controls().len()
                ),
            ));
        }
        let mut guess = Vec::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            let pointer = if matches!(self.guess, OneOrMany::One(_)) {
                "/guess".to_string()
            } else {
                format!("/guess/{k}")
            };
            let pulse = match spec {
                GuessSpec::Constant { value } => Pulse::constant(grid, *value),
                GuessSpec::Area { area } => Pulse::constant(grid, area / grid.duration()),
                GuessSpec::Csv { path } => Pulse::read_csv(path).and_then(|p| {
                    let g = p.grid();
                    if g.samples() == grid.samples()
                        && (g.duration() - grid.duration()).abs() <= 1e-9 * grid.duration()
                    {
                        Pulse::new(grid, p.values().to_vec())
                    } else {
                        Err(dcrab::Error::GridMismatch(format!(
                            "{} does not match /grid",
                            path.display()
                        )))
                    }
                }),
            }
            .map_err(|e| ConfigError::at(&pointer, e))?;
            guess.push(pulse);
        }
        let dim = model.dim();
        let initial: InitialState = match &self.initial {
            StateSpec::Basis { index } => QuantumState::basis(dim, *index).map(Into::into),
            StateSpec::Random { seed } => QuantumState::random(dim, *seed).map(Into::into),
            StateSpec::Vector { amplitudes } => Ok(amplitudes.clone().into()),
            StateSpec::Density { matrix } => Ok(matrix.clone().into()),
        }
        .map_err(|e| ConfigError::at("/initial", e))?;
        self.objective
            .validate()
            .map_err(|e| ConfigError::at("/objective", e))?;
        self.search
            .validate()
            .map_err(|e| ConfigError::at("/search", e))?;
        if self.ensemble == 0 {
            return Err(ConfigError::at("/ensemble", "need at least one run"));
        }
        Ok(Resolved {
            model,
            initial,
            guess,
        })
    }

    pub fn problem(&self, resolved: &Resolved) -> Problem {
        Problem::new(resolved.guess.clone(), self.objective.constraint)
    }

    pub fn simulator(&self, resolved: &Resolved) -> SimulatedFom {
        SimulatedFom::new(
            resolved.model.clone(),
            resolved.initial.clone(),
            self.objective.clone(),
        )
    }

    pub fn session(&self, resolved: &Resolved, seed: u64) -> Result<SessionConfig, ConfigError> {
        let serve = self
            .serve
            .as_ref()
            .ok_or_else(|| ConfigError::at("/serve", "serve needs a transport section"))?;
        let session = SessionConfig {
            search: self.search.clone(),
            algorithm: self.algorithm,
            seed,
            guess: resolved.guess.clone(),
            constraint: self.objective.constraint,
            transport: serve.transport.clone(),
            timeout: serve.timeout,
        };
        session
            .validate()
            .map_err(|e| ConfigError::at("/serve", e))?;
        Ok(session)
    }
}

fn absolutize(g: &mut GuessSpec, base: &Path) {
    if let GuessSpec::Csv { path } = g {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}
