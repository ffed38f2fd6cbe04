//! Scenario configuration: a JSON document with unit-suffixed field names,
//! validated as a whole so that every violated condition is reported at once.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{
    validate_initial, validate_parameters, ConstraintSpec, FollowerGains, HeadGains, TrainPairErrors, Violation,
};
use crate::faults::FaultModel;
use crate::model::{CarriageParams, ConsistTopology, CouplerParams, DavisCoefficients};
use crate::observer::{build_augmented_pair, check_observability};
use crate::reference::{default_profile, Reference, ReferenceProfile};

pub const PRESETS: &[&str] = &["paper-s5"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid scenario:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            Self::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InitialEstimate {
    pub position_m: f64,
    pub velocity_mps: f64,
    pub accel_mps2: f64,
    pub fault: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCarriage {
    pub position_m: f64,
    pub velocity_mps: f64,
    #[serde(default)]
    pub accel_mps2: f64,
    /// Defaults to exact position and velocity, zero acceleration and fault.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<InitialEstimate>,
}

impl InitialCarriage {
    pub fn estimate_or_default(&self) -> InitialEstimate {
        self.estimate.unwrap_or(InitialEstimate {
            position_m: self.position_m,
            velocity_mps: self.velocity_mps,
            accel_mps2: 0.0,
            fault: [0.0; 3],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarriageConfig {
    #[serde(flatten)]
    pub params: CarriageParams,
    pub initial: InitialCarriage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub carriages: Vec<CarriageConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverConfig {
    /// Eigenvalues of `A + K C` for every carriage.
    pub desired_eigenvalues: Vec<f64>,
    /// Eigenvalue of the position channel, `-k1`.
    pub position_eigenvalue: f64,
    /// Use this `K` instead of synthesising one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_override: Option<[f64; 5]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Composite,
    Plant,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub step_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub representation: Representation,
    /// Record every n-th step.
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Variance of the jerk disturbance ((m/s^3)^2).
    pub variance_m2ps6: f64,
    pub seed: u64,
}

/// Tail-window tolerances for the convergence verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tail_window_s: f64,
    pub xtilde_m: f64,
    pub vtilde_mps: f64,
    pub gap_m: f64,
    pub gap_velocity_mps: f64,
}

impl Tolerances {
    pub fn noise_free() -> Self {
        Self { tail_window_s: 100.0, xtilde_m: 1.0, vtilde_mps: 0.05, gap_m: 0.05, gap_velocity_mps: 0.02 }
    }

    pub fn noisy() -> Self {
        Self { tail_window_s: 100.0, xtilde_m: 5.0, vtilde_mps: 0.5, gap_m: 0.5, gap_velocity_mps: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub trains: Vec<TrainConfig>,
    pub davis: DavisCoefficients,
    pub coupler: CouplerParams,
    pub constraints: ConstraintSpec,
    pub follower_gains: FollowerGains,
    pub head_gains: HeadGains,
    pub observer: ObserverConfig,
    pub reference: ReferenceProfile,
    pub integration: IntegrationConfig,
    pub noise: NoiseConfig,
    /// Tolerances used when noise is disabled.
    pub tolerances: Tolerances,
    /// Tolerances used when noise is enabled.
    pub noisy_tolerances: Tolerances,
    #[serde(default)]
    pub abort_on_violation: bool,
}

impl ScenarioConfig {
    pub fn topology(&self) -> Result<ConsistTopology, crate::model::ModelError> {
        ConsistTopology::new(self.trains.iter().map(|t| t.carriages.len()).collect())
    }

    pub fn carriages(&self) -> impl Iterator<Item = &CarriageConfig> {
        self.trains.iter().flat_map(|t| t.carriages.iter())
    }

    pub fn active_tolerances(&self) -> Tolerances {
        if self.noise.enabled {
            self.noisy_tolerances
        } else {
            self.tolerances
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// SHA-256 of the compact JSON serialisation.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("scenario serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Initial spacing errors, lead train against the reference first.
    pub fn initial_pair_errors(&self, reference: &Reference) -> Vec<TrainPairErrors> {
        let ell1 = self.head_gains.ell1;
        let ds = self.constraints.service_distance;
        let mut out = Vec::with_capacity(self.trains.len());
        let r = reference.evaluate(0.0).ok();
        for (i, train) in self.trains.iter().enumerate() {
            let Some(head) = train.carriages.first() else { continue };
            let front = if i == 0 {
                match r {
                    Some(r) => (r.x, r.v),
                    None => continue,
                }
            } else {
                match self.trains[i - 1].carriages.last() {
                    Some(tail) => (tail.initial.position_m, tail.initial.velocity_mps),
                    None => continue,
                }
            };
            out.push(TrainPairErrors::new(front, (head.initial.position_m, head.initial.velocity_mps), ds, ell1));
        }
        out
    }

    /// Every violated condition, or `Ok` when the scenario can be simulated.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let mut push = |name: &str, value: f64, bound: f64| v.push(Violation { name: name.into(), value, bound });
        if self.trains.is_empty() {
            push("train count >= 1", 0.0, 1.0);
        }
        for (i, t) in self.trains.iter().enumerate() {
            if t.carriages.len() < 2 {
                push(&format!("train {}: carriages >= 2", i + 1), t.carriages.len() as f64, 2.0);
            }
            for (j, c) in t.carriages.iter().enumerate() {
                let at = format!("carriage ({}, {})", i + 1, j + 1);
                if !(c.params.mass > 0.0) {
                    push(&format!("{at}: mass_kg > 0"), c.params.mass, 0.0);
                }
                if !(c.params.actuator_rate > 0.0) {
                    push(&format!("{at}: actuator_rate_per_s > 0"), c.params.actuator_rate, 0.0);
                }
                if !c.params.fault.is_valid() {
                    push(&format!("{at}: fault windows ordered and omega >= 0"), c.params.fault.omega, 0.0);
                }
                let (a, cr) = build_augmented_pair(c.params.fault_accel_row(), &c.params.fault.exosystem());
                let ad = nalgebra::DMatrix::from_column_slice(5, 5, a.as_slice());
                let cd = nalgebra::DMatrix::from_row_slice(1, 5, cr.transpose().as_slice());
                if self.observer.gain_override.is_none() && !check_observability(&ad, &cd) {
                    push(&format!("{at}: observable fault model"), 0.0, 0.0);
                }
                let init = &c.initial;
                if ![init.position_m, init.velocity_mps, init.accel_mps2].iter().all(|x| x.is_finite()) {
                    push(&format!("{at}: finite initial state"), f64::NAN, 0.0);
                }
            }
        }
        if !self.davis.is_valid() {
            push("davis coefficients >= 0", self.davis.c0.min(self.davis.c1).min(self.davis.c2), 0.0);
        }
        if !(self.coupler.stiffness > 0.0) {
            push("stiffness_n_per_m > 0", self.coupler.stiffness, 0.0);
        }
        if !(self.coupler.damping > 0.0) {
            push("damping_ns_per_m > 0", self.coupler.damping, 0.0);
        }
        if !(self.coupler.spacing > 0.0) {
            push("spacing_m > 0", self.coupler.spacing, 0.0);
        }
        let obs = &self.observer;
        if obs.desired_eigenvalues.len() != 5 {
            push("observer: five desired eigenvalues", obs.desired_eigenvalues.len() as f64, 5.0);
        }
        for &e in &obs.desired_eigenvalues {
            if !(e < 0.0) {
                push("observer: desired eigenvalue < 0", e, 0.0);
            }
        }
        if !(obs.position_eigenvalue < 0.0) {
            push("observer: position eigenvalue < 0", obs.position_eigenvalue, 0.0);
        }
        let int = &self.integration;
        if !(int.step_s > 0.0) {
            push("step_s > 0", int.step_s, 0.0);
        }
        if !(int.duration_s > 0.0) {
            push("duration_s > 0", int.duration_s, 0.0);
        }
        if int.record_every == 0 {
            push("record_every >= 1", 0.0, 1.0);
        }
        if self.noise.enabled && !(self.noise.variance_m2ps6 >= 0.0) {
            push("variance_m2ps6 >= 0", self.noise.variance_m2ps6, 0.0);
        }
        if let Err(list) = validate_parameters(&self.follower_gains, &self.head_gains, &self.constraints) {
            v.extend(list);
        }
        match Reference::new(self.reference.clone()) {
            Ok(reference) => {
                if int.duration_s > reference.horizon() + 1e-9 {
                    v.push(Violation {
                        name: "duration_s <= reference horizon".into(),
                        value: int.duration_s,
                        bound: reference.horizon(),
                    });
                }
                let bounds = self.constraints.bounds(self.head_gains.ell1);
                if let Err(list) = validate_initial(&self.initial_pair_errors(&reference), &bounds) {
                    v.extend(list);
                }
            }
            Err(e) => v.push(Violation { name: format!("reference profile: {e}"), value: f64::NAN, bound: f64::NAN }),
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config = Self::from_json(&text)?;
        config.validate()?;
        Ok(config)
    }
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    match name {
        "paper-s5" => Ok(paper_s5()),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

/// Three three-carriage trains with identical carriages, staggered fault
/// windows and Gaussian jerk disturbance.
pub fn paper_s5() -> ScenarioConfig {
    let positions = [[13062.0, 13036.0, 13010.0], [5157.0, 5131.0, 5105.0], [52.0, 26.0, 0.0]];
    let velocities = [[20.5, 20.2, 20.3], [19.8, 19.9, 20.5], [19.7, 20.5, 20.2]];
    let service_distance = 7053.0;
    let trains = (0..3)
        .map(|i| TrainConfig {
            carriages: (0..3)
                .map(|j| {
                    let k = (3 * i + j) as f64;
                    let (i1, j1) = ((i + 1) as f64, (j + 1) as f64);
                    CarriageConfig {
                        params: CarriageParams {
                            mass: 8e4,
                            actuator_rate: 50.0,
                            fault: FaultModel {
                                omega: 1.0,
                                upsilon: 2e5,
                                nu: 2e5,
                                constant_amplitude: 1.0,
                                periodic_amplitude: 1.0,
                                phase: 6.0 * (i1 - 1.0) + 2.0 * j1,
                                constant_window: Some([400.0 + 200.0 * k, 1400.0 + 100.0 * k]),
                                periodic_window: Some([500.0 + 200.0 * k, 2300.0]),
                            },
                        },
                        initial: InitialCarriage {
                            position_m: positions[i][j],
                            velocity_mps: velocities[i][j],
                            accel_mps2: 0.0,
                            estimate: None,
                        },
                    }
                })
                .collect(),
        })
        .collect();
    ScenarioConfig {
        name: "paper-s5".into(),
        trains,
        davis: DavisCoefficients { c0: 0.01176, c1: 0.00077616, c2: 1.6e-5 },
        coupler: CouplerParams { stiffness: 1.6e5, damping: 600.0, spacing: 26.0 },
        constraints: ConstraintSpec {
            gamma1: 9000.0,
            gamma2: 4702.0,
            service_distance,
            sigma1: 50.0,
            sigma2: 50.0,
        },
        follower_gains: FollowerGains { l1: 0.1, l2: 0.1, l3: 0.1 },
        head_gains: HeadGains { ell1: 0.01, ell2: 2.1, ell3: 4.3, ell4: 1.0 },
        observer: ObserverConfig {
            desired_eigenvalues: vec![-3.0; 5],
            position_eigenvalue: -3.0,
            gain_override: None,
        },
        reference: default_profile(positions[0][0] + service_distance),
        integration: IntegrationConfig {
            step_s: 0.01,
            duration_s: 2400.0,
            representation: Representation::Composite,
            record_every: 1,
        },
        noise: NoiseConfig { enabled: true, variance_m2ps6: 0.5, seed: 0 },
        tolerances: Tolerances::noise_free(),
        noisy_tolerances: Tolerances::noisy(),
        abort_on_violation: false,
    }
}
