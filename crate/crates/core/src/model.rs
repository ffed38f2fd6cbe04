//! Carriage dynamics: the physical plant (position, velocity, traction force)
//! and its third-order composite equivalent (position, velocity, acceleration).
//!
//! Carriage indices are zero-based throughout: index 0 is the head carriage
//! and `count - 1` the tail. Every train has at least two carriages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faults::FaultModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("carriage index {index} out of range for a train of {count} carriages")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("a train needs at least two carriages, got {0}")]
    TooFewCarriages(usize),
    #[error("a consist needs at least one train")]
    NoTrains,
}

/// Specific running resistance `c0 + c1 v + c2 v^2` (N/kg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DavisCoefficients {
    #[serde(rename = "c0_n_per_kg")]
    pub c0: f64,
    #[serde(rename = "c1_ns_per_m_kg")]
    pub c1: f64,
    #[serde(rename = "c2_ns2_per_m2_kg")]
    pub c2: f64,
}

impl DavisCoefficients {
    pub fn is_valid(&self) -> bool {
        self.c0 >= 0.0 && self.c1 >= 0.0 && self.c2 >= 0.0
    }

    /// dR/dv
    pub fn slope(&self, v: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * v
    }
}

/// Spring-damper coupler between adjacent carriages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplerParams {
    #[serde(rename = "stiffness_n_per_m")]
    pub stiffness: f64,
    #[serde(rename = "damping_ns_per_m")]
    pub damping: f64,
    /// Nominal spacing between carriage reference points, carriage length included.
    #[serde(rename = "spacing_m")]
    pub spacing: f64,
}

impl CouplerParams {
    pub fn is_valid(&self) -> bool {
        self.stiffness > 0.0 && self.damping > 0.0 && self.spacing > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarriageParams {
    #[serde(rename = "mass_kg")]
    pub mass: f64,
    /// Actuator time constant `r` of `tau' = -r tau + varpi + E f`.
    #[serde(rename = "actuator_rate_per_s")]
    pub actuator_rate: f64,
    pub fault: FaultModel,
}

impl CarriageParams {
    /// Fault input row `E = [upsilon, 0, nu * omega]` (N/s per fault unit).
    pub fn fault_input_row(&self) -> [f64; 3] {
        self.fault.input_row()
    }

    /// `C = E / m` (m/s^3 per fault unit).
    pub fn fault_accel_row(&self) -> [f64; 3] {
        let e = self.fault_input_row();
        [e[0] / self.mass, e[1] / self.mass, e[2] / self.mass]
    }
}

/// Trains and their carriage counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistTopology {
    carriages_per_train: Vec<usize>,
    offsets: Vec<usize>,
}

impl ConsistTopology {
    pub fn new(carriages_per_train: Vec<usize>) -> Result<Self, ModelError> {
        if carriages_per_train.is_empty() {
            return Err(ModelError::NoTrains);
        }
        if let Some(&m) = carriages_per_train.iter().find(|&&m| m < 2) {
            return Err(ModelError::TooFewCarriages(m));
        }
        let mut offsets = Vec::with_capacity(carriages_per_train.len());
        let mut acc = 0;
        for &m in &carriages_per_train {
            offsets.push(acc);
            acc += m;
        }
        Ok(Self {
            carriages_per_train,
            offsets,
        })
    }

    pub fn train_count(&self) -> usize {
        self.carriages_per_train.len()
    }

    pub fn carriages_in(&self, train: usize) -> usize {
        self.carriages_per_train[train]
    }

    pub fn carriages_per_train(&self) -> &[usize] {
        &self.carriages_per_train
    }

    pub fn total_carriages(&self) -> usize {
        self.carriages_per_train.iter().sum()
    }

    /// Flat index of carriage `car` of train `train`.
    pub fn flat(&self, train: usize, car: usize) -> usize {
        self.offsets[train] + car
    }

    pub fn train_range(&self, train: usize) -> std::ops::Range<usize> {
        let start = self.offsets[train];
        start..start + self.carriages_per_train[train]
    }

    /// `(train, car)` pairs in chain order: train 0 head to tail, then train 1, ...
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.carriages_per_train
            .iter()
            .enumerate()
            .flat_map(|(i, &m)| (0..m).map(move |j| (i, j)))
    }
}

/// Which branch of the piecewise coupling definitions a carriage falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarriageRole {
    Head,
    Interior,
    Tail,
}

impl CarriageRole {
    pub fn of(index: usize, count: usize) -> Result<Self, ModelError> {
        if count < 2 {
            return Err(ModelError::TooFewCarriages(count));
        }
        match index {
            0 => Ok(Self::Head),
            j if j + 1 == count => Ok(Self::Tail),
            j if j < count => Ok(Self::Interior),
            _ => Err(ModelError::IndexOutOfRange { index, count }),
        }
    }

    pub fn has_front(self) -> bool {
        self != Self::Head
    }

    pub fn has_rear(self) -> bool {
        self != Self::Tail
    }

    /// Number of couplers attached to the carriage.
    fn couplers(self) -> f64 {
        match self {
            Self::Interior => 2.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub x: f64,
    pub v: f64,
    pub tau: f64,
    pub f: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositeState {
    pub x: f64,
    pub v: f64,
    pub w: f64,
    pub f: [f64; 3],
}

pub fn davis_resistance(v: f64, coeffs: &DavisCoefficients) -> f64 {
    coeffs.c0 + coeffs.c1 * v + coeffs.c2 * v * v
}

/// Coupler force `B_ij(x_i, v_i)` acting against carriage `j` (N).
pub fn coupling_force(
    j: usize,
    positions: &[f64],
    velocities: &[f64],
    coupler: &CouplerParams,
) -> Result<f64, ModelError> {
    let count = positions.len();
    let (a, b, d) = (coupler.stiffness, coupler.damping, coupler.spacing);
    let (x, v) = (positions, velocities);
    Ok(match CarriageRole::of(j, count)? {
        CarriageRole::Head => a * (x[0] - x[1] - d) + b * (v[0] - v[1]),
        CarriageRole::Interior => {
            a * (2.0 * x[j] - x[j - 1] - x[j + 1]) + b * (2.0 * v[j] - v[j - 1] - v[j + 1])
        }
        CarriageRole::Tail => a * (x[j] - x[j - 1] + d) + b * (v[j] - v[j - 1]),
    })
}

/// The coefficients of the acceleration equation
/// `w' = B1 w + B2 w_front + B3 w_rear + B4 + ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingCoefficients {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

/// `B1(v)`: self-feedback of the acceleration (actuator rate, drag slope, damping).
pub fn coefficient_b1(
    role: CarriageRole,
    v: f64,
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> f64 {
    -role.couplers() * coupler.damping / carriage.mass - davis.slope(v) - carriage.actuator_rate
}

/// `(B2, B3)`: damping coupling to the front and rear neighbours' accelerations.
pub fn coefficient_b23(role: CarriageRole, carriage: &CarriageParams, coupler: &CouplerParams) -> (f64, f64) {
    let k = coupler.damping / carriage.mass;
    (
        if role.has_front() { k } else { 0.0 },
        if role.has_rear() { k } else { 0.0 },
    )
}

/// `B4(v_i)`: stiffness term driven by velocity differences.
pub fn coefficient_b4(
    j: usize,
    velocities: &[f64],
    carriage: &CarriageParams,
    coupler: &CouplerParams,
) -> Result<f64, ModelError> {
    let v = velocities;
    let diff = match CarriageRole::of(j, v.len())? {
        CarriageRole::Head => v[0] - v[1],
        CarriageRole::Interior => 2.0 * v[j] - v[j - 1] - v[j + 1],
        CarriageRole::Tail => v[j] - v[j - 1],
    };
    Ok(-coupler.stiffness * diff / carriage.mass)
}

pub fn coefficient_b(
    j: usize,
    velocities: &[f64],
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> Result<CouplingCoefficients, ModelError> {
    let role = CarriageRole::of(j, velocities.len())?;
    let (b2, b3) = coefficient_b23(role, carriage, coupler);
    Ok(CouplingCoefficients {
        b1: coefficient_b1(role, velocities[j], carriage, davis, coupler),
        b2,
        b3,
        b4: coefficient_b4(j, velocities, carriage, coupler)?,
    })
}

/// The velocity functions used by the observer's auxiliary inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DFunctions {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

pub fn d1(
    role: CarriageRole,
    v: f64,
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> f64 {
    -role.couplers() * coupler.damping / carriage.mass * v - (davis.c1 * v + davis.c2 * v * v)
}

pub fn d2(role: CarriageRole, v_front: f64, carriage: &CarriageParams, coupler: &CouplerParams) -> f64 {
    if role.has_front() {
        coupler.damping / carriage.mass * v_front
    } else {
        0.0
    }
}

pub fn d3(role: CarriageRole, v_rear: f64, carriage: &CarriageParams, coupler: &CouplerParams) -> f64 {
    if role.has_rear() {
        coupler.damping / carriage.mass * v_rear
    } else {
        0.0
    }
}

/// All three D-functions evaluated at the same scalar velocity.
pub fn coefficient_d(
    j: usize,
    count: usize,
    v: f64,
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> Result<DFunctions, ModelError> {
    let role = CarriageRole::of(j, count)?;
    Ok(DFunctions {
        d1: d1(role, v, carriage, davis, coupler),
        d2: d2(role, v, carriage, coupler),
        d3: d3(role, v, carriage, coupler),
    })
}

/// Physical force rate `varpi` realising the jerk-level input `u`.
pub fn preliminary_control(
    u: f64,
    j: usize,
    positions: &[f64],
    velocities: &[f64],
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> Result<f64, ModelError> {
    let m = carriage.mass;
    let r = carriage.actuator_rate;
    let coupling = coupling_force(j, positions, velocities, coupler)?;
    let b4 = coefficient_b4(j, velocities, carriage, coupler)?;
    Ok(m * u + r * coupling + m * r * davis_resistance(velocities[j], davis) - m * b4)
}

/// Acceleration implied by the force balance of the plant form.
pub fn plant_acceleration(
    j: usize,
    tau: f64,
    positions: &[f64],
    velocities: &[f64],
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> Result<f64, ModelError> {
    let coupling = coupling_force(j, positions, velocities, coupler)?;
    let m = carriage.mass;
    Ok((tau - coupling - m * davis_resistance(velocities[j], davis)) / m)
}

/// Traction force consistent with acceleration `w`: `tau = m w + B + m R(v)`.
pub fn traction_for_acceleration(
    j: usize,
    w: f64,
    positions: &[f64],
    velocities: &[f64],
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> Result<f64, ModelError> {
    let coupling = coupling_force(j, positions, velocities, coupler)?;
    let m = carriage.mass;
    Ok(m * w + coupling + m * davis_resistance(velocities[j], davis))
}

/// Derivatives of `(x, v, tau)`; `fault_force` is `E f` (N/s).
/// The fault state itself is generated outside the plant.
pub fn plant_rhs(
    j: usize,
    tau: f64,
    varpi: f64,
    fault_force: f64,
    positions: &[f64],
    velocities: &[f64],
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> Result<[f64; 3], ModelError> {
    let accel = plant_acceleration(j, tau, positions, velocities, carriage, davis, coupler)?;
    Ok([
        velocities[j],
        accel,
        -carriage.actuator_rate * tau + varpi + fault_force,
    ])
}

/// Derivatives of `(x, v, w)` of the composite model; `fault_accel` is `C f`.
pub fn composite_rhs(
    j: usize,
    velocities: &[f64],
    accelerations: &[f64],
    fault_accel: f64,
    u: f64,
    carriage: &CarriageParams,
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
) -> Result<[f64; 3], ModelError> {
    let role = CarriageRole::of(j, velocities.len())?;
    let b1 = coefficient_b1(role, velocities[j], carriage, davis, coupler);
    let (b2, b3) = coefficient_b23(role, carriage, coupler);
    let w = accelerations;
    let mut jerk = b1 * w[j] + fault_accel + u;
    if role.has_front() {
        jerk += b2 * w[j - 1];
    }
    if role.has_rear() {
        jerk += b3 * w[j + 1];
    }
    Ok([velocities[j], w[j], jerk])
}
