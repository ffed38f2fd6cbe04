//! Desired position/velocity/acceleration profile built from constant-jerk
//! phases, so that the jerk `u0` fed forward to the lead train is bounded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("phase {index} has non-positive duration {duration}")]
    BadDuration { index: usize, duration: f64 },
    #[error("reference velocity {value} leaves [0, {v_max}] at t = {time}")]
    VelocityOutOfRange { time: f64, value: f64, v_max: f64 },
    #[error("time {t} outside the reference horizon [0, {horizon}]")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("reference profile has no phases")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePhase {
    #[serde(rename = "duration_s")]
    pub duration: f64,
    #[serde(rename = "jerk_mps3")]
    pub jerk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    #[serde(rename = "position_m")]
    pub x0: f64,
    #[serde(rename = "velocity_mps")]
    pub v0: f64,
    #[serde(rename = "accel_mps2")]
    pub w0: f64,
    #[serde(rename = "v_max_mps")]
    pub v_max: f64,
    pub phases: Vec<ReferencePhase>,
}

/// `(x0, v0, w0, u0)` at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceSample {
    pub x: f64,
    pub v: f64,
    pub w: f64,
    pub u: f64,
}

impl ReferenceSample {
    fn advance(self, jerk: f64, dt: f64) -> Self {
        let (x, v, w) = (self.x, self.v, self.w);
        Self {
            x: x + v * dt + 0.5 * w * dt * dt + jerk * dt * dt * dt / 6.0,
            v: v + w * dt + 0.5 * jerk * dt * dt,
            w: w + jerk * dt,
            u: jerk,
        }
    }
}

/// Tolerance on the horizon end so that the last RK4 stage is admissible.
const HORIZON_SLACK: f64 = 1e-9;

/// A validated profile with precomputed phase boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    profile: ReferenceProfile,
    starts: Vec<f64>,
    boundary_states: Vec<ReferenceSample>,
    horizon: f64,
}

impl Reference {
    pub fn new(profile: ReferenceProfile) -> Result<Self, ReferenceError> {
        if profile.phases.is_empty() {
            return Err(ReferenceError::Empty);
        }
        let mut starts = Vec::with_capacity(profile.phases.len());
        let mut boundary_states = Vec::with_capacity(profile.phases.len());
        let mut t = 0.0;
        let mut state = ReferenceSample {
            x: profile.x0,
            v: profile.v0,
            w: profile.w0,
            u: profile.phases[0].jerk,
        };
        let check = |time: f64, value: f64| {
            let slack = 1e-9 * profile.v_max.abs().max(1.0);
            if value < -slack || value > profile.v_max + slack {
                Err(ReferenceError::VelocityOutOfRange { time, value, v_max: profile.v_max })
            } else {
                Ok(())
            }
        };
        check(0.0, state.v)?;
        for (index, phase) in profile.phases.iter().enumerate() {
            if !(phase.duration > 0.0) {
                return Err(ReferenceError::BadDuration { index, duration: phase.duration });
            }
            state.u = phase.jerk;
            starts.push(t);
            boundary_states.push(state);
            // interior extremum of the quadratic velocity
            if phase.jerk != 0.0 {
                let t_star = -state.w / phase.jerk;
                if t_star > 0.0 && t_star < phase.duration {
                    check(t + t_star, state.advance(phase.jerk, t_star).v)?;
                }
            }
            state = state.advance(phase.jerk, phase.duration);
            t += phase.duration;
            check(t, state.v)?;
        }
        Ok(Self {
            profile,
            starts,
            boundary_states,
            horizon: t,
        })
    }

    pub fn profile(&self) -> &ReferenceProfile {
        &self.profile
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn evaluate(&self, t: f64) -> Result<ReferenceSample, ReferenceError> {
        if !(t >= 0.0 && t <= self.horizon + HORIZON_SLACK) {
            return Err(ReferenceError::BeyondHorizon { t, horizon: self.horizon });
        }
        // last phase starting at or before t
        let k = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        let phase = &self.profile.phases[k];
        Ok(self.boundary_states[k].advance(phase.jerk, t - self.starts[k]))
    }

    /// Largest velocity reached, from the closed-form per-phase extrema.
    pub fn max_velocity(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (k, phase) in self.profile.phases.iter().enumerate() {
            let s = self.boundary_states[k];
            best = best.max(s.v).max(s.advance(phase.jerk, phase.duration).v);
            if phase.jerk != 0.0 {
                let t_star = -s.w / phase.jerk;
                if t_star > 0.0 && t_star < phase.duration {
                    best = best.max(s.advance(phase.jerk, t_star).v);
                }
            }
        }
        best
    }
}

/// Default cruise profile: 20 m/s, up to 92 m/s, cruise, down to 60 m/s,
/// cruise; 2400 s in total. `x0` puts the lead train at the service distance.
pub fn default_profile(x0: f64) -> ReferenceProfile {
    let phase = |duration, jerk| ReferencePhase { duration, jerk };
    ReferenceProfile {
        x0,
        v0: 20.0,
        w0: 0.0,
        v_max: 92.0,
        phases: vec![
            phase(100.0, 0.0),
            phase(30.0, 0.01),
            phase(210.0, 0.0),
            phase(30.0, -0.01),
            phase(1130.0, 0.0),
            phase(20.0, -0.02),
            phase(60.0, 0.0),
            phase(20.0, 0.02),
            phase(800.0, 0.0),
        ],
    }
}
