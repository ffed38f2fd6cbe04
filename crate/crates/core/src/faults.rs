//! Actuator faults: a constant mode plus a sinusoidal mode, each switched on
//! over a time window.
//!
//! Inside a window the signal is generated in closed form and satisfies the
//! exosystem `f' = S f`; the windows themselves are what the exosystem cannot
//! represent, so the true fault is never integrated.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    #[serde(rename = "omega_rad_per_s")]
    pub omega: f64,
    /// Gain of the constant mode in `E`.
    pub upsilon: f64,
    /// Gain of the periodic mode; `E` carries `nu * omega`.
    pub nu: f64,
    #[serde(rename = "constant_amplitude")]
    pub constant_amplitude: f64,
    #[serde(rename = "periodic_amplitude")]
    pub periodic_amplitude: f64,
    #[serde(rename = "phase_rad")]
    pub phase: f64,
    #[serde(rename = "constant_window_s", default)]
    pub constant_window: Option<[f64; 2]>,
    #[serde(rename = "periodic_window_s", default)]
    pub periodic_window: Option<[f64; 2]>,
}

impl FaultModel {
    /// A fault-free actuator.
    pub fn none() -> Self {
        Self {
            omega: 0.0,
            upsilon: 0.0,
            nu: 0.0,
            constant_amplitude: 0.0,
            periodic_amplitude: 0.0,
            phase: 0.0,
            constant_window: None,
            periodic_window: None,
        }
    }

    pub fn input_row(&self) -> [f64; 3] {
        [self.upsilon, 0.0, self.nu * self.omega]
    }

    pub fn exosystem(&self) -> Matrix3<f64> {
        exosystem_matrix(self.omega)
    }

    pub fn is_valid(&self) -> bool {
        let ordered = |w: &Option<[f64; 2]>| w.map_or(true, |[s, e]| s <= e);
        self.omega >= 0.0 && ordered(&self.constant_window) && ordered(&self.periodic_window)
    }

    /// Fault state with each mode forced on or off.
    pub fn gated_value(&self, t: f64, constant_on: bool, periodic_on: bool) -> [f64; 3] {
        let f1 = if constant_on { self.constant_amplitude } else { 0.0 };
        let (f2, f3) = if periodic_on {
            let angle = self.omega * t + self.phase;
            (self.periodic_amplitude * angle.sin(), self.periodic_amplitude * angle.cos())
        } else {
            (0.0, 0.0)
        };
        [f1, f2, f3]
    }

    /// Window boundaries in seconds, sorted and deduplicated.
    pub fn transition_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = [self.constant_window, self.periodic_window]
            .iter()
            .flatten()
            .flat_map(|w| w.iter().copied())
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Windows expressed as half-open step ranges on a grid of spacing `step`.
    pub fn snapped(&self, step: f64) -> SnappedWindows {
        let snap = |w: Option<[f64; 2]>| w.map(|[s, e]| ((s / step).round() as i64, (e / step).round() as i64));
        SnappedWindows {
            constant: snap(self.constant_window),
            periodic: snap(self.periodic_window),
        }
    }
}

/// Fault windows snapped to integration steps: step `k` (from `k h` to
/// `(k + 1) h`) is faulty when `start <= k < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnappedWindows {
    pub constant: Option<(i64, i64)>,
    pub periodic: Option<(i64, i64)>,
}

impl SnappedWindows {
    pub fn active(&self, step: i64) -> (bool, bool) {
        let on = |w: Option<(i64, i64)>| w.is_some_and(|(s, e)| s <= step && step < e);
        (on(self.constant), on(self.periodic))
    }
}

pub fn exosystem_matrix(omega: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, omega, 0.0, -omega, 0.0)
}

fn inside(t: f64, window: Option<[f64; 2]>) -> bool {
    window.is_some_and(|[s, e]| s <= t && t <= e)
}

/// True fault state at time `t` (windows closed at both ends).
pub fn fault_value(t: f64, model: &FaultModel) -> [f64; 3] {
    model.gated_value(t, inside(t, model.constant_window), inside(t, model.periodic_window))
}

/// `E f` (N/s) and `C f = E f / m` (m/s^3).
pub fn effective_fault(f: &[f64; 3], model: &FaultModel, mass: f64) -> (f64, f64) {
    let e = model.input_row();
    let force = e[0] * f[0] + e[1] * f[1] + e[2] * f[2];
    (force, force / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn windowed_fault() -> FaultModel {
        FaultModel {
            omega: 1.0,
            upsilon: 2e5,
            nu: 2e5,
            constant_amplitude: 1.0,
            periodic_amplitude: 1.0,
            phase: 8.0,
            constant_window: Some([400.0, 1400.0]),
            periodic_window: Some([500.0, 2300.0]),
        }
    }

    #[test]
    fn exosystem_structure() {
        assert_eq!(exosystem_matrix(0.0), Matrix3::zeros());
        let s = exosystem_matrix(1.0);
        assert_eq!(s[(1, 2)], 1.0);
        assert_eq!(s[(2, 1)], -1.0);
        assert_eq!(s.iter().filter(|&&x| x != 0.0).count(), 2);
        let eig = s.complex_eigenvalues();
        let mut im: Vec<f64> = eig.iter().map(|z| z.im).collect();
        im.sort_by(f64::total_cmp);
        for (got, want) in im.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(eig.iter().all(|z| z.re.abs() < 1e-12));
    }

    #[test]
    fn fault_outside_windows_is_zero() {
        let m = windowed_fault();
        assert_eq!(fault_value(100.0, &m), [0.0; 3]);
        assert_eq!(fault_value(2300.5, &m), [0.0; 3]);
    }

    #[test]
    fn fault_inside_both_windows() {
        let f = fault_value(500.0, &windowed_fault());
        assert_eq!(f[0], 1.0);
        assert_eq!(f[2], 508.0_f64.cos());
        assert_eq!(f[1], 508.0_f64.sin());
    }

    #[test]
    fn periodic_pair_keeps_its_amplitude() {
        let mut m = windowed_fault();
        m.periodic_amplitude = 3.0;
        for k in 0..50 {
            let f = fault_value(600.0 + 13.7 * k as f64, &m);
            assert_relative_eq!(f[1] * f[1] + f[2] * f[2], 9.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn closed_form_satisfies_exosystem() {
        let m = windowed_fault();
        let s = m.exosystem();
        let h = 1e-4;
        for t in [520.0, 800.3, 1300.0, 2000.0] {
            let fp = nalgebra::Vector3::from(fault_value(t + h, &m));
            let fm = nalgebra::Vector3::from(fault_value(t - h, &m));
            let f = nalgebra::Vector3::from(fault_value(t, &m));
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - s * f).amax();
            assert!(err < 1e-6 * f.amax() / h, "t = {t}: {err}");
            assert!(err < 1e-7);
        }
    }

    #[test]
    fn effective_fault_values() {
        let m = windowed_fault();
        assert_eq!(effective_fault(&[0.0; 3], &m, 8e4), (0.0, 0.0));
        let (force, accel) = effective_fault(&[1.0, 0.0, 1.0], &m, 8e4);
        assert_eq!(force, 4e5);
        assert_eq!(accel, 5.0);
        // linear in f
        let a = [0.3, -1.2, 0.7];
        let b = [-0.4, 0.5, 2.0];
        let sum = [a[0] + 2.0 * b[0], a[1] + 2.0 * b[1], a[2] + 2.0 * b[2]];
        let lhs = effective_fault(&sum, &m, 8e4).0;
        let rhs = effective_fault(&a, &m, 8e4).0 + 2.0 * effective_fault(&b, &m, 8e4).0;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn snapped_windows_are_half_open_step_ranges() {
        let w = windowed_fault().snapped(0.01);
        assert_eq!(w.constant, Some((40000, 140000)));
        assert_eq!(w.active(39999), (false, false));
        assert_eq!(w.active(40000), (true, false));
        assert_eq!(w.active(50000), (true, true));
        assert_eq!(w.active(139999), (true, true));
        assert_eq!(w.active(140000), (false, true));
        assert_eq!(w.active(230000), (false, false));
    }

    #[test]
    fn transitions_sorted() {
        assert_eq!(windowed_fault().transition_times(), vec![400.0, 500.0, 1400.0, 2300.0]);
        assert!(FaultModel::none().transition_times().is_empty());
    }
}
