//! Distributed state-fault observer.
//!
//! Each carriage estimates `(x, v, w, f)` from its own measured position and
//! velocity plus the velocities and estimates of its train-bus neighbours.
//! The auxiliary inputs make the estimation error obey the linear system
//!
//! ```text
//! e_x' = -k1 e_x
//! xi'  = (A + K C) xi,   xi = [e_v, zeta, e_f],   zeta = e_w + mu2 - k2 e_v
//! ```
//!
//! whatever the control input, so gains are chosen by pole placement on
//! the augmented pair `(A, C)`.

use nalgebra::{DMatrix, DVector, Matrix3, RowSVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{coefficient_b1, coefficient_b23, d1, d2, d3, CarriageParams, CarriageRole, CouplerParams, DavisCoefficients};

pub type Matrix5 = SMatrix<f64, 5, 5>;
pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Vector5 = SVector<f64, 5>;
pub type RowVector5 = RowSVector<f64, 5>;

/// Smallest-to-largest singular value ratio below which a matrix is rank deficient.
pub const RANK_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error("the augmented pair (A, C) is not observable")]
    Unobservable,
    #[error("desired eigenvalue {0} is not in the open left half-plane")]
    NotHurwitz(f64),
    #[error("pole placement failed: {0}")]
    PlacementFailed(String),
    #[error("expected {expected} desired eigenvalues, got {got}")]
    WrongCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObserverState {
    pub x: f64,
    pub v: f64,
    pub w: f64,
    pub f: [f64; 3],
}

/// `k1` for the position channel and `K = [k2, k3, k4]` for the velocity,
/// acceleration and fault channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverGains {
    pub k1: f64,
    pub k: [f64; 5],
}

impl ObserverGains {
    pub fn k2(&self) -> f64 {
        self.k[0]
    }
    pub fn k3(&self) -> f64 {
        self.k[1]
    }
    pub fn k4(&self) -> [f64; 3] {
        [self.k[2], self.k[3], self.k[4]]
    }
    pub fn column(&self) -> Vector5 {
        Vector5::from(self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AuxiliaryInputs {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: [f64; 3],
}

/// `A = [0 1 0; 0 0 C_f; 0 0 S]` and `C = [1 0 0 0 0]` for a fault row `C_f = E / m`.
pub fn build_augmented_pair(fault_row: [f64; 3], s: &Matrix3<f64>) -> (Matrix5, RowVector5) {
    let mut a = Matrix5::zeros();
    a[(0, 1)] = 1.0;
    for k in 0..3 {
        a[(1, 2 + k)] = fault_row[k];
    }
    a.fixed_view_mut::<3, 3>(2, 2).copy_from(s);
    let mut c = RowVector5::zeros();
    c[0] = 1.0;
    (a, c)
}

/// Stacked `[C; C A; ...; C A^(n-1)]` for a single-output pair.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut obs = DMatrix::zeros(n * p, n);
    let mut row = c.clone();
    for k in 0..n {
        obs.view_mut((k * p, 0), (p, n)).copy_from(&row);
        row = &row * a;
    }
    obs
}

pub fn check_observability(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let sv = observability_matrix(a, c).singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > RANK_THRESHOLD * max
}

/// Coefficients `[1, c_{n-1}, ..., c_0]` of `prod (s - root)`.
pub fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= r * c;
        }
        coeffs = next;
    }
    coeffs
}

/// Characteristic polynomial `det(sI - M)` by Faddeev-LeVerrier, leading coefficient first.
pub fn characteristic_polynomial(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut coeffs = vec![1.0];
    let mut aux = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        let am = m * &aux;
        let c = -am.trace() / k as f64;
        coeffs.push(c);
        aux = am + DMatrix::identity(n, n) * c;
    }
    coeffs
}

/// Output-injection gain `K` with `eig(A + K C) = desired`, plus `k1` for the
/// position channel.
///
/// Placement is Ackermann's formula on the observability matrix, i.e. exact
/// matching of characteristic-polynomial coefficients, which stays well posed
/// for repeated eigenvalues.
pub fn synthesize_gains(
    a: &Matrix5,
    c: &RowVector5,
    desired: &[f64],
    position_eigenvalue: f64,
) -> Result<ObserverGains, ObserverError> {
    if desired.len() != 5 {
        return Err(ObserverError::WrongCount { expected: 5, got: desired.len() });
    }
    if let Some(&bad) = desired.iter().chain([&position_eigenvalue]).find(|&&p| !(p < 0.0)) {
        return Err(ObserverError::NotHurwitz(bad));
    }
    let ad = DMatrix::from_column_slice(5, 5, a.as_slice());
    let cd = DMatrix::from_row_slice(1, 5, c.transpose().as_slice());
    if !check_observability(&ad, &cd) {
        return Err(ObserverError::Unobservable);
    }
    let obs = observability_matrix(&ad, &cd);
    let target = poly_from_roots(desired);
    // p(A) by Horner
    let mut p_of_a = DMatrix::<f64>::zeros(5, 5);
    for &coef in &target {
        p_of_a = &p_of_a * &ad + DMatrix::identity(5, 5) * coef;
    }
    let mut e_last = DVector::zeros(5);
    e_last[4] = 1.0;
    let q = obs
        .lu()
        .solve(&e_last)
        .ok_or_else(|| ObserverError::PlacementFailed("singular observability matrix".into()))?;
    let k = -(p_of_a * q);
    let gains = ObserverGains {
        k1: -position_eigenvalue,
        k: [k[0], k[1], k[2], k[3], k[4]],
    };
    let closed = a + gains.column() * c;
    let got = characteristic_polynomial(&DMatrix::from_column_slice(5, 5, closed.as_slice()));
    for (g, t) in got.iter().zip(&target) {
        if (g - t).abs() > 1e-6 * t.abs().max(1.0) {
            return Err(ObserverError::PlacementFailed(format!(
                "characteristic polynomial {got:?} misses target {target:?}"
            )));
        }
    }
    Ok(gains)
}

/// Full error matrix `D = diag(-k1, A + K C)` acting on `[e_x, xi]`.
pub fn error_matrix(a: &Matrix5, c: &RowVector5, gains: &ObserverGains) -> Matrix6 {
    let mut d = Matrix6::zeros();
    d[(0, 0)] = -gains.k1;
    d.fixed_view_mut::<5, 5>(1, 1).copy_from(&(a + gains.column() * c));
    d
}

/// Parameters shared by every carriage-level observer evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CarriageContext<'a> {
    pub role: CarriageRole,
    pub params: &'a CarriageParams,
    pub davis: &'a DavisCoefficients,
    pub coupler: &'a CouplerParams,
}

impl CarriageContext<'_> {
    pub fn b1(&self, v: f64) -> f64 {
        coefficient_b1(self.role, v, self.params, self.davis, self.coupler)
    }

    pub fn b23(&self) -> (f64, f64) {
        coefficient_b23(self.role, self.params, self.coupler)
    }

    pub fn d1(&self, v: f64) -> f64 {
        d1(self.role, v, self.params, self.davis, self.coupler)
    }

    pub fn fault_accel(&self, f: &[f64; 3]) -> f64 {
        let c = self.params.fault_accel_row();
        c[0] * f[0] + c[1] * f[1] + c[2] * f[2]
    }
}

/// Measured velocity and its estimate for a neighbouring carriage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighbourVelocity {
    pub v: f64,
    pub v_hat: f64,
}

/// First pass: `mu1` and `mu2` from measured and estimated velocities.
///
/// `mu2` carries `(k2 + r)(v_hat - v)`: the `r` part completes `D1` to the
/// velocity antiderivative of `B1`, which the linear error dynamics require.
pub fn position_velocity_inputs(
    ctx: &CarriageContext,
    gains: &ObserverGains,
    x: f64,
    v: f64,
    estimate: &ObserverState,
    front: Option<NeighbourVelocity>,
    rear: Option<NeighbourVelocity>,
) -> (f64, f64) {
    let mu1 = -gains.k1 * (estimate.x - x) + (v - estimate.v);
    let mut mu2 = ctx.d1(v) - ctx.d1(estimate.v) + (gains.k2() + ctx.params.actuator_rate) * (estimate.v - v);
    if let Some(n) = front {
        mu2 += d2(ctx.role, n.v, ctx.params, ctx.coupler) - d2(ctx.role, n.v_hat, ctx.params, ctx.coupler);
    }
    if let Some(n) = rear {
        mu2 += d3(ctx.role, n.v, ctx.params, ctx.coupler) - d3(ctx.role, n.v_hat, ctx.params, ctx.coupler);
    }
    (mu1, mu2)
}

/// Second pass: `mu3` and `mu4`, given this carriage's and its neighbours' `mu2`.
pub fn acceleration_fault_inputs(
    ctx: &CarriageContext,
    gains: &ObserverGains,
    v: f64,
    estimate: &ObserverState,
    mu2: f64,
    front_mu2: Option<f64>,
    rear_mu2: Option<f64>,
) -> (f64, [f64; 3]) {
    let ev = estimate.v - v;
    let b1 = ctx.b1(v);
    let (b2, b3) = ctx.b23();
    let mut mu3 = b1 * mu2 + gains.k3() * ev + (ctx.b1(estimate.v) - b1) * (estimate.w + mu2);
    if let Some(m) = front_mu2 {
        mu3 += b2 * m;
    }
    if let Some(m) = rear_mu2 {
        mu3 += b3 * m;
    }
    let k4 = gains.k4();
    (mu3, [k4[0] * ev, k4[1] * ev, k4[2] * ev])
}

/// Auxiliary inputs for every carriage of one train (`mu2` pass first).
pub fn auxiliary_inputs(
    carriages: &[CarriageParams],
    davis: &DavisCoefficients,
    coupler: &CouplerParams,
    gains: &[ObserverGains],
    positions: &[f64],
    velocities: &[f64],
    estimates: &[ObserverState],
) -> Result<Vec<AuxiliaryInputs>, crate::model::ModelError> {
    let m = carriages.len();
    let ctx = |j: usize| -> Result<CarriageContext, crate::model::ModelError> {
        Ok(CarriageContext { role: CarriageRole::of(j, m)?, params: &carriages[j], davis, coupler })
    };
    let neighbour = |j: usize| NeighbourVelocity { v: velocities[j], v_hat: estimates[j].v };
    let mut out = vec![AuxiliaryInputs::default(); m];
    for j in 0..m {
        let c = ctx(j)?;
        let front = c.role.has_front().then(|| neighbour(j - 1));
        let rear = c.role.has_rear().then(|| neighbour(j + 1));
        let (mu1, mu2) = position_velocity_inputs(&c, &gains[j], positions[j], velocities[j], &estimates[j], front, rear);
        out[j].mu1 = mu1;
        out[j].mu2 = mu2;
    }
    for j in 0..m {
        let c = ctx(j)?;
        let front = c.role.has_front().then(|| out[j - 1].mu2);
        let rear = c.role.has_rear().then(|| out[j + 1].mu2);
        let (mu3, mu4) = acceleration_fault_inputs(&c, &gains[j], velocities[j], &estimates[j], out[j].mu2, front, rear);
        out[j].mu3 = mu3;
        out[j].mu4 = mu4;
    }
    Ok(out)
}

/// Time derivative of the estimate. `v` is the measured velocity (it sets
/// `B1`); `w_hat_front` / `w_hat_rear` are ignored where the role has no
/// such neighbour.
pub fn observer_rhs(
    ctx: &CarriageContext,
    estimate: &ObserverState,
    aux: &AuxiliaryInputs,
    u: f64,
    v: f64,
    w_hat_front: f64,
    w_hat_rear: f64,
) -> ObserverState {
    let (b2, b3) = ctx.b23();
    let mut w_dot = ctx.b1(v) * estimate.w + ctx.fault_accel(&estimate.f) + u + aux.mu3;
    if ctx.role.has_front() {
        w_dot += b2 * w_hat_front;
    }
    if ctx.role.has_rear() {
        w_dot += b3 * w_hat_rear;
    }
    let s = ctx.params.fault.exosystem();
    let f = nalgebra::Vector3::from(estimate.f);
    let f_dot = s * f + nalgebra::Vector3::from(aux.mu4);
    ObserverState {
        x: estimate.v + aux.mu1,
        v: estimate.w + aux.mu2,
        w: w_dot,
        f: [f_dot[0], f_dot[1], f_dot[2]],
    }
}

/// Estimation error `[e_x, e_v, zeta, e_f]` in the coordinates of the linear error system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearError {
    pub e_x: f64,
    pub xi: [f64; 5],
}

impl LinearError {
    /// Assemble from physical errors; `zeta = e_w + mu2 - k2 e_v`.
    pub fn from_errors(e_x: f64, e_v: f64, e_w: f64, e_f: [f64; 3], mu2: f64, k2: f64) -> Self {
        Self {
            e_x,
            xi: [e_v, e_w + mu2 - k2 * e_v, e_f[0], e_f[1], e_f[2]],
        }
    }

    pub fn e_v(&self) -> f64 {
        self.xi[0]
    }

    pub fn zeta(&self) -> f64 {
        self.xi[1]
    }

    pub fn e_f(&self) -> [f64; 3] {
        [self.xi[2], self.xi[3], self.xi[4]]
    }
}

/// Exact solution `exp(D t) e(0)` of the linear error system, sampled every
/// `dt` up to `horizon` (inclusive of both ends).
pub fn linear_error_oracle(
    initial: LinearError,
    a: &Matrix5,
    c: &RowVector5,
    gains: &ObserverGains,
    horizon: f64,
    dt: f64,
) -> Vec<(f64, LinearError)> {
    let d = error_matrix(a, c, gains);
    let step = (d * dt).exp();
    let mut e = SVector::<f64, 6>::from_iterator(std::iter::once(initial.e_x).chain(initial.xi));
    let n = (horizon / dt).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let pack = |e: &SVector<f64, 6>| LinearError { e_x: e[0], xi: [e[1], e[2], e[3], e[4], e[5]] };
    out.push((0.0, pack(&e)));
    for k in 1..=n {
        e = step * e;
        out.push((k as f64 * dt, pack(&e)));
    }
    out
}
