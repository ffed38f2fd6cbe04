//! Distributed cruise control laws.
//!
//! Followers run a three-step backstepping law on their own and their front
//! neighbour's estimates. Head carriages track the tail of the train ahead
//! (or the reference, for the lead train) through logarithmic barrier
//! transforms that keep the spacing error inside `(-rho2, rho1)` and the
//! combined error `q = v_tilde + ell1 x_tilde` inside `(-varrho2, varrho1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::{directional, gradient, Dual, Scalar};
use crate::observer::CarriageContext;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerGains {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadGains {
    pub ell1: f64,
    pub ell2: f64,
    pub ell3: f64,
    pub ell4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// Maximum communication radius.
    #[serde(rename = "gamma1_m")]
    pub gamma1: f64,
    /// Emergency braking distance.
    #[serde(rename = "gamma2_m")]
    pub gamma2: f64,
    /// Service braking distance, the target inter-train spacing.
    #[serde(rename = "service_distance_m")]
    pub service_distance: f64,
    #[serde(rename = "sigma1_mps")]
    pub sigma1: f64,
    #[serde(rename = "sigma2_mps")]
    pub sigma2: f64,
}

impl ConstraintSpec {
    pub fn rho1(&self) -> f64 {
        self.gamma1 - self.service_distance
    }

    pub fn rho2(&self) -> f64 {
        self.service_distance - self.gamma2
    }

    pub fn bounds(&self, ell1: f64) -> BarrierBounds {
        let (rho1, rho2) = (self.rho1(), self.rho2());
        BarrierBounds {
            rho1,
            rho2,
            varrho1: -ell1 * rho2 + self.sigma1,
            varrho2: -ell1 * rho1 + self.sigma2,
        }
    }
}

/// Open intervals `(-rho2, rho1)` for `x_tilde` and `(-varrho2, varrho1)` for `q_tilde`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierBounds {
    pub rho1: f64,
    pub rho2: f64,
    pub varrho1: f64,
    pub varrho2: f64,
}

/// Spacing and velocity errors between a head carriage and whatever it follows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainPairErrors {
    pub epsilon: f64,
    pub x_tilde: f64,
    pub v_tilde: f64,
    pub q_tilde: f64,
}

impl TrainPairErrors {
    pub fn new(front: (f64, f64), head: (f64, f64), service_distance: f64, ell1: f64) -> Self {
        let epsilon = front.0 - head.0;
        let x_tilde = epsilon - service_distance;
        let v_tilde = front.1 - head.1;
        Self {
            epsilon,
            x_tilde,
            v_tilde,
            q_tilde: v_tilde + ell1 * x_tilde,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("{quantity} = {value} outside ({lower}, {upper})")]
pub struct BarrierDomainError {
    pub quantity: &'static str,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Distance kept from a barrier boundary when an out-of-range argument is clamped.
pub const SATURATION_MARGIN: f64 = 1e-9;

/// Clamp into `(-lower, upper)`, reporting whether clamping happened.
pub fn saturate(value: f64, lower: f64, upper: f64) -> (f64, bool) {
    if value >= upper {
        (upper - SATURATION_MARGIN, true)
    } else if value <= -lower {
        (-lower + SATURATION_MARGIN, true)
    } else {
        (value, false)
    }
}

fn log_barrier<T: Scalar>(x: T, upper: f64, lower: f64) -> T {
    // ln((ru rl + ru x) / (ru rl - rl x))
    ((x * upper + upper * lower) / (-(x * lower) + upper * lower)).ln()
}

fn log_barrier_slope<T: Scalar>(x: T, upper: f64, lower: f64) -> T {
    (x + lower).recip() + (-x + upper).recip()
}

fn check(quantity: &'static str, value: f64, lower: f64, upper: f64) -> Result<(), BarrierDomainError> {
    if value > -lower && value < upper {
        Ok(())
    } else {
        Err(BarrierDomainError { quantity, value, lower: -lower, upper })
    }
}

/// `(phi, Phi)` for `x_tilde` in `(-rho2, rho1)`.
pub fn barrier_phi(x_tilde: f64, rho1: f64, rho2: f64) -> Result<(f64, f64), BarrierDomainError> {
    check("x_tilde", x_tilde, rho2, rho1)?;
    Ok((log_barrier(x_tilde, rho1, rho2), log_barrier_slope(x_tilde, rho1, rho2)))
}

/// `(psi, Psi)` for `q_tilde` in `(-varrho2, varrho1)`.
pub fn barrier_psi(q_tilde: f64, varrho1: f64, varrho2: f64) -> Result<(f64, f64), BarrierDomainError> {
    check("q_tilde", q_tilde, varrho2, varrho1)?;
    Ok((log_barrier(q_tilde, varrho1, varrho2), log_barrier_slope(q_tilde, varrho1, varrho2)))
}

/// `beta1(x_tilde, v_tilde)` on any scalar type; no domain check.
pub fn beta1<T: Scalar>(x_tilde: T, v_tilde: T, gains: &HeadGains, b: &BarrierBounds) -> T {
    let q = v_tilde + x_tilde * gains.ell1;
    -(log_barrier(x_tilde, b.rho1, b.rho2) * log_barrier_slope(x_tilde, b.rho1, b.rho2))
        - q * gains.ell2
        - log_barrier(q, b.varrho1, b.varrho2) * log_barrier_slope(q, b.varrho1, b.varrho2) * gains.ell3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaTerms {
    pub beta1: f64,
    pub beta2: f64,
    pub d_beta1_dx: f64,
    pub d_beta1_dv: f64,
}

pub fn beta_functions(
    x_tilde: f64,
    v_tilde: f64,
    w_hat_tilde: f64,
    gains: &HeadGains,
    bounds: &BarrierBounds,
) -> Result<BetaTerms, BarrierDomainError> {
    check("x_tilde", x_tilde, bounds.rho2, bounds.rho1)?;
    let q = v_tilde + gains.ell1 * x_tilde;
    check("q_tilde", q, bounds.varrho2, bounds.varrho1)?;
    let (b1, [d_beta1_dx, d_beta1_dv]) = gradient(|[x, v]| beta1(x, v, gains, bounds), [x_tilde, v_tilde]);
    Ok(BetaTerms {
        beta1: b1,
        beta2: w_hat_tilde + gains.ell1 * v_tilde - b1,
        d_beta1_dx,
        d_beta1_dv,
    })
}

/// Estimated jerk of whatever a head carriage follows: the reference jerk
/// for the lead train, otherwise the front tail's observer acceleration rate.
pub fn front_tail_drive(
    tail: &CarriageContext,
    v: f64,
    w_hat: f64,
    w_hat_front: f64,
    f_hat: &[f64; 3],
    u: f64,
    mu3: f64,
) -> f64 {
    let (b2, _) = tail.b23();
    tail.b1(v) * w_hat + b2 * w_hat_front + tail.fault_accel(f_hat) + u + mu3
}

/// Data a head carriage needs from its own observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLocal {
    /// Measured velocity (sets `B1`).
    pub v: f64,
    pub w_hat: f64,
    pub w_hat_rear: f64,
    pub f_hat: [f64; 3],
    pub mu3: f64,
}

/// Data about the followed vehicle: the front train's tail or the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadFront {
    pub pair: TrainPairErrors,
    pub w_hat: f64,
    /// `u0` for the lead train, otherwise [`front_tail_drive`].
    pub drive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub u: f64,
    pub beta: BetaTerms,
    /// Set when a barrier argument had to be clamped back into its domain.
    pub saturated: bool,
}

/// Head-carriage control. With `saturate_on_violation` an out-of-domain
/// spacing or combined error is clamped to just inside the boundary and
/// flagged; otherwise the domain error is returned.
pub fn head_control(
    ctx: &CarriageContext,
    local: &HeadLocal,
    front: &HeadFront,
    gains: &HeadGains,
    bounds: &BarrierBounds,
    saturate_on_violation: bool,
) -> Result<HeadOutput, BarrierDomainError> {
    let mut x_tilde = front.pair.x_tilde;
    let mut v_tilde = front.pair.v_tilde;
    let mut saturated = false;
    if saturate_on_violation {
        let (x, sx) = saturate(x_tilde, bounds.rho2, bounds.rho1);
        let q = v_tilde + gains.ell1 * x;
        let (q, sq) = saturate(q, bounds.varrho2, bounds.varrho1);
        x_tilde = x;
        v_tilde = q - gains.ell1 * x;
        saturated = sx || sq;
    }
    let w_tilde = front.w_hat - local.w_hat;
    let beta = beta_functions(x_tilde, v_tilde, w_tilde, gains, bounds)?;
    let (_, b3) = ctx.b23();
    let own = ctx.b1(local.v) * local.w_hat + b3 * local.w_hat_rear + ctx.fault_accel(&local.f_hat) + local.mu3;
    let q = v_tilde + gains.ell1 * x_tilde;
    let u = front.drive - own + gains.ell1 * w_tilde + gains.ell1 * gains.ell1 * beta.beta2
        - beta.d_beta1_dx * v_tilde
        - beta.d_beta1_dv * w_tilde
        + beta.d_beta1_dv * beta.d_beta1_dv * beta.beta2
        + q
        - gains.ell4 * beta.beta2;
    Ok(HeadOutput { u, beta, saturated })
}

/// Arguments of the follower's virtual commands, in order
/// `[x_hat, x_hat_front, v_hat, v_hat_front, w_hat_front]`.
pub type FollowerArgs<T> = [T; 5];

pub fn z1<T: Scalar>(args: &FollowerArgs<T>, spacing: f64) -> T {
    args[0] - args[1] + spacing
}

pub fn alpha1<T: Scalar>(args: &FollowerArgs<T>, gains: &FollowerGains, spacing: f64) -> T {
    args[3] - z1(args, spacing) * (gains.l1 + 1.0)
}

/// Partials of `alpha1` with respect to `x_hat`, `x_hat_front` and `v_hat_front`.
pub fn alpha1_partials(args: &FollowerArgs<f64>, gains: &FollowerGains, spacing: f64) -> [f64; 3] {
    let (_, g) = gradient(|a| alpha1(&a, gains, spacing), *args);
    [g[0], g[1], g[3]]
}

pub fn alpha2<T: Scalar>(args: &FollowerArgs<T>, gains: &FollowerGains, spacing: f64) -> T {
    let values = args.map(Scalar::value);
    let [p_x, p_xf, p_vf] = alpha1_partials(&values, gains, spacing);
    let z1 = z1(args, spacing);
    let z2 = args[2] - alpha1(args, gains, spacing);
    -(z2 * gains.l2) - z1 - z2 * 0.5 + args[2] * p_x - z2 * (0.5 * p_x * p_x) + args[3] * p_xf
        - z2 * (0.5 * p_xf * p_xf)
        + args[4] * p_vf
        - z2 * (0.5 * p_vf * p_vf)
}

/// Everything the follower law produces besides the control itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerTerms {
    pub z: [f64; 3],
    pub alpha: [f64; 3],
    pub alpha2_gradient: [f64; 5],
}

/// `z1..z3` and `alpha1..alpha3`. `rates` are the observer derivatives of
/// the five arguments, in the same order.
pub fn follower_terms(
    args: &FollowerArgs<f64>,
    w_hat: f64,
    rates: &FollowerArgs<f64>,
    gains: &FollowerGains,
    spacing: f64,
) -> FollowerTerms {
    let a1 = alpha1(args, gains, spacing);
    let (a2, grad) = gradient(|a| alpha2(&a, gains, spacing), *args);
    let z = [z1(args, spacing), args[2] - a1, w_hat - a2];
    let feedforward: f64 = grad.iter().zip(rates).map(|(g, r)| g * r).sum();
    let a3 = -gains.l3 * z[2] - z[1] + feedforward;
    FollowerTerms { z, alpha: [a1, a2, a3], alpha2_gradient: grad }
}

/// Follower data from the carriage's own observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerLocal {
    pub v: f64,
    pub w_hat: f64,
    pub w_hat_front: f64,
    /// Ignored for a tail carriage.
    pub w_hat_rear: f64,
    pub f_hat: [f64; 3],
    pub mu3: f64,
}

pub fn follower_control(ctx: &CarriageContext, local: &FollowerLocal, alpha3: f64) -> f64 {
    let (b2, b3) = ctx.b23();
    let mut coupling = ctx.b1(local.v) * local.w_hat + b2 * local.w_hat_front;
    if ctx.role.has_rear() {
        coupling += b3 * local.w_hat_rear;
    }
    -(coupling + ctx.fault_accel(&local.f_hat) + local.mu3) + alpha3
}

/// A failed gain or feasibility inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub name: String,
    pub value: f64,
    pub bound: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} violated (value {}, bound {})", self.name, self.value, self.bound)
    }
}

struct Checks(Vec<Violation>);

impl Checks {
    fn above(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        if !(value > bound) {
            self.0.push(Violation { name: name.into(), value, bound });
        }
    }

    fn below(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        if !(value < bound) {
            self.0.push(Violation { name: name.into(), value, bound });
        }
    }

    fn finish(self) -> Result<(), Vec<Violation>> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(self.0)
        }
    }
}

pub fn validate_parameters(
    follower: &FollowerGains,
    head: &HeadGains,
    constraints: &ConstraintSpec,
) -> Result<(), Vec<Violation>> {
    let mut c = Checks(Vec::new());
    c.above("l1 > 0", follower.l1, 0.0);
    c.above("l2 > 0", follower.l2, 0.0);
    c.above("l3 > 0", follower.l3, 0.0);
    c.above("sigma1 > 0", constraints.sigma1, 0.0);
    c.above("sigma2 > 0", constraints.sigma2, 0.0);
    c.below("gamma2 < d_s", constraints.gamma2, constraints.service_distance);
    c.below("d_s < gamma1", constraints.service_distance, constraints.gamma1);
    let b = constraints.bounds(head.ell1);
    c.above("ell1 > 0", head.ell1, 0.0);
    c.below(
        "ell1 < min(sigma2/rho1, sigma1/rho2)",
        head.ell1,
        (constraints.sigma2 / b.rho1).min(constraints.sigma1 / b.rho2),
    );
    c.above("ell2 > 2", head.ell2, 2.0);
    c.above("ell3 > 2 + ell2^2/2", head.ell3, 2.0 + head.ell2 * head.ell2 / 2.0);
    c.above("ell4 > 1/2", head.ell4, 0.5);
    c.finish()
}

/// Checks `-rho2 < x_tilde < rho1` and `-varrho2 < q_tilde < varrho1` for
/// every pair; `pairs[0]` is the lead train against the reference.
pub fn validate_initial(pairs: &[TrainPairErrors], bounds: &BarrierBounds) -> Result<(), Vec<Violation>> {
    let mut c = Checks(Vec::new());
    for (k, p) in pairs.iter().enumerate() {
        let i = k + 1;
        c.above(format!("train {i}: x_tilde(0) > -rho2"), p.x_tilde, -bounds.rho2);
        c.below(format!("train {i}: x_tilde(0) < rho1"), p.x_tilde, bounds.rho1);
        c.above(format!("train {i}: q_tilde(0) > -varrho2"), p.q_tilde, -bounds.varrho2);
        c.below(format!("train {i}: q_tilde(0) < varrho1"), p.q_tilde, bounds.varrho1);
    }
    c.finish()
}

/// The functions whose partial derivatives enter the control laws.
#[derive(Debug, Clone, Copy)]
pub enum Differentiable<'a> {
    /// Over [`FollowerArgs`].
    Alpha1 { gains: &'a FollowerGains, spacing: f64 },
    /// Over [`FollowerArgs`].
    Alpha2 { gains: &'a FollowerGains, spacing: f64 },
    /// Over `[x_tilde, v_tilde]`.
    Beta1 { gains: &'a HeadGains, bounds: &'a BarrierBounds },
}

impl Differentiable<'_> {
    pub fn arity(&self) -> usize {
        match self {
            Self::Alpha1 { .. } | Self::Alpha2 { .. } => 5,
            Self::Beta1 { .. } => 2,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("expected {expected} inputs and seed entries, got {inputs} and {seed}")]
pub struct ArityMismatch {
    pub expected: usize,
    pub inputs: usize,
    pub seed: usize,
}

/// Value and directional derivative of a registered function.
pub fn dual_eval(f: &Differentiable, inputs: &[f64], seed: &[f64]) -> Result<(f64, f64), ArityMismatch> {
    let n = f.arity();
    if inputs.len() != n || seed.len() != n {
        return Err(ArityMismatch { expected: n, inputs: inputs.len(), seed: seed.len() });
    }
    Ok(match *f {
        Differentiable::Alpha1 { gains, spacing } => directional(
            |a: [Dual; 5]| alpha1(&a, gains, spacing),
            inputs.try_into().unwrap(),
            seed.try_into().unwrap(),
        ),
        Differentiable::Alpha2 { gains, spacing } => directional(
            |a: [Dual; 5]| alpha2(&a, gains, spacing),
            inputs.try_into().unwrap(),
            seed.try_into().unwrap(),
        ),
        Differentiable::Beta1 { gains, bounds } => directional(
            |[x, v]: [Dual; 2]| beta1(x, v, gains, bounds),
            inputs.try_into().unwrap(),
            seed.try_into().unwrap(),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::FaultModel;
    use crate::model::{CarriageParams, CarriageRole, CouplerParams, DavisCoefficients};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn follower() -> FollowerGains {
        FollowerGains { l1: 0.1, l2: 0.1, l3: 0.1 }
    }

    fn head() -> HeadGains {
        HeadGains { ell1: 0.01, ell2: 2.1, ell3: 4.3, ell4: 1.0 }
    }

    fn constraints() -> ConstraintSpec {
        ConstraintSpec { gamma1: 9000.0, gamma2: 4702.0, service_distance: 7053.0, sigma1: 50.0, sigma2: 50.0 }
    }

    #[test]
    fn derived_bounds() {
        let b = constraints().bounds(0.01);
        assert_eq!((b.rho1, b.rho2), (1947.0, 2351.0));
        assert_relative_eq!(b.varrho1, 26.49, epsilon = 1e-12);
        assert_relative_eq!(b.varrho2, 30.53, epsilon = 1e-12);
    }

    #[test]
    fn z_and_alpha1_cases() {
        let g = follower();
        let args = [0.0, 26.0, 20.0, 20.0, 0.0];
        assert_eq!(z1(&args, 26.0), 0.0);
        assert_eq!(alpha1(&args, &g, 26.0), 20.0);
        let wide = [0.0, 28.0, 20.0, 20.0, 0.0];
        assert_eq!(z1(&wide, 26.0), -2.0);
        assert_relative_eq!(alpha1(&wide, &g, 26.0), 22.2, epsilon = 1e-12);
        let p = alpha1_partials(&[3.0, -7.0, 1.0, 9.0, 4.0], &g, 26.0);
        assert_eq!(p, [-1.1, 1.1, 1.0]);
    }

    #[test]
    fn alpha2_at_zero_errors() {
        let g = follower();
        // z1 = z2 = 0 needs v_hat = alpha1 = v_hat_front
        let args = [0.0, 26.0, 20.0, 20.0, 0.35];
        assert_relative_eq!(alpha2(&args, &g, 26.0), 0.35, epsilon = 1e-12);
        assert_eq!(alpha2(&[0.0; 5], &FollowerGains { l1: 0.0, l2: 0.0, l3: 0.0 }, 0.0), 0.0);
    }

    fn alpha2_by_hand(a: &[f64; 5], g: &FollowerGains, dp: f64) -> f64 {
        let k = g.l1 + 1.0;
        let z1 = a[0] - a[1] + dp;
        let z2 = a[2] - (a[3] - k * z1);
        -g.l2 * z2 - z1 - 0.5 * z2 - k * a[2] - 0.5 * k * k * z2 + k * a[3] - 0.5 * k * k * z2 + a[4] - 0.5 * z2
    }

    #[test]
    fn alpha2_hand_expansion() {
        let g = FollowerGains { l1: 0.3, l2: 0.7, l3: 1.1 };
        for a in [[1.0, 30.0, 19.0, 21.0, 0.2], [-4.0, 20.0, 25.0, 18.0, -1.0], [0.5, 27.0, 20.0, 20.0, 0.0]] {
            assert_relative_eq!(alpha2(&a, &g, 26.0), alpha2_by_hand(&a, &g, 26.0), epsilon = 1e-12);
            let (v, _) = dual_eval(&Differentiable::Alpha2 { gains: &g, spacing: 26.0 }, &a, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
            assert_eq!(v, alpha2(&a, &g, 26.0));
        }
    }

    #[test]
    fn alpha3_zero_configuration() {
        let g = follower();
        let t = follower_terms(&[0.0; 5], 0.0, &[0.0; 5], &g, 0.0);
        assert_eq!(t.alpha[2], 0.0);
        assert_eq!(t.z, [0.0; 3]);
    }

    #[test]
    fn alpha3_regression() {
        let g = follower();
        let args = [0.0, 27.0, 20.5, 20.2, 0.1];
        let rates = [20.4, 20.1, 0.05, 0.12, -0.01];
        let t = follower_terms(&args, 0.2, &rates, &g, 26.0);
        // alpha2 is affine: its gradient follows from the hand expansion
        let k: f64 = 1.1;
        let c2 = -(g.l2 + 0.5 + k * k + 0.5); // d alpha2 / d z2
        let grad = [-1.0 + c2 * k, 1.0 - c2 * k, c2 - k, -c2 + k, 1.0];
        let a2 = alpha2_by_hand(&args, &g, 26.0);
        let z2 = args[2] - (args[3] - k * (args[0] - args[1] + 26.0));
        let want = -g.l3 * (0.2 - a2) - z2 + grad.iter().zip(rates).map(|(g, r)| g * r).sum::<f64>();
        for (a, b) in t.alpha2_gradient.iter().zip(grad) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(t.alpha[2], want, epsilon = 1e-10);
    }

    #[test]
    fn barrier_values() {
        let (phi, big_phi) = barrier_phi(0.0, 1947.0, 2351.0).unwrap();
        assert_eq!(phi, 0.0);
        assert_relative_eq!(big_phi, 1.0 / 2351.0 + 1.0 / 1947.0, max_relative = 1e-15);
        assert!((big_phi - 9.389e-4).abs() < 1e-7);
        assert!(barrier_phi(1947.0 - 1e-6, 1947.0, 2351.0).unwrap().0 > 20.0);
        assert!(barrier_phi(-2351.0 + 1e-6, 1947.0, 2351.0).unwrap().0 < -20.0);
        assert!(barrier_phi(1947.0, 1947.0, 2351.0).is_err());
        assert!(barrier_psi(-30.6, 26.49, 30.53).is_err());
    }

    #[test]
    fn beta_at_origin() {
        let h = head();
        let b = constraints().bounds(h.ell1);
        let t = beta_functions(0.0, 0.0, 0.0, &h, &b).unwrap();
        assert_eq!(t.beta1, 0.0);
        assert_eq!(t.beta2, 0.0);
        let psi_slope = 1.0 / b.varrho2 + 1.0 / b.varrho1;
        assert_relative_eq!(t.d_beta1_dv, -h.ell2 - h.ell3 * psi_slope * psi_slope, max_relative = 1e-12);
    }

    #[test]
    fn beta_out_of_domain() {
        let h = head();
        let b = constraints().bounds(h.ell1);
        assert!(beta_functions(2000.0, 0.0, 0.0, &h, &b).is_err());
        // x_tilde fine, q_tilde beyond varrho1
        assert!(beta_functions(0.0, 27.0, 0.0, &h, &b).is_err());
    }

    #[test]
    fn saturation_clamps() {
        assert_eq!(saturate(5.0, 2.0, 3.0), (3.0 - SATURATION_MARGIN, true));
        assert_eq!(saturate(-2.0, 2.0, 3.0), (-2.0 + SATURATION_MARGIN, true));
        assert_eq!(saturate(1.0, 2.0, 3.0), (1.0, false));
    }

    fn params() -> (CarriageParams, DavisCoefficients, CouplerParams) {
        let mut fault = FaultModel::none();
        fault.omega = 1.0;
        fault.upsilon = 2e5;
        fault.nu = 2e5;
        (
            CarriageParams { mass: 8e4, actuator_rate: 50.0, fault },
            DavisCoefficients { c0: 0.01176, c1: 0.00077616, c2: 1.6e-5 },
            CouplerParams { stiffness: 1.6e5, damping: 600.0, spacing: 26.0 },
        )
    }

    #[test]
    fn head_control_equilibrium() {
        let (p, d, c) = params();
        let ctx = CarriageContext { role: CarriageRole::Head, params: &p, davis: &d, coupler: &c };
        let h = head();
        let b = constraints().bounds(h.ell1);
        let local = HeadLocal { v: 20.0, w_hat: 0.0, w_hat_rear: 0.0, f_hat: [0.0; 3], mu3: 0.0 };
        let front = HeadFront { pair: TrainPairErrors::default(), w_hat: 0.0, drive: 0.013 };
        let out = head_control(&ctx, &local, &front, &h, &b, false).unwrap();
        assert_eq!(out.u, 0.013);
        assert!(!out.saturated);
        // nonzero own accelerations enter only through the composite coupling terms
        let local = HeadLocal { w_hat: 0.2, w_hat_rear: 0.1, f_hat: [0.1, 0.0, 0.3], mu3: 0.5, ..local };
        let front = HeadFront { w_hat: 0.2, ..front };
        let out = head_control(&ctx, &local, &front, &h, &b, false).unwrap();
        let own = ctx.b1(20.0) * 0.2 + 600.0 / 8e4 * 0.1 + 2.5 * 0.1 + 2.5 * 0.3 + 0.5;
        assert_relative_eq!(out.u, 0.013 - own, max_relative = 1e-12);
    }

    #[test]
    fn head_control_saturates_or_fails() {
        let (p, d, c) = params();
        let ctx = CarriageContext { role: CarriageRole::Head, params: &p, davis: &d, coupler: &c };
        let h = head();
        let b = constraints().bounds(h.ell1);
        let local = HeadLocal { v: 20.0, w_hat: 0.0, w_hat_rear: 0.0, f_hat: [0.0; 3], mu3: 0.0 };
        let pair = TrainPairErrors::new((9100.0, 20.0), (0.0, 20.0), 7053.0, h.ell1);
        let front = HeadFront { pair, w_hat: 0.0, drive: 0.0 };
        assert!(head_control(&ctx, &local, &front, &h, &b, false).is_err());
        let out = head_control(&ctx, &local, &front, &h, &b, true).unwrap();
        assert!(out.saturated && out.u.is_finite());
    }

    #[test]
    fn front_tail_drive_is_observer_rate() {
        use crate::observer::{observer_rhs, AuxiliaryInputs, ObserverState};
        let (p, d, c) = params();
        let ctx = CarriageContext { role: CarriageRole::Tail, params: &p, davis: &d, coupler: &c };
        let est = ObserverState { x: 0.0, v: 20.0, w: 0.3, f: [0.2, 0.1, -0.4] };
        let aux = AuxiliaryInputs { mu1: 0.0, mu2: 0.0, mu3: 0.7, mu4: [0.0; 3] };
        let rate = observer_rhs(&ctx, &est, &aux, 0.05, 20.5, -0.1, 99.0).w;
        let g = front_tail_drive(&ctx, 20.5, 0.3, -0.1, &est.f, 0.05, 0.7);
        assert_relative_eq!(g, rate, max_relative = 1e-14);
    }

    #[test]
    fn follower_control_cancels_composite_terms() {
        let (p, d, c) = params();
        let ctx = CarriageContext { role: CarriageRole::Interior, params: &p, davis: &d, coupler: &c };
        let local = FollowerLocal { v: 20.0, w_hat: 0.1, w_hat_front: -0.2, w_hat_rear: 0.3, f_hat: [1.0, 0.3, -0.5], mu3: 0.0 };
        let u = follower_control(&ctx, &local, 0.42);
        let v = [20.0, 20.0, 20.0];
        let w = [-0.2, 0.1, 0.3];
        let rhs = crate::model::composite_rhs(1, &v, &w, ctx.fault_accel(&local.f_hat), u, &p, &d, &c).unwrap();
        assert_relative_eq!(rhs[2], 0.42, epsilon = 1e-12);
        assert_eq!(follower_control(&ctx, &FollowerLocal { v: 0.0, w_hat: 0.0, w_hat_front: 0.0, w_hat_rear: 0.0, f_hat: [0.0; 3], mu3: 0.0 }, 0.0), 0.0);
    }

    #[test]
    fn parameter_validation() {
        assert_eq!(validate_parameters(&follower(), &head(), &constraints()), Ok(()));
        let names = |h: HeadGains| {
            validate_parameters(&follower(), &h, &constraints())
                .unwrap_err()
                .into_iter()
                .map(|v| v.name)
                .collect::<Vec<_>>()
        };
        assert_eq!(names(HeadGains { ell2: 2.0, ..head() }), ["ell2 > 2"]);
        // the ell1 ceiling is exactly varrho1 > 0 and varrho2 > 0
        let wide = HeadGains { ell1: 0.03, ..head() };
        assert_eq!(names(wide), ["ell1 < min(sigma2/rho1, sigma1/rho2)"]);
        let b = constraints().bounds(wide.ell1);
        assert!(b.varrho1 < 0.0 && b.varrho2 < 0.0);
    }

    #[test]
    fn initial_validation() {
        let h = head();
        let b = constraints().bounds(h.ell1);
        let p2 = TrainPairErrors::new((13010.0, 20.3), (5157.0, 19.8), 7053.0, h.ell1);
        let p3 = TrainPairErrors::new((5105.0, 20.5), (52.0, 19.7), 7053.0, h.ell1);
        assert_eq!(p2.x_tilde, 800.0);
        assert_eq!(p3.x_tilde, -2000.0);
        assert_eq!(validate_initial(&[p2, p3], &b), Ok(()));
        let edge = TrainPairErrors { x_tilde: b.rho1, ..p2 };
        assert_eq!(validate_initial(&[edge], &b).unwrap_err()[0].name, "train 1: x_tilde(0) < rho1");
    }

    #[test]
    fn dual_eval_cases() {
        let g = follower();
        let f = Differentiable::Alpha1 { gains: &g, spacing: 26.0 };
        for point in [[0.0; 5], [100.0, -3.0, 2.0, 7.0, 1.0]] {
            let (_, d) = dual_eval(&f, &point, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
            assert_eq!(d, -1.1);
        }
        assert!(dual_eval(&f, &[1.0, 2.0], &[1.0, 0.0]).is_err());
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn beta1_partials_match_finite_differences(x in -2000.0f64..1800.0, q_frac in -0.9f64..0.9) {
            let h = head();
            let b = constraints().bounds(h.ell1);
            let q = if q_frac >= 0.0 { q_frac * b.varrho1 } else { q_frac * b.varrho2 };
            let v = q - h.ell1 * x;
            let t = beta_functions(x, v, 0.0, &h, &b).unwrap();
            let fx = central(|x| beta1(x, v, &h, &b), x);
            let fv = central(|v| beta1(x, v, &h, &b), v);
            prop_assert!((t.d_beta1_dx - fx).abs() <= 1e-5 * fx.abs().max(1e-3));
            prop_assert!((t.d_beta1_dv - fv).abs() <= 1e-5 * fv.abs().max(1e-3));
        }

        #[test]
        fn phi_sign_and_slope(x in -2350.0f64..1946.0) {
            let (phi, slope) = barrier_phi(x, 1947.0, 2351.0).unwrap();
            prop_assert!(slope > 0.0);
            prop_assert!(x * phi * slope >= 0.0);
        }
    }
}
