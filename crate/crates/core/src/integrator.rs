//! Classical fixed-step fourth-order Runge-Kutta.

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("non-finite derivative in component {index} at t = {t} (stage {stage})")]
pub struct NonFiniteDerivative {
    pub t: f64,
    pub index: usize,
    pub stage: usize,
}

/// Reusable stage buffers for a state of fixed dimension.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    probe: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            probe: vec![0.0; dim],
        }
    }

    /// Advances `y` from `t` to `t + h` in place.
    ///
    /// `rhs(stage, t, y, dydt)` is called four times; stage 0 is evaluated at
    /// the step start, which callers use to sample diagnostics.
    pub fn step<F, E>(&mut self, mut rhs: F, t: f64, y: &mut [f64], h: f64) -> Result<(), E>
    where
        F: FnMut(usize, f64, &[f64], &mut [f64]) -> Result<(), E>,
        E: From<NonFiniteDerivative>,
    {
        const NODES: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        let n = y.len();
        debug_assert_eq!(n, self.probe.len());
        for stage in 0..4 {
            let ts = t + NODES[stage] * h;
            if stage == 0 {
                self.probe.copy_from_slice(y);
            } else {
                let prev = &self.k[stage - 1];
                let c = NODES[stage] * h;
                for i in 0..n {
                    self.probe[i] = y[i] + c * prev[i];
                }
            }
            let k = &mut self.k[stage];
            rhs(stage, ts, &self.probe, k)?;
            if let Some(index) = k.iter().position(|d| !d.is_finite()) {
                return Err(NonFiniteDerivative { t: ts, index, stage }.into());
            }
        }
        let [k1, k2, k3, k4] = &self.k;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// One RK4 step of an infallible, allocation-friendly right-hand side.
pub fn rk4_step<F>(mut rhs: F, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>, NonFiniteDerivative>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let mut out = y.to_vec();
    Rk4::new(y.len()).step::<_, NonFiniteDerivative>(
        |_, t, y, dy| {
            dy.copy_from_slice(&rhs(t, y));
            Ok(())
        },
        t,
        &mut out,
        h,
    )?;
    Ok(out)
}
