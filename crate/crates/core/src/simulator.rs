//! Closed-loop fixed-step simulation of the whole consist.
//!
//! Every right-hand-side evaluation follows one ordering: reference, true
//! faults, first-pass auxiliary inputs (`mu1`, `mu2`) for every carriage,
//! second pass (`mu3`, `mu4`), then controls in chain order (lead train head
//! to tail, then the next train), then state and observer derivatives. Heads
//! of later trains need the front tail's control, and followers need their
//! front neighbour's control, so chain order is the only valid order.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{ConfigError, Representation, ScenarioConfig};
use crate::controller::{
    follower_control, follower_terms, front_tail_drive, head_control, BarrierBounds, BarrierDomainError,
    FollowerGains, FollowerLocal, HeadFront, HeadGains, HeadLocal, TrainPairErrors,
};
use crate::faults::{effective_fault, SnappedWindows};
use crate::integrator::{NonFiniteDerivative, Rk4};
use crate::model::{
    composite_rhs, plant_acceleration, preliminary_control, traction_for_acceleration, CarriageParams, CarriageRole,
    ConsistTopology, CouplerParams, DavisCoefficients, ModelError,
};
use crate::monitor::{Monitor, MonitorSpec, SummaryReport};
use crate::observer::{
    auxiliary_inputs, build_augmented_pair, observer_rhs, synthesize_gains, AuxiliaryInputs, CarriageContext,
    ObserverError, ObserverGains, ObserverState,
};
use crate::reference::{Reference, ReferenceError};

/// State entries per carriage: three true states then six observer states.
pub const STATE_PER_CARRIAGE: usize = 9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("integration fault: {0}")]
    Integration(#[from] NonFiniteDerivative),
    #[error("constraint violated for train {train} at t = {t}: {source}")]
    ConstraintViolation { t: f64, train: usize, source: BarrierDomainError },
    #[error("output error: {0}")]
    Sink(#[from] std::io::Error),
}

/// What a custom control law sees for one carriage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlQuery {
    pub t: f64,
    pub train: usize,
    pub carriage: usize,
    /// The designed control at this instant.
    pub designed: f64,
}

pub type CustomLaw = Arc<dyn Fn(&ControlQuery) -> f64 + Send + Sync>;

#[derive(Clone, Default)]
pub enum ControlLaw {
    #[default]
    Designed,
    Zero,
    Custom(CustomLaw),
}

impl std::fmt::Debug for ControlLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Designed => f.write_str("Designed"),
            Self::Zero => f.write_str("Zero"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl ControlLaw {
    fn apply(&self, q: &ControlQuery) -> f64 {
        match self {
            Self::Designed => q.designed,
            Self::Zero => 0.0,
            Self::Custom(f) => f(q),
        }
    }
}

/// Order in which the head of a later train sees the front tail's control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControlOrdering {
    /// The front tail's control from the same evaluation.
    #[default]
    Chain,
    /// The front tail's control from the previous evaluation. Only useful to
    /// show that the ordering matters.
    StaleFrontTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarriageSample {
    pub x: f64,
    pub v: f64,
    pub w: f64,
    pub tau: f64,
    pub u: f64,
    /// True `E f` (N/s).
    pub f_eff: f64,
    /// Estimated `E f_hat` (N/s).
    pub f_eff_hat: f64,
    pub e_x: f64,
    pub e_v: f64,
    pub e_w: f64,
    pub e_f: [f64; 3],
    pub aux: AuxiliaryInputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairSample {
    pub eps: f64,
    pub x_tilde: f64,
    pub v_tilde: f64,
    pub q_tilde: f64,
}

impl From<TrainPairErrors> for PairSample {
    fn from(p: TrainPairErrors) -> Self {
        Self { eps: p.epsilon, x_tilde: p.x_tilde, v_tilde: p.v_tilde, q_tilde: p.q_tilde }
    }
}

/// One recorded instant. Carriages are in chain order; `pairs[0]` is the
/// lead train against the reference.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sample {
    pub t: f64,
    pub carriages: Vec<CarriageSample>,
    pub pairs: Vec<PairSample>,
}

pub trait SampleSink {
    fn record(&mut self, sample: &Sample) -> std::io::Result<()>;
}

impl<F: FnMut(&Sample) -> std::io::Result<()>> SampleSink for F {
    fn record(&mut self, sample: &Sample) -> std::io::Result<()> {
        self(sample)
    }
}

/// Keeps every sample in memory.
#[derive(Debug, Default)]
pub struct SampleBuffer(pub Vec<Sample>);

impl SampleSink for SampleBuffer {
    fn record(&mut self, sample: &Sample) -> std::io::Result<()> {
        self.0.push(sample.clone());
        Ok(())
    }
}

/// Forwards to several sinks.
pub struct Tee<'a>(pub Vec<&'a mut dyn SampleSink>);

impl SampleSink for Tee<'_> {
    fn record(&mut self, sample: &Sample) -> std::io::Result<()> {
        for s in self.0.iter_mut() {
            s.record(sample)?;
        }
        Ok(())
    }
}

/// Step-held Gaussian jerk disturbance, one draw per carriage per step.
#[derive(Debug, Clone)]
pub struct DisturbanceSource {
    inner: Option<(ChaCha8Rng, Normal<f64>)>,
}

impl DisturbanceSource {
    pub fn new(enabled: bool, variance: f64, seed: u64) -> Self {
        let inner = (enabled && variance > 0.0).then(|| {
            (
                ChaCha8Rng::seed_from_u64(seed),
                Normal::new(0.0, variance.sqrt()).expect("finite non-negative variance"),
            )
        });
        Self { inner }
    }

    pub fn disabled() -> Self {
        Self { inner: None }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        match &mut self.inner {
            Some((rng, normal)) => out.iter_mut().for_each(|d| *d = normal.sample(rng)),
            None => out.fill(0.0),
        }
    }
}

/// Immutable description of the closed loop.
struct Plant {
    topology: ConsistTopology,
    roles: Vec<CarriageRole>,
    params: Vec<CarriageParams>,
    davis: DavisCoefficients,
    coupler: CouplerParams,
    follower: FollowerGains,
    head: HeadGains,
    bounds: BarrierBounds,
    service_distance: f64,
    reference: Reference,
    gains: Vec<ObserverGains>,
    windows: Vec<SnappedWindows>,
    plant_form: bool,
    control: ControlLaw,
    ordering: ControlOrdering,
    abort_on_violation: bool,
}

impl Plant {
    fn ctx(&self, c: usize) -> CarriageContext<'_> {
        CarriageContext { role: self.roles[c], params: &self.params[c], davis: &self.davis, coupler: &self.coupler }
    }
}

/// Per-evaluation buffers.
#[derive(Debug, Clone, Default)]
struct Workspace {
    x: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    tau: Vec<f64>,
    est: Vec<ObserverState>,
    aux: Vec<AuxiliaryInputs>,
    u: Vec<f64>,
    rates: Vec<ObserverState>,
    fault: Vec<[f64; 3]>,
    pairs: Vec<TrainPairErrors>,
    saturated: Vec<bool>,
    stale_tail_u: Vec<f64>,
}

impl Workspace {
    fn new(carriages: usize, trains: usize) -> Self {
        Self {
            x: vec![0.0; carriages],
            v: vec![0.0; carriages],
            w: vec![0.0; carriages],
            tau: vec![0.0; carriages],
            est: vec![ObserverState::default(); carriages],
            aux: vec![AuxiliaryInputs::default(); carriages],
            u: vec![0.0; carriages],
            rates: vec![ObserverState::default(); carriages],
            fault: vec![[0.0; 3]; carriages],
            pairs: vec![TrainPairErrors::default(); trains],
            saturated: vec![false; trains],
            stale_tail_u: vec![0.0; trains],
        }
    }

    fn sample(&self, plant: &Plant, t: f64) -> Sample {
        let carriages = (0..self.x.len())
            .map(|c| {
                let p = &plant.params[c];
                let (f_eff, _) = effective_fault(&self.fault[c], &p.fault, p.mass);
                let (f_eff_hat, _) = effective_fault(&self.est[c].f, &p.fault, p.mass);
                let e = &self.est[c];
                CarriageSample {
                    x: self.x[c],
                    v: self.v[c],
                    w: self.w[c],
                    tau: self.tau[c],
                    u: self.u[c],
                    f_eff,
                    f_eff_hat,
                    e_x: e.x - self.x[c],
                    e_v: e.v - self.v[c],
                    e_w: e.w - self.w[c],
                    e_f: std::array::from_fn(|k| e.f[k] - self.fault[c][k]),
                    aux: self.aux[c],
                }
            })
            .collect();
        Sample { t, carriages, pairs: self.pairs.iter().map(|&p| p.into()).collect() }
    }
}

fn evaluate(
    plant: &Plant,
    ws: &mut Workspace,
    t: f64,
    step: i64,
    y: &[f64],
    disturbance: &[f64],
    dy: &mut [f64],
) -> Result<(), SimError> {
    let n = ws.x.len();
    for c in 0..n {
        let s = &y[STATE_PER_CARRIAGE * c..STATE_PER_CARRIAGE * (c + 1)];
        ws.x[c] = s[0];
        ws.v[c] = s[1];
        ws.est[c] = ObserverState { x: s[3], v: s[4], w: s[5], f: [s[6], s[7], s[8]] };
        let (con, per) = plant.windows[c].active(step);
        ws.fault[c] = plant.params[c].fault.gated_value(t, con, per);
    }
    for i in 0..plant.topology.train_count() {
        let r = plant.topology.train_range(i);
        for c in r.clone() {
            let (j, third) = (c - r.start, y[STATE_PER_CARRIAGE * c + 2]);
            let (xs, vs) = (&ws.x[r.clone()], &ws.v[r.clone()]);
            let p = &plant.params[c];
            if plant.plant_form {
                ws.tau[c] = third;
                ws.w[c] = plant_acceleration(j, third, xs, vs, p, &plant.davis, &plant.coupler)?;
            } else {
                ws.w[c] = third;
                ws.tau[c] = traction_for_acceleration(j, third, xs, vs, p, &plant.davis, &plant.coupler)?;
            }
        }
        let aux = auxiliary_inputs(
            &plant.params[r.clone()],
            &plant.davis,
            &plant.coupler,
            &plant.gains[r.clone()],
            &ws.x[r.clone()],
            &ws.v[r.clone()],
            &ws.est[r.clone()],
        )?;
        ws.aux[r].copy_from_slice(&aux);
    }

    let reference = plant.reference.evaluate(t)?;
    let ell1 = plant.head.ell1;
    for i in 0..plant.topology.train_count() {
        let r = plant.topology.train_range(i);
        let head = r.start;
        let (front, w_hat_front, drive) = if i == 0 {
            ((reference.x, reference.v), reference.w, reference.u)
        } else {
            let tail = head - 1;
            let u_tail = match plant.ordering {
                ControlOrdering::Chain => ws.u[tail],
                ControlOrdering::StaleFrontTail => ws.stale_tail_u[i],
            };
            let drive = front_tail_drive(
                &plant.ctx(tail),
                ws.v[tail],
                ws.est[tail].w,
                ws.est[tail - 1].w,
                &ws.est[tail].f,
                u_tail,
                ws.aux[tail].mu3,
            );
            ((ws.x[tail], ws.v[tail]), ws.est[tail].w, drive)
        };
        let pair = TrainPairErrors::new(front, (ws.x[head], ws.v[head]), plant.service_distance, ell1);
        ws.pairs[i] = pair;
        let ctx = plant.ctx(head);
        let local = HeadLocal {
            v: ws.v[head],
            w_hat: ws.est[head].w,
            w_hat_rear: ws.est[head + 1].w,
            f_hat: ws.est[head].f,
            mu3: ws.aux[head].mu3,
        };
        let out = head_control(
            &ctx,
            &local,
            &HeadFront { pair, w_hat: w_hat_front, drive },
            &plant.head,
            &plant.bounds,
            !plant.abort_on_violation,
        )
        .map_err(|source| SimError::ConstraintViolation { t, train: i + 1, source })?;
        ws.saturated[i] = out.saturated;
        let query = ControlQuery { t, train: i, carriage: 0, designed: out.u };
        ws.u[head] = plant.control.apply(&query);
        ws.rates[head] = observer_rhs(&ctx, &ws.est[head], &ws.aux[head], ws.u[head], ws.v[head], 0.0, ws.est[head + 1].w);

        for c in head + 1..r.end {
            let ctx = plant.ctx(c);
            let (e, ef) = (ws.est[c], ws.est[c - 1]);
            let args = [e.x, ef.x, e.v, ef.v, ef.w];
            let front_rate = ws.rates[c - 1];
            let rates = [e.v + ws.aux[c].mu1, front_rate.x, e.w + ws.aux[c].mu2, front_rate.v, front_rate.w];
            let terms = follower_terms(&args, e.w, &rates, &plant.follower, plant.coupler.spacing);
            let w_hat_rear = if c + 1 < r.end { ws.est[c + 1].w } else { 0.0 };
            let local = FollowerLocal {
                v: ws.v[c],
                w_hat: e.w,
                w_hat_front: ef.w,
                w_hat_rear,
                f_hat: e.f,
                mu3: ws.aux[c].mu3,
            };
            let designed = follower_control(&ctx, &local, terms.alpha[2]);
            let query = ControlQuery { t, train: i, carriage: c - head, designed };
            ws.u[c] = plant.control.apply(&query);
            ws.rates[c] = observer_rhs(&ctx, &e, &ws.aux[c], ws.u[c], ws.v[c], ef.w, w_hat_rear);
        }
    }
    for i in 1..plant.topology.train_count() {
        ws.stale_tail_u[i] = ws.u[plant.topology.train_range(i - 1).end - 1];
    }

    for i in 0..plant.topology.train_count() {
        let r = plant.topology.train_range(i);
        for c in r.clone() {
            let j = c - r.start;
            let p = &plant.params[c];
            let (xs, vs) = (&ws.x[r.clone()], &ws.v[r.clone()]);
            let (f_force, f_accel) = effective_fault(&ws.fault[c], &p.fault, p.mass);
            let d = &mut dy[STATE_PER_CARRIAGE * c..STATE_PER_CARRIAGE * (c + 1)];
            if plant.plant_form {
                let varpi = preliminary_control(ws.u[c], j, xs, vs, p, &plant.davis, &plant.coupler)?;
                d[0] = ws.v[c];
                d[1] = ws.w[c];
                d[2] = -p.actuator_rate * ws.tau[c] + varpi + f_force + p.mass * disturbance[c];
            } else {
                let rhs = composite_rhs(j, vs, &ws.w[r.clone()], f_accel, ws.u[c], p, &plant.davis, &plant.coupler)?;
                d[0] = rhs[0];
                d[1] = rhs[1];
                d[2] = rhs[2] + disturbance[c];
            }
            let rate = ws.rates[c];
            d[3] = rate.x;
            d[4] = rate.v;
            d[5] = rate.w;
            d[6..9].copy_from_slice(&rate.f);
        }
    }
    Ok(())
}

/// Options that are not part of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub control: ControlLaw,
    pub ordering: ControlOrdering,
}

/// Steps at which a head's barrier arguments had to be clamped, per train.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct SaturationLog {
    pub per_train: Vec<u64>,
    pub first_time: Option<f64>,
}

pub struct Simulator {
    plant: Plant,
    workspace: Workspace,
    state: Vec<f64>,
    step: f64,
    steps: u64,
    k: u64,
    record_every: u64,
    noise: DisturbanceSource,
    disturbance: Vec<f64>,
    rk: Rk4,
    saturation: SaturationLog,
}

impl Simulator {
    /// Builds a simulator for one representation (`Both` is treated as composite).
    pub fn new(config: &ScenarioConfig, representation: Representation, options: RunOptions) -> Result<Self, SimError> {
        config.validate()?;
        let topology = config.topology()?;
        let n = topology.total_carriages();
        let mut roles = Vec::with_capacity(n);
        for (i, j) in topology.iter() {
            roles.push(CarriageRole::of(j, topology.carriages_in(i))?);
        }
        let params: Vec<CarriageParams> = config.carriages().map(|c| c.params.clone()).collect();
        let h = config.integration.step_s;
        let mut gains = Vec::with_capacity(n);
        for p in &params {
            let g = match config.observer.gain_override {
                Some(k) => ObserverGains { k1: -config.observer.position_eigenvalue, k },
                None => {
                    let (a, c) = build_augmented_pair(p.fault_accel_row(), &p.fault.exosystem());
                    synthesize_gains(&a, &c, &config.observer.desired_eigenvalues, config.observer.position_eigenvalue)?
                }
            };
            gains.push(g);
        }
        let plant_form = representation == Representation::Plant;
        let plant = Plant {
            windows: params.iter().map(|p| p.fault.snapped(h)).collect(),
            topology: topology.clone(),
            roles,
            params,
            davis: config.davis,
            coupler: config.coupler,
            follower: config.follower_gains,
            head: config.head_gains,
            bounds: config.constraints.bounds(config.head_gains.ell1),
            service_distance: config.constraints.service_distance,
            reference: Reference::new(config.reference.clone())?,
            gains,
            plant_form,
            control: options.control,
            ordering: options.ordering,
            abort_on_violation: config.abort_on_violation,
        };

        let mut state = vec![0.0; STATE_PER_CARRIAGE * n];
        for i in 0..topology.train_count() {
            let r = topology.train_range(i);
            let cars = &config.trains[i].carriages;
            let xs: Vec<f64> = cars.iter().map(|c| c.initial.position_m).collect();
            let vs: Vec<f64> = cars.iter().map(|c| c.initial.velocity_mps).collect();
            for (j, car) in cars.iter().enumerate() {
                let c = r.start + j;
                let s = &mut state[STATE_PER_CARRIAGE * c..STATE_PER_CARRIAGE * (c + 1)];
                s[0] = xs[j];
                s[1] = vs[j];
                s[2] = if plant_form {
                    traction_for_acceleration(j, car.initial.accel_mps2, &xs, &vs, &car.params, &config.davis, &config.coupler)?
                } else {
                    car.initial.accel_mps2
                };
                let e = car.initial.estimate_or_default();
                s[3] = e.position_m;
                s[4] = e.velocity_mps;
                s[5] = e.accel_mps2;
                s[6..9].copy_from_slice(&e.fault);
            }
        }

        let steps = (config.integration.duration_s / h).round() as u64;
        Ok(Self {
            workspace: Workspace::new(n, topology.train_count()),
            plant,
            state,
            step: h,
            steps,
            k: 0,
            record_every: config.integration.record_every.max(1) as u64,
            noise: DisturbanceSource::new(config.noise.enabled, config.noise.variance_m2ps6, config.noise.seed),
            disturbance: vec![0.0; n],
            rk: Rk4::new(STATE_PER_CARRIAGE * n),
            saturation: SaturationLog { per_train: vec![0; topology.train_count()], first_time: None },
        })
    }

    pub fn topology(&self) -> &ConsistTopology {
        &self.plant.topology
    }

    pub fn observer_gains(&self) -> &[ObserverGains] {
        &self.plant.gains
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.step
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.k >= self.steps
    }

    pub fn saturation(&self) -> &SaturationLog {
        &self.saturation
    }

    /// Raw state: per carriage `[x, v, w or tau, x_hat, v_hat, w_hat, f_hat(3)]`.
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Overwrite the observer state of carriage `c` (flat index).
    pub fn set_estimate(&mut self, c: usize, estimate: ObserverState) {
        let s = &mut self.state[STATE_PER_CARRIAGE * c + 3..STATE_PER_CARRIAGE * (c + 1)];
        s[0] = estimate.x;
        s[1] = estimate.v;
        s[2] = estimate.w;
        s[3..6].copy_from_slice(&estimate.f);
    }

    /// Everything observable at the current instant, without advancing.
    pub fn sample(&mut self) -> Result<Sample, SimError> {
        let mut scratch = vec![0.0; self.state.len()];
        let t = self.time();
        evaluate(&self.plant, &mut self.workspace, t, self.k as i64, &self.state, &self.disturbance, &mut scratch)?;
        Ok(self.workspace.sample(&self.plant, t))
    }

    fn note_saturation(&mut self, t: f64, flags: &[bool]) {
        for (i, &s) in flags.iter().enumerate() {
            if s {
                self.saturation.per_train[i] += 1;
                self.saturation.first_time.get_or_insert(t);
            }
        }
    }

    /// Advance one step; the step-start sample goes to `sink` when due.
    pub fn advance(&mut self, sink: &mut dyn SampleSink) -> Result<(), SimError> {
        let k = self.k;
        let h = self.step;
        let t = k as f64 * h;
        self.noise.fill(&mut self.disturbance);
        let due = k % self.record_every == 0;
        let Self { plant, workspace, state, disturbance, rk, .. } = self;
        let mut pending: Option<Sample> = None;
        let mut flags = Vec::new();
        rk.step::<_, SimError>(
            |stage, ts, y, dy| {
                evaluate(plant, workspace, ts, k as i64, y, disturbance, dy)?;
                if stage == 0 {
                    flags.clone_from(&workspace.saturated);
                    if due {
                        pending = Some(workspace.sample(plant, ts));
                    }
                }
                Ok(())
            },
            t,
            state,
            h,
        )?;
        self.note_saturation(t, &flags);
        if let Some(s) = pending {
            sink.record(&s)?;
        }
        self.k += 1;
        Ok(())
    }

    /// Run to the end of the horizon, recording the final instant as well.
    pub fn run(&mut self, sink: &mut dyn SampleSink) -> Result<(), SimError> {
        while !self.is_finished() {
            self.advance(sink)?;
        }
        let last = self.sample()?;
        let flags = self.workspace.saturated.clone();
        self.note_saturation(last.t, &flags);
        sink.record(&last)?;
        Ok(())
    }
}

/// Result of one representation of a scenario.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub representation: Representation,
    pub summary: SummaryReport,
    pub saturation: SaturationLog,
}

pub fn monitor_spec(config: &ScenarioConfig) -> Result<MonitorSpec, SimError> {
    Ok(MonitorSpec {
        carriages_per_train: config.topology()?.carriages_per_train().to_vec(),
        spacing: config.coupler.spacing,
        bounds: config.constraints.bounds(config.head_gains.ell1),
        sigma1: config.constraints.sigma1,
        sigma2: config.constraints.sigma2,
        tolerances: config.active_tolerances(),
        duration: config.integration.duration_s,
        step: config.integration.step_s,
        transitions: config.carriages().map(|c| c.params.fault.transition_times()).collect(),
    })
}

/// The representations a scenario asks for.
pub fn representations(r: Representation) -> Vec<Representation> {
    match r {
        Representation::Both => vec![Representation::Composite, Representation::Plant],
        other => vec![other],
    }
}

/// Runs every requested representation, monitoring requirements and feeding
/// each run's samples to the sink `extra` provides for it.
pub fn run_scenario<'a>(
    config: &ScenarioConfig,
    options: RunOptions,
    mut extra: impl FnMut(Representation) -> std::io::Result<Option<Box<dyn SampleSink + 'a>>>,
) -> Result<Vec<RunOutcome>, SimError> {
    config.validate()?;
    let mut out = Vec::new();
    for rep in representations(config.integration.representation) {
        let mut sim = Simulator::new(config, rep, options.clone())?;
        let mut monitor = Monitor::new(monitor_spec(config)?);
        let mut sink = extra(rep)?;
        {
            let mut tee = Tee(vec![&mut monitor]);
            if let Some(s) = sink.as_deref_mut() {
                tee.0.push(s);
            }
            sim.run(&mut tee)?;
        }
        out.push(RunOutcome { representation: rep, summary: monitor.finish(), saturation: sim.saturation().clone() });
    }
    Ok(out)
}
