//! Requirement monitoring over a stream of samples.
//!
//! R1: intra-train gaps converge to the coupler spacing and neighbouring
//! velocities agree. R2: inter-train spacing error stays inside
//! `(-rho2, rho1)` and converges. R3: inter-train velocity error stays inside
//! `(-sigma2, sigma1)` and converges. The combined error `q_tilde` is tracked
//! against `(-varrho2, varrho1)` as a diagnostic only.

use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::controller::BarrierBounds;
use crate::simulator::{Sample, SampleSink};

/// Events kept verbatim in a report; later ones are only counted.
pub const MAX_EVENTS: usize = 1000;

/// Settling is judged over this final stretch of each fault-stable interval.
pub const SETTLING_WINDOW_S: f64 = 10.0;
/// Intervals shorter than this are not judged.
pub const MIN_SETTLING_INTERVAL_S: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSpec {
    pub carriages_per_train: Vec<usize>,
    pub spacing: f64,
    pub bounds: BarrierBounds,
    pub sigma1: f64,
    pub sigma2: f64,
    pub tolerances: Tolerances,
    pub duration: f64,
    pub step: f64,
    /// Per carriage in chain order: fault transition times, unsorted is fine.
    pub transitions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    XTilde,
    VTilde,
    QTilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvent {
    pub t: f64,
    /// 1-based train index; pair `i` is train `i` against its predecessor.
    pub pair: usize,
    pub quantity: Quantity,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Default for Range {
    fn default() -> Self {
        Self { min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl Range {
    fn push(&mut self, x: f64) {
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn value(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: usize,
    pub x_tilde: Range,
    pub v_tilde: Range,
    pub q_tilde: Range,
    pub tail_mean_abs_x_tilde: f64,
    pub tail_mean_abs_v_tilde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub train: usize,
    /// 1-based index of the rear carriage of the gap.
    pub carriage: usize,
    pub tail_mean_abs_gap_error: f64,
    pub tail_mean_abs_velocity_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlingInterval {
    pub start: f64,
    pub end: f64,
    /// Largest `|E f - E f_hat|` over the final window.
    pub max_fault_error: f64,
    /// Largest `|E f|` over the final window.
    pub max_fault: f64,
    pub max_abs_e_w: f64,
}

impl SettlingInterval {
    pub fn settled(&self, relative: f64, e_w: f64) -> bool {
        self.max_fault_error < relative * self.max_fault.max(1.0) && self.max_abs_e_w < e_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverReport {
    pub train: usize,
    pub carriage: usize,
    pub max_abs_e_w: f64,
    pub intervals: Vec<SettlingInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub r1: Verdict,
    pub r2: Verdict,
    pub r3: Verdict,
}

impl Verdicts {
    pub fn all_pass(&self) -> bool {
        self.r1.pass && self.r2.pass && self.r3.pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub samples: u64,
    pub final_time: f64,
    pub tolerances: Tolerances,
    pub bounds: BarrierBounds,
    pub pairs: Vec<PairReport>,
    pub gaps: Vec<GapReport>,
    pub observers: Vec<ObserverReport>,
    pub event_count: u64,
    pub q_tilde_event_count: u64,
    pub events: Vec<ViolationEvent>,
    pub verdicts: Verdicts,
}

struct IntervalAcc {
    start: f64,
    end: f64,
    fault_error: f64,
    fault: f64,
    e_w: f64,
}

/// Streaming requirement monitor; feed it samples in time order.
pub struct Monitor {
    spec: MonitorSpec,
    samples: u64,
    final_time: f64,
    x_range: Vec<Range>,
    v_range: Vec<Range>,
    q_range: Vec<Range>,
    x_tail: Vec<Mean>,
    v_tail: Vec<Mean>,
    gap_tail: Vec<(usize, usize, Mean, Mean)>,
    e_w_max: Vec<f64>,
    intervals: Vec<Vec<IntervalAcc>>,
    events: Vec<ViolationEvent>,
    event_count: u64,
    q_events: u64,
    hard_events: [u64; 2],
}

impl Monitor {
    pub fn new(spec: MonitorSpec) -> Self {
        let pairs = spec.carriages_per_train.len();
        let mut gap_tail = Vec::new();
        for (i, &m) in spec.carriages_per_train.iter().enumerate() {
            for j in 1..m {
                gap_tail.push((i, j, Mean::default(), Mean::default()));
            }
        }
        let intervals = spec
            .transitions
            .iter()
            .map(|times| {
                let mut cuts: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0 && t < spec.duration).collect();
                cuts.push(0.0);
                cuts.push(spec.duration);
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                cuts.windows(2)
                    .filter(|w| w[1] - w[0] >= MIN_SETTLING_INTERVAL_S)
                    .map(|w| IntervalAcc { start: w[0], end: w[1], fault_error: 0.0, fault: 0.0, e_w: 0.0 })
                    .collect()
            })
            .collect();
        let n: usize = spec.carriages_per_train.iter().sum();
        Self {
            samples: 0,
            final_time: f64::NAN,
            x_range: vec![Range::default(); pairs],
            v_range: vec![Range::default(); pairs],
            q_range: vec![Range::default(); pairs],
            x_tail: vec![Mean::default(); pairs],
            v_tail: vec![Mean::default(); pairs],
            gap_tail,
            e_w_max: vec![0.0; n],
            intervals,
            events: Vec::new(),
            event_count: 0,
            q_events: 0,
            hard_events: [0; 2],
            spec,
        }
    }

    fn event(&mut self, e: ViolationEvent) {
        self.event_count += 1;
        if self.events.len() < MAX_EVENTS {
            self.events.push(e);
        }
    }

    pub fn observe(&mut self, s: &Sample) {
        let half = 0.5 * self.spec.step;
        let in_tail = s.t >= self.spec.duration - self.spec.tolerances.tail_window_s - half;
        self.samples += 1;
        self.final_time = s.t;
        let b = self.spec.bounds;
        for (i, p) in s.pairs.iter().enumerate() {
            self.x_range[i].push(p.x_tilde);
            self.v_range[i].push(p.v_tilde);
            self.q_range[i].push(p.q_tilde);
            let pair = i + 1;
            if !(p.x_tilde > -b.rho2 && p.x_tilde < b.rho1) {
                self.hard_events[0] += 1;
                self.event(ViolationEvent { t: s.t, pair, quantity: Quantity::XTilde, value: p.x_tilde });
            }
            if !(p.v_tilde > -self.spec.sigma2 && p.v_tilde < self.spec.sigma1) {
                self.hard_events[1] += 1;
                self.event(ViolationEvent { t: s.t, pair, quantity: Quantity::VTilde, value: p.v_tilde });
            }
            if !(p.q_tilde > -b.varrho2 && p.q_tilde < b.varrho1) {
                self.q_events += 1;
                self.event(ViolationEvent { t: s.t, pair, quantity: Quantity::QTilde, value: p.q_tilde });
            }
            if in_tail {
                self.x_tail[i].push(p.x_tilde.abs());
                self.v_tail[i].push(p.v_tilde.abs());
            }
        }
        if in_tail {
            let offsets = train_offsets(&self.spec.carriages_per_train);
            for (i, j, gap, dv) in self.gap_tail.iter_mut() {
                let (front, rear) = (&s.carriages[offsets[*i] + *j - 1], &s.carriages[offsets[*i] + *j]);
                gap.push((front.x - rear.x - self.spec.spacing).abs());
                dv.push((front.v - rear.v).abs());
            }
        }
        for (c, car) in s.carriages.iter().enumerate() {
            self.e_w_max[c] = self.e_w_max[c].max(car.e_w.abs());
            for iv in self.intervals.get_mut(c).into_iter().flatten() {
                if s.t >= iv.end - SETTLING_WINDOW_S - half && s.t < iv.end - half {
                    iv.fault_error = iv.fault_error.max((car.f_eff - car.f_eff_hat).abs());
                    iv.fault = iv.fault.max(car.f_eff.abs());
                    iv.e_w = iv.e_w.max(car.e_w.abs());
                }
            }
        }
    }

    pub fn finish(self) -> SummaryReport {
        let tol = self.spec.tolerances;
        let pairs: Vec<PairReport> = (0..self.x_range.len())
            .map(|i| PairReport {
                pair: i + 1,
                x_tilde: self.x_range[i],
                v_tilde: self.v_range[i],
                q_tilde: self.q_range[i],
                tail_mean_abs_x_tilde: self.x_tail[i].value(),
                tail_mean_abs_v_tilde: self.v_tail[i].value(),
            })
            .collect();
        let gaps: Vec<GapReport> = self
            .gap_tail
            .iter()
            .map(|(i, j, gap, dv)| GapReport {
                train: i + 1,
                carriage: j + 1,
                tail_mean_abs_gap_error: gap.value(),
                tail_mean_abs_velocity_difference: dv.value(),
            })
            .collect();
        let offsets = train_offsets(&self.spec.carriages_per_train);
        let mut observers = Vec::new();
        for (i, &m) in self.spec.carriages_per_train.iter().enumerate() {
            for j in 0..m {
                let c = offsets[i] + j;
                let intervals = self.intervals.get(c).map(|v| v.as_slice()).unwrap_or(&[]);
                observers.push(ObserverReport {
                    train: i + 1,
                    carriage: j + 1,
                    max_abs_e_w: self.e_w_max[c],
                    intervals: intervals
                        .iter()
                        .map(|a| SettlingInterval {
                            start: a.start,
                            end: a.end,
                            max_fault_error: a.fault_error,
                            max_fault: a.fault,
                            max_abs_e_w: a.e_w,
                        })
                        .collect(),
                });
            }
        }

        let worst_gap = gaps.iter().map(|g| g.tail_mean_abs_gap_error).fold(0.0, nan_max);
        let worst_dv = gaps.iter().map(|g| g.tail_mean_abs_velocity_difference).fold(0.0, nan_max);
        let worst_x = pairs.iter().map(|p| p.tail_mean_abs_x_tilde).fold(0.0, nan_max);
        let worst_v = pairs.iter().map(|p| p.tail_mean_abs_v_tilde).fold(0.0, nan_max);
        let r1 = Verdict {
            pass: worst_gap < tol.gap_m && worst_dv < tol.gap_velocity_mps,
            detail: format!(
                "tail mean |gap - spacing| {worst_gap:.3e} (< {}), tail mean |velocity difference| {worst_dv:.3e} (< {})",
                tol.gap_m, tol.gap_velocity_mps
            ),
        };
        let r2 = Verdict {
            pass: self.hard_events[0] == 0 && worst_x < tol.xtilde_m,
            detail: format!(
                "{} bound violations, tail mean |x_tilde| {worst_x:.3e} (< {})",
                self.hard_events[0], tol.xtilde_m
            ),
        };
        let r3 = Verdict {
            pass: self.hard_events[1] == 0 && worst_v < tol.vtilde_mps,
            detail: format!(
                "{} bound violations, tail mean |v_tilde| {worst_v:.3e} (< {})",
                self.hard_events[1], tol.vtilde_mps
            ),
        };
        SummaryReport {
            samples: self.samples,
            final_time: self.final_time,
            tolerances: tol,
            bounds: self.spec.bounds,
            pairs,
            gaps,
            observers,
            event_count: self.event_count,
            q_tilde_event_count: self.q_events,
            events: self.events,
            verdicts: Verdicts { r1, r2, r3 },
        }
    }
}

impl SampleSink for Monitor {
    fn record(&mut self, sample: &Sample) -> std::io::Result<()> {
        self.observe(sample);
        Ok(())
    }
}

/// NaN-propagating max, so an empty tail window fails its verdict.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn train_offsets(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .scan(0, |acc, &m| {
            let start = *acc;
            *acc += m;
            Some(start)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{CarriageSample, PairSample};

    fn spec() -> MonitorSpec {
        MonitorSpec {
            carriages_per_train: vec![2],
            spacing: 26.0,
            bounds: BarrierBounds { rho1: 1947.0, rho2: 2351.0, varrho1: 26.49, varrho2: 30.53 },
            sigma1: 50.0,
            sigma2: 50.0,
            tolerances: Tolerances::noise_free(),
            duration: 200.0,
            step: 1.0,
            transitions: vec![vec![], vec![]],
        }
    }

    fn sample(t: f64, x_tilde: f64) -> Sample {
        Sample {
            t,
            carriages: vec![
                CarriageSample { x: 100.0, v: 20.0, ..Default::default() },
                CarriageSample { x: 74.0, v: 20.0, ..Default::default() },
            ],
            pairs: vec![PairSample { x_tilde, ..Default::default() }],
        }
    }

    fn run(xs: impl Fn(f64) -> f64) -> SummaryReport {
        let mut m = Monitor::new(spec());
        for k in 0..=200 {
            m.observe(&sample(k as f64, xs(k as f64)));
        }
        m.finish()
    }

    #[test]
    fn zero_error_passes() {
        let r = run(|_| 0.0);
        assert!(r.verdicts.all_pass(), "{:?}", r.verdicts);
        assert_eq!(r.event_count, 0);
        assert_eq!(r.gaps[0].tail_mean_abs_gap_error, 0.0);
    }

    #[test]
    fn single_bound_violation_is_an_event() {
        let r = run(|t| if t == 37.0 { 1948.0 } else { 0.0 });
        assert!(!r.verdicts.r2.pass);
        assert!(r.verdicts.r1.pass && r.verdicts.r3.pass);
        assert_eq!(r.event_count, 1);
        assert_eq!(r.events[0], ViolationEvent { t: 37.0, pair: 1, quantity: Quantity::XTilde, value: 1948.0 });
    }

    #[test]
    fn tail_mean_uses_window() {
        // error only before the tail window
        let r = run(|t| if t < 99.0 { 500.0 } else { 0.5 });
        assert!(r.verdicts.r2.pass);
        assert!((r.pairs[0].tail_mean_abs_x_tilde - 0.5).abs() < 1e-12);
        assert_eq!(r.pairs[0].x_tilde, Range { min: 0.5, max: 500.0 });
        let r = run(|_| 2.0);
        assert!(!r.verdicts.r2.pass);
    }

    #[test]
    fn settling_intervals_split_at_transitions() {
        let mut s = spec();
        s.duration = 400.0;
        s.transitions = vec![vec![150.0, 180.0, 500.0], vec![]];
        let m = Monitor::new(s);
        let spans: Vec<(f64, f64)> = m.intervals[0].iter().map(|a| (a.start, a.end)).collect();
        assert_eq!(spans, vec![(0.0, 150.0), (180.0, 400.0)]);
        assert_eq!(m.intervals[1].len(), 1);
    }

    #[test]
    fn empty_tail_fails() {
        let mut m = Monitor::new(spec());
        m.observe(&sample(0.0, 0.0));
        assert!(!m.finish().verdicts.r2.pass);
    }
}
