//! Step detection from the acceleration-magnitude signal.
//!
//! The primary detector is a six-state machine. A stride is a positive
//! acceleration peak followed by a negative one; a step is counted only when
//! the machine walks the full cycle
//! `Stationary -> Walking -> PeekPos -> PeekNeg -> Stationary`, and the
//! moment it re-enters `Stationary` is the end of the step.
//!
//! ```text
//!              s > t_walk          s > t_peak           s < -t_peak
//! Stationary ----------> Walking ----------> PeekPos ------------> PeekNeg
//!     ^                   |  ^                 |  ^                  |
//!     |        s <= t_walk|  |s > t_walk       |  |                  | |s| < t_walk
//!     |                   v  |                 v  |                  | for quiet_ms
//!     +---- budget spent - W2                  P2 ------------------+-> Stationary
//! ```
//!
//! `W2` and `P2` are tolerance states: they absorb up to
//! [`FsmParams::outlier_budget`] consecutive samples that violate the current
//! state's condition. Spending more than the budget resets the machine
//! without emitting a step.
//!
//! The local-variance detector is kept as a baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Millis, Trace, TraceParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub start_t: Millis,
    pub end_t: Millis,
    pub peak_pos: f64,
    pub peak_neg: f64,
}

impl Step {
    pub fn mid_t(&self) -> Millis {
        self.start_t + (self.end_t - self.start_t) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsmParams {
    /// Walking threshold, m/s².
    pub t_walk: f64,
    /// Peak threshold, m/s².
    pub t_peak: f64,
    pub min_step_ms: Millis,
    pub max_step_ms: Millis,
    /// How long the signal must stay within `±t_walk` to end a step.
    pub quiet_ms: Millis,
    /// Consecutive violating samples tolerated by `W2`/`P2`. The default of
    /// 3 matches the three raw samples inside the default 60 ms smoothing
    /// window at 50 Hz: one raw outlier spreads over that many smoothed
    /// samples.
    pub outlier_budget: u32,
}

impl Default for FsmParams {
    fn default() -> Self {
        FsmParams {
            t_walk: 0.6,
            t_peak: 1.5,
            min_step_ms: 300,
            max_step_ms: 2000,
            quiet_ms: 150,
            outlier_budget: 3,
        }
    }
}

impl FsmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t_walk && self.t_walk < self.t_peak) {
            return Err(Error::InvalidParams("need 0 < t_walk < t_peak".into()));
        }
        if self.min_step_ms >= self.max_step_ms {
            return Err(Error::InvalidParams("need min_step_ms < max_step_ms".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub window_ms: Millis,
    /// (m/s²)²
    pub var_threshold: f64,
}

impl Default for VarianceParams {
    fn default() -> Self {
        VarianceParams { window_ms: 200, var_threshold: 0.5 }
    }
}

impl VarianceParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_ms == 0 || !(self.var_threshold > 0.0) {
            return Err(Error::InvalidParams("variance window and threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmState {
    Stationary,
    Walking,
    W2,
    PeekPos,
    PeekNeg,
    P2,
}

/// Incremental form of the step machine; feed it smoothed samples in time
/// order.
#[derive(Debug, Clone)]
pub struct StepFsm {
    params: FsmParams,
    state: FsmState,
    /// state that `W2`/`P2` will return to
    guarded: FsmState,
    outliers: u32,
    start_t: Millis,
    peak_pos: f64,
    peak_neg: f64,
    /// PeekPos: the lobe has fallen back below `t_walk`
    descending: bool,
    quiet_since: Option<Millis>,
}

impl StepFsm {
    pub fn new(params: FsmParams) -> Self {
        StepFsm {
            params,
            state: FsmState::Stationary,
            guarded: FsmState::Stationary,
            outliers: 0,
            start_t: 0,
            peak_pos: 0.0,
            peak_neg: 0.0,
            descending: false,
            quiet_since: None,
        }
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    fn reset(&mut self) {
        self.state = FsmState::Stationary;
        self.guarded = FsmState::Stationary;
        self.outliers = 0;
        self.descending = false;
        self.quiet_since = None;
    }

    /// Enters the tolerance state guarding `from`, or resets when the budget
    /// is already spent. Returns true if the machine was reset.
    fn violation(&mut self, from: FsmState) -> bool {
        let tolerance = match from {
            FsmState::Walking => FsmState::W2,
            _ => FsmState::P2,
        };
        self.outliers += 1;
        if self.outliers > self.params.outlier_budget {
            self.reset();
            true
        } else {
            self.guarded = from;
            self.state = tolerance;
            false
        }
    }

    pub fn feed(&mut self, t: Millis, s: f64) -> Option<Step> {
        let p = self.params;
        if self.state != FsmState::Stationary && t - self.start_t > p.max_step_ms {
            self.reset();
        }
        loop {
            // the active state's logic; W2/P2 evaluate their guarded state's
            // condition and fall back to it on a conforming sample
            let active = match self.state {
                FsmState::W2 | FsmState::P2 => self.guarded,
                other => other,
            };
            match active {
                FsmState::Stationary => {
                    if s > p.t_walk {
                        self.state = FsmState::Walking;
                        self.start_t = t;
                        self.peak_pos = s;
                        self.peak_neg = 0.0;
                        self.outliers = 0;
                        continue;
                    }
                    return None;
                }
                FsmState::Walking => {
                    if s > p.t_walk {
                        self.outliers = 0;
                        self.peak_pos = self.peak_pos.max(s);
                        if s > p.t_peak {
                            self.state = FsmState::PeekPos;
                            self.descending = false;
                        } else {
                            self.state = FsmState::Walking;
                        }
                        return None;
                    }
                    if self.violation(FsmState::Walking) {
                        continue;
                    }
                    return None;
                }
                FsmState::PeekPos => {
                    self.peak_pos = self.peak_pos.max(s);
                    if s < -p.t_peak {
                        self.state = FsmState::PeekNeg;
                        self.outliers = 0;
                        self.peak_neg = s;
                        self.quiet_since = None;
                        return None;
                    }
                    if s <= p.t_walk {
                        self.descending = true;
                    }
                    if self.descending && s > p.t_walk {
                        // a second positive lobe before any negative peak
                        if self.violation(FsmState::PeekPos) {
                            continue;
                        }
                        return None;
                    }
                    self.outliers = 0;
                    self.state = FsmState::PeekPos;
                    return None;
                }
                FsmState::PeekNeg => {
                    self.peak_neg = self.peak_neg.min(s);
                    let quiet = s.abs() < p.t_walk;
                    match self.quiet_since {
                        None if s <= -p.t_walk => {
                            self.state = FsmState::PeekNeg;
                            self.outliers = 0;
                            return None;
                        }
                        None if quiet => {
                            self.quiet_since = Some(t);
                            self.state = FsmState::PeekNeg;
                            self.outliers = 0;
                        }
                        _ if quiet => {
                            self.state = FsmState::PeekNeg;
                            self.outliers = 0;
                        }
                        _ => {
                            // absorbed outliers do not restart the quiet timer
                            if self.violation(FsmState::PeekNeg) {
                                continue;
                            }
                            return None;
                        }
                    }
                    let since = self.quiet_since.expect("quiet timer running");
                    if t - since >= p.quiet_ms {
                        let step = Step {
                            start_t: self.start_t,
                            end_t: t,
                            peak_pos: self.peak_pos,
                            peak_neg: self.peak_neg,
                        };
                        let duration = t - self.start_t;
                        self.reset();
                        if duration >= p.min_step_ms && duration <= p.max_step_ms {
                            return Some(step);
                        }
                    }
                    return None;
                }
                FsmState::W2 | FsmState::P2 => unreachable!("tolerance states never guard each other"),
            }
        }
    }
}

/// Runs the step machine over the smoothed `|a| - g` signal of a trace.
pub fn detect_steps_fsm(trace: &Trace, fsm: &FsmParams, tp: &TraceParams) -> Result<Vec<Step>> {
    fsm.validate()?;
    tp.validate()?;
    let signal = trace.linear_signal(tp);
    if signal.is_empty() {
        return Err(Error::NoAccelData);
    }
    Ok(detect_steps_in_signal(&signal, fsm))
}

/// Runs the step machine over an already-smoothed signal.
pub fn detect_steps_in_signal(signal: &[(Millis, f64)], fsm: &FsmParams) -> Vec<Step> {
    let mut machine = StepFsm::new(*fsm);
    signal.iter().filter_map(|&(t, s)| machine.feed(t, s)).collect()
}

/// Local-variance baseline: each maximal run of samples whose windowed
/// variance exceeds the threshold counts as one step.
pub fn detect_steps_variance(trace: &Trace, vp: &VarianceParams, tp: &TraceParams) -> Result<Vec<Step>> {
    vp.validate()?;
    tp.validate()?;
    let signal = trace.linear_signal(tp);
    if signal.is_empty() {
        return Err(Error::NoAccelData);
    }
    let var = windowed_variance(&signal, vp.window_ms);
    let mut steps = Vec::new();
    let mut i = 0;
    while i < signal.len() {
        if var[i] <= vp.var_threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < signal.len() && var[i] > vp.var_threshold {
            i += 1;
        }
        let run = &signal[start..i];
        let end_t = signal.get(i).map_or(run[run.len() - 1].0 + 1, |s| s.0);
        steps.push(Step {
            start_t: run[0].0,
            end_t,
            peak_pos: run.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max),
            peak_neg: run.iter().map(|s| s.1).fold(f64::INFINITY, f64::min),
        });
    }
    Ok(steps)
}

/// Population variance over samples within `±window_ms / 2` of each sample.
fn windowed_variance(signal: &[(Millis, f64)], window_ms: Millis) -> Vec<f64> {
    let n = signal.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &(_, v)) in signal.iter().enumerate() {
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    signal
        .iter()
        .map(|&(t, _)| {
            let t2 = 2 * t;
            while 2 * signal[lo].0 + window_ms < t2 {
                lo += 1;
            }
            while hi < n && 2 * signal[hi].0 <= t2 + window_ms {
                hi += 1;
            }
            let m = (hi - lo) as f64;
            let mean = (s1[hi] - s1[lo]) / m;
            ((s2[hi] - s2[lo]) / m - mean * mean).max(0.0)
        })
        .collect()
}

/// Percentage error `100 * |detected - actual| / actual`.
pub fn step_count_error(detected: usize, actual: usize) -> Result<f64> {
    if actual == 0 {
        return Err(Error::ZeroActual);
    }
    Ok(100.0 * (detected as f64 - actual as f64).abs() / actual as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Payload, SensorSample};

    /// Positive then negative half-sine lobe pair of `stride_ms`, followed by
    /// `quiet_ms` of zero, sampled every 20 ms.
    fn stride(stride_ms: u64, peak: f64, quiet_ms: u64) -> Vec<f64> {
        let n = stride_ms / 20;
        let mut v: Vec<f64> = (0..n)
            .map(|i| peak * (2.0 * std::f64::consts::PI * (i * 20) as f64 / stride_ms as f64).sin())
            .collect();
        v.extend(std::iter::repeat(0.0).take((quiet_ms / 20) as usize));
        v
    }

    fn as_signal(v: &[f64]) -> Vec<(Millis, f64)> {
        v.iter().enumerate().map(|(i, &s)| (i as u64 * 20, s)).collect()
    }

    fn accel_trace(signal: &[f64]) -> Trace {
        let samples = signal
            .iter()
            .enumerate()
            .map(|(i, &s)| SensorSample::new(i as u64 * 20, Payload::Accel { ax: 0.0, ay: 0.0, az: 9.81 + s }))
            .collect();
        Trace::new("t", "u", "d", samples).unwrap()
    }

    #[test]
    fn flat_signal_has_no_steps() {
        let trace = accel_trace(&vec![0.0; 200]);
        let p = FsmParams::default();
        let tp = TraceParams::default();
        assert!(detect_steps_fsm(&trace, &p, &tp).unwrap().is_empty());
        assert!(detect_steps_variance(&trace, &VarianceParams::default(), &tp).unwrap().is_empty());
    }

    #[test]
    fn one_clean_stride() {
        // a 600 ms step: two 150 ms lobes, then quiet
        let mut sig = vec![0.0; 10];
        sig.extend(stride(300, 2.5, 300));
        let trace = accel_trace(&sig);
        let tp = TraceParams::default();
        let steps = detect_steps_fsm(&trace, &FsmParams::default(), &tp).unwrap();
        assert_eq!(steps.len(), 1);
        let s = steps[0];
        assert!(s.start_t < s.end_t && s.peak_pos > 0.0 && s.peak_neg < 0.0);
        assert_eq!(detect_steps_variance(&trace, &VarianceParams::default(), &tp).unwrap().len(), 1);
    }

    #[test]
    fn no_accel_is_an_error() {
        let trace = Trace::new("t", "u", "d", vec![SensorSample::new(0, Payload::Mag { heading: 0.0 })]).unwrap();
        assert!(matches!(
            detect_steps_fsm(&trace, &FsmParams::default(), &TraceParams::default()),
            Err(Error::NoAccelData)
        ));
        assert!(matches!(
            detect_steps_variance(&trace, &VarianceParams::default(), &TraceParams::default()),
            Err(Error::NoAccelData)
        ));
    }

    #[test]
    fn single_outlier_in_quiet_is_absorbed() {
        let mut sig = stride(600, 2.5, 400);
        // one spike shortly after the negative lobe
        sig[32] = 1.0;
        let steps = detect_steps_in_signal(&as_signal(&sig), &FsmParams::default());
        assert_eq!(steps.len(), 1);
        let strict = FsmParams { outlier_budget: 0, ..FsmParams::default() };
        assert!(detect_steps_in_signal(&as_signal(&sig), &strict).is_empty());
    }

    #[test]
    fn sub_peak_bump_is_not_a_step() {
        let v: Vec<f64> = stride(600, 1.2, 400);
        assert!(detect_steps_in_signal(&as_signal(&v), &FsmParams::default()).is_empty());
    }

    #[test]
    fn double_positive_lobe_resets() {
        let mut v: Vec<f64> = stride(600, 2.5, 0)[..15].to_vec();
        v.extend(vec![0.0; 3]);
        v.extend(stride(600, 2.5, 400));
        // first positive lobe never sees a negative peak; only the second
        // complete stride counts
        assert_eq!(detect_steps_in_signal(&as_signal(&v), &FsmParams::default()).len(), 1);
    }

    #[test]
    fn too_long_step_is_dropped() {
        // 4 s stride exceeds max_step_ms
        let v = stride(4000, 2.5, 400);
        assert!(detect_steps_in_signal(&as_signal(&v), &FsmParams::default()).is_empty());
    }

    #[test]
    fn error_examples() {
        assert_eq!(step_count_error(297, 300).unwrap(), 1.0);
        assert_eq!(step_count_error(45, 300).unwrap(), 85.0);
        assert!((step_count_error(10, 11).unwrap() - 9.090909090909092).abs() < 1e-12);
        assert!(matches!(step_count_error(3, 0), Err(Error::ZeroActual)));
    }

    #[test]
    fn concatenated_strides() {
        for k in 1..=50 {
            let mut v = Vec::new();
            for _ in 0..k {
                v.extend(stride(600, 2.5, 200));
            }
            v.extend(vec![0.0; 10]);
            let steps = detect_steps_in_signal(&as_signal(&v), &FsmParams::default());
            assert_eq!(steps.len(), k);
            assert!(steps.windows(2).all(|w| w[0].end_t <= w[1].start_t));
        }
    }

    #[test]
    fn time_scaling_keeps_count() {
        let build = |stride_ms: u64| {
            let mut v = Vec::new();
            for _ in 0..8 {
                v.extend(stride(stride_ms, 2.5, 300));
            }
            v
        };
        let p = FsmParams::default();
        let base = detect_steps_in_signal(&as_signal(&build(400)), &p).len();
        let scaled = detect_steps_in_signal(&as_signal(&build(600)), &p).len();
        assert_eq!(base, 8);
        assert_eq!(scaled, base);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = FsmParams { t_walk: 2.0, ..FsmParams::default() };
        assert!(p.validate().is_err());
        let p = FsmParams { min_step_ms: 5000, ..FsmParams::default() };
        assert!(p.validate().is_err());
    }
}
