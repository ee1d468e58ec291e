//! Step-and-heading dead reckoning.
//!
//! Each detected step advances the pose by a fixed stride along the current
//! heading:
//!
//! ```text
//! x_k = x_{k-1} + S cos(theta_k)
//! y_k = y_{k-1} + S sin(theta_k)
//! ```
//!
//! Heading changes between steps are snapped to multiples of
//! [`DrParams::quant_deg`] (45 degrees by default). Displacement is per
//! step, so velocity is implicitly zero at every step boundary and position
//! error grows with the number of steps rather than with time cubed, as it
//! does for [`double_integrate`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angle_diff_deg, circular_mean_deg, normalize_deg};
use crate::steps::Step;
use crate::trace::{linear_accel_magnitude, Millis, Payload, Trace, TraceParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: Millis,
    /// Time the displacement leading to this point began; the position is
    /// held at the previous point until then. Equals `t` for the initial pose.
    pub start_t: Millis,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub floor: i32,
    #[serde(rename = "heading")]
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub trace_id: String,
    pub points: Vec<TrackPoint>,
}

impl Track {
    /// Position at time `t`: held at the previous point until the next
    /// point's `start_t`, then linear in time up to that point. Clamped to
    /// the end points outside the track's span.
    pub fn position_at(&self, t: Millis) -> (f64, f64) {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.t < t);
        if i == 0 {
            return (pts[0].x, pts[0].y);
        }
        if i == pts.len() {
            let p = pts[pts.len() - 1];
            return (p.x, p.y);
        }
        let (a, b) = (pts[i - 1], pts[i]);
        let begin = b.start_t.max(a.t);
        if t <= begin || b.t == begin {
            return if t < b.t { (a.x, a.y) } else { (b.x, b.y) };
        }
        let f = (t - begin) as f64 / (b.t - begin) as f64;
        (a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
    }

    pub fn end(&self) -> (f64, f64) {
        let p = self.points[self.points.len() - 1];
        (p.x, p.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum AnchorSource {
    GpsLastFix,
    ApMaxRssi { bssid: String },
    Elevator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub t: Millis,
    /// `None` until the caller resolves it (AP anchors only know when).
    pub position: Option<(f64, f64)>,
    pub source: AnchorSource,
}

/// How a step's raw heading is read from the compass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingSource {
    /// Nearest compass sample to the step's mid-time.
    MidSample,
    /// Circular mean of the compass samples inside the step, falling back
    /// to the mid-time sample when the step contains none.
    StepMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrParams {
    /// Stride length S, meters.
    pub step_length: f64,
    /// Heading-change lattice in degrees; `None` disables quantization.
    pub quant_deg: Option<f64>,
    /// `(x, y, heading_deg)`
    pub initial_pose: (f64, f64, f64),
    pub heading_source: HeadingSource,
}

impl Default for DrParams {
    fn default() -> Self {
        DrParams {
            step_length: 0.7,
            quant_deg: Some(45.0),
            initial_pose: (0.0, 0.0, 0.0),
            heading_source: HeadingSource::StepMean,
        }
    }
}

impl DrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_length > 0.0) {
            return Err(Error::InvalidParams("step_length must be positive".into()));
        }
        if let Some(q) = self.quant_deg {
            let ratio = 360.0 / q;
            if !(q > 0.0) || (ratio - ratio.round()).abs() > 1e-9 {
                return Err(Error::InvalidParams(format!("quant_deg {q} does not divide 360")));
            }
        }
        Ok(())
    }
}

fn mag_samples(trace: &Trace) -> Vec<(Millis, f64)> {
    trace.headings().collect()
}

fn nearest_heading(mags: &[(Millis, f64)], t: Millis) -> Option<f64> {
    if mags.is_empty() {
        return None;
    }
    let i = mags.partition_point(|m| m.0 < t);
    let best = match (i.checked_sub(1).map(|j| mags[j]), mags.get(i).copied()) {
        (Some(before), Some(after)) => {
            if t - before.0 <= after.0 - t {
                before
            } else {
                after
            }
        }
        (Some(only), None) | (None, Some(only)) => only,
        (None, None) => unreachable!(),
    };
    Some(best.1)
}

/// Compass heading of the sample nearest in time to `t`; ties go to the
/// earlier sample.
pub fn heading_at(trace: &Trace, t: Millis) -> Result<f64> {
    nearest_heading(&mag_samples(trace), t).ok_or(Error::NoMagData)
}

/// Snaps the heading change `raw - prev` to the nearest multiple of
/// `quant_deg` (halves round away from zero) and applies it to `prev`.
pub fn quantize_heading(prev_heading: f64, raw_heading: f64, quant_deg: f64) -> f64 {
    let delta = angle_diff_deg(raw_heading, prev_heading);
    let k = (delta / quant_deg).round();
    normalize_deg(prev_heading + quant_deg * k)
}

fn step_raw_heading(mags: &[(Millis, f64)], step: &Step, source: HeadingSource) -> Option<f64> {
    if source == HeadingSource::StepMean {
        let lo = mags.partition_point(|m| m.0 < step.start_t);
        let hi = mags.partition_point(|m| m.0 <= step.end_t);
        if let Some(h) = circular_mean_deg(mags[lo..hi].iter().map(|m| m.1)) {
            return Some(h);
        }
    }
    nearest_heading(mags, step.mid_t())
}

/// Dead-reckons a track from detected steps. The track starts with the
/// initial pose at the trace's first timestamp and gains one point at the
/// end of every step.
pub fn build_track(steps: &[Step], trace: &Trace, p: &DrParams) -> Result<Track> {
    p.validate()?;
    let mags = mag_samples(trace);
    if mags.is_empty() && !steps.is_empty() {
        return Err(Error::NoMagData);
    }
    let (x0, y0, h0) = p.initial_pose;
    let t0 = trace
        .start_t()
        .unwrap_or(0)
        .min(steps.first().map_or(Millis::MAX, |s| s.start_t));
    let mut points = Vec::with_capacity(steps.len() + 1);
    points.push(TrackPoint { t: t0, start_t: t0, x: x0, y: y0, floor: 0, heading_deg: normalize_deg(h0) });
    let (mut x, mut y, mut heading) = (x0, y0, normalize_deg(h0));
    for step in steps {
        let raw = step_raw_heading(&mags, step, p.heading_source).ok_or(Error::NoMagData)?;
        heading = match p.quant_deg {
            Some(q) => quantize_heading(heading, raw, q),
            None => raw,
        };
        let r = heading.to_radians();
        x += p.step_length * r.cos();
        y += p.step_length * r.sin();
        points.push(TrackPoint { t: step.end_t, start_t: step.start_t, x, y, floor: 0, heading_deg: heading });
    }
    Ok(Track { trace_id: trace.trace_id.clone(), points })
}

/// Naive double integration: linear acceleration magnitude applied along the
/// current compass heading, integrated twice with the trapezoid rule and no
/// zero-velocity resets. Starts at the origin.
pub fn double_integrate(trace: &Trace, tp: &TraceParams) -> Result<Track> {
    tp.validate()?;
    let accel: Vec<_> = trace.accel().collect();
    if accel.len() < 2 {
        return Err(Error::NoAccelData);
    }
    let mags = mag_samples(trace);
    let world = |t: Millis, a: [f64; 3]| {
        let s = linear_accel_magnitude(a, tp);
        let h = nearest_heading(&mags, t).unwrap_or(0.0);
        let r = h.to_radians();
        ([s * r.cos(), s * r.sin()], h)
    };
    let (mut a_prev, h) = world(accel[0].0, accel[0].1);
    let (mut v, mut pos) = ([0.0f64; 2], [0.0f64; 2]);
    let mut points = vec![TrackPoint { t: accel[0].0, start_t: accel[0].0, x: 0.0, y: 0.0, floor: 0, heading_deg: h }];
    for w in accel.windows(2) {
        let dt = (w[1].0 - w[0].0) as f64 / 1000.0;
        let (a, h) = world(w[1].0, w[1].1);
        for k in 0..2 {
            let v_next = v[k] + 0.5 * (a_prev[k] + a[k]) * dt;
            pos[k] += 0.5 * (v[k] + v_next) * dt;
            v[k] = v_next;
        }
        a_prev = a;
        points.push(TrackPoint { t: w[1].0, start_t: w[0].0, x: pos[0], y: pos[1], floor: 0, heading_deg: h });
    }
    Ok(Track { trace_id: trace.trace_id.clone(), points })
}

/// Minimum scans of an AP before its strongest reading becomes an anchor.
pub const AP_ANCHOR_MIN_OBS: usize = 5;

/// Global reference points: the last GPS fix (the user entered the building
/// when the fixes stopped) and, per AP heard at least `min_obs` times, the
/// moment of its strongest reading. AP anchors carry no position; callers
/// resolve them from the AP's estimated location.
pub fn extract_anchors(trace: &Trace) -> Vec<Anchor> {
    extract_anchors_with(trace, AP_ANCHOR_MIN_OBS)
}

pub fn extract_anchors_with(trace: &Trace, min_obs: usize) -> Vec<Anchor> {
    let mut anchors = Vec::new();
    let last_fix = trace.samples.iter().rev().find_map(|s| match s.payload {
        Payload::Gps { x, y, .. } => Some((s.t, x, y)),
        _ => None,
    });
    if let Some((t, x, y)) = last_fix {
        anchors.push(Anchor { t, position: Some((x, y)), source: AnchorSource::GpsLastFix });
    }
    // bssid -> (observations, best rssi, time of first best)
    let mut per_ap: BTreeMap<&str, (usize, i32, Millis)> = BTreeMap::new();
    for s in &trace.samples {
        if let Payload::Wifi { aps } = &s.payload {
            for ap in aps {
                let e = per_ap.entry(ap.bssid.as_str()).or_insert((0, i32::MIN, 0));
                e.0 += 1;
                if ap.rssi > e.1 {
                    e.1 = ap.rssi;
                    e.2 = s.t;
                }
            }
        }
    }
    anchors.extend(per_ap.into_iter().filter(|(_, e)| e.0 >= min_obs).map(|(bssid, e)| Anchor {
        t: e.2,
        position: None,
        source: AnchorSource::ApMaxRssi { bssid: bssid.to_string() },
    }));
    anchors.sort_by_key(|a| a.t);
    anchors
}

fn nearest_point(track: &Track, t: Millis) -> usize {
    let pts = &track.points;
    let i = pts.partition_point(|p| p.t < t);
    match i {
        0 => 0,
        i if i == pts.len() => i - 1,
        i if t - pts[i - 1].t <= pts[i].t - t => i - 1,
        i => i,
    }
}

/// Piecewise-linear drift correction. Each anchor fixes the residual
/// `anchor - track` at the track point nearest to it in time; in between the
/// residual is interpolated in time, and before the first / after the last
/// anchor it is held constant.
pub fn apply_anchors(track: &Track, anchors: &[Anchor]) -> Result<Track> {
    if anchors.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::UnsortedAnchors);
    }
    // each anchor pins the track point nearest to it in time, so a second
    // application sees zero residuals
    let residuals = anchors
        .iter()
        .map(|a| {
            let (ax, ay) = a.position.ok_or(Error::UnresolvedAnchor(a.t))?;
            let p = track.points[nearest_point(track, a.t)];
            Ok((p.t, ax - p.x, ay - p.y))
        })
        .collect::<Result<Vec<_>>>()?;
    if residuals.is_empty() {
        return Ok(track.clone());
    }
    let residual_at = |t: Millis| -> (f64, f64) {
        let i = residuals.partition_point(|r| r.0 <= t);
        if i == 0 {
            let r = residuals[0];
            return (r.1, r.2);
        }
        if i == residuals.len() {
            let r = residuals[i - 1];
            return (r.1, r.2);
        }
        let (a, b) = (residuals[i - 1], residuals[i]);
        let f = (t - a.0) as f64 / (b.0 - a.0) as f64;
        (a.1 + f * (b.1 - a.1), a.2 + f * (b.2 - a.2))
    };
    let points = track
        .points
        .iter()
        .map(|p| {
            let (dx, dy) = residual_at(p.t);
            TrackPoint { x: p.x + dx, y: p.y + dy, ..*p }
        })
        .collect();
    Ok(Track { trace_id: track.trace_id.clone(), points })
}
