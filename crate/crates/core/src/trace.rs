//! Sensor-trace data model and its JSONL wire format.
//!
//! A trace file starts with a header line
//! `{"trace_id":..,"user_id":..,"device_id":..}` followed by one sample per
//! line, each tagged with `"kind"`:
//!
//! ```text
//! {"t":0,"kind":"accel","ax":0.1,"ay":0.0,"az":9.8}
//! {"t":0,"kind":"mag","heading":91.5}
//! {"t":1000,"kind":"wifi","aps":[{"bssid":"ap-0","rssi":-52}]}
//! {"t":1000,"kind":"gsm","cell":"gsm-0","rssi":-71}
//! {"t":0,"kind":"gps","x":0.35,"y":7.35,"acc":0.3}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Milliseconds since trace start.
pub type Millis = u64;

pub const RSSI_MIN_DBM: i32 = -120;
pub const RSSI_MAX_DBM: i32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReading {
    pub bssid: String,
    pub rssi: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    /// Device-frame acceleration including gravity, m/s².
    Accel { ax: f64, ay: f64, az: f64 },
    /// Compass heading in degrees, `[0, 360)`, 0 along +x.
    Mag { heading: f64 },
    Wifi { aps: Vec<ApReading> },
    Gsm { cell: String, rssi: i32 },
    /// Fix in the building-local planar frame, meters.
    Gps { x: f64, y: f64, acc: f64 },
}

impl Payload {
    pub fn kind(&self) -> SampleKind {
        match self {
            Payload::Accel { .. } => SampleKind::Accel,
            Payload::Mag { .. } => SampleKind::Mag,
            Payload::Wifi { .. } => SampleKind::Wifi,
            Payload::Gsm { .. } => SampleKind::Gsm,
            Payload::Gps { .. } => SampleKind::Gps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleKind {
    Accel,
    Mag,
    Wifi,
    Gsm,
    Gps,
}

impl SampleKind {
    pub const ALL: [SampleKind; 5] = [
        SampleKind::Accel,
        SampleKind::Mag,
        SampleKind::Wifi,
        SampleKind::Gsm,
        SampleKind::Gps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SampleKind::Accel => "accel",
            SampleKind::Mag => "mag",
            SampleKind::Wifi => "wifi",
            SampleKind::Gsm => "gsm",
            SampleKind::Gps => "gps",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t: Millis,
    #[serde(flatten)]
    pub payload: Payload,
}

impl SensorSample {
    pub fn new(t: Millis, payload: Payload) -> Self {
        SensorSample { t, payload }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        fn finite(name: &str, v: f64) -> std::result::Result<(), String> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} is not finite"))
            }
        }
        fn rssi(v: i32) -> std::result::Result<(), String> {
            if (RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&v) {
                Ok(())
            } else {
                Err(format!("rssi {v} outside [{RSSI_MIN_DBM}, {RSSI_MAX_DBM}] dBm"))
            }
        }
        match &self.payload {
            Payload::Accel { ax, ay, az } => {
                finite("ax", *ax)?;
                finite("ay", *ay)?;
                finite("az", *az)
            }
            Payload::Mag { heading } => {
                finite("heading", *heading)?;
                if (0.0..360.0).contains(heading) {
                    Ok(())
                } else {
                    Err(format!("heading {heading} outside [0, 360)"))
                }
            }
            Payload::Wifi { aps } => aps.iter().try_for_each(|ap| rssi(ap.rssi)),
            Payload::Gsm { rssi: r, .. } => rssi(*r),
            Payload::Gps { x, y, acc } => {
                finite("x", *x)?;
                finite("y", *y)?;
                finite("acc", *acc)?;
                if *acc > 0.0 {
                    Ok(())
                } else {
                    Err("gps accuracy must be positive".into())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    trace_id: String,
    user_id: String,
    device_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trace_id: String,
    pub user_id: String,
    pub device_id: String,
    pub samples: Vec<SensorSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    pub gravity_g: f64,
    pub smooth_window_ms: Millis,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams { gravity_g: 9.81, smooth_window_ms: 60 }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gravity_g > 0.0) {
            return Err(Error::InvalidParams("gravity_g must be positive".into()));
        }
        Ok(())
    }
}

impl Trace {
    /// Builds a trace, sorting samples by time and checking every invariant.
    pub fn new(
        trace_id: impl Into<String>,
        user_id: impl Into<String>,
        device_id: impl Into<String>,
        mut samples: Vec<SensorSample>,
    ) -> Result<Trace> {
        for (i, s) in samples.iter().enumerate() {
            s.validate()
                .map_err(|reason| Error::MalformedRecord { line: i + 2, reason })?;
        }
        samples.sort_by_key(|s| s.t);
        check_monotonic(&samples, |i| i + 2)?;
        Ok(Trace {
            trace_id: trace_id.into(),
            user_id: user_id.into(),
            device_id: device_id.into(),
            samples,
        })
    }

    pub fn start_t(&self) -> Option<Millis> {
        self.samples.first().map(|s| s.t)
    }

    pub fn end_t(&self) -> Option<Millis> {
        self.samples.last().map(|s| s.t)
    }

    pub fn accel(&self) -> impl Iterator<Item = (Millis, [f64; 3])> + '_ {
        self.samples.iter().filter_map(|s| match s.payload {
            Payload::Accel { ax, ay, az } => Some((s.t, [ax, ay, az])),
            _ => None,
        })
    }

    pub fn headings(&self) -> impl Iterator<Item = (Millis, f64)> + '_ {
        self.samples.iter().filter_map(|s| match s.payload {
            Payload::Mag { heading } => Some((s.t, heading)),
            _ => None,
        })
    }

    /// Smoothed orientation-independent acceleration signal `|a| - g`.
    pub fn linear_signal(&self, tp: &TraceParams) -> Vec<(Millis, f64)> {
        let raw: Vec<_> = self
            .accel()
            .map(|(t, a)| (t, linear_accel_magnitude(a, tp)))
            .collect();
        smooth(&raw, tp.smooth_window_ms)
    }

    /// Serializes to the JSONL wire format, one record per line.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            trace_id: self.trace_id.clone(),
            user_id: self.user_id.clone(),
            device_id: self.device_id.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }
}

fn check_monotonic(samples: &[SensorSample], line_of: impl Fn(usize) -> usize) -> Result<()> {
    let mut last: [Option<Millis>; 5] = [None; 5];
    for (i, s) in samples.iter().enumerate() {
        let k = s.payload.kind();
        if last[k.index()] == Some(s.t) {
            return Err(Error::NonMonotonicTime { line: line_of(i), t: s.t, kind: k.name() });
        }
        last[k.index()] = Some(s.t);
    }
    Ok(())
}

/// Parses a JSONL trace file. Samples are re-sorted by time (stable, so
/// same-time samples of different kinds keep file order).
pub fn parse_trace(bytes: &[u8]) -> Result<Trace> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::MalformedRecord { line: 0, reason: format!("not UTF-8: {e}") })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines.next().ok_or(Error::EmptyTrace)?;
    let header: Header = serde_json::from_str(htext).map_err(|e| Error::MalformedRecord {
        line: hline,
        reason: format!("bad header: {e}"),
    })?;

    let mut samples = Vec::new();
    let mut line_nos = Vec::new();
    for (no, l) in lines {
        let s: SensorSample = serde_json::from_str(l)
            .map_err(|e| Error::MalformedRecord { line: no, reason: e.to_string() })?;
        s.validate().map_err(|reason| Error::MalformedRecord { line: no, reason })?;
        samples.push(s);
        line_nos.push(no);
    }
    if samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| samples[i].t);
    let sorted_lines: Vec<usize> = order.iter().map(|&i| line_nos[i]).collect();
    let mut slots: Vec<Option<SensorSample>> = samples.into_iter().map(Some).collect();
    let samples: Vec<SensorSample> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
    check_monotonic(&samples, |i| sorted_lines[i])?;
    Ok(Trace {
        trace_id: header.trace_id,
        user_id: header.user_id,
        device_id: header.device_id,
        samples,
    })
}

/// Orientation-independent linear acceleration: `|a| - g`. Negative while
/// the device is in partial free fall.
pub fn linear_accel_magnitude(a: [f64; 3], params: &TraceParams) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt() - params.gravity_g
}

/// Centered moving average over all samples within `±window_ms / 2`
/// (inclusive). Output has the same timestamps as the input.
pub fn smooth(signal: &[(Millis, f64)], window_ms: Millis) -> Vec<(Millis, f64)> {
    if window_ms == 0 || signal.is_empty() {
        return signal.to_vec();
    }
    let mut prefix = Vec::with_capacity(signal.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &(_, v) in signal {
        acc += v;
        prefix.push(acc);
    }
    // compare doubled offsets so odd windows stay exact in integer ms
    let (mut lo, mut hi) = (0usize, 0usize);
    signal
        .iter()
        .map(|&(t, _)| {
            let t2 = 2 * t;
            while 2 * signal[lo].0 + window_ms < t2 {
                lo += 1;
            }
            while hi < signal.len() && 2 * signal[hi].0 <= t2 + window_ms {
                hi += 1;
            }
            (t, (prefix[hi] - prefix[lo]) / (hi - lo) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn accel(t: Millis, ax: f64, ay: f64, az: f64) -> SensorSample {
        SensorSample::new(t, Payload::Accel { ax, ay, az })
    }

    const HEADER: &str = r#"{"trace_id":"t1","user_id":"u1","device_id":"d1"}"#;

    #[test]
    fn parses_two_accel_lines() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"t":0,"kind":"accel","ax":0.0,"ay":0.0,"az":9.81}"#,
            r#"{"t":20,"kind":"accel","ax":0.5,"ay":0.0,"az":9.7}"#
        );
        let trace = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(trace.samples.len(), 2);
        assert_eq!(trace.trace_id, "t1");
        assert_eq!(trace.to_jsonl(), text);
    }

    #[test]
    fn rejects_positive_rssi() {
        let text = format!("{HEADER}\n{}\n", r#"{"t":0,"kind":"gsm","cell":"c","rssi":10}"#);
        match parse_trace(text.as_bytes()) {
            Err(Error::MalformedRecord { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_time_within_kind() {
        let text = format!(
            "{HEADER}\n{}\n{}\n{}\n",
            r#"{"t":0,"kind":"accel","ax":0.0,"ay":0.0,"az":9.81}"#,
            r#"{"t":0,"kind":"mag","heading":10.0}"#,
            r#"{"t":0,"kind":"accel","ax":0.0,"ay":0.0,"az":9.81}"#,
        );
        assert!(matches!(
            parse_trace(text.as_bytes()),
            Err(Error::NonMonotonicTime { line: 4, t: 0, kind: "accel" })
        ));
    }

    #[test]
    fn empty_and_headerless() {
        assert!(matches!(parse_trace(b""), Err(Error::EmptyTrace)));
        assert!(matches!(parse_trace(format!("{HEADER}\n").as_bytes()), Err(Error::EmptyTrace)));
        assert!(matches!(
            parse_trace(b"{\"t\":0,\"kind\":\"mag\",\"heading\":1.0}\n"),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn resorts_out_of_order_records() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"t":40,"kind":"mag","heading":10.0}"#,
            r#"{"t":20,"kind":"mag","heading":20.0}"#,
        );
        let trace = parse_trace(text.as_bytes()).unwrap();
        let ts: Vec<_> = trace.samples.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![20, 40]);
    }

    #[test]
    fn magnitude_examples() {
        let tp = TraceParams::default();
        assert_eq!(linear_accel_magnitude([0.0, 0.0, 9.81], &tp), 0.0);
        assert_eq!(linear_accel_magnitude([0.0, 0.0, -9.81], &tp), 0.0);
        assert!((linear_accel_magnitude([3.0, 4.0, 0.0], &tp) + 4.81).abs() < 1e-12);
    }

    #[test]
    fn smooth_examples() {
        let sig: Vec<(Millis, f64)> = vec![(0, 0.0), (20, 0.0), (40, 6.0), (60, 0.0), (80, 0.0)];
        assert_eq!(smooth(&sig, 0), sig);
        let out: Vec<f64> = smooth(&sig, 100).into_iter().map(|(_, v)| v).collect();
        // hand average: t=0 sees {0,20,40}, t=20 sees {0..60}, t=40 sees all five
        let expect = [2.0, 1.5, 1.2, 1.5, 2.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{out:?}");
        }
        let c: Vec<(Millis, f64)> = (0..10).map(|i| (i * 20, 3.25)).collect();
        assert!(smooth(&c, 150).iter().all(|&(_, v)| (v - 3.25).abs() < 1e-12));
    }

    fn rotation(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
        let (cy, sy) = (yaw.cos(), yaw.sin());
        let (cp, sp) = (pitch.cos(), pitch.sin());
        let (cr, sr) = (roll.cos(), roll.sin());
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    }

    fn arb_sample() -> impl Strategy<Value = Payload> {
        let f = -50.0f64..50.0;
        prop_oneof![
            (f.clone(), f.clone(), f.clone()).prop_map(|(ax, ay, az)| Payload::Accel { ax, ay, az }),
            (0.0f64..360.0).prop_map(|heading| Payload::Mag { heading }),
            prop::collection::vec(("[a-z0-9:]{1,8}", -120i32..=0), 0..4).prop_map(|v| {
                Payload::Wifi {
                    aps: v.into_iter().map(|(bssid, rssi)| ApReading { bssid, rssi }).collect(),
                }
            }),
            ("[a-z0-9]{1,6}", -120i32..=0).prop_map(|(cell, rssi)| Payload::Gsm { cell, rssi }),
            (f.clone(), f, 0.01f64..20.0).prop_map(|(x, y, acc)| Payload::Gps { x, y, acc }),
        ]
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(payloads in prop::collection::vec(arb_sample(), 1..40)) {
            let samples: Vec<_> = payloads
                .into_iter()
                .enumerate()
                .map(|(i, p)| SensorSample::new(i as u64 * 7, p))
                .collect();
            let trace = Trace::new("tr", "us", "dev", samples).unwrap();
            let text = trace.to_jsonl();
            let back = parse_trace(text.as_bytes()).unwrap();
            prop_assert_eq!(&back, &trace);
            prop_assert_eq!(back.to_jsonl(), text);
        }

        #[test]
        fn magnitude_rotation_invariant(
            v in prop::array::uniform3(-30.0f64..30.0),
            angles in prop::collection::vec(prop::array::uniform3(-3.2f64..3.2), 100),
        ) {
            let tp = TraceParams::default();
            let base = linear_accel_magnitude(v, &tp);
            for a in angles {
                let r = rotation(a[0], a[1], a[2]);
                let w = [
                    r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
                    r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
                    r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
                ];
                prop_assert!((linear_accel_magnitude(w, &tp) - base).abs() < 1e-9);
            }
        }

        #[test]
        fn wide_window_preserves_mean(vals in prop::collection::vec(-10.0f64..10.0, 1..60)) {
            let sig: Vec<(Millis, f64)> = vals.iter().enumerate().map(|(i, &v)| (i as u64 * 20, v)).collect();
            let span = sig.last().unwrap().0;
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let out = smooth(&sig, 2 * span + 2);
            let out_mean = out.iter().map(|p| p.1).sum::<f64>() / out.len() as f64;
            prop_assert!((out_mean - mean).abs() < 1e-9);
            prop_assert_eq!(out.len(), sig.len());
        }
    }

    #[test]
    fn new_validates() {
        assert!(Trace::new("a", "b", "c", vec![accel(0, f64::NAN, 0.0, 0.0)]).is_err());
        assert!(Trace::new("a", "b", "c", vec![accel(5, 0.0, 0.0, 9.0), accel(5, 0.0, 0.0, 9.0)]).is_err());
    }
}
