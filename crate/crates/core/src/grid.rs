//! Block grid, per-block sufficient statistics and classification features.
//!
//! Every block keeps a [`BlockAccumulator`] made only of integers: counts,
//! milliseconds, dBm sums, and accelerometer sums in fixed point (2⁻³² m/s²
//! per unit, squares and cross products at 2⁻⁶⁴). Merging two accumulators is
//! plain integer addition, so grids built from any partition of a corpus and
//! merged in any order are bit-identical. Rasterizing traces in parallel and
//! reducing with [`GridMap::merge`] needs no coordination beyond that.
//!
//! Features are ratios of these sums, so replicating the data of every trace
//! leaves them unchanged: they do not depend on how many traces crossed the
//! block.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::classify::AreaClass;
use crate::error::{Error, Result};
use crate::geom::angle_diff_deg;
use crate::reckoning::Track;
use crate::trace::{Millis, Payload, Trace};

/// Fixed-point scale for accelerometer sums.
const FIXED_SCALE: f64 = 4_294_967_296.0; // 2^32
const FIXED_SCALE_SQ: f64 = FIXED_SCALE * FIXED_SCALE;
/// Heading change counted as a turn, degrees.
pub const TURN_THRESHOLD_DEG: f64 = 45.0;
/// Feature value used when a block heard no WiFi or GSM scan.
pub const MISSING_RSSI_DBM: f64 = -100.0;
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub block_size: f64,
    pub width: u32,
    pub height: u32,
}

/// Row-major block key: ordering is by row, then column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub row: u32,
    pub col: u32,
}

impl BlockId {
    pub fn new(col: u32, row: u32) -> Self {
        BlockId { row, col }
    }
}

impl GridSpec {
    pub fn new(origin: (f64, f64), block_size: f64, width: u32, height: u32) -> Result<Self> {
        let spec = GridSpec { origin, block_size, width, height };
        spec.validate()?;
        Ok(spec)
    }

    /// Smallest grid of `block_size` blocks whose origin is a multiple of
    /// `align` and which covers `[min, max]` grown by `margin` on every side.
    pub fn covering(min: (f64, f64), max: (f64, f64), block_size: f64, margin: f64, align: f64) -> Result<Self> {
        let ox = ((min.0 - margin) / align).floor() * align;
        let oy = ((min.1 - margin) / align).floor() * align;
        let w = ((max.0 + margin - ox) / block_size).ceil().max(1.0) as u32;
        let h = ((max.1 + margin - oy) / block_size).ceil().max(1.0) as u32;
        GridSpec::new((ox, oy), block_size, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.block_size > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParams("grid needs a positive block size and extent".into()));
        }
        if !(self.origin.0.is_finite() && self.origin.1.is_finite()) {
            return Err(Error::InvalidParams("grid origin must be finite".into()));
        }
        Ok(())
    }

    fn axis_index(&self, v: f64, origin: f64, n: u32) -> Option<u32> {
        let u = (v - origin) / self.block_size;
        let r = u.round();
        // boundaries belong to the higher block, snapping float noise
        let idx = if (u - r).abs() < BOUNDARY_EPS { r } else { u.floor() };
        if idx < 0.0 || !idx.is_finite() {
            return None;
        }
        let idx = idx as u64;
        if idx < n as u64 {
            Some(idx as u32)
        } else if idx == n as u64 && (u - r).abs() < BOUNDARY_EPS {
            // the outermost edge belongs to the last block
            Some(n - 1)
        } else {
            None
        }
    }

    pub fn block_of(&self, x: f64, y: f64) -> Result<BlockId> {
        match (
            self.axis_index(x, self.origin.0, self.width),
            self.axis_index(y, self.origin.1, self.height),
        ) {
            (Some(col), Some(row)) => Ok(BlockId { row, col }),
            _ => Err(Error::OutOfGrid { x, y }),
        }
    }

    pub fn centroid(&self, id: BlockId) -> (f64, f64) {
        (
            self.origin.0 + (id.col as f64 + 0.5) * self.block_size,
            self.origin.1 + (id.row as f64 + 0.5) * self.block_size,
        )
    }

    pub fn contains(&self, id: BlockId) -> bool {
        id.col < self.width && id.row < self.height
    }
}

/// Convenience wrapper over [`GridSpec::block_of`].
pub fn block_of(spec: &GridSpec, x: f64, y: f64) -> Result<BlockId> {
    spec.block_of(x, y)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockAccumulator {
    pub trace_count: u64,
    pub dwell_ms_sum: u64,
    pub n_accel: u64,
    /// Σa per axis, fixed point 2⁻³².
    pub sum_a: [i128; 3],
    /// Σa² per axis, fixed point 2⁻⁶⁴.
    pub sumsq_a: [i128; 3],
    /// Σaₓa_y, Σaₓa_z, Σa_ya_z, fixed point 2⁻⁶⁴.
    pub sum_cross: [i128; 3],
    pub turn_sum: u64,
    pub n_wifi: u64,
    pub sum_wifi_rssi: i64,
    pub n_gsm: u64,
    pub sum_gsm_rssi: i64,
}

impl AddAssign<&BlockAccumulator> for BlockAccumulator {
    fn add_assign(&mut self, o: &BlockAccumulator) {
        self.trace_count += o.trace_count;
        self.dwell_ms_sum += o.dwell_ms_sum;
        self.n_accel += o.n_accel;
        for k in 0..3 {
            self.sum_a[k] += o.sum_a[k];
            self.sumsq_a[k] += o.sumsq_a[k];
            self.sum_cross[k] += o.sum_cross[k];
        }
        self.turn_sum += o.turn_sum;
        self.n_wifi += o.n_wifi;
        self.sum_wifi_rssi += o.sum_wifi_rssi;
        self.n_gsm += o.n_gsm;
        self.sum_gsm_rssi += o.sum_gsm_rssi;
    }
}

impl BlockAccumulator {
    pub fn add_accel(&mut self, a: [f64; 3]) {
        let q = a.map(|v| (v * FIXED_SCALE).round() as i128);
        self.n_accel += 1;
        for k in 0..3 {
            self.sum_a[k] += q[k];
            self.sumsq_a[k] += q[k] * q[k];
        }
        self.sum_cross[0] += q[0] * q[1];
        self.sum_cross[1] += q[0] * q[2];
        self.sum_cross[2] += q[1] * q[2];
    }

    /// `n·Σab − Σa·Σb`, exact when it fits in i128.
    fn centered(&self, sum_ab: i128, sa: i128, sb: i128) -> f64 {
        let n = self.n_accel as i128;
        match n.checked_mul(sum_ab).zip(sa.checked_mul(sb)) {
            Some((p, q)) => (p - q) as f64,
            None => self.n_accel as f64 * sum_ab as f64 - sa as f64 * sb as f64,
        }
    }
}

/// Elementwise sum; the accumulators form a commutative monoid with
/// `BlockAccumulator::default()` as identity.
pub fn merge(a: &BlockAccumulator, b: &BlockAccumulator) -> BlockAccumulator {
    let mut out = *a;
    out += b;
    out
}

pub const FEATURE_COUNT: usize = 13;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "dwell_avg_s",
    "mean_ax",
    "mean_ay",
    "mean_az",
    "var_ax",
    "var_ay",
    "var_az",
    "corr_xy",
    "corr_xz",
    "corr_yz",
    "turns_per_trace",
    "wifi_rssi_avg",
    "gsm_rssi_avg",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dwell_avg_s: f64,
    pub mean_ax: f64,
    pub mean_ay: f64,
    pub mean_az: f64,
    pub var_ax: f64,
    pub var_ay: f64,
    pub var_az: f64,
    pub corr_xy: f64,
    pub corr_xz: f64,
    pub corr_yz: f64,
    pub turns_per_trace: f64,
    pub wifi_rssi_avg: f64,
    pub gsm_rssi_avg: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.dwell_avg_s,
            self.mean_ax,
            self.mean_ay,
            self.mean_az,
            self.var_ax,
            self.var_ay,
            self.var_az,
            self.corr_xy,
            self.corr_xz,
            self.corr_yz,
            self.turns_per_trace,
            self.wifi_rssi_avg,
            self.gsm_rssi_avg,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            dwell_avg_s: a[0],
            mean_ax: a[1],
            mean_ay: a[2],
            mean_az: a[3],
            var_ax: a[4],
            var_ay: a[5],
            var_az: a[6],
            corr_xy: a[7],
            corr_xz: a[8],
            corr_yz: a[9],
            turns_per_trace: a[10],
            wifi_rssi_avg: a[11],
            gsm_rssi_avg: a[12],
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.to_array()[index]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Derives the 13 classification features of a block.
pub fn features(acc: &BlockAccumulator) -> Result<FeatureVector> {
    if acc.trace_count == 0 || acc.n_accel < 2 {
        return Err(Error::EmptyBlock);
    }
    let n = acc.n_accel as f64;
    let traces = acc.trace_count as f64;
    let mean = |k: usize| acc.sum_a[k] as f64 / (n * FIXED_SCALE);
    let cov_scale = n * n * FIXED_SCALE_SQ;
    let c = |sum_ab: i128, i: usize, j: usize| acc.centered(sum_ab, acc.sum_a[i], acc.sum_a[j]);
    let cxx = c(acc.sumsq_a[0], 0, 0).max(0.0);
    let cyy = c(acc.sumsq_a[1], 1, 1).max(0.0);
    let czz = c(acc.sumsq_a[2], 2, 2).max(0.0);
    let var = [cxx / cov_scale, cyy / cov_scale, czz / cov_scale];
    let corr = |cab: f64, i: usize, j: usize| {
        if var[i] < 1e-12 || var[j] < 1e-12 {
            0.0
        } else {
            let caa = [cxx, cyy, czz];
            (cab / (caa[i].sqrt() * caa[j].sqrt())).clamp(-1.0, 1.0)
        }
    };
    let avg_rssi = |sum: i64, count: u64| {
        if count == 0 {
            MISSING_RSSI_DBM
        } else {
            sum as f64 / count as f64
        }
    };
    Ok(FeatureVector {
        dwell_avg_s: acc.dwell_ms_sum as f64 / (1000.0 * traces),
        mean_ax: mean(0),
        mean_ay: mean(1),
        mean_az: mean(2),
        var_ax: var[0],
        var_ay: var[1],
        var_az: var[2],
        corr_xy: corr(c(acc.sum_cross[0], 0, 1), 0, 1),
        corr_xz: corr(c(acc.sum_cross[1], 0, 2), 0, 2),
        corr_yz: corr(c(acc.sum_cross[2], 1, 2), 1, 2),
        turns_per_trace: acc.turn_sum as f64 / traces,
        wifi_rssi_avg: avg_rssi(acc.sum_wifi_rssi, acc.n_wifi),
        gsm_rssi_avg: avg_rssi(acc.sum_gsm_rssi, acc.n_gsm),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub spec: GridSpec,
    pub blocks: BTreeMap<BlockId, BlockAccumulator>,
    pub labels: Option<BTreeMap<BlockId, AreaClass>>,
}

impl GridMap {
    pub fn new(spec: GridSpec) -> Self {
        GridMap { spec, blocks: BTreeMap::new(), labels: None }
    }

    /// Adds another grid's statistics to this one. Labels are kept from
    /// `self`.
    pub fn merge(&mut self, other: &GridMap) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch);
        }
        for (id, acc) in &other.blocks {
            *self.blocks.entry(*id).or_default() += acc;
        }
        Ok(())
    }

    /// Blocks that at least one trace went through.
    pub fn outline(&self) -> BTreeSet<BlockId> {
        self.blocks.iter().filter(|(_, a)| a.trace_count >= 1).map(|(id, _)| *id).collect()
    }

    pub fn label(&self, id: BlockId) -> Option<AreaClass> {
        self.labels.as_ref().and_then(|l| l.get(&id).copied())
    }

    /// Features of every block with enough data to classify, row-major.
    pub fn block_features(&self) -> Vec<(BlockId, FeatureVector)> {
        self.blocks.iter().filter_map(|(id, acc)| features(acc).ok().map(|f| (*id, f))).collect()
    }

    /// Rasterizes one trace into this grid, using `track` for positions.
    /// On error the grid is left untouched.
    pub fn rasterize(&mut self, track: &Track, trace: &Trace) -> Result<()> {
        let local = rasterize_one(&self.spec, track, trace)?;
        for (id, acc) in &local {
            *self.blocks.entry(*id).or_default() += acc;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GridFile::from(self)).expect("grid serializes")
    }

    pub fn from_json(text: &str) -> Result<GridMap> {
        let file: GridFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// Functional form: rasterize into a copy of `grid`.
pub fn rasterize(track: &Track, trace: &Trace, grid: &GridMap) -> Result<GridMap> {
    let mut out = grid.clone();
    out.rasterize(track, trace)?;
    Ok(out)
}

/// Boundary-crossing parameters in `(0, 1)` of the segment `a -> b` against
/// the grid lines of one axis.
fn crossings(a: f64, b: f64, origin: f64, size: f64, out: &mut Vec<f64>) {
    if a == b {
        return;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let first = ((lo - origin) / size).floor() as i64 + 1;
    let last = ((hi - origin) / size).ceil() as i64 - 1;
    for k in first..=last {
        let line = origin + k as f64 * size;
        let s = (line - a) / (b - a);
        if s > 0.0 && s < 1.0 {
            out.push(s);
        }
    }
}

fn rasterize_one(spec: &GridSpec, track: &Track, trace: &Trace) -> Result<BTreeMap<BlockId, BlockAccumulator>> {
    if track.trace_id != trace.trace_id {
        return Err(Error::TraceIdMismatch { track: track.trace_id.clone(), trace: trace.trace_id.clone() });
    }
    let pts = &track.points;
    if pts.is_empty() {
        return Ok(BTreeMap::new());
    }
    let point_blocks = pts.iter().map(|p| spec.block_of(p.x, p.y)).collect::<Result<Vec<_>>>()?;
    let mut local: BTreeMap<BlockId, BlockAccumulator> = BTreeMap::new();

    // dwell: hold at each point until the next displacement starts, then move
    let t_begin = pts[0].t.min(trace.start_t().unwrap_or(pts[0].t));
    let t_end = pts[pts.len() - 1].t.max(trace.end_t().unwrap_or(0));
    let mut add_dwell = |id: BlockId, ms: Millis| {
        if ms > 0 {
            local.entry(id).or_default().dwell_ms_sum += ms;
        }
    };
    let mut cursor = t_begin;
    let mut cuts = Vec::new();
    for (i, w) in pts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let begin = b.start_t.clamp(a.t, b.t).max(cursor);
        add_dwell(point_blocks[i], begin.saturating_sub(cursor));
        cuts.clear();
        cuts.push(0.0);
        crossings(a.x, b.x, spec.origin.0, spec.block_size, &mut cuts);
        crossings(a.y, b.y, spec.origin.1, spec.block_size, &mut cuts);
        cuts.push(1.0);
        cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let span = b.t.saturating_sub(begin) as f64;
        let mut prev_ms = begin;
        for c in cuts.windows(2) {
            let next_ms = if c[1] >= 1.0 { b.t.max(begin) } else { begin + (c[1] * span).round() as Millis };
            if next_ms > prev_ms {
                let mid = 0.5 * (c[0] + c[1]);
                let id = spec.block_of(a.x + mid * (b.x - a.x), a.y + mid * (b.y - a.y))?;
                add_dwell(id, next_ms - prev_ms);
                prev_ms = next_ms;
            }
        }
        cursor = b.t.max(begin);
    }
    add_dwell(point_blocks[pts.len() - 1], t_end.saturating_sub(cursor));

    for s in &trace.samples {
        let (x, y) = track.position_at(s.t);
        let id = spec.block_of(x, y)?;
        match &s.payload {
            Payload::Accel { ax, ay, az } => local.entry(id).or_default().add_accel([*ax, *ay, *az]),
            Payload::Wifi { aps } => {
                if let Some(best) = aps.iter().map(|a| a.rssi).max() {
                    let acc = local.entry(id).or_default();
                    acc.n_wifi += 1;
                    acc.sum_wifi_rssi += best as i64;
                }
            }
            Payload::Gsm { rssi, .. } => {
                let acc = local.entry(id).or_default();
                acc.n_gsm += 1;
                acc.sum_gsm_rssi += *rssi as i64;
            }
            Payload::Mag { .. } | Payload::Gps { .. } => {}
        }
    }

    for (i, w) in pts.windows(2).enumerate() {
        if angle_diff_deg(w[1].heading_deg, w[0].heading_deg).abs() >= TURN_THRESHOLD_DEG - 1e-9 {
            local.entry(point_blocks[i + 1]).or_default().turn_sum += 1;
        }
    }

    for acc in local.values_mut() {
        acc.trace_count = 1;
    }
    Ok(local)
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    col: u32,
    row: u32,
    acc: BlockAccumulator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<AreaClass>,
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    spec: GridSpec,
    blocks: Vec<BlockEntry>,
}

impl From<&GridMap> for GridFile {
    fn from(g: &GridMap) -> Self {
        GridFile {
            spec: g.spec,
            blocks: g
                .blocks
                .iter()
                .map(|(id, acc)| BlockEntry { col: id.col, row: id.row, acc: *acc, label: g.label(*id) })
                .collect(),
        }
    }
}

impl TryFrom<GridFile> for GridMap {
    type Error = Error;

    fn try_from(f: GridFile) -> Result<GridMap> {
        f.spec.validate()?;
        let mut g = GridMap::new(f.spec);
        let mut labels = BTreeMap::new();
        for e in f.blocks {
            let id = BlockId::new(e.col, e.row);
            if !g.spec.contains(id) {
                return Err(Error::InvalidParams(format!("block ({}, {}) outside grid", e.col, e.row)));
            }
            g.blocks.insert(id, e.acc);
            if let Some(l) = e.label {
                labels.insert(id, l);
            }
        }
        if !labels.is_empty() {
            g.labels = Some(labels);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reckoning::TrackPoint;
    use crate::trace::{ApReading, SensorSample};
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec::new((0.0, 0.0), 0.7, 10, 10).unwrap()
    }

    fn pt(t: Millis, start_t: Millis, x: f64, y: f64, heading: f64) -> TrackPoint {
        TrackPoint { t, start_t, x, y, floor: 0, heading_deg: heading }
    }

    fn accel(t: Millis, a: [f64; 3]) -> SensorSample {
        SensorSample::new(t, Payload::Accel { ax: a[0], ay: a[1], az: a[2] })
    }

    #[test]
    fn block_of_examples() {
        let s = spec();
        assert_eq!(s.block_of(0.0, 0.0).unwrap(), BlockId::new(0, 0));
        assert_eq!(s.block_of(0.7, 0.7).unwrap(), BlockId::new(1, 1));
        assert_eq!(s.block_of(1.39, 0.01).unwrap(), BlockId::new(1, 0));
        assert_eq!(s.block_of(7.0, 7.0).unwrap(), BlockId::new(9, 9));
        assert_eq!(s.block_of(0.7 * 3.0, 0.0).unwrap(), BlockId::new(3, 0));
        assert!(matches!(s.block_of(-0.01, 0.0), Err(Error::OutOfGrid { .. })));
        assert!(matches!(s.block_of(7.01, 0.0), Err(Error::OutOfGrid { .. })));
    }

    #[test]
    fn stationary_trace_in_one_block() {
        let samples: Vec<_> = (0..=500).map(|i| accel(i * 20, [0.0, 0.0, 9.81])).collect();
        let trace = Trace::new("a", "u", "d", samples).unwrap();
        let track = Track { trace_id: "a".into(), points: vec![pt(0, 0, 1.0, 1.0, 0.0)] };
        let g = rasterize(&track, &trace, &GridMap::new(spec())).unwrap();
        assert_eq!(g.blocks.len(), 1);
        let acc = g.blocks[&BlockId::new(1, 1)];
        assert_eq!(acc.trace_count, 1);
        let f = features(&acc).unwrap();
        assert!((f.dwell_avg_s - 10.0).abs() < 1e-12);
        assert!((f.mean_az - 9.81).abs() < 1e-9);
        assert_eq!([f.var_ax, f.var_ay, f.var_az], [0.0; 3]);
        assert_eq!([f.corr_xy, f.corr_xz, f.corr_yz], [0.0; 3]);
        assert_eq!(f.wifi_rssi_avg, MISSING_RSSI_DBM);
    }

    #[test]
    fn straight_corridor_has_no_turns() {
        let points: Vec<_> = (0..=10u64)
            .map(|k| pt(k * 500, if k == 0 { 0 } else { k * 500 - 450 }, 0.35 + 0.7 * k as f64, 0.35, 0.0))
            .collect();
        let samples: Vec<_> = (0..=250).map(|i| accel(i * 20, [0.1, 0.0, 9.81])).collect();
        let trace = Trace::new("a", "u", "d", samples).unwrap();
        let track = Track { trace_id: "a".into(), points };
        let wide = GridSpec::new((0.0, 0.0), 0.7, 12, 2).unwrap();
        let g = rasterize(&track, &trace, &GridMap::new(wide)).unwrap();
        assert_eq!(g.blocks.len(), 11);
        assert!(g.blocks.values().all(|a| a.turn_sum == 0 && a.trace_count == 1));
        let dwell: u64 = g.blocks.values().map(|a| a.dwell_ms_sum).sum();
        assert_eq!(dwell, 5000);
    }

    #[test]
    fn turns_land_at_step_end() {
        let track = Track {
            trace_id: "a".into(),
            points: vec![
                pt(0, 0, 0.35, 0.35, 0.0),
                pt(500, 50, 1.05, 0.35, 0.0),
                pt(1000, 550, 1.05, 1.05, 90.0),
            ],
        };
        let trace = Trace::new("a", "u", "d", vec![accel(0, [0.0, 0.0, 9.8])]).unwrap();
        let g = rasterize(&track, &trace, &GridMap::new(spec())).unwrap();
        assert_eq!(g.blocks[&BlockId::new(1, 1)].turn_sum, 1);
        assert_eq!(g.blocks.values().map(|a| a.turn_sum).sum::<u64>(), 1);
    }

    #[test]
    fn strongest_ap_and_gsm() {
        let samples = vec![
            accel(0, [0.0, 0.0, 9.8]),
            SensorSample::new(
                0,
                Payload::Wifi {
                    aps: vec![ApReading { bssid: "a".into(), rssi: -70 }, ApReading { bssid: "b".into(), rssi: -50 }],
                },
            ),
            SensorSample::new(10, Payload::Gsm { cell: "c".into(), rssi: -80 }),
            accel(20, [0.0, 0.0, 9.8]),
        ];
        let trace = Trace::new("a", "u", "d", samples).unwrap();
        let track = Track { trace_id: "a".into(), points: vec![pt(0, 0, 0.1, 0.1, 0.0)] };
        let g = rasterize(&track, &trace, &GridMap::new(spec())).unwrap();
        let f = features(&g.blocks[&BlockId::new(0, 0)]).unwrap();
        assert_eq!(f.wifi_rssi_avg, -50.0);
        assert_eq!(f.gsm_rssi_avg, -80.0);
    }

    #[test]
    fn mismatch_and_out_of_grid() {
        let trace = Trace::new("a", "u", "d", vec![accel(0, [0.0, 0.0, 9.8])]).unwrap();
        let other = Track { trace_id: "b".into(), points: vec![pt(0, 0, 0.1, 0.1, 0.0)] };
        let mut g = GridMap::new(spec());
        assert!(matches!(g.rasterize(&other, &trace), Err(Error::TraceIdMismatch { .. })));
        let outside = Track { trace_id: "a".into(), points: vec![pt(0, 0, 0.1, 0.1, 0.0), pt(500, 0, 9.0, 0.1, 0.0)] };
        assert!(matches!(g.rasterize(&outside, &trace), Err(Error::OutOfGrid { .. })));
        assert!(g.blocks.is_empty());
    }

    #[test]
    fn perfect_correlation() {
        let mut acc = BlockAccumulator { trace_count: 1, ..Default::default() };
        for ax in [1.0, 2.0, 3.0] {
            acc.add_accel([ax, 0.0, 2.0 * ax]);
        }
        let f = features(&acc).unwrap();
        assert!((f.corr_xz - 1.0).abs() < 1e-12);
        assert_eq!(f.corr_xy, 0.0);
        assert!((f.var_ax - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(features(&BlockAccumulator::default()), Err(Error::EmptyBlock)));
    }

    #[test]
    fn outline_and_json() {
        assert!(GridMap::new(spec()).outline().is_empty());
        let trace = Trace::new("a", "u", "d", vec![accel(0, [0.0, 0.0, 9.8]), accel(20, [0.2, 0.0, 9.8])]).unwrap();
        let track = Track { trace_id: "a".into(), points: vec![pt(0, 0, 2.0, 3.0, 0.0)] };
        let mut g = rasterize(&track, &trace, &GridMap::new(spec())).unwrap();
        assert_eq!(g.outline().into_iter().collect::<Vec<_>>(), vec![BlockId::new(2, 4)]);
        g.labels = Some([(BlockId::new(2, 4), AreaClass::Stairs)].into_iter().collect());
        let back = GridMap::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }

    fn arb_acc() -> impl Strategy<Value = BlockAccumulator> {
        (
            0u64..50,
            0u64..100_000,
            prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 0..20),
            0u64..5,
            (0u64..20, -2000i64..0),
        )
            .prop_map(|(tc, dwell, accel, turns, (nw, sw))| {
                let mut a = BlockAccumulator { trace_count: tc, dwell_ms_sum: dwell, turn_sum: turns, ..Default::default() };
                for v in accel {
                    a.add_accel(v);
                }
                a.n_wifi = nw;
                a.sum_wifi_rssi = sw;
                a.n_gsm = nw / 2;
                a.sum_gsm_rssi = sw / 3;
                a
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn merge_is_a_commutative_monoid(a in arb_acc(), b in arb_acc(), c in arb_acc()) {
            prop_assert_eq!(merge(&a, &BlockAccumulator::default()), a);
            prop_assert_eq!(merge(&a, &b), merge(&b, &a));
            prop_assert_eq!(merge(&merge(&a, &b), &c), merge(&a, &merge(&b, &c)));
        }
    }

    proptest! {
        #[test]
        fn features_ignore_replication(a in arb_acc(), k in prop::sample::select(vec![2u64, 3, 5])) {
            prop_assume!(a.trace_count >= 1 && a.n_accel >= 2);
            let mut rep = BlockAccumulator::default();
            for _ in 0..k {
                rep += &a;
            }
            let (f, g) = (features(&a).unwrap().to_array(), features(&rep).unwrap().to_array());
            for (x, y) in f.iter().zip(g) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{} vs {}", x, y);
            }
            for v in &f[4..7] {
                prop_assert!(*v >= 0.0);
            }
            for v in &f[7..10] {
                prop_assert!((-1.0..=1.0).contains(v));
            }
        }
    }
}
