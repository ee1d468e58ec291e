//! Per-block RSSI fingerprints and nearest-neighbour localization.
//!
//! The database keeps integer `(sum, count)` pairs per block and transmitter,
//! so building it is order independent and two databases merge by addition.
//! A query is matched against the per-block mean RSSI vectors in signal
//! space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BlockId, GridSpec};
use crate::reckoning::Track;
use crate::trace::{ApReading, Payload, Trace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RssiSum {
    pub sum: i64,
    pub count: u64,
}

impl RssiSum {
    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }

    fn add(&mut self, rssi: i64, count: u64) {
        self.sum += rssi;
        self.count += count;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockPrint {
    pub wifi: BTreeMap<String, RssiSum>,
    pub gsm: BTreeMap<String, RssiSum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDB {
    pub spec: GridSpec,
    pub blocks: BTreeMap<BlockId, BlockPrint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocateParams {
    pub k: usize,
    pub missing_rssi: f64,
}

impl Default for LocateParams {
    fn default() -> Self {
        LocateParams { k: 3, missing_rssi: -100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub block: BlockId,
    pub position: (f64, f64),
}

impl FingerprintDB {
    pub fn new(spec: GridSpec) -> Self {
        FingerprintDB { spec, blocks: BTreeMap::new() }
    }

    /// Attributes every WiFi and GSM scan of `trace` to the block of the
    /// track position at the scan time. On error nothing is added.
    pub fn add(&mut self, track: &Track, trace: &Trace) -> Result<()> {
        if track.trace_id != trace.trace_id {
            return Err(Error::TraceIdMismatch { track: track.trace_id.clone(), trace: trace.trace_id.clone() });
        }
        let mut staged = Vec::new();
        for s in &trace.samples {
            if matches!(s.payload, Payload::Wifi { .. } | Payload::Gsm { .. }) {
                let (x, y) = track.position_at(s.t);
                staged.push((self.spec.block_of(x, y)?, &s.payload));
            }
        }
        for (id, payload) in staged {
            let entry = self.blocks.entry(id).or_default();
            match payload {
                Payload::Wifi { aps } => {
                    for ap in aps {
                        entry.wifi.entry(ap.bssid.clone()).or_default().add(ap.rssi as i64, 1);
                    }
                }
                Payload::Gsm { cell, rssi } => entry.gsm.entry(cell.clone()).or_default().add(*rssi as i64, 1),
                _ => unreachable!(),
            }
        }
        self.blocks.retain(|_, b| !b.wifi.is_empty() || !b.gsm.is_empty());
        Ok(())
    }

    pub fn merge(&mut self, other: &FingerprintDB) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch);
        }
        for (id, b) in &other.blocks {
            let entry = self.blocks.entry(*id).or_default();
            for (k, v) in &b.wifi {
                entry.wifi.entry(k.clone()).or_default().add(v.sum, v.count);
            }
            for (k, v) in &b.gsm {
                entry.gsm.entry(k.clone()).or_default().add(v.sum, v.count);
            }
        }
        Ok(())
    }

    /// Mean WiFi RSSI per transmitter for one block.
    pub fn means(&self, id: BlockId) -> Option<BTreeMap<&str, f64>> {
        self.blocks.get(&id).map(|b| b.wifi.iter().map(|(k, v)| (k.as_str(), v.mean())).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.values().all(|b| b.wifi.is_empty())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&DbFile::from(self)).expect("fingerprint db serializes")
    }

    pub fn from_json(text: &str) -> Result<FingerprintDB> {
        let f: DbFile = serde_json::from_str(text)?;
        f.try_into()
    }
}

pub fn build_fingerprint<'a>(
    pairs: impl IntoIterator<Item = (&'a Track, &'a Trace)>,
    spec: &GridSpec,
) -> Result<FingerprintDB> {
    let mut db = FingerprintDB::new(*spec);
    for (track, trace) in pairs {
        db.add(track, trace)?;
    }
    Ok(db)
}

/// Euclidean distance over the union of keys of `a` and `b`, reading absent
/// keys as `missing`.
pub fn signal_distance<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>, missing: f64) -> f64 {
    let mut sq = 0.0;
    for (k, va) in a {
        let d = va - b.get(k).copied().unwrap_or(missing);
        sq += d * d;
    }
    for (k, vb) in b {
        if !a.contains_key(k) {
            let d = vb - missing;
            sq += d * d;
        }
    }
    sq.sqrt()
}

pub fn locate(db: &FingerprintDB, scan: &[ApReading], p: &LocateParams) -> Result<Location> {
    if p.k == 0 {
        return Err(Error::InvalidParams("k must be >= 1".into()));
    }
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let mut query: BTreeMap<&str, f64> = BTreeMap::new();
    for ap in scan {
        let v = query.entry(ap.bssid.as_str()).or_insert(f64::NEG_INFINITY);
        *v = v.max(ap.rssi as f64);
    }
    let mut ranked: Vec<(f64, BlockId)> = db
        .blocks
        .keys()
        .filter_map(|id| db.means(*id).filter(|m| !m.is_empty()).map(|m| (signal_distance(&query, &m, p.missing_rssi), *id)))
        .collect();
    if ranked.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = p.k.min(ranked.len());
    let (sx, sy) = ranked[..k].iter().fold((0.0, 0.0), |(sx, sy), (_, id)| {
        let c = db.spec.centroid(*id);
        (sx + c.0, sy + c.1)
    });
    Ok(Location { block: ranked[0].1, position: (sx / k as f64, sy / k as f64) })
}

#[derive(Serialize, Deserialize)]
struct MeanCount {
    mean: f64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct DbBlock {
    col: u32,
    row: u32,
    wifi: BTreeMap<String, MeanCount>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    gsm: BTreeMap<String, MeanCount>,
}

#[derive(Serialize, Deserialize)]
struct DbFile {
    spec: GridSpec,
    blocks: Vec<DbBlock>,
}

fn to_mc(m: &BTreeMap<String, RssiSum>) -> BTreeMap<String, MeanCount> {
    m.iter().map(|(k, v)| (k.clone(), MeanCount { mean: v.mean(), count: v.count })).collect()
}

fn from_mc(m: BTreeMap<String, MeanCount>) -> Result<BTreeMap<String, RssiSum>> {
    m.into_iter()
        .map(|(k, v)| {
            if v.count == 0 || !v.mean.is_finite() {
                return Err(Error::InvalidParams(format!("bad fingerprint entry for {k}")));
            }
            Ok((k, RssiSum { sum: (v.mean * v.count as f64).round() as i64, count: v.count }))
        })
        .collect()
}

impl From<&FingerprintDB> for DbFile {
    fn from(db: &FingerprintDB) -> Self {
        DbFile {
            spec: db.spec,
            blocks: db
                .blocks
                .iter()
                .map(|(id, b)| DbBlock { col: id.col, row: id.row, wifi: to_mc(&b.wifi), gsm: to_mc(&b.gsm) })
                .collect(),
        }
    }
}

impl TryFrom<DbFile> for FingerprintDB {
    type Error = Error;

    fn try_from(f: DbFile) -> Result<FingerprintDB> {
        f.spec.validate()?;
        let mut db = FingerprintDB::new(f.spec);
        for b in f.blocks {
            let id = BlockId::new(b.col, b.row);
            if !db.spec.contains(id) {
                return Err(Error::InvalidParams(format!("block ({}, {}) outside grid", b.col, b.row)));
            }
            db.blocks.insert(id, BlockPrint { wifi: from_mc(b.wifi)?, gsm: from_mc(b.gsm)? });
        }
        Ok(db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reckoning::TrackPoint;
    use crate::trace::SensorSample;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec::new((0.0, 0.0), 0.7, 8, 8).unwrap()
    }

    fn ap(b: &str, rssi: i32) -> ApReading {
        ApReading { bssid: b.into(), rssi }
    }

    fn still(id: &str, x: f64, y: f64, scans: Vec<Vec<ApReading>>) -> (Track, Trace) {
        let samples = scans
            .into_iter()
            .enumerate()
            .map(|(i, aps)| SensorSample::new(i as u64 * 1000, Payload::Wifi { aps }))
            .collect();
        let trace = Trace::new(id, "u", "d", samples).unwrap();
        let track = Track {
            trace_id: id.into(),
            points: vec![TrackPoint { t: 0, start_t: 0, x, y, floor: 0, heading_deg: 0.0 }],
        };
        (track, trace)
    }

    #[test]
    fn empty_and_single_entry() {
        let (tr, tc) = still("a", 1.0, 1.0, vec![]);
        let db = build_fingerprint([(&tr, &tc)], &spec()).unwrap();
        assert!(db.blocks.is_empty());
        let (tr, tc) = still("a", 1.5, 2.2, vec![vec![ap("ap1", -50)]]);
        let db = build_fingerprint([(&tr, &tc)], &spec()).unwrap();
        let m = db.means(BlockId::new(2, 3)).unwrap();
        assert_eq!(m["ap1"], -50.0);
        assert_eq!(db.blocks[&BlockId::new(2, 3)].wifi["ap1"].count, 1);
    }

    #[test]
    fn exact_match_and_single_block() {
        let (t1, c1) = still("a", 0.3, 0.3, vec![vec![ap("x", -40), ap("y", -80)]]);
        let (t2, c2) = still("b", 3.0, 3.0, vec![vec![ap("x", -80), ap("y", -40)]]);
        let db = build_fingerprint([(&t1, &c1), (&t2, &c2)], &spec()).unwrap();
        let p = LocateParams { k: 1, ..Default::default() };
        let loc = locate(&db, &[ap("y", -40), ap("x", -80)], &p).unwrap();
        assert_eq!(loc.block, BlockId::new(4, 4));
        assert_eq!(loc.position, spec().centroid(BlockId::new(4, 4)));
        let single = build_fingerprint([(&t1, &c1)], &spec()).unwrap();
        assert_eq!(locate(&single, &[ap("zzz", -90)], &LocateParams::default()).unwrap().block, BlockId::new(0, 0));
        assert!(matches!(locate(&single, &[], &p), Err(Error::EmptyScan)));
        let empty = FingerprintDB::new(spec());
        assert!(matches!(locate(&empty, &[ap("x", -1)], &p), Err(Error::EmptyDatabase)));
    }

    #[test]
    fn ties_go_to_row_major_first() {
        let (t1, c1) = still("a", 3.0, 0.3, vec![vec![ap("x", -60)]]);
        let (t2, c2) = still("b", 0.3, 3.0, vec![vec![ap("x", -60)]]);
        let db = build_fingerprint([(&t2, &c2), (&t1, &c1)], &spec()).unwrap();
        let loc = locate(&db, &[ap("x", -60)], &LocateParams { k: 1, ..Default::default() }).unwrap();
        assert_eq!(loc.block, BlockId::new(4, 0));
    }

    #[test]
    fn incremental_equals_batch_and_json_round_trips() {
        let pairs: Vec<_> = (0..6)
            .map(|i| still(&format!("t{i}"), 0.2 + i as f64 * 0.9, 1.0, vec![vec![ap("a", -40 - i), ap("b", -70)]]))
            .collect();
        let batch = build_fingerprint(pairs.iter().map(|(a, b)| (a, b)), &spec()).unwrap();
        let mut inc = build_fingerprint(pairs[3..].iter().rev().map(|(a, b)| (a, b)), &spec()).unwrap();
        inc.merge(&build_fingerprint(pairs[..3].iter().map(|(a, b)| (a, b)), &spec()).unwrap()).unwrap();
        assert_eq!(batch, inc);
        assert_eq!(FingerprintDB::from_json(&batch.to_json()).unwrap(), batch);
        let (tr, _) = &pairs[0];
        let (_, other) = &pairs[1];
        assert!(matches!(inc.add(tr, other), Err(Error::TraceIdMismatch { .. })));
    }

    fn arb_vec() -> impl Strategy<Value = BTreeMap<u8, f64>> {
        prop::collection::btree_map(0u8..8, -100.0f64..-20.0, 0..6)
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in arb_vec(), b in arb_vec(), c in arb_vec()) {
            let d = |x: &BTreeMap<u8, f64>, y: &BTreeMap<u8, f64>| signal_distance(x, y, -100.0);
            prop_assert!(d(&a, &a).abs() < 1e-12);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }
    }
}
