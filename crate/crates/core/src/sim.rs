//! Synthetic buildings and sensor traces with exact ground truth.
//!
//! A world is a cell grid (0.7 m cells by default) with a two-cell corridor
//! spine, bands of offices above and below it, one elevator cluster and one
//! dead-end stair well. Rooms connect to the corridor only through their
//! door cells. Access points sit on walkable cells and follow a
//! log-distance path-loss model with log-normal shadowing.
//!
//! A walker starts at the west entrance, stands still while the last GPS
//! fixes arrive, and then follows an itinerary of office, elevator, stairs
//! and corridor visits. Motion is planned first as a timeline of steps,
//! pauses, turns in place and phone handling, and the sensors are sampled
//! from that timeline. Every step moves exactly one cell, so the ground-truth
//! step count and path are known exactly.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::AreaClass;
use crate::error::{Error, Result};
use crate::geom::normalize_deg;
use crate::reckoning::{Track, TrackPoint};
use crate::trace::{ApReading, Millis, Payload, SensorSample, Trace};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    /// Floor extent in metres.
    pub extent: (f64, f64),
    pub cell_size: f64,
    pub corridor_width: u32,
    /// Office widths in cells, inclusive range.
    pub office_width: (u32, u32),
    pub elevator_size: (u32, u32),
    pub stairs_size: (u32, u32),
    pub ap_count: usize,
    pub p0_dbm: f64,
    pub path_loss_exponent: f64,
    pub shadow_sigma_db: f64,
    pub elevator_extra_loss_db: f64,
    pub ap_height_m: f64,
    pub gsm_base_dbm: f64,
    pub gsm_sigma_db: f64,
    pub office_dwell_s: (f64, f64),
    pub elevator_dwell_s: (f64, f64),
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 42,
            extent: (28.0, 16.0),
            cell_size: 0.7,
            corridor_width: 2,
            office_width: (4, 6),
            elevator_size: (2, 2),
            stairs_size: (2, 4),
            ap_count: 6,
            p0_dbm: -40.0,
            path_loss_exponent: 3.0,
            shadow_sigma_db: 4.0,
            elevator_extra_loss_db: 20.0,
            ap_height_m: 1.0,
            gsm_base_dbm: -75.0,
            gsm_sigma_db: 2.0,
            office_dwell_s: (5.0, 30.0),
            elevator_dwell_s: (20.0, 40.0),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.extent.0, self.extent.1, self.cell_size, self.path_loss_exponent];
        if positive.iter().any(|v| !(*v > 0.0)) || self.ap_count == 0 || self.shadow_sigma_db < 0.0 {
            return Err(Error::InvalidParams("world extent, cell size, exponent and ap_count must be positive".into()));
        }
        if self.office_width.0 == 0 || self.office_width.0 > self.office_width.1 {
            return Err(Error::InvalidParams("office width range is empty".into()));
        }
        if self.office_dwell_s.0 > self.office_dwell_s.1 || self.elevator_dwell_s.0 > self.elevator_dwell_s.1 {
            return Err(Error::InvalidParams("dwell ranges are empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub col: u32,
    pub row: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub class: AreaClass,
    /// Inclusive-exclusive cell rectangle `[c0, c1) x [r0, r1)`.
    pub c0: u32,
    pub c1: u32,
    pub r0: u32,
    pub r1: u32,
    /// Pairs `(inside, corridor)` of cells through which the region is
    /// entered. Empty for the corridor itself.
    pub doors: Vec<(Cell, Cell)>,
    /// The cell farthest from the doors (elevator car back wall, top of the
    /// stairs).
    pub far_end: Option<Cell>,
}

impl Region {
    pub fn contains(&self, c: Cell) -> bool {
        c.col >= self.c0 && c.col < self.c1 && c.row >= self.r0 && c.row < self.r1
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.r0..self.r1).flat_map(move |row| (self.c0..self.c1).map(move |col| Cell { col, row }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub bssid: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub cols: u32,
    pub rows: u32,
    pub cell_size: f64,
    /// Row-major region index per cell; `None` for non-walkable cells.
    pub region_of: Vec<Option<u32>>,
    pub regions: Vec<Region>,
    pub aps: Vec<AccessPoint>,
    pub entrance: Cell,
}

impl World {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<World> {
        Ok(serde_json::from_str(text)?)
    }

    fn idx(&self, c: Cell) -> usize {
        (c.row * self.cols + c.col) as usize
    }

    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && col < self.cols as i64 && row < self.rows as i64
    }

    pub fn region(&self, c: Cell) -> Option<&Region> {
        self.region_of[self.idx(c)].map(|r| &self.regions[r as usize])
    }

    pub fn label(&self, c: Cell) -> Option<AreaClass> {
        self.region(c).map(|r| r.class)
    }

    pub fn is_walkable(&self, c: Cell) -> bool {
        self.region_of[self.idx(c)].is_some()
    }

    pub fn walkable_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|row| (0..self.cols).map(move |col| Cell { col, row }))
            .filter(|c| self.is_walkable(*c))
            .collect()
    }

    pub fn center(&self, c: Cell) -> (f64, f64) {
        ((c.col as f64 + 0.5) * self.cell_size, (c.row as f64 + 0.5) * self.cell_size)
    }

    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        let (col, row) = ((x / self.cell_size).floor() as i64, (y / self.cell_size).floor() as i64);
        self.in_bounds(col, row).then(|| Cell { col: col as u32, row: row as u32 })
    }

    pub fn label_at(&self, x: f64, y: f64) -> Option<AreaClass> {
        self.cell_at(x, y).and_then(|c| self.label(c))
    }

    /// Cells reachable in one step: 4-neighbours in the same region, plus the
    /// other side of a door.
    pub fn neighbors(&self, c: Cell) -> Vec<Cell> {
        let Some(ri) = self.region_of[self.idx(c)] else { return Vec::new() };
        let mut out = Vec::with_capacity(4);
        for (dc, dr) in [(1i64, 0i64), (0, 1), (-1, 0), (0, -1)] {
            let (col, row) = (c.col as i64 + dc, c.row as i64 + dr);
            if !self.in_bounds(col, row) {
                continue;
            }
            let n = Cell { col: col as u32, row: row as u32 };
            if self.region_of[self.idx(n)] == Some(ri) {
                out.push(n);
            }
        }
        for r in &self.regions {
            for &(inside, outside) in &r.doors {
                if inside == c {
                    out.push(outside);
                } else if outside == c {
                    out.push(inside);
                }
            }
        }
        out
    }

    /// Fraction of the world's cells area, inside the axis-aligned square of
    /// side `size` at `origin`, that carries each label.
    pub fn label_area(&self, origin: (f64, f64), size: f64) -> [f64; 4] {
        let mut area = [0.0; 4];
        let cs = self.cell_size;
        let c0 = (origin.0 / cs).floor().max(0.0) as u32;
        let r0 = (origin.1 / cs).floor().max(0.0) as u32;
        let c1 = (((origin.0 + size) / cs).ceil().max(0.0) as u32).min(self.cols);
        let r1 = (((origin.1 + size) / cs).ceil().max(0.0) as u32).min(self.rows);
        for row in r0..r1 {
            for col in c0..c1 {
                let Some(l) = self.label(Cell { col, row }) else { continue };
                let ox = (origin.0 + size).min((col + 1) as f64 * cs) - origin.0.max(col as f64 * cs);
                let oy = (origin.1 + size).min((row + 1) as f64 * cs) - origin.1.max(row as f64 * cs);
                if ox > 1e-9 && oy > 1e-9 {
                    area[l.index()] += ox * oy;
                }
            }
        }
        area
    }

    /// Majority label by covered area, ties to the lower ordinal; `None`
    /// when the square covers no walkable cell.
    pub fn majority_label(&self, origin: (f64, f64), size: f64) -> Option<AreaClass> {
        let area = self.label_area(origin, size);
        let mut best = None;
        for c in AreaClass::ALL {
            let a = area[c.index()];
            if a > 0.0 && best.map_or(true, |(_, b)| a > b) {
                best = Some((c, a));
            }
        }
        best.map(|(c, _)| c)
    }

    /// Noise-free RSSI of `ap` at `(x, y)`, including the elevator loss.
    pub fn expected_rssi(&self, ap: &AccessPoint, x: f64, y: f64) -> f64 {
        let s = &self.spec;
        let d = ((ap.x - x).powi(2) + (ap.y - y).powi(2) + s.ap_height_m.powi(2)).sqrt().max(1e-3);
        let mut v = s.p0_dbm - 10.0 * s.path_loss_exponent * d.log10();
        if self.label_at(x, y) == Some(AreaClass::Elevator) {
            v -= s.elevator_extra_loss_db;
        }
        v
    }

    fn corridor(&self) -> &Region {
        self.regions.iter().find(|r| r.class == AreaClass::Corridor).expect("world has a corridor")
    }
}

fn infeasible(msg: &str) -> Error {
    Error::InfeasibleLayout(msg.to_string())
}

/// Splits `[c0, c1)` into widths drawn from `range`, merging a short tail
/// into the previous room.
fn partition(rng: &mut ChaCha8Rng, c0: u32, c1: u32, range: (u32, u32)) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    let mut c = c0;
    while c < c1 {
        let w = rng.random_range(range.0..=range.1);
        let end = (c + w).min(c1);
        if end - c < range.0 && !out.is_empty() {
            out.last_mut().unwrap().1 = end;
        } else {
            out.push((c, end));
        }
        c = end;
    }
    out
}

pub fn gen_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let cols = (spec.extent.0 / spec.cell_size + 1e-9).floor() as u32;
    let rows = (spec.extent.1 / spec.cell_size + 1e-9).floor() as u32;
    let cw = spec.corridor_width.max(1);
    if rows < cw + 2 * spec.stairs_size.1.max(spec.elevator_size.1) {
        return Err(infeasible("extent too short for offices, elevator and stairs"));
    }
    let special = spec.elevator_size.0.max(spec.stairs_size.0);
    if cols < 2 * spec.office_width.0 + special + 2 {
        return Err(infeasible("extent too narrow for offices beside the elevator and stairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cr0 = (rows - cw) / 2;
    let cr1 = cr0 + cw;
    let mut regions = vec![Region { class: AreaClass::Corridor, c0: 0, c1: cols, r0: cr0, r1: cr1, doors: vec![], far_end: None }];

    // (band rows, inside row next to the corridor, corridor row, direction)
    let lower = (0, cr0, cr0 - 1, cr0, -1i64);
    let upper = (cr1, rows, cr1, cr1 - 1, 1i64);
    for (band, class, size) in [
        (upper, AreaClass::Elevator, spec.elevator_size),
        (lower, AreaClass::Stairs, spec.stairs_size),
    ] {
        let (b0, b1, inner, outer, dir) = band;
        let margin = spec.office_width.0;
        let lo = margin;
        let hi = cols - margin - size.0;
        let c = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let (r0, r1) = if dir > 0 { (b0, b0 + size.1) } else { (b1 - size.1, b1) };
        let far_row = if dir > 0 { r1 - 1 } else { r0 };
        let doors = (c..c + size.0).map(|col| (Cell { col, row: inner }, Cell { col, row: outer })).collect();
        regions.push(Region { class, c0: c, c1: c + size.0, r0, r1, doors, far_end: Some(Cell { col: c, row: far_row }) });
        // offices fill the band left and right of the cluster; the cells
        // behind the cluster stay non-walkable
        for (s0, s1) in [(0, c), (c + size.0, cols)] {
            for (o0, o1) in partition(&mut rng, s0, s1, spec.office_width) {
                let door_col = rng.random_range(o0..o1);
                regions.push(Region {
                    class: AreaClass::Office,
                    c0: o0,
                    c1: o1,
                    r0: b0,
                    r1: b1,
                    doors: vec![(Cell { col: door_col, row: inner }, Cell { col: door_col, row: outer })],
                    far_end: None,
                });
            }
        }
    }

    let mut region_of = vec![None; (cols * rows) as usize];
    for (i, r) in regions.iter().enumerate() {
        for c in r.cells() {
            region_of[(c.row * cols + c.col) as usize] = Some(i as u32);
        }
    }
    let mut world = World {
        spec: spec.clone(),
        cols,
        rows,
        cell_size: spec.cell_size,
        region_of,
        regions,
        aps: Vec::new(),
        entrance: Cell { col: 0, row: cr0 },
    };

    // one AP per vertical slice, alternating bands, on distinct office or
    // corridor cells at least 5 cells from the elevator
    let elevator: Vec<Cell> = world.regions.iter().filter(|r| r.class == AreaClass::Elevator).flat_map(|r| r.cells()).collect();
    let near_elevator = |c: &Cell| elevator.iter().any(|e| e.col.abs_diff(c.col).max(e.row.abs_diff(c.row)) < 5);
    let walkable: Vec<Cell> = world
        .walkable_cells()
        .into_iter()
        .filter(|c| matches!(world.label(*c), Some(AreaClass::Office | AreaClass::Corridor)) && !near_elevator(c))
        .collect();
    let mut used = BTreeSet::new();
    for k in 0..spec.ap_count {
        let x0 = k as u32 * cols / spec.ap_count as u32;
        let x1 = ((k as u32 + 1) * cols / spec.ap_count as u32).max(x0 + 1);
        let upper_band = k % 2 == 0;
        let pick: Vec<Cell> = walkable
            .iter()
            .copied()
            .filter(|c| c.col >= x0 && c.col < x1 && !used.contains(c))
            .filter(|c| if upper_band { c.row >= cr1 } else { c.row < cr0 })
            .collect();
        let pool = if pick.is_empty() { walkable.iter().copied().filter(|c| !used.contains(c)).collect() } else { pick };
        let cell = *pool.choose(&mut rng).ok_or_else(|| infeasible("more access points than walkable cells"))?;
        used.insert(cell);
        let (x, y) = world.center(cell);
        world.aps.push(AccessPoint { bssid: format!("ap-{k:02}"), x, y });
    }
    Ok(world)
}

/// Flood fill from the entrance over the movement graph.
pub fn reachable(world: &World) -> BTreeSet<Cell> {
    let mut seen = BTreeSet::from([world.entrance]);
    let mut stack = vec![world.entrance];
    while let Some(c) = stack.pop() {
        for n in world.neighbors(c) {
            if seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkParams {
    pub seed: u64,
    /// Stop after exactly this many steps; otherwise walk `n_visits` visits.
    pub n_steps: Option<usize>,
    pub n_visits: usize,
    pub step_hz: f64,
    pub accel_peak: f64,
    pub accel_noise_sigma: f64,
    pub heading_noise_sigma: f64,
    pub sample_hz: f64,
    pub mag_hz: f64,
    pub scan_hz: f64,
    pub gps_sigma_m: f64,
    /// Relative jitter (one sigma) of step period and lobe amplitude.
    pub gait_jitter: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            seed: 1,
            n_steps: None,
            n_visits: 6,
            step_hz: 2.0,
            accel_peak: 2.5,
            accel_noise_sigma: 0.4,
            heading_noise_sigma: 10.0,
            sample_hz: 50.0,
            mag_hz: 10.0,
            scan_hz: 1.0,
            gps_sigma_m: 0.1,
            gait_jitter: 0.04,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step_hz, self.accel_peak, self.sample_hz, self.mag_hz, self.scan_hz];
        let non_negative = [self.accel_noise_sigma, self.heading_noise_sigma, self.gps_sigma_m, self.gait_jitter];
        if positive.iter().any(|v| !(*v > 0.0)) || non_negative.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParams("walk rates and amplitudes must be positive, noise non-negative".into()));
        }
        if self.step_hz > 4.0 {
            return Err(Error::InvalidParams("step_hz must be at most 4".into()));
        }
        Ok(())
    }

    pub fn trace_id(&self) -> String {
        format!("trace-{}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trace_id: String,
    pub step_count: usize,
    /// True path: the start pose plus one point per step.
    pub path: Track,
    /// Class of the true cell for every sample of the trace, in trace order.
    pub sample_labels: Vec<Option<AreaClass>>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ground truth serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Motion {
    Still { t0: Millis, t1: Millis },
    Fidget { t0: Millis, t1: Millis, amp: f64, hz: f64 },
    Turn { t0: Millis, t1: Millis, from: f64, to: f64 },
    Step { t0: Millis, t1: Millis, lobe: Millis, amp: f64, stairs: bool, from: (f64, f64), to: (f64, f64), heading: f64 },
}

impl Motion {
    fn span(&self) -> (Millis, Millis) {
        match *self {
            Motion::Still { t0, t1 } | Motion::Fidget { t0, t1, .. } | Motion::Turn { t0, t1, .. } | Motion::Step { t0, t1, .. } => {
                (t0, t1)
            }
        }
    }
}

/// Planned motion of one walk.
struct Timeline {
    motions: Vec<Motion>,
    start: (f64, f64),
    start_heading: f64,
    t: Millis,
    pos: (f64, f64),
    heading: f64,
    steps: usize,
    limit: Option<usize>,
}

impl Timeline {
    fn new(start: (f64, f64), heading: f64, limit: Option<usize>) -> Self {
        Timeline { motions: Vec::new(), start, start_heading: heading, t: 0, pos: start, heading, steps: 0, limit }
    }

    fn full(&self) -> bool {
        self.limit.is_some_and(|n| self.steps >= n)
    }

    fn still(&mut self, ms: Millis) {
        if ms > 0 && !self.full() {
            self.motions.push(Motion::Still { t0: self.t, t1: self.t + ms });
            self.t += ms;
        }
    }

    fn fidget(&mut self, rng: &mut ChaCha8Rng, ms: Millis) {
        if ms > 0 && !self.full() {
            let amp = rng.random_range(0.9..1.2);
            let hz = rng.random_range(2.5..3.5);
            self.motions.push(Motion::Fidget { t0: self.t, t1: self.t + ms, amp, hz });
            self.t += ms;
        }
    }

    fn turn(&mut self, to: f64, ms: Millis) {
        if !self.full() {
            self.motions.push(Motion::Turn { t0: self.t, t1: self.t + ms, from: self.heading, to });
            self.t += ms;
            self.heading = normalize_deg(to);
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, wp: &WalkParams, to: (f64, f64), stairs: bool) {
        if self.full() {
            return;
        }
        let base = 1000.0 / wp.step_hz;
        let j = wp.gait_jitter;
        let jitter = |rng: &mut ChaCha8Rng| {
            if j > 0.0 {
                Normal::new(0.0, j).unwrap().sample(rng).clamp(-2.5 * j, 2.5 * j)
            } else {
                0.0
            }
        };
        let period = (base * (1.0 + jitter(rng))).round() as Millis;
        let lobe = (0.25 * base * (1.0 + jitter(rng))).round().max(20.0) as Millis;
        let amp = wp.accel_peak * (1.0 + 1.5 * jitter(rng)) * if stairs { 1.6 } else { 1.0 };
        let heading = normalize_deg((to.1 - self.pos.1).atan2(to.0 - self.pos.0).to_degrees());
        self.motions.push(Motion::Step { t0: self.t, t1: self.t + period, lobe, amp, stairs, from: self.pos, to, heading });
        self.t += period;
        self.pos = to;
        self.heading = heading;
        self.steps += 1;
    }

    /// Position and heading at the start of every motion.
    fn priors(&self) -> Vec<((f64, f64), f64)> {
        let mut out = Vec::with_capacity(self.motions.len());
        let (mut pos, mut heading) = (self.start, self.start_heading);
        for m in &self.motions {
            out.push((pos, heading));
            match *m {
                Motion::Step { to, heading: h, .. } => {
                    pos = to;
                    heading = h;
                }
                Motion::Turn { to, .. } => heading = normalize_deg(to),
                _ => {}
            }
        }
        out
    }
}

/// True state of the walker at `t` during motion `m`, whose start state is
/// `prior`.
fn state_at(m: &Motion, prior: ((f64, f64), f64), t: Millis) -> ((f64, f64), f64) {
    match *m {
        Motion::Step { t0, t1, from, to, heading, .. } => {
            let f = ((t.max(t0) - t0) as f64 / (t1 - t0).max(1) as f64).min(1.0);
            ((from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1)), heading)
        }
        Motion::Turn { t0, t1, from, to } => {
            let f = ((t.max(t0) - t0) as f64 / (t1 - t0).max(1) as f64).min(1.0);
            (prior.0, normalize_deg(from + f * crate::geom::angle_diff_deg(to, from)))
        }
        _ => prior,
    }
}

/// Dijkstra over `(cell, direction)` with a turn penalty and per-query cost
/// jitter, so repeated trips between the same cells vary.
fn plan_path(world: &World, rng: &mut ChaCha8Rng, from: Cell, to: Cell) -> Vec<Cell> {
    if from == to {
        return vec![from];
    }
    let n = (world.cols * world.rows) as usize;
    let jitter: Vec<u32> = (0..n).map(|_| rng.random_range(0..40)).collect();
    const TURN: u32 = 150;
    let dir_of = |a: Cell, b: Cell| -> usize {
        match (b.col as i64 - a.col as i64, b.row as i64 - a.row as i64) {
            (1, 0) => 0,
            (0, 1) => 1,
            (-1, 0) => 2,
            _ => 3,
        }
    };
    let state = |c: Cell, d: usize| (world.idx(c)) * 5 + d;
    let mut dist = vec![u32::MAX; n * 5];
    let mut prev: Vec<Option<usize>> = vec![None; n * 5];
    let mut heap = BinaryHeap::new();
    let s0 = state(from, 4);
    dist[s0] = 0;
    heap.push(Reverse((0u32, s0)));
    let cell_of = |s: usize| {
        let i = (s / 5) as u32;
        Cell { col: i % world.cols, row: i / world.cols }
    };
    let mut goal = None;
    while let Some(Reverse((d, s))) = heap.pop() {
        if d > dist[s] {
            continue;
        }
        let c = cell_of(s);
        if c == to {
            goal = Some(s);
            break;
        }
        let dir = s % 5;
        for nb in world.neighbors(c) {
            let nd = dir_of(c, nb);
            let cost = 100 + jitter[world.idx(nb)] + if dir != 4 && nd != dir { TURN } else { 0 };
            let ns = state(nb, nd);
            if d + cost < dist[ns] {
                dist[ns] = d + cost;
                prev[ns] = Some(s);
                heap.push(Reverse((d + cost, ns)));
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = goal;
    while let Some(s) = cur {
        path.push(cell_of(s));
        cur = prev[s];
    }
    path.reverse();
    path
}

#[derive(Clone, Copy)]
enum Visit {
    Office(usize),
    Elevator(usize),
    Stairs(usize),
    Corridor,
}

fn walk_path(tl: &mut Timeline, world: &World, rng: &mut ChaCha8Rng, wp: &WalkParams, path: &[Cell], pause: Option<(f64, f64)>) {
    for c in path.iter().skip(1) {
        let stairs = world.label(*c) == Some(AreaClass::Stairs);
        tl.step(rng, wp, world.center(*c), stairs);
        if let Some((lo, hi)) = pause {
            if world.label(*c) == Some(AreaClass::Office) {
                let ms = (rng.random_range(lo..hi) * 1000.0) as Millis;
                handle_pause(tl, rng, ms);
            }
        }
    }
}

/// A pause inside an office, with an occasional burst of phone handling.
fn handle_pause(tl: &mut Timeline, rng: &mut ChaCha8Rng, ms: Millis) {
    if ms >= 700 && rng.random_bool(0.35) {
        let burst = rng.random_range(300..=500).min(ms - 200);
        let before = rng.random_range(100..=ms - burst - 100);
        tl.still(before);
        tl.fidget(rng, burst);
        tl.still(ms - before - burst);
    } else {
        tl.still(ms);
    }
}

fn plan_walk(world: &World, wp: &WalkParams, rng: &mut ChaCha8Rng) -> Timeline {
    let entrance = world.entrance;
    let mut tl = Timeline::new(world.center(entrance), 0.0, wp.n_steps);
    tl.still(rng.random_range(2000..=2500));
    let offices: Vec<usize> = (0..world.regions.len()).filter(|&i| world.regions[i].class == AreaClass::Office).collect();
    let elevators: Vec<usize> = (0..world.regions.len()).filter(|&i| world.regions[i].class == AreaClass::Elevator).collect();
    let stairs: Vec<usize> = (0..world.regions.len()).filter(|&i| world.regions[i].class == AreaClass::Stairs).collect();
    let corridor: Vec<Cell> = world.corridor().cells().collect();

    let mut here = entrance;
    let mut visits = 0usize;
    // with a step limit, keep walking until it is reached
    while !tl.full() && (wp.n_steps.is_some() || visits < wp.n_visits) && visits < 10_000 {
        visits += 1;
        let u: f64 = rng.random();
        let visit = if u < 0.5 {
            Visit::Office(*offices.choose(rng).unwrap())
        } else if u < 0.65 && !elevators.is_empty() {
            Visit::Elevator(*elevators.choose(rng).unwrap())
        } else if u < 0.8 && !stairs.is_empty() {
            Visit::Stairs(*stairs.choose(rng).unwrap())
        } else {
            Visit::Corridor
        };
        match visit {
            Visit::Office(ri) => {
                let r = &world.regions[ri];
                let (inside, _) = r.doors[0];
                let path = plan_path(world, rng, here, inside);
                walk_path(&mut tl, world, rng, wp, &path, None);
                here = inside;
                let (lo, hi) = world.spec.office_dwell_s;
                let budget = (rng.random_range(lo..=hi) * 1000.0) as Millis;
                let entered = tl.t;
                let cells: Vec<Cell> = r.cells().collect();
                for _ in 0..rng.random_range(3..=6) {
                    if tl.t - entered >= budget {
                        break;
                    }
                    let target = *cells.choose(rng).unwrap();
                    let path = plan_path(world, rng, here, target);
                    walk_path(&mut tl, world, rng, wp, &path, Some((0.5, 1.5)));
                    here = target;
                }
                let mut left = budget.saturating_sub(tl.t - entered);
                while left > 0 && !tl.full() {
                    let chunk = left.min(rng.random_range(2000..=4000));
                    handle_pause(&mut tl, rng, chunk);
                    left -= chunk;
                }
                let path = plan_path(world, rng, here, inside);
                walk_path(&mut tl, world, rng, wp, &path, Some((0.5, 1.5)));
                here = inside;
            }
            Visit::Elevator(ri) | Visit::Stairs(ri) => {
                let r = &world.regions[ri];
                // riders stand anywhere in the car; stairs lead on from the far end
                let target = if r.class == AreaClass::Elevator {
                    *r.cells().collect::<Vec<_>>().choose(rng).unwrap()
                } else {
                    let far = r.far_end.unwrap_or(r.doors[0].0);
                    Cell { col: rng.random_range(r.c0..r.c1), row: far.row }
                };
                let path = plan_path(world, rng, here, target);
                walk_path(&mut tl, world, rng, wp, &path, None);
                here = target;
                let back = normalize_deg(tl.heading + 180.0);
                if r.class == AreaClass::Elevator {
                    tl.turn(back, 800);
                    let (lo, hi) = world.spec.elevator_dwell_s;
                    tl.still((rng.random_range(lo..=hi) * 1000.0) as Millis);
                } else {
                    tl.still(rng.random_range(1000..=2000));
                    tl.turn(back, 800);
                }
            }
            Visit::Corridor => {
                let target = *corridor.choose(rng).unwrap();
                let path = plan_path(world, rng, here, target);
                walk_path(&mut tl, world, rng, wp, &path, None);
                here = target;
            }
        }
    }
    tl.limit = None;
    tl.still(1000);
    tl
}

/// Rotation taking body-frame vectors (forward, left, up) into the device
/// frame: yaw about up, then tilt about forward.
fn mount_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let yaw = (sign(rng) * rng.random_range(20.0..30.0f64)).to_radians();
    let tilt = (sign(rng) * rng.random_range(15.0..25.0f64)).to_radians();
    let rz = [[yaw.cos(), -yaw.sin(), 0.0], [yaw.sin(), yaw.cos(), 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, tilt.cos(), -tilt.sin()], [0.0, tilt.sin(), tilt.cos()]];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| rx[i][k] * rz[k][j]).sum();
        }
    }
    m
}

fn lobe_value(tau: f64, lobe: f64, amp: f64) -> f64 {
    if tau < lobe {
        amp * (std::f64::consts::PI * tau / lobe).sin()
    } else if tau < 2.0 * lobe {
        -amp * (std::f64::consts::PI * (tau - lobe) / lobe).sin()
    } else {
        0.0
    }
}

fn body_accel(m: &Motion, t: Millis) -> [f64; 3] {
    match *m {
        Motion::Step { t0, lobe, amp, stairs, .. } => {
            let v = lobe_value((t - t0) as f64, lobe as f64, amp);
            let fwd = if stairs { 0.5 * v } else { 0.0 };
            [fwd, 0.0, GRAVITY + v]
        }
        Motion::Fidget { t0, amp, hz, .. } => {
            let tau = (t - t0) as f64 / 1000.0;
            [0.0, 0.0, GRAVITY + amp * (2.0 * std::f64::consts::PI * hz * tau).sin()]
        }
        Motion::Still { .. } | Motion::Turn { .. } => [0.0, 0.0, GRAVITY],
    }
}

/// Index of the motion active at `t`, advancing `cursor` monotonically.
fn active(tl: &Timeline, cursor: &mut usize, t: Millis) -> usize {
    while *cursor + 1 < tl.motions.len() && tl.motions[*cursor].span().1 <= t {
        *cursor += 1;
    }
    *cursor
}

/// Samples sensor streams from a planned timeline. `world` supplies radio
/// signals; scripted walks without a world carry no scans.
fn synthesize(tl: &Timeline, world: Option<&World>, wp: &WalkParams, rng: &mut ChaCha8Rng) -> Result<(Trace, GroundTruth)> {
    let end = tl.motions.last().map_or(0, |m| m.span().1);
    let priors = tl.priors();
    let state = |i: usize, t: Millis| state_at(&tl.motions[i], priors[i], t);
    let rot = mount_rotation(rng);
    let accel_noise = Normal::new(0.0, wp.accel_noise_sigma).unwrap();
    let heading_noise = Normal::new(0.0, wp.heading_noise_sigma).unwrap();
    let gps_noise = Normal::new(0.0, wp.gps_sigma_m).unwrap();
    let mut samples = Vec::new();

    let dt = 1000.0 / wp.sample_hz;
    let mut cursor = 0;
    let mut k = 0u64;
    loop {
        let t = (k as f64 * dt).round() as Millis;
        if t > end {
            break;
        }
        let i = active(tl, &mut cursor, t);
        let b = body_accel(&tl.motions[i], t);
        let a: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| rot[r][c] * b[c]).sum::<f64>() + accel_noise.sample(rng));
        samples.push(SensorSample::new(t, Payload::Accel { ax: a[0], ay: a[1], az: a[2] }));
        k += 1;
    }

    let dm = 1000.0 / wp.mag_hz;
    cursor = 0;
    k = 0;
    loop {
        let t = (k as f64 * dm).round() as Millis;
        if t > end {
            break;
        }
        let i = active(tl, &mut cursor, t);
        let mut h = normalize_deg(state(i, t).1 + heading_noise.sample(rng));
        if h >= 360.0 {
            h = 0.0;
        }
        samples.push(SensorSample::new(t, Payload::Mag { heading: h }));
        k += 1;
    }

    // GPS while standing at the entrance
    let first_move = tl.motions.iter().find_map(|m| matches!(m, Motion::Step { .. }).then(|| m.span().0)).unwrap_or(end);
    let mut t = 0;
    while t <= first_move.min(end) {
        let x = tl.start.0 + gps_noise.sample(rng);
        let y = tl.start.1 + gps_noise.sample(rng);
        samples.push(SensorSample::new(t, Payload::Gps { x, y, acc: 3.0 * wp.gps_sigma_m.max(0.1) }));
        t += 1000;
    }

    if let Some(world) = world {
        let shadow = shadowing(world);
        let gsm = Normal::new(0.0, world.spec.gsm_sigma_db).unwrap();
        let ds = 1000.0 / wp.scan_hz;
        cursor = 0;
        k = 0;
        loop {
            let t = (k as f64 * ds + 0.5 * ds).round() as Millis;
            if t > end {
                break;
            }
            let i = active(tl, &mut cursor, t);
            let (x, y) = state(i, t).0;
            let aps = scan_with(world, x, y, &shadow, rng);
            samples.push(SensorSample::new(t, Payload::Wifi { aps }));
            let mut g = world.spec.gsm_base_dbm + gsm.sample(rng);
            if world.label_at(x, y) == Some(AreaClass::Elevator) {
                g -= world.spec.elevator_extra_loss_db;
            }
            let tg = t + (0.25 * ds).round() as Millis;
            if tg <= end {
                samples.push(SensorSample::new(tg, Payload::Gsm { cell: "gsm-0".into(), rssi: g.round().clamp(-120.0, 0.0) as i32 }));
            }
            k += 1;
        }
    }

    let trace_id = wp.trace_id();
    let trace = Trace::new(trace_id.clone(), format!("user-{}", wp.seed % 3), format!("device-{}", wp.seed % 2), samples)?;

    let mut points = vec![TrackPoint { t: 0, start_t: 0, x: tl.start.0, y: tl.start.1, floor: 0, heading_deg: tl.start_heading }];
    for m in &tl.motions {
        if let Motion::Step { t0, t1, to, heading, .. } = *m {
            points.push(TrackPoint { t: t1, start_t: t0, x: to.0, y: to.1, floor: 0, heading_deg: heading });
        }
    }
    let path = Track { trace_id: trace_id.clone(), points };
    let mut cursor = 0;
    let sample_labels = trace
        .samples
        .iter()
        .map(|s| {
            let i = active(tl, &mut cursor, s.t);
            let (x, y) = state(i, s.t).0;
            world.and_then(|w| w.label_at(x, y))
        })
        .collect();
    Ok((trace, GroundTruth { trace_id, step_count: tl.steps, path, sample_labels }))
}

fn walk_rng(world_seed: u64, walk_seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let base = walk_seed ^ world_seed.rotate_left(32);
    let mut plan = ChaCha8Rng::seed_from_u64(base);
    plan.set_stream(0);
    let mut sensors = ChaCha8Rng::seed_from_u64(base);
    sensors.set_stream(1);
    (plan, sensors)
}

/// One random walk through `world`.
pub fn gen_trace(world: &World, wp: &WalkParams) -> Result<(Trace, GroundTruth)> {
    wp.validate()?;
    let (mut plan, mut sensors) = walk_rng(world.spec.seed, wp.seed);
    let tl = plan_walk(world, wp, &mut plan);
    synthesize(&tl, Some(world), wp, &mut sensors)
}

/// One move of a scripted walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Move {
    /// One stride of the script's step length along this heading, degrees.
    Step(f64),
    /// Stand still for this many milliseconds.
    Still(Millis),
}

/// A scripted walk in open space: stand for two seconds at `start`, then one
/// step of `step_length` per heading in `headings` (degrees), then stand for
/// a second. No radio scans are emitted.
pub fn gen_scripted(start: (f64, f64), headings: &[f64], step_length: f64, wp: &WalkParams) -> Result<(Trace, GroundTruth)> {
    let moves: Vec<Move> = headings.iter().map(|h| Move::Step(*h)).collect();
    gen_script(None, start, &moves, step_length, wp)
}

/// Scripted walk framed like [`gen_scripted`]. With a world, radio scans
/// are synthesized along the path and steps landing on stairs use the stair
/// gait; the script is not checked against walls.
pub fn gen_script(world: Option<&World>, start: (f64, f64), moves: &[Move], step_length: f64, wp: &WalkParams) -> Result<(Trace, GroundTruth)> {
    wp.validate()?;
    if !(step_length > 0.0) {
        return Err(Error::InvalidParams("step_length must be positive".into()));
    }
    let world_seed = world.map_or(0x5C41_7ED, |w| w.spec.seed);
    let (mut plan, mut sensors) = walk_rng(world_seed, wp.seed);
    let first = moves.iter().find_map(|m| if let Move::Step(h) = m { Some(*h) } else { None });
    let mut tl = Timeline::new(start, first.unwrap_or(0.0), None);
    tl.still(2000);
    for m in moves {
        match *m {
            Move::Step(h) => {
                let r = h.to_radians();
                let to = (tl.pos.0 + step_length * r.cos(), tl.pos.1 + step_length * r.sin());
                let stairs = world.is_some_and(|w| w.label_at(to.0, to.1) == Some(AreaClass::Stairs));
                tl.step(&mut plan, wp, to, stairs);
            }
            Move::Still(ms) => tl.still(ms),
        }
    }
    tl.still(1000);
    synthesize(&tl, world, wp, &mut sensors)
}

fn shadowing(world: &World) -> Normal<f64> {
    Normal::new(0.0, world.spec.shadow_sigma_db).unwrap()
}

fn scan_with(world: &World, x: f64, y: f64, shadow: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<ApReading> {
    world
        .aps
        .iter()
        .filter_map(|ap| {
            let v = (world.expected_rssi(ap, x, y) + shadow.sample(rng)).round().clamp(-120.0, 0.0);
            (v >= -100.0).then(|| ApReading { bssid: ap.bssid.clone(), rssi: v as i32 })
        })
        .collect()
}

/// Noise-free scan at `(x, y)`: every AP's expected RSSI, rounded to whole
/// dBm, with the same -100 dBm hearing limit as [`sample_scan`].
pub fn expected_scan(world: &World, x: f64, y: f64) -> Vec<ApReading> {
    world
        .aps
        .iter()
        .filter_map(|ap| {
            let v = world.expected_rssi(ap, x, y).round().clamp(-120.0, 0.0);
            (v >= -100.0).then(|| ApReading { bssid: ap.bssid.clone(), rssi: v as i32 })
        })
        .collect()
}

/// One WiFi scan at `(x, y)` with shadowing drawn from `rng`. APs weaker
/// than -100 dBm are not heard.
pub fn sample_scan(world: &World, x: f64, y: f64, rng: &mut ChaCha8Rng) -> Vec<ApReading> {
    scan_with(world, x, y, &shadowing(world), rng)
}

/// Per-trace seed of trace `i` in a corpus seeded by `seed`.
pub fn corpus_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_000).wrapping_add(i as u64)
}

pub fn gen_corpus(world: &World, n_traces: usize, seed: u64) -> Result<Vec<(Trace, GroundTruth)>> {
    gen_corpus_with(world, n_traces, seed, &WalkParams::default())
}

/// Corpus of independent walks sharing every parameter of `template` except
/// the seed.
pub fn gen_corpus_with(world: &World, n_traces: usize, seed: u64, template: &WalkParams) -> Result<Vec<(Trace, GroundTruth)>> {
    if n_traces == 0 {
        return Err(Error::InvalidParams("n_traces must be >= 1".into()));
    }
    (0..n_traces)
        .into_par_iter()
        .map(|i| gen_trace(world, &WalkParams { seed: corpus_seed(seed, i), ..template.clone() }))
        .collect()
}

/// Fraction of walkable cells whose centre region a ground-truth path
/// visited (step end points and the start pose).
pub fn coverage(world: &World, truths: &[GroundTruth]) -> f64 {
    let walkable = world.walkable_cells();
    let visited: BTreeSet<Cell> = truths
        .iter()
        .flat_map(|g| g.path.points.iter().filter_map(|p| world.cell_at(p.x, p.y)))
        .collect();
    let hit = walkable.iter().filter(|c| visited.contains(c)).count();
    hit as f64 / walkable.len() as f64
}
