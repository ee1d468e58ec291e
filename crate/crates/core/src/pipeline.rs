//! End-to-end composition: traces to tracks, tracks to a block grid, grid to
//! labeled examples and a trained ensemble.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{evaluate, predict, split_blocks, train_bagged, AreaClass, Ensemble, Evaluation, LabeledExample, TrainParams};
use crate::error::{Error, Result};
use crate::fingerprint::{build_fingerprint, FingerprintDB};
use crate::geom::circular_mean_deg;
use crate::grid::{features, BlockId, GridMap, GridSpec};
use crate::reckoning::{build_track, DrParams, Track};
use crate::sim::World;
use crate::steps::{detect_steps_fsm, FsmParams};
use crate::trace::{Payload, Trace, TraceParams};

/// Every block size of a sweep must divide this, so all grids share cell
/// boundaries with each other and with the world.
pub const GRID_ALIGN_M: f64 = 2.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub trace: TraceParams,
    pub fsm: FsmParams,
    pub dr: DrParams,
    pub train: TrainParams,
    pub block_size: f64,
    pub grid_margin: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            trace: TraceParams::default(),
            fsm: FsmParams::default(),
            dr: DrParams::default(),
            train: TrainParams::default(),
            block_size: 0.7,
            grid_margin: 2.8,
            test_fraction: 0.2,
            split_seed: 7,
        }
    }
}

/// Initial pose from the last GPS fix and the compass during the first
/// step, the heading snapped onto the quantization lattice.
pub fn initial_pose(trace: &Trace, first_step: Option<(u64, u64)>, quant_deg: Option<f64>) -> (f64, f64, f64) {
    let fix = trace.samples.iter().rev().find_map(|s| match s.payload {
        Payload::Gps { x, y, .. } => Some((x, y)),
        _ => None,
    });
    let (x, y) = fix.unwrap_or((0.0, 0.0));
    let (t0, t1) = first_step.unwrap_or((trace.start_t().unwrap_or(0), trace.start_t().unwrap_or(0) + 1000));
    let mut h = circular_mean_deg(trace.headings().filter(|(t, _)| *t >= t0 && *t <= t1).map(|(_, h)| h))
        .or_else(|| trace.headings().next().map(|(_, h)| h))
        .unwrap_or(0.0);
    if let Some(q) = quant_deg {
        h = crate::geom::normalize_deg((h / q).round() * q);
    }
    (x, y, h)
}

/// Step detection plus dead reckoning from the trace's own anchors.
pub fn reconstruct(trace: &Trace, p: &PipelineParams) -> Result<Track> {
    let steps = detect_steps_fsm(trace, &p.fsm, &p.trace)?;
    let pose = initial_pose(trace, steps.first().map(|s| (s.start_t, s.end_t)), p.dr.quant_deg);
    build_track(&steps, trace, &DrParams { initial_pose: pose, ..p.dr })
}

pub fn reconstruct_all(traces: &[Trace], p: &PipelineParams) -> Result<Vec<Track>> {
    traces.par_iter().map(|t| reconstruct(t, p)).collect()
}

/// Grid of `block_size` blocks covering the world plus `margin`.
pub fn world_grid(world: &World, block_size: f64, margin: f64) -> Result<GridSpec> {
    let w = world.cols as f64 * world.cell_size;
    let h = world.rows as f64 * world.cell_size;
    GridSpec::covering((0.0, 0.0), (w, h), block_size, margin, GRID_ALIGN_M)
}

/// Rasterizes every trace into a private grid and merges the results.
/// Traces whose track leaves the grid are skipped; their indices are
/// returned.
pub fn build_grid(spec: &GridSpec, tracks: &[Track], traces: &[Trace]) -> Result<(GridMap, Vec<usize>)> {
    let parts: Vec<Result<GridMap>> = tracks
        .par_iter()
        .zip(traces.par_iter())
        .map(|(track, trace)| {
            let mut g = GridMap::new(*spec);
            g.rasterize(track, trace)?;
            Ok(g)
        })
        .collect();
    let mut grid = GridMap::new(*spec);
    let mut skipped = Vec::new();
    for (i, part) in parts.into_iter().enumerate() {
        match part {
            Ok(g) => grid.merge(&g)?,
            Err(Error::OutOfGrid { .. }) => skipped.push(i),
            Err(e) => return Err(e),
        }
    }
    Ok((grid, skipped))
}

/// Ground-truth label of every grid block: the class covering most of the
/// block's walkable area.
pub fn true_labels(world: &World, spec: &GridSpec) -> BTreeMap<BlockId, AreaClass> {
    let mut out = BTreeMap::new();
    for row in 0..spec.height {
        for col in 0..spec.width {
            let id = BlockId::new(col, row);
            let origin = (spec.origin.0 + col as f64 * spec.block_size, spec.origin.1 + row as f64 * spec.block_size);
            if let Some(l) = world.majority_label(origin, spec.block_size) {
                out.insert(id, l);
            }
        }
    }
    out
}

/// Blocks with both features and a ground-truth label, row-major.
pub fn labeled_blocks(grid: &GridMap, labels: &BTreeMap<BlockId, AreaClass>) -> Vec<(BlockId, LabeledExample)> {
    grid.blocks
        .iter()
        .filter_map(|(id, acc)| {
            let label = *labels.get(id)?;
            let fv = features(acc).ok()?;
            Some((*id, LabeledExample { fv, label }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub block_size: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub evaluation: Evaluation,
    #[serde(skip)]
    pub ensemble: Option<Ensemble>,
    #[serde(skip)]
    pub test_blocks: Vec<BlockId>,
}

/// Training and test examples of the stratified block split.
pub fn split_for_training(blocks: &[(BlockId, LabeledExample)], p: &PipelineParams) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let (train, test) = split_blocks(blocks, p.test_fraction, p.split_seed);
    (train.iter().map(|(_, e)| *e).collect(), test.iter().map(|(_, e)| *e).collect())
}

/// Trains on a stratified block split of `blocks` and evaluates on the rest.
pub fn run_experiment(blocks: &[(BlockId, LabeledExample)], block_size: f64, p: &PipelineParams) -> Result<Experiment> {
    let (train, test) = split_blocks(blocks, p.test_fraction, p.split_seed);
    let train_ex: Vec<LabeledExample> = train.iter().map(|(_, e)| *e).collect();
    let test_ex: Vec<LabeledExample> = test.iter().map(|(_, e)| *e).collect();
    let ensemble = train_bagged(&train_ex, &p.train)?;
    let evaluation = evaluate(&ensemble, &test_ex)?;
    Ok(Experiment {
        block_size,
        n_train: train.len(),
        n_test: test.len(),
        evaluation,
        ensemble: Some(ensemble),
        test_blocks: test.iter().map(|(id, _)| *id).collect(),
    })
}

/// Full classification pipeline at one block size, from reconstructed
/// tracks.
pub fn classify_at(world: &World, tracks: &[Track], traces: &[Trace], block_size: f64, p: &PipelineParams) -> Result<Experiment> {
    let spec = world_grid(world, block_size, p.grid_margin)?;
    let (grid, _) = build_grid(&spec, tracks, traces)?;
    let labels = true_labels(world, &spec);
    run_experiment(&labeled_blocks(&grid, &labels), block_size, p)
}

/// Accuracy per block size.
pub fn block_size_sweep(world: &World, tracks: &[Track], traces: &[Trace], sizes: &[f64], p: &PipelineParams) -> Result<Vec<(f64, f64)>> {
    if sizes.is_empty() {
        return Err(Error::InvalidParams("sweep needs at least one block size".into()));
    }
    sizes
        .iter()
        .map(|&s| classify_at(world, tracks, traces, s, p).map(|e| (s, e.evaluation.accuracy)))
        .collect()
}

/// Fingerprint database from reconstructed tracks, skipping tracks that
/// leave the grid.
pub fn build_db(spec: &GridSpec, tracks: &[Track], traces: &[Trace]) -> Result<FingerprintDB> {
    let mut db = FingerprintDB::new(*spec);
    for (track, trace) in tracks.iter().zip(traces) {
        match build_fingerprint([(track, trace)], spec) {
            Ok(one) => db.merge(&one)?,
            Err(Error::OutOfGrid { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(db)
}

/// Replaces the grid's labels with the ensemble's predictions. Blocks too
/// sparse for features stay unlabeled.
pub fn label_grid(grid: &mut GridMap, ensemble: &Ensemble) {
    let labels = grid.block_features().into_iter().map(|(id, fv)| (id, predict(ensemble, &fv))).collect();
    grid.labels = Some(labels);
}
