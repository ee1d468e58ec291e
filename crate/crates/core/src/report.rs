//! End-to-end evaluation on a simulated corpus.
//!
//! Everything here is a pure function of [`ReportConfig`]; parallel stages
//! collect in input order, so two runs with the same seed serialize to the
//! same bytes.

use std::fmt::Write;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::AreaClass;
use crate::error::{Error, Result};
use crate::fingerprint::{locate, LocateParams};
use crate::grid::BlockId;
use crate::pipeline::{build_grid, build_db, classify_at, labeled_blocks, reconstruct, reconstruct_all, run_experiment, true_labels, world_grid, PipelineParams};
use crate::reckoning::{double_integrate, DrParams, Track};
use crate::sim::{corpus_seed, coverage, gen_corpus_with, gen_scripted, expected_scan, gen_trace, gen_world, sample_scan, WalkParams, World, WorldSpec};
use crate::steps::{detect_steps_fsm, detect_steps_variance, step_count_error, VarianceParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub seed: u64,
    pub world: WorldSpec,
    pub walk: WalkParams,
    pub pipeline: PipelineParams,
    pub variance: VarianceParams,
    pub locate: LocateParams,
    pub n_traces: usize,
    pub step_counts: Vec<usize>,
    pub step_repeats: usize,
    pub noise_levels: Vec<f64>,
    pub straight_steps: usize,
    pub square_side: usize,
    pub square_runs: usize,
    pub block_sizes: Vec<f64>,
    pub n_queries: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            seed: 42,
            world: WorldSpec::default(),
            walk: WalkParams::default(),
            pipeline: PipelineParams::default(),
            variance: VarianceParams::default(),
            locate: LocateParams::default(),
            n_traces: 60,
            step_counts: vec![4, 11, 19, 120, 270, 300],
            step_repeats: 5,
            noise_levels: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0],
            straight_steps: 7,
            square_side: 10,
            square_runs: 50,
            block_sizes: vec![0.35, 0.7, 1.4, 2.8],
            n_queries: 100,
        }
    }
}

impl ReportConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if self.n_traces == 0 || self.step_repeats == 0 || self.square_runs == 0 || self.n_queries == 0 {
            return bad("report counts must be >= 1");
        }
        if self.step_counts.is_empty() || self.step_counts.contains(&0) {
            return bad("step_counts must be nonempty and positive");
        }
        if self.block_sizes.is_empty() || self.noise_levels.iter().any(|s| !(*s >= 0.0)) {
            return bad("need block sizes and non-negative noise levels");
        }
        if self.straight_steps == 0 || self.square_side == 0 {
            return bad("scripted walks need at least one step");
        }
        self.walk.validate()?;
        self.world.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub trace_id: String,
    pub actual: usize,
    pub fsm: usize,
    pub variance: usize,
    pub fsm_error_pct: f64,
    pub variance_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTable {
    pub noise_sigma: f64,
    pub rows: Vec<StepRow>,
    pub fsm_mape: f64,
    pub variance_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub steps: usize,
    /// Error after each true step, metres.
    pub fsm: Vec<f64>,
    pub double_integration: Vec<f64>,
    pub fsm_endpoint_error: f64,
    pub double_integration_endpoint_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareRun {
    pub seed: u64,
    pub quantized: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareClosure {
    pub side_steps: usize,
    pub step_length: f64,
    pub runs: Vec<SquareRun>,
    /// Share of runs where quantization closes at least as well.
    pub quantized_no_worse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub class: AreaClass,
    pub support: u64,
    pub false_negative_rate: f64,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub block_size: f64,
    pub coverage: f64,
    pub skipped_traces: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, classes in ordinal order.
    pub confusion: [[u64; 4]; 4],
    pub rates: Vec<ClassRates>,
    pub sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub block_size: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub block_size: f64,
    pub db_blocks: usize,
    /// Located-block error per query, in blocks, sorted. Queries are the
    /// noise-free fingerprint at the block centroid.
    pub errors_blocks: Vec<f64>,
    pub median_blocks: f64,
    pub p90_blocks: f64,
    /// Same blocks, one shadowed scan each.
    pub noisy_errors_blocks: Vec<f64>,
    pub noisy_median_blocks: f64,
    pub noisy_p90_blocks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub steps: StepTable,
    pub noise_sweep: Vec<StepTable>,
    pub displacement: Displacement,
    pub square: SquareClosure,
    pub classification: Classification,
    pub localization: Localization,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let s = &self.steps;
        writeln!(o, "step counts (noise sigma {:.2} m/s^2)", s.noise_sigma).unwrap();
        writeln!(o, "{:<16} {:>6} {:>6} {:>8} {:>8} {:>8}", "trace", "actual", "fsm", "variance", "fsm%", "var%").unwrap();
        for r in &s.rows {
            writeln!(o, "{:<16} {:>6} {:>6} {:>8} {:>8.1} {:>8.1}", r.trace_id, r.actual, r.fsm, r.variance, r.fsm_error_pct, r.variance_error_pct).unwrap();
        }
        writeln!(o, "average error: fsm {:.1}%  variance {:.1}%", s.fsm_mape, s.variance_mape).unwrap();

        writeln!(o, "\nnoise sweep").unwrap();
        writeln!(o, "{:>6} {:>8} {:>8}", "sigma", "fsm%", "var%").unwrap();
        for t in &self.noise_sweep {
            writeln!(o, "{:>6.2} {:>8.1} {:>8.1}", t.noise_sigma, t.fsm_mape, t.variance_mape).unwrap();
        }

        let d = &self.displacement;
        writeln!(o, "\ndisplacement error, {}-step straight walk (m)", d.steps).unwrap();
        writeln!(o, "{:>4} {:>8} {:>8}", "step", "fsm", "double").unwrap();
        for (i, (a, b)) in d.fsm.iter().zip(&d.double_integration).enumerate() {
            writeln!(o, "{:>4} {:>8.3} {:>8.3}", i + 1, a, b).unwrap();
        }
        writeln!(o, "endpoint: fsm {:.3}  double integration {:.3}", d.fsm_endpoint_error, d.double_integration_endpoint_error).unwrap();

        let q = &self.square;
        let first = &q.runs[0];
        writeln!(o, "\nsquare walk, {} steps a side", q.side_steps).unwrap();
        writeln!(o, "first run closure: quantized {:.3} m  raw {:.3} m", first.quantized, first.raw).unwrap();
        writeln!(o, "quantized no worse on {:.0}% of {} runs", 100.0 * q.quantized_no_worse, q.runs.len()).unwrap();

        let c = &self.classification;
        writeln!(o, "\nclassification at {} m blocks", c.block_size).unwrap();
        writeln!(o, "coverage {:.3}, skipped traces {}", c.coverage, c.skipped_traces.len()).unwrap();
        writeln!(o, "train {} test {} accuracy {:.3}", c.n_train, c.n_test, c.accuracy).unwrap();
        writeln!(o, "{:<10} {:>8} {:>8} {:>8} {:>8}", "true\\pred", "office", "corridor", "elevator", "stairs").unwrap();
        for (i, row) in c.confusion.iter().enumerate() {
            writeln!(o, "{:<10} {:>8} {:>8} {:>8} {:>8}", AreaClass::ALL[i].name(), row[0], row[1], row[2], row[3]).unwrap();
        }
        for r in &c.rates {
            writeln!(o, "{:<10} support {:>4}  fn {:.3}  fp {:.3}", r.class.name(), r.support, r.false_negative_rate, r.false_positive_rate).unwrap();
        }
        writeln!(o, "block size sweep").unwrap();
        for p in &c.sweep {
            writeln!(o, "{:>6.2} m  {:.3}", p.block_size, p.accuracy).unwrap();
        }

        let l = &self.localization;
        writeln!(o, "\nlocalization, {} queries on {} m blocks", l.errors_blocks.len(), l.block_size).unwrap();
        writeln!(o, "noise-free query: median {:.2} blocks, p90 {:.2} blocks", l.median_blocks, l.p90_blocks).unwrap();
        writeln!(o, "single scan:      median {:.2} blocks, p90 {:.2} blocks", l.noisy_median_blocks, l.noisy_p90_blocks).unwrap();
        o
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[i]
}

/// Step table for `counts` x `repeats` walks at accelerometer noise `sigma`.
pub fn step_table(world: &World, cfg: &ReportConfig, sigma: f64, seed: u64) -> Result<StepTable> {
    let jobs: Vec<(usize, usize)> = cfg.step_counts.iter().flat_map(|&c| (0..cfg.step_repeats).map(move |r| (c, r))).collect();
    let rows: Vec<StepRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(count, _))| {
            let wp = WalkParams { seed: corpus_seed(seed, i), n_steps: Some(count), accel_noise_sigma: sigma, ..cfg.walk.clone() };
            let (trace, truth) = gen_trace(world, &wp)?;
            let fsm = detect_steps_fsm(&trace, &cfg.pipeline.fsm, &cfg.pipeline.trace)?.len();
            let variance = detect_steps_variance(&trace, &cfg.variance, &cfg.pipeline.trace)?.len();
            Ok(StepRow {
                trace_id: trace.trace_id.clone(),
                actual: truth.step_count,
                fsm,
                variance,
                fsm_error_pct: step_count_error(fsm, truth.step_count)?,
                variance_error_pct: step_count_error(variance, truth.step_count)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StepTable {
        noise_sigma: sigma,
        fsm_mape: mean(rows.iter().map(|r| r.fsm_error_pct)),
        variance_mape: mean(rows.iter().map(|r| r.variance_error_pct)),
        rows,
    })
}

/// FSM dead reckoning against naive double integration on a straight walk
/// along +x from the origin.
pub fn displacement(cfg: &ReportConfig, seed: u64) -> Result<Displacement> {
    let wp = WalkParams { seed, ..cfg.walk.clone() };
    let headings = vec![0.0; cfg.straight_steps];
    let (trace, truth) = gen_scripted((0.0, 0.0), &headings, cfg.pipeline.dr.step_length, &wp)?;
    let fsm = reconstruct(&trace, &cfg.pipeline)?;
    let di = double_integrate(&trace, &cfg.pipeline.trace)?;
    let curve = |track: &Track| -> Vec<f64> { truth.path.points[1..].iter().map(|p| dist(track.position_at(p.t), (p.x, p.y))).collect() };
    Ok(Displacement {
        steps: cfg.straight_steps,
        fsm: curve(&fsm),
        double_integration: curve(&di),
        fsm_endpoint_error: dist(fsm.end(), truth.path.end()),
        double_integration_endpoint_error: dist(di.end(), truth.path.end()),
    })
}

/// Closure error of square walks with and without heading quantization.
pub fn square_closure(cfg: &ReportConfig, seed: u64) -> Result<SquareClosure> {
    let k = cfg.square_side;
    let headings: Vec<f64> = [0.0, 90.0, 180.0, 270.0].iter().flat_map(|h| std::iter::repeat_n(*h, k)).collect();
    let raw_params = PipelineParams { dr: DrParams { quant_deg: None, ..cfg.pipeline.dr }, ..cfg.pipeline.clone() };
    let runs: Vec<SquareRun> = (0..cfg.square_runs)
        .into_par_iter()
        .map(|i| {
            let s = corpus_seed(seed, i);
            let (trace, truth) = gen_scripted((0.0, 0.0), &headings, cfg.pipeline.dr.step_length, &WalkParams { seed: s, ..cfg.walk.clone() })?;
            let start = (truth.path.points[0].x, truth.path.points[0].y);
            let q = reconstruct(&trace, &cfg.pipeline)?;
            let r = reconstruct(&trace, &raw_params)?;
            Ok(SquareRun { seed: s, quantized: dist(q.end(), start), raw: dist(r.end(), start) })
        })
        .collect::<Result<_>>()?;
    let ok = runs.iter().filter(|r| r.quantized <= r.raw).count();
    Ok(SquareClosure { side_steps: k, step_length: cfg.pipeline.dr.step_length, quantized_no_worse: ok as f64 / runs.len() as f64, runs })
}

/// Block-distance error of `n` fingerprint queries at the centroids of
/// randomly chosen walkable blocks, once with the noise-free fingerprint and
/// once with a single shadowed scan.
pub fn localization(world: &World, tracks: &[Track], traces: &[crate::trace::Trace], cfg: &ReportConfig, seed: u64) -> Result<Localization> {
    let size = cfg.pipeline.block_size;
    let spec = world_grid(world, size, cfg.pipeline.grid_margin)?;
    let db = build_db(&spec, tracks, traces)?;
    let candidates: Vec<BlockId> = true_labels(world, &spec).into_keys().collect();
    if candidates.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries: Vec<BlockId> = (0..cfg.n_queries).map(|_| *candidates.choose(&mut rng).unwrap()).collect();
    let block_error = |id: BlockId, scan: &[crate::trace::ApReading]| -> Result<f64> {
        match locate(&db, scan, &cfg.locate) {
            Ok(loc) => Ok((loc.block.col as f64 - id.col as f64).hypot(loc.block.row as f64 - id.row as f64)),
            // nothing heard: a miss across the whole grid
            Err(Error::EmptyScan) => Ok((spec.width as f64).hypot(spec.height as f64)),
            Err(e) => Err(e),
        }
    };
    let mut errors = Vec::with_capacity(queries.len());
    let mut noisy = Vec::with_capacity(queries.len());
    for id in queries {
        let (x, y) = spec.centroid(id);
        errors.push(block_error(id, &expected_scan(world, x, y))?);
        noisy.push(block_error(id, &sample_scan(world, x, y, &mut rng))?);
    }
    errors.sort_by(f64::total_cmp);
    noisy.sort_by(f64::total_cmp);
    Ok(Localization {
        block_size: size,
        db_blocks: db.blocks.len(),
        median_blocks: quantile(&errors, 0.5),
        p90_blocks: quantile(&errors, 0.9),
        errors_blocks: errors,
        noisy_median_blocks: quantile(&noisy, 0.5),
        noisy_p90_blocks: quantile(&noisy, 0.9),
        noisy_errors_blocks: noisy,
    })
}

/// Runs every experiment. Sub-seeds are fixed offsets of `cfg.seed` so each
/// section can be reproduced on its own.
pub fn run_report(cfg: &ReportConfig) -> Result<Report> {
    cfg.validate()?;
    let world = gen_world(&cfg.world)?;
    let steps = step_table(&world, cfg, cfg.walk.accel_noise_sigma, cfg.seed.wrapping_add(1))?;
    let noise_sweep = cfg
        .noise_levels
        .iter()
        .map(|&s| step_table(&world, cfg, s, cfg.seed.wrapping_add(1)))
        .collect::<Result<Vec<_>>>()?;
    let displacement = displacement(cfg, cfg.seed.wrapping_add(2))?;
    let square = square_closure(cfg, cfg.seed.wrapping_add(3))?;

    let (traces, truths): (Vec<_>, Vec<_>) = gen_corpus_with(&world, cfg.n_traces, cfg.seed, &cfg.walk)?.into_iter().unzip();
    let tracks = reconstruct_all(&traces, &cfg.pipeline)?;
    let size = cfg.pipeline.block_size;
    let spec = world_grid(&world, size, cfg.pipeline.grid_margin)?;
    let (grid, skipped) = build_grid(&spec, &tracks, &traces)?;
    let labels = true_labels(&world, &spec);
    let exp = run_experiment(&labeled_blocks(&grid, &labels), size, &cfg.pipeline)?;
    let ev = &exp.evaluation;
    let sweep = cfg
        .block_sizes
        .iter()
        .map(|&s| classify_at(&world, &tracks, &traces, s, &cfg.pipeline).map(|e| SweepPoint { block_size: s, accuracy: e.evaluation.accuracy }))
        .collect::<Result<Vec<_>>>()?;
    let classification = Classification {
        block_size: size,
        coverage: coverage(&world, &truths),
        skipped_traces: skipped.iter().map(|&i| traces[i].trace_id.clone()).collect(),
        n_train: exp.n_train,
        n_test: exp.n_test,
        accuracy: ev.accuracy,
        confusion: ev.confusion,
        rates: AreaClass::ALL
            .iter()
            .map(|&c| ClassRates {
                class: c,
                support: ev.confusion[c.index()].iter().sum(),
                false_negative_rate: ev.false_negative_rate(c),
                false_positive_rate: ev.false_positive_rate(c),
            })
            .collect(),
        sweep,
    };
    let localization = localization(&world, &tracks, &traces, cfg, cfg.seed.wrapping_add(4))?;
    Ok(Report { seed: cfg.seed, steps, noise_sweep, displacement, square, classification, localization })
}
