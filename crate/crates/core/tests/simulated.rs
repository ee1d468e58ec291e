//! Examples whose expected values come from the simulator's ground truth.

use std::collections::BTreeSet;

use floorplan::classify::AreaClass;
use floorplan::fingerprint::build_fingerprint;
use floorplan::grid::{features, GridMap};
use floorplan::pipeline::{build_grid, classify_at, label_grid, labeled_blocks, reconstruct, reconstruct_all, run_experiment, true_labels, world_grid, PipelineParams};
use floorplan::reckoning::{build_track, double_integrate, extract_anchors, AnchorSource, DrParams, Track};
use floorplan::render::{render_svg, BACKGROUND};
use floorplan::sim::{coverage, gen_corpus, gen_script, gen_scripted, gen_trace, gen_world, Move, WalkParams, World, WorldSpec};
use floorplan::steps::{detect_steps_fsm, detect_steps_variance, step_count_error, FsmParams, VarianceParams};
use floorplan::trace::{parse_trace, TraceParams};

fn world() -> World {
    gen_world(&WorldSpec::default()).unwrap()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn simulated_trace_round_trips_byte_exact() {
    let w = world();
    let (trace, _) = gen_trace(&w, &WalkParams { seed: 3, n_steps: Some(40), ..WalkParams::default() }).unwrap();
    let text = trace.to_jsonl();
    let back = parse_trace(text.as_bytes()).unwrap();
    assert_eq!(back.samples.len(), trace.samples.len());
    assert_eq!(back.to_jsonl(), text);
}

#[test]
fn three_hundred_steps_within_one_percent() {
    let w = world();
    let (trace, truth) = gen_trace(&w, &WalkParams { seed: 11, n_steps: Some(300), ..WalkParams::default() }).unwrap();
    assert_eq!(truth.step_count, 300);
    let tp = TraceParams::default();
    let fsm = detect_steps_fsm(&trace, &FsmParams::default(), &tp).unwrap().len();
    assert!(step_count_error(fsm, 300).unwrap() <= 1.0, "fsm counted {fsm}");
    // the baseline is only reported
    let variance = detect_steps_variance(&trace, &VarianceParams::default(), &tp).unwrap().len();
    println!("300 steps: fsm {fsm}, variance {variance}");
}

#[test]
fn l_shaped_walk_ends_near_the_corner() {
    let headings: Vec<f64> = [0.0; 10].into_iter().chain([90.0; 10]).collect();
    for seed in 0..5 {
        let (trace, truth) = gen_scripted((0.0, 0.0), &headings, 0.7, &WalkParams { seed, ..WalkParams::default() }).unwrap();
        assert!(dist(truth.path.end(), (7.0, 7.0)) < 1e-9);
        let track = reconstruct(&trace, &PipelineParams::default()).unwrap();
        let e = dist(track.end(), (7.0, 7.0));
        assert!(e <= 0.7, "seed {seed}: endpoint off by {e:.3} m");
    }
}

#[test]
fn double_integration_drifts_five_times_further() {
    let (trace, truth) = gen_scripted((0.0, 0.0), &[0.0; 7], 0.7, &WalkParams { seed: 5, ..WalkParams::default() }).unwrap();
    let steps = detect_steps_fsm(&trace, &FsmParams::default(), &TraceParams::default()).unwrap();
    assert_eq!(steps.len(), 7);
    let track = build_track(&steps, &trace, &DrParams::default()).unwrap();
    let di = double_integrate(&trace, &TraceParams::default()).unwrap();
    let (e_dr, e_di) = (dist(track.end(), truth.path.end()), dist(di.end(), truth.path.end()));
    assert!(e_di >= 5.0 * e_dr, "dead reckoning {e_dr:.3} m, double integration {e_di:.3} m");
}

#[test]
fn ap_anchor_lands_near_closest_approach() {
    let w = world();
    let ap = &w.aps[0];
    let moves = vec![Move::Step(0.0); 16];
    let start = (ap.x - 8.0 * w.cell_size, ap.y);
    let scan_ms = 1000;
    for seed in 0..5 {
        let (trace, truth) = gen_script(Some(&w), start, &moves, w.cell_size, &WalkParams { seed, ..WalkParams::default() }).unwrap();
        let closest = truth.path.points.iter().min_by(|a, b| dist((a.x, a.y), (ap.x, ap.y)).total_cmp(&dist((b.x, b.y), (ap.x, ap.y)))).unwrap();
        let anchor = extract_anchors(&trace)
            .into_iter()
            .find(|a| matches!(&a.source, AnchorSource::ApMaxRssi { bssid } if *bssid == ap.bssid))
            .expect("AP heard often enough");
        let off = anchor.t.abs_diff(closest.t);
        assert!(off <= 2 * scan_ms, "seed {seed}: anchor {} ms from closest approach", off);
    }
}

#[test]
fn elevator_dwell_block_is_long_and_quiet() {
    let w = world();
    let elevator = w.regions.iter().find(|r| r.class == AreaClass::Elevator).unwrap();
    let (inside, door) = elevator.doors[0];
    let into = if inside.row > door.row { 90.0 } else { 270.0 };
    let back = (into + 180.0) % 360.0;
    let start = w.center(floorplan::sim::Cell { col: door.col.saturating_sub(8), row: door.row });
    let walk_in = (door.col - door.col.saturating_sub(8)) as usize;
    let mut moves = vec![Move::Step(0.0); walk_in];
    moves.extend([Move::Step(into), Move::Still(35_000), Move::Step(back)]);
    moves.extend(vec![Move::Step(180.0); walk_in]);
    let (trace, truth) = gen_script(Some(&w), start, &moves, w.cell_size, &WalkParams { seed: 9, ..WalkParams::default() }).unwrap();

    let spec = world_grid(&w, 0.7, 2.8).unwrap();
    let mut grid = GridMap::new(spec);
    grid.rasterize(&truth.path, &trace).unwrap();
    let labels = true_labels(&w, &spec);
    let (ix, iy) = w.center(inside);
    let block = spec.block_of(ix, iy).unwrap();
    assert_eq!(labels[&block], AreaClass::Elevator);
    let fv = features(&grid.blocks[&block]).unwrap();
    let corridor: Vec<f64> = labeled_blocks(&grid, &labels)
        .into_iter()
        .filter(|(_, e)| e.label == AreaClass::Corridor)
        .map(|(_, e)| e.fv.wifi_rssi_avg)
        .collect();
    let corridor_median = median(corridor);
    assert!(fv.dwell_avg_s >= 30.0, "dwell {:.1} s", fv.dwell_avg_s);
    assert!(fv.wifi_rssi_avg <= corridor_median - 15.0, "elevator {:.1} dBm vs corridor median {corridor_median:.1}", fv.wifi_rssi_avg);
}

fn truth_tracks(n: usize, seed: u64) -> (World, Vec<Track>, Vec<floorplan::trace::Trace>) {
    let w = world();
    let (traces, truths): (Vec<_>, Vec<_>) = gen_corpus(&w, n, seed).unwrap().into_iter().unzip();
    (w, truths.into_iter().map(|g| g.path).collect(), traces)
}

#[test]
fn halves_merge_to_the_one_by_one_grid() {
    let (w, tracks, traces) = truth_tracks(10, 8);
    let spec = world_grid(&w, 0.7, 2.8).unwrap();
    let mut serial = GridMap::new(spec);
    for (t, tr) in tracks.iter().zip(&traces) {
        serial.rasterize(t, tr).unwrap();
    }
    let (a, _) = build_grid(&spec, &tracks[..5], &traces[..5]).unwrap();
    let (b, _) = build_grid(&spec, &tracks[5..], &traces[5..]).unwrap();
    let mut merged = a.clone();
    merged.merge(&b).unwrap();
    assert_eq!(merged.blocks, serial.blocks);
    for (id, acc) in &merged.blocks {
        if let (Ok(x), Ok(y)) = (features(acc), features(&serial.blocks[id])) {
            for f in 0..floorplan::grid::FEATURE_COUNT {
                assert!((x.get(f) - y.get(f)).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn outline_is_the_visited_walkable_mask() {
    let (w, tracks, traces) = truth_tracks(10, 21);
    let spec = world_grid(&w, w.cell_size, 2.8).unwrap();
    let (grid, skipped) = build_grid(&spec, &tracks, &traces).unwrap();
    assert!(skipped.is_empty());
    let visited: BTreeSet<_> = tracks
        .iter()
        .flat_map(|t| t.points.iter())
        .filter_map(|p| w.cell_at(p.x, p.y))
        .filter(|c| w.is_walkable(*c))
        .map(|c| {
            let (x, y) = w.center(c);
            spec.block_of(x, y).unwrap()
        })
        .collect();
    assert_eq!(grid.outline(), visited);
}

#[test]
fn default_corpus_covers_the_floor() {
    let w = world();
    let truths: Vec<_> = gen_corpus(&w, 60, 42).unwrap().into_iter().map(|(_, g)| g).collect();
    let c = coverage(&w, &truths);
    assert!(c >= 0.90, "coverage {c:.3}");
}

#[test]
fn doubling_the_corpus_keeps_accuracy() {
    let w = world();
    let p = PipelineParams::default();
    let (traces, _): (Vec<_>, Vec<_>) = gen_corpus(&w, 120, 42).unwrap().into_iter().unzip();
    let tracks = reconstruct_all(&traces, &p).unwrap();
    let small = classify_at(&w, &tracks[..60], &traces[..60], 0.7, &p).unwrap().evaluation.accuracy;
    let large = classify_at(&w, &tracks, &traces, 0.7, &p).unwrap().evaluation.accuracy;
    assert!(large >= small - 0.05, "60 traces {small:.3}, 120 traces {large:.3}");
}

#[test]
fn block_rssi_falls_with_distance_from_each_ap() {
    let (w, tracks, traces) = truth_tracks(60, 42);
    let spec = world_grid(&w, 0.7, 2.8).unwrap();
    let db = build_fingerprint(tracks.iter().zip(&traces), &spec).unwrap();
    let labels = true_labels(&w, &spec);
    let sigma = w.spec.shadow_sigma_db;
    for ap in &w.aps {
        // rings of one block width around the AP; elevator blocks carry an
        // extra loss and are left out
        let mut rings: Vec<(f64, u64)> = Vec::new();
        for (id, print) in &db.blocks {
            if labels.get(id) == Some(&AreaClass::Elevator) {
                continue;
            }
            let Some(s) = print.wifi.get(&ap.bssid) else { continue };
            let ring = (dist(spec.centroid(*id), (ap.x, ap.y)) / spec.block_size) as usize;
            if rings.len() <= ring {
                rings.resize(ring + 1, (0.0, 0));
            }
            rings[ring].0 += s.sum as f64;
            rings[ring].1 += s.count;
        }
        let means: Vec<(f64, u64)> = rings.into_iter().filter(|r| r.1 > 0).map(|(s, n)| (s / n as f64, n)).collect();
        for pair in means.windows(2) {
            let ((m0, n0), (m1, n1)) = (pair[0], pair[1]);
            let tol = 2.0 * sigma * (1.0 / n0 as f64 + 1.0 / n1 as f64).sqrt();
            assert!(m1 <= m0 + tol, "{}: ring mean rose from {m0:.1} to {m1:.1} (tolerance {tol:.2})", ap.bssid);
        }
    }
}

#[test]
fn rendered_default_world_has_four_classes_and_background() {
    let w = world();
    let p = PipelineParams::default();
    let (traces, _): (Vec<_>, Vec<_>) = gen_corpus(&w, 60, 42).unwrap().into_iter().unzip();
    let tracks = reconstruct_all(&traces, &p).unwrap();
    let spec = world_grid(&w, 0.7, p.grid_margin).unwrap();
    let (mut grid, _) = build_grid(&spec, &tracks, &traces).unwrap();
    let exp = run_experiment(&labeled_blocks(&grid, &true_labels(&w, &spec)), 0.7, &p).unwrap();
    label_grid(&mut grid, exp.ensemble.as_ref().unwrap());
    let svg = render_svg(&grid, None).unwrap();
    assert_eq!(svg, render_svg(&grid, None).unwrap());
    assert_eq!(svg.matches(r#"class="block""#).count(), grid.blocks.len());
    let fills: BTreeSet<&str> = svg.split("fill=\"").skip(1).map(|s| &s[..s.find('"').unwrap()]).collect();
    assert!(fills.contains(BACKGROUND));
    assert_eq!(fills.len(), 5, "{fills:?}");
}
