//! Crowd-sourced indoor floor plan construction.
//!
//! The crate turns smartphone sensor traces (accelerometer, compass, WiFi and
//! GSM scans, GPS fixes) into:
//!
//! * per-user tracks, via a finite-state-machine step detector and
//!   step-and-heading dead reckoning ([`steps`], [`reckoning`]);
//! * a block grid whose cells are classified as office, corridor, elevator
//!   or stairs by a bagged C4.5 ensemble ([`grid`], [`classify`]);
//! * an RSSI fingerprint database that answers location queries
//!   ([`fingerprint`]).
//!
//! A synthetic world simulator ([`sim`]) provides ground truth for every
//! stage, and [`report`] runs the whole pipeline end to end.
//!
//! ```
//! use floorplan::steps::{detect_steps_fsm, FsmParams};
//! use floorplan::sim::{self, WalkParams, WorldSpec};
//! use floorplan::trace::TraceParams;
//!
//! let world = sim::gen_world(&WorldSpec::default()).unwrap();
//! let walk = WalkParams { n_steps: Some(12), ..WalkParams::default() };
//! let (trace, truth) = sim::gen_trace(&world, &walk).unwrap();
//! let steps = detect_steps_fsm(&trace, &FsmParams::default(), &TraceParams::default()).unwrap();
//! assert_eq!(truth.step_count, 12);
//! assert_eq!(steps.len(), 12);
//! ```

pub mod classify;
pub mod error;
pub mod fingerprint;
pub mod geom;
pub mod grid;
pub mod pipeline;
pub mod reckoning;
pub mod render;
pub mod report;
pub mod sim;
pub mod steps;
pub mod trace;

pub use error::{Error, Result};
