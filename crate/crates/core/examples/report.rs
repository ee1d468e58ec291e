//! Prints the plain-text report for the default configuration.
//!
//! cargo run --release --example report [seed]

use floorplan::report::{run_report, ReportConfig};

fn main() -> floorplan::Result<()> {
    let mut cfg = ReportConfig::default();
    if let Some(seed) = std::env::args().nth(1) {
        cfg.seed = seed.parse().expect("seed must be an integer");
    }
    print!("{}", run_report(&cfg)?.to_text());
    Ok(())
}
