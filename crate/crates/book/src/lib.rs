//! Guide listings. Each chapter of `book/src` is included as a module doc
//! so `cargo test` runs its code blocks.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/traces.md")]
pub mod traces {}
#[doc = include_str!("../../../book/src/steps.md")]
pub mod steps {}
#[doc = include_str!("../../../book/src/reckoning.md")]
pub mod reckoning {}
#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}
#[doc = include_str!("../../../book/src/classification.md")]
pub mod classification {}
#[doc = include_str!("../../../book/src/fingerprint.md")]
pub mod fingerprint {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
