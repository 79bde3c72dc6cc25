//! The guide in `book/` compiled as documentation, so `cargo test` runs
//! every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/differentiation.md")]
pub mod differentiation {}
#[doc = include_str!("../../../book/src/densities.md")]
pub mod densities {}
#[doc = include_str!("../../../book/src/objectives.md")]
pub mod objectives {}
#[doc = include_str!("../../../book/src/sequential.md")]
pub mod sequential {}
#[doc = include_str!("../../../book/src/simulators.md")]
pub mod simulators {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/oracles.md")]
pub mod oracles {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
