//! Guide chapters, included so their snippets run as doc-tests.

#[doc = include_str!("../../../book/src/paths.md")]
pub mod paths {}

#[doc = include_str!("../../../book/src/tracking.md")]
pub mod tracking {}

#[doc = include_str!("../../../book/src/band.md")]
pub mod band {}

#[doc = include_str!("../../../book/src/gains.md")]
pub mod gains {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
