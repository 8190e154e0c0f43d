//! Doc-test harness for the book under `book/`.
//!
//! Each chapter is attached to an empty module as documentation, so
//! `cargo test --doc -p hemonet-book` compiles and runs every fenced Rust
//! snippet in the guide. A failing snippet names its chapter module, which
//! is usually enough to find the offending code block.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors-and-autograd.md")]
pub mod tensors_and_autograd {}

#[doc = include_str!("../../../book/src/convolution-arithmetic.md")]
pub mod convolution_arithmetic {}

#[doc = include_str!("../../../book/src/building-blocks.md")]
pub mod building_blocks {}

#[doc = include_str!("../../../book/src/architectures.md")]
pub mod architectures {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/data-pipeline.md")]
pub mod data_pipeline {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/ensembles.md")]
pub mod ensembles {}

#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
