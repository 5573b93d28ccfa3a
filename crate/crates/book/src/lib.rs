//! The guide's chapters, included as documentation so that `cargo test`
//! compiles and runs every Rust snippet in them.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}

#[doc = include_str!("../../../book/src/layouts.md")]
pub mod layouts {}

#[doc = include_str!("../../../book/src/lowering.md")]
pub mod lowering {}

#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}

#[doc = include_str!("../../../book/src/cost.md")]
pub mod cost {}

#[doc = include_str!("../../../book/src/programs.md")]
pub mod programs {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
