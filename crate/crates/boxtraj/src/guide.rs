//! The book's chapters, included as rustdoc so `cargo test --doc` runs
//! every code block in `book/src/` against the current API. A drifting
//! snippet fails the build instead of rotting in the guide.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/boxes-and-trajectories.md")]
pub mod boxes_and_trajectories {}

#[doc = include_str!("../../../book/src/smooth-masks.md")]
pub mod smooth_masks {}

#[doc = include_str!("../../../book/src/editing-attention.md")]
pub mod editing_attention {}

#[doc = include_str!("../../../book/src/toy-backbone.md")]
pub mod toy_backbone {}

#[doc = include_str!("../../../book/src/objective.md")]
pub mod objective_chapter {}

#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}

#[doc = include_str!("../../../book/src/optimization-loop.md")]
pub mod optimization_loop {}

#[doc = include_str!("../../../book/src/curating-trajectories.md")]
pub mod curating_trajectories {}

#[doc = include_str!("../../../book/src/sweeps.md")]
pub mod sweeps {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
