//! Differentiable bounding-box control for attention fields.
//!
//! This crate adjusts user-provided per-frame bounding boxes so they align
//! with the internal cross-attention structure of a generator, exercised
//! here against a deterministic toy attention stack. The pieces:
//!
//! * [`geometry`] — boxes, trajectories, IoU, curation filters, projection;
//! * [`masks`] — Gaussian, smooth-step, combined and binary masks;
//! * [`editing`] — discrete and differentiable attention edits;
//! * [`backbone`] — a toy multi-layer cross-attention stack;
//! * [`objective`] — attention-maximization, balancing and deviation losses;
//! * [`grad`] — exact reverse-mode gradients plus a finite-difference oracle;
//! * [`optimizer`] — Adam on box parameters and the interleaved loop;
//! * [`evaluation`] — the closest-box mIoU metric and sweep harness;
//! * [`io`] — file formats, run configuration, heatmaps, CSV reports.

// Index-based loops are the clearer idiom for the strided grid math here.
#![allow(clippy::needless_range_loop)]

pub mod backbone;
pub mod editing;
pub mod evaluation;
pub mod field;
pub mod geometry;
pub mod grad;
pub mod guide;
pub mod io;
pub mod masks;
pub mod objective;
pub mod optimizer;
