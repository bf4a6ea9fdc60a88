//! Attention-map edits: the discrete replacement edit and its smooth,
//! differentiable counterpart.
//!
//! Both edits weaken attention outside the control box by a multiplicative
//! factor and add a strengthening bump inside it. The discrete variant
//! derives every mask from the box *rasterized to pixel indices*, so its
//! output is piecewise constant in the box coordinates: central finite
//! differences are exactly zero whenever the step does not move a box edge
//! across a pixel center. The smooth variant swaps the hard masks for the
//! combined smooth box mask and is differentiable everywhere.
//!
//! Edits touch only the leading `ceil(channel_fraction * C)` channels and
//! only tracked token slices; everything else passes through bit-identically.

use crate::field::FieldTensor;
use crate::geometry::{center_index_range, BoxParams};
use crate::masks::{box_mask, gaussian_at, MaskGrid, MaskParams};

/// Weakening/strengthening factors and the edited channel fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditParams {
    /// Multiplier applied to attention outside the box.
    pub weaken: f64,
    /// Additive boost applied inside the box.
    pub strengthen: f64,
    /// Leading fraction of channels that receive the edit.
    pub channel_fraction: f64,
}

impl Default for EditParams {
    fn default() -> Self {
        Self {
            weaken: 0.001,
            strengthen: 0.15,
            channel_fraction: 0.5,
        }
    }
}

impl EditParams {
    /// Identity configuration: `weaken = 1`, `strengthen = 0`.
    pub fn identity() -> Self {
        Self {
            weaken: 1.0,
            strengthen: 0.0,
            channel_fraction: 1.0,
        }
    }

    /// Number of edited channels out of `channels`.
    pub fn edited_channels(&self, channels: usize) -> usize {
        ((self.channel_fraction * channels as f64).ceil() as usize).min(channels)
    }
}

/// Which edit to apply while running the attention stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMode {
    /// Pass attention through untouched.
    Identity,
    /// Discrete replacement edit on rasterized masks.
    Baseline,
    /// Smooth differentiable edit.
    Differentiable,
}

/// Applies the edit selected by `mode` to a whole field. `boxes` holds one
/// control box per frame; `tracked` is the number of leading token slices
/// that receive the edit.
pub fn apply_edit(
    mode: EditMode,
    field: &FieldTensor,
    boxes: &[BoxParams],
    edit: &EditParams,
    mask_params: &MaskParams,
    tracked: usize,
) -> FieldTensor {
    match mode {
        EditMode::Identity => field.clone(),
        EditMode::Baseline => edit_baseline(field, boxes, edit, mask_params, tracked),
        EditMode::Differentiable => edit_differentiable(field, boxes, edit, mask_params, tracked),
    }
}

/// Discrete replacement edit.
///
/// The binary mask selects pixel centers inside the box. The strengthening
/// Gaussian is computed from the *snapped* box (the cell-aligned hull of
/// those pixels), so the whole edit depends on the box only through integer
/// index bounds.
pub fn edit_baseline(
    field: &FieldTensor,
    boxes: &[BoxParams],
    edit: &EditParams,
    mask_params: &MaskParams,
    tracked: usize,
) -> FieldTensor {
    assert_eq!(boxes.len(), field.frames, "one box per frame");
    let edited = edit.edited_channels(field.channels);
    let tracked = tracked.min(field.tokens);
    let mut out = field.clone();
    for (f, b) in boxes.iter().enumerate() {
        let raster = rasterize_box(b, field.height, field.width);
        for c in 0..edited {
            for t in 0..tracked {
                match &raster {
                    None => {
                        // No pixel center inside: pure weakening everywhere.
                        for y in 0..field.height {
                            for x in 0..field.width {
                                let v = field.get(c, f, y, x, t) * edit.weaken;
                                out.set(c, f, y, x, t, v);
                            }
                        }
                    }
                    Some(r) => {
                        for y in 0..field.height {
                            for x in 0..field.width {
                                let a = field.get(c, f, y, x, t);
                                let inside = r.contains(y, x);
                                let v = if inside {
                                    a + edit.strengthen * r.gaussian(y, x, field.height, field.width, mask_params)
                                } else {
                                    a * edit.weaken
                                };
                                out.set(c, f, y, x, t, v);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Pixel-index footprint of a box plus the snapped geometry feeding the
/// discrete Gaussian.
struct RasterBox {
    rows: (usize, usize),
    cols: (usize, usize),
    snapped: BoxParams,
}

impl RasterBox {
    fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.rows.0 && y <= self.rows.1 && x >= self.cols.0 && x <= self.cols.1
    }

    fn gaussian(&self, y: usize, x: usize, height: usize, width: usize, params: &MaskParams) -> f64 {
        let u = crate::geometry::pixel_center(x, width);
        let v = crate::geometry::pixel_center(y, height);
        gaussian_at(&self.snapped, params, u, v)
    }
}

fn rasterize_box(b: &BoxParams, height: usize, width: usize) -> Option<RasterBox> {
    let rows = center_index_range(b.top, b.bottom, height)?;
    let cols = center_index_range(b.left, b.right, width)?;
    let snapped = BoxParams {
        left: cols.0 as f64 / width as f64,
        right: (cols.1 + 1) as f64 / width as f64,
        top: rows.0 as f64 / height as f64,
        bottom: (rows.1 + 1) as f64 / height as f64,
    };
    Some(RasterBox { rows, cols, snapped })
}

/// Smooth differentiable edit: `A * (w (1 - M) + M) + s * M` with the
/// combined smooth box mask `M`.
pub fn edit_differentiable(
    field: &FieldTensor,
    boxes: &[BoxParams],
    edit: &EditParams,
    mask_params: &MaskParams,
    tracked: usize,
) -> FieldTensor {
    assert_eq!(boxes.len(), field.frames, "one box per frame");
    let masks: Vec<MaskGrid> = boxes
        .iter()
        .map(|b| box_mask(b, field.height, field.width, mask_params))
        .collect();
    edit_differentiable_with_masks(field, &masks, edit, tracked)
}

/// Same as [`edit_differentiable`] but with precomputed per-frame masks,
/// which is how the gradient engine drives it.
pub fn edit_differentiable_with_masks(
    field: &FieldTensor,
    masks: &[MaskGrid],
    edit: &EditParams,
    tracked: usize,
) -> FieldTensor {
    assert_eq!(masks.len(), field.frames, "one mask per frame");
    let edited = edit.edited_channels(field.channels);
    let tracked = tracked.min(field.tokens);
    let mut out = field.clone();
    for f in 0..field.frames {
        let mask = &masks[f];
        for c in 0..edited {
            for t in 0..tracked {
                for y in 0..field.height {
                    for x in 0..field.width {
                        let a = field.get(c, f, y, x, t);
                        let m = mask.get(y, x);
                        out.set(c, f, y, x, t, edit_value(a, m, edit));
                    }
                }
            }
        }
    }
    out
}

/// The scalar edit applied at one pixel given mask value `m`.
#[inline]
pub fn edit_value(a: f64, m: f64, edit: &EditParams) -> f64 {
    a * (edit.weaken * (1.0 - m) + m) + edit.strengthen * m
}

/// Partial of [`edit_value`] with respect to the attention input.
#[inline]
pub fn edit_value_da(m: f64, edit: &EditParams) -> f64 {
    edit.weaken * (1.0 - m) + m
}

/// Partial of [`edit_value`] with respect to the mask value.
#[inline]
pub fn edit_value_dm(a: f64, edit: &EditParams) -> f64 {
    a * (1.0 - edit.weaken) + edit.strengthen
}
