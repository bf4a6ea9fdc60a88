//! Grayscale heatmaps as binary PGM (P5), with optional box overlays.

use super::IoError;
use crate::geometry::{center_index_range, BoxParams};
use crate::masks::MaskGrid;
use std::fs;
use std::path::Path;

/// Writes `grid` as an 8-bit PGM, mapping `[0, max]` linearly onto
/// `[0, 255]`. Each box in `overlays` is drawn as a value-inverted 1-pixel
/// rectangle.
pub fn render_heatmap(grid: &MaskGrid, path: &Path, overlays: &[BoxParams]) -> Result<(), IoError> {
    let max = grid.max();
    if !max.is_finite() {
        return Err(IoError::Invalid("non-finite grid".into()));
    }
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut pixels: Vec<u8> = grid
        .data
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
        .collect();

    for b in overlays {
        draw_inverted_rect(&mut pixels, grid.height, grid.width, b);
    }

    let mut bytes = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    bytes.extend_from_slice(&pixels);
    fs::write(path, bytes)?;
    Ok(())
}

fn draw_inverted_rect(pixels: &mut [u8], height: usize, width: usize, b: &BoxParams) {
    let rows = center_index_range(b.top, b.bottom, height);
    let cols = center_index_range(b.left, b.right, width);
    let (Some((y0, y1)), Some((x0, x1))) = (rows, cols) else {
        return;
    };
    let mut invert = |y: usize, x: usize| {
        let p = &mut pixels[y * width + x];
        *p = 255 - *p;
    };
    for x in x0..=x1 {
        invert(y0, x);
        if y1 != y0 {
            invert(y1, x);
        }
    }
    for y in (y0 + 1)..y1 {
        invert(y, x0);
        if x1 != x0 {
            invert(y, x1);
        }
    }
}
