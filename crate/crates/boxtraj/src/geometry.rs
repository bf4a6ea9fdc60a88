//! Box and trajectory arithmetic.
//!
//! Everything here works in normalized coordinates: a box is a fraction of
//! the canvas, so the same trajectory can be rasterized onto any layer grid.
//! Detector records arriving in pixels are normalized on ingestion using the
//! record's canvas size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default minimum box extent enforced by [`project_box`].
pub const DEFAULT_MIN_SIZE: f64 = 0.01;

/// Errors from trajectory curation.
#[derive(Debug, Error, PartialEq)]
pub enum CurationError {
    /// Fewer than two frames carry a detection; nothing to interpolate.
    #[error("fewer than two frames with a detection")]
    TooFewDetections,
    /// Consecutive-frame IoU dropped below the continuity threshold.
    #[error("consecutive-frame IoU {iou:.4} below 0.5 at frame {frame}")]
    DiscontinuousTrajectory { frame: usize, iou: f64 },
    /// No frame reaches the 10% width/height minimum.
    #[error("maximum box width {max_width:.4} or height {max_height:.4} below 0.10")]
    BoxTooSmall { max_width: f64, max_height: f64 },
    /// The trajectory is shorter than the requested window.
    #[error("trajectory length {len} shorter than window {window}")]
    TrajectoryTooShort { len: usize, window: usize },
    /// A detection record's frame index is out of range or not increasing.
    #[error("bad frame index {frame}: {reason}")]
    BadFrameIndex { frame: usize, reason: &'static str },
    /// A box violates the ordering invariants.
    #[error("invalid box ({left}, {top}, {right}, {bottom})")]
    InvalidBox {
        left: f64,
        top: f64,
        right: f64,
        bottom: f64,
    },
}

/// An axis-aligned box in normalized coordinates, `0 <= left < right <= 1`
/// and `0 <= top < bottom <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxParams {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BoxParams {
    /// Validates ordering and bounds.
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self, CurationError> {
        let b = Self {
            left,
            top,
            right,
            bottom,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(CurationError::InvalidBox {
                left,
                top,
                right,
                bottom,
            })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.left.is_finite()
            && self.top.is_finite()
            && self.right.is_finite()
            && self.bottom.is_finite()
            && 0.0 <= self.left
            && self.left < self.right
            && self.right <= 1.0
            && 0.0 <= self.top
            && self.top < self.bottom
            && self.bottom <= 1.0
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    /// Center `((left+right)/2, (top+bottom)/2)`.
    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.left + self.right),
            0.5 * (self.top + self.bottom),
        )
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Coordinates as `[left, top, right, bottom]`.
    pub fn coords(&self) -> [f64; 4] {
        [self.left, self.top, self.right, self.bottom]
    }
}

/// An ordered sequence of per-frame boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<BoxParams>,
}

impl Trajectory {
    pub fn new(frames: Vec<BoxParams>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Flattens to `[l0, t0, r0, b0, l1, ...]`, the optimization layout.
    pub fn to_flat(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|b| b.coords()).collect()
    }

    /// Rebuilds from the flat layout, projecting every frame to a valid box.
    pub fn from_flat_projected(flat: &[f64], min_size: f64) -> Self {
        let frames = flat
            .chunks_exact(4)
            .map(|c| project_box(c[0], c[1], c[2], c[3], min_size))
            .collect();
        Self { frames }
    }
}

/// One detected box with its confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoxParams,
    pub score: f64,
}

/// Detections for a single frame, already normalized to the unit canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: usize,
    pub boxes: Vec<ScoredBox>,
}

impl DetectionRecord {
    /// Normalizes pixel-space detections using the canvas size.
    pub fn from_pixels(
        frame_index: usize,
        boxes_px: &[(f64, f64, f64, f64, f64)],
        canvas: (u32, u32),
    ) -> Result<Self, CurationError> {
        let (w, h) = (canvas.0 as f64, canvas.1 as f64);
        let boxes = boxes_px
            .iter()
            .map(|&(l, t, r, b, score)| {
                Ok(ScoredBox {
                    bbox: BoxParams::new(l / w, t / h, r / w, b / h)?,
                    score,
                })
            })
            .collect::<Result<_, CurationError>>()?;
        Ok(Self { frame_index, boxes })
    }
}

/// Intersection-over-union of two valid boxes. Symmetric, in `[0, 1]`,
/// zero for disjoint boxes.
pub fn iou(a: &BoxParams, b: &BoxParams) -> f64 {
    let ix = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let iy = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Fills a detection stream out to `total_frames` boxes.
///
/// Frames with several detections keep the highest-scoring box. Gaps are
/// filled by per-coordinate linear interpolation between the nearest detected
/// neighbors; frames before the first or after the last detection hold the
/// nearest detected box constant.
pub fn interpolate_trajectory(
    records: &[DetectionRecord],
    total_frames: usize,
) -> Result<Trajectory, CurationError> {
    let mut last_index: Option<usize> = None;
    let mut detected: Vec<(usize, BoxParams)> = Vec::new();
    for rec in records {
        if let Some(prev) = last_index {
            if rec.frame_index <= prev {
                return Err(CurationError::BadFrameIndex {
                    frame: rec.frame_index,
                    reason: "frame indices must be strictly increasing",
                });
            }
        }
        last_index = Some(rec.frame_index);
        if rec.frame_index >= total_frames {
            return Err(CurationError::BadFrameIndex {
                frame: rec.frame_index,
                reason: "frame index past total frame count",
            });
        }
        let best = rec.boxes.iter().max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if let Some(best) = best {
            detected.push((rec.frame_index, best.bbox));
        }
    }
    if detected.len() < 2 {
        return Err(CurationError::TooFewDetections);
    }

    let mut frames = Vec::with_capacity(total_frames);
    let mut seg = 0; // index of the detected frame at or after the cursor
    for k in 0..total_frames {
        while seg + 1 < detected.len() && detected[seg + 1].0 <= k {
            seg += 1;
        }
        let (k0, b0) = detected[seg];
        let frame = if k <= k0 {
            // at or before this segment start (covers pre-first-detection)
            if seg == 0 || k == k0 {
                b0
            } else {
                unreachable!("segment advance keeps k0 <= k")
            }
        } else if seg + 1 < detected.len() {
            let (k1, b1) = detected[seg + 1];
            let alpha = (k - k0) as f64 / (k1 - k0) as f64;
            lerp_box(&b0, &b1, alpha)
        } else {
            b0 // past the last detection
        };
        frames.push(frame);
    }
    Ok(Trajectory::new(frames))
}

fn lerp_box(a: &BoxParams, b: &BoxParams, alpha: f64) -> BoxParams {
    let mix = |x: f64, y: f64| (1.0 - alpha) * x + alpha * y;
    BoxParams {
        left: mix(a.left, b.left),
        top: mix(a.top, b.top),
        right: mix(a.right, b.right),
        bottom: mix(a.bottom, b.bottom),
    }
}

/// Continuity threshold on consecutive-frame IoU.
pub const CONTINUITY_IOU: f64 = 0.5;
/// Minimum of the per-trajectory maximum box width and height.
pub const MIN_MAX_EXTENT: f64 = 0.10;

/// Applies the curation filters and samples a window of consecutive frames.
///
/// Rejection precedence is continuity, then size, then length. The window
/// start offset is drawn uniformly from the valid range with a ChaCha stream
/// seeded by `seed`, so results are reproducible.
pub fn filter_trajectory(
    traj: &Trajectory,
    window: usize,
    seed: u64,
) -> Result<Trajectory, CurationError> {
    use rand::Rng;
    use rand::SeedableRng;

    for (k, pair) in traj.frames.windows(2).enumerate() {
        let v = iou(&pair[0], &pair[1]);
        if v < CONTINUITY_IOU {
            return Err(CurationError::DiscontinuousTrajectory { frame: k + 1, iou: v });
        }
    }
    let max_width = traj
        .frames
        .iter()
        .map(BoxParams::width)
        .fold(0.0f64, f64::max);
    let max_height = traj
        .frames
        .iter()
        .map(BoxParams::height)
        .fold(0.0f64, f64::max);
    if max_width < MIN_MAX_EXTENT || max_height < MIN_MAX_EXTENT {
        return Err(CurationError::BoxTooSmall {
            max_width,
            max_height,
        });
    }
    if traj.len() < window || window == 0 {
        return Err(CurationError::TrajectoryTooShort {
            len: traj.len(),
            window,
        });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=traj.len() - window);
    Ok(Trajectory::new(
        traj.frames[start..start + window].to_vec(),
    ))
}

/// Clamps raw coordinates into `[0, 1]` and repairs ordering and minimum
/// size by expanding symmetrically about the center, nudged back inside the
/// canvas when the expansion would overrun it. Idempotent: the repair loop
/// runs to a bitwise fixpoint.
pub fn project_box(left: f64, top: f64, right: f64, bottom: f64, min_size: f64) -> BoxParams {
    let mut cur = [
        clamp01(left),
        clamp01(top),
        clamp01(right),
        clamp01(bottom),
    ];
    for _ in 0..8 {
        let next = project_step(cur, min_size);
        if next == cur {
            break;
        }
        cur = next;
    }
    BoxParams {
        left: cur[0],
        top: cur[1],
        right: cur[2],
        bottom: cur[3],
    }
}

fn project_step(c: [f64; 4], min_size: f64) -> [f64; 4] {
    let (l, r) = repair_axis(c[0], c[2], min_size);
    let (t, b) = repair_axis(c[1], c[3], min_size);
    [l, t, r, b]
}

fn repair_axis(lo: f64, hi: f64, min_size: f64) -> (f64, f64) {
    let (lo, hi) = (clamp01(lo), clamp01(hi));
    if hi - lo >= min_size {
        return (lo, hi);
    }
    let center = 0.5 * (lo + hi);
    let mut new_lo = center - 0.5 * min_size;
    let mut new_hi = center + 0.5 * min_size;
    if new_lo < 0.0 {
        new_hi -= new_lo;
        new_lo = 0.0;
    } else if new_hi > 1.0 {
        new_lo -= new_hi - 1.0;
        new_hi = 1.0;
    }
    (clamp01(new_lo), clamp01(new_hi))
}

fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        // NaN coordinates can only come from upstream numerical failure;
        // pin them so projection still yields a valid box.
        return 0.0;
    }
    x.clamp(0.0, 1.0)
}

/// A box scaled onto a grid, in grid units (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl GridBox {
    /// Inverse of [`box_to_grid`], up to float rounding.
    pub fn to_normalized(&self, grid_h: usize, grid_w: usize) -> BoxParams {
        let (w, h) = (grid_w as f64, grid_h as f64);
        BoxParams {
            left: self.left / w,
            top: self.top / h,
            right: self.right / w,
            bottom: self.bottom / h,
        }
    }
}

/// Scales a normalized box onto an `grid_h x grid_w` grid. Grid sample
/// points are pixel centers `(i + 0.5, j + 0.5)`.
pub fn box_to_grid(b: &BoxParams, grid_h: usize, grid_w: usize) -> GridBox {
    let (w, h) = (grid_w as f64, grid_h as f64);
    GridBox {
        left: b.left * w,
        top: b.top * h,
        right: b.right * w,
        bottom: b.bottom * h,
    }
}

/// Normalized coordinate of pixel center `i` on an axis with `n` pixels.
#[inline]
pub fn pixel_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// Inclusive pixel-index range whose centers fall inside `[lo, hi]`, or
/// `None` when no center does.
pub fn center_index_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    // (i + 0.5)/n >= lo  and  (i + 0.5)/n <= hi
    let first = (lo * n as f64 - 0.5).ceil().max(0.0) as usize;
    let last_f = (hi * n as f64 - 0.5).floor();
    if last_f < 0.0 {
        return None;
    }
    let last = (last_f as usize).min(n.saturating_sub(1));
    if first > last || first >= n {
        None
    } else {
        Some((first, last))
    }
}
