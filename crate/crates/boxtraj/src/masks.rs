//! Mask rasterization over layer grids.
//!
//! Three mask families are produced from one box:
//!
//! * a Gaussian bump centered on the box, with per-axis standard deviation
//!   proportional to the box extent,
//! * 1D smooth step profiles (a product of two opposing sigmoids) per axis,
//!   whose transition width `kappa` is a fraction of the box diagonal,
//! * their elementwise product, the smooth box mask used by the
//!   differentiable edit, optionally rescaled to peak 1,
//! * and a hard binary mask (pixel center inside the box or not).
//!
//! Grids sample the unit square at pixel centers `((i + 0.5)/n)`. Because
//! `kappa` depends on the box extent, its derivative is part of the gradient
//! chain; [`box_mask_with_grad`] returns exact partials with respect to all
//! four box coordinates, including the peak-normalization quotient.

use crate::geometry::{center_index_range, pixel_center, BoxParams};

/// Parameters shared by the mask rasterizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    /// Gaussian standard deviation as a fraction of box width/height.
    pub sigma_scale: f64,
    /// Smooth-step transition width as a fraction of the box diagonal.
    pub lambda_edge: f64,
    /// Rescale the combined mask so its grid maximum is 1.
    pub normalize_kernel: bool,
    /// Lower bound on the transition width, so `lambda_edge = 0` sweeps
    /// degrade to a hard indicator instead of dividing by zero.
    pub kappa_floor: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            sigma_scale: 1.0 / 3.0,
            lambda_edge: 0.03,
            normalize_kernel: true,
            kappa_floor: 1e-6,
        }
    }
}

/// A dense `height x width` grid of scalars in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl MaskGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the maximum entry (first occurrence).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth-step transition width for a box: a fraction of its diagonal,
/// floored to keep the division well defined.
pub fn edge_width(b: &BoxParams, params: &MaskParams) -> f64 {
    let w = b.width();
    let h = b.height();
    (params.lambda_edge * (h * h + w * w).sqrt()).max(params.kappa_floor)
}

/// Gaussian bump evaluated at a point `(u, v)` of the unit square.
/// Peaks at exactly 1 on the box center.
pub fn gaussian_at(b: &BoxParams, params: &MaskParams, u: f64, v: f64) -> f64 {
    let (cx, cy) = b.center();
    let sx = params.sigma_scale * b.width();
    let sy = params.sigma_scale * b.height();
    let du = (u - cx) / sx;
    let dv = (v - cy) / sy;
    (-0.5 * (du * du + dv * dv)).exp()
}

/// 1D smooth box profile: rises at `lo`, falls at `hi`.
pub fn smooth_step_at(lo: f64, hi: f64, kappa: f64, x: f64) -> f64 {
    sigmoid((x - lo) / kappa) * sigmoid((hi - x) / kappa)
}

/// Rasterizes the Gaussian edit map.
pub fn gaussian_map(b: &BoxParams, height: usize, width: usize, params: &MaskParams) -> MaskGrid {
    let mut grid = MaskGrid::zeros(height, width);
    for y in 0..height {
        let v = pixel_center(y, height);
        for x in 0..width {
            let u = pixel_center(x, width);
            grid.set(y, x, gaussian_at(b, params, u, v));
        }
    }
    grid
}

/// Rasterizes the horizontal and vertical smooth step masks.
///
/// Both are returned as full grids; the horizontal mask is constant along
/// columns and the vertical one along rows.
pub fn smooth_step_mask(
    b: &BoxParams,
    height: usize,
    width: usize,
    params: &MaskParams,
) -> (MaskGrid, MaskGrid) {
    let kappa = edge_width(b, params);
    let mut mx = MaskGrid::zeros(height, width);
    let mut my = MaskGrid::zeros(height, width);
    let row: Vec<f64> = (0..width)
        .map(|x| smooth_step_at(b.left, b.right, kappa, pixel_center(x, width)))
        .collect();
    let col: Vec<f64> = (0..height)
        .map(|y| smooth_step_at(b.top, b.bottom, kappa, pixel_center(y, height)))
        .collect();
    for y in 0..height {
        for x in 0..width {
            mx.set(y, x, row[x]);
            my.set(y, x, col[y]);
        }
    }
    (mx, my)
}

// Peak values below this are left unnormalized: the box is so far from every
// pixel center that the quotient would be 0/0.
const PEAK_EPS: f64 = 1e-12;

/// Combined smooth box mask: Gaussian times both step profiles, optionally
/// rescaled to peak 1.
pub fn box_mask(b: &BoxParams, height: usize, width: usize, params: &MaskParams) -> MaskGrid {
    let mut grid = raw_box_mask(b, height, width, params);
    if params.normalize_kernel {
        let peak = grid.max();
        if peak > PEAK_EPS {
            for v in &mut grid.data {
                *v /= peak;
            }
        }
    }
    grid
}

// Shares the separable per-axis evaluation with [`box_mask_with_grad`] so
// the plain and gradient forward passes agree bitwise.
fn raw_box_mask(b: &BoxParams, height: usize, width: usize, params: &MaskParams) -> MaskGrid {
    let kappa = edge_width(b, params);
    let (cx, cy) = b.center();
    let sx = params.sigma_scale * b.width();
    let sy = params.sigma_scale * b.height();
    let row: Vec<f64> = (0..width)
        .map(|x| axis_value(pixel_center(x, width), b.left, b.right, cx, sx, kappa))
        .collect();
    let col: Vec<f64> = (0..height)
        .map(|y| axis_value(pixel_center(y, height), b.top, b.bottom, cy, sy, kappa))
        .collect();
    let mut grid = MaskGrid::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            grid.set(y, x, row[x] * col[y]);
        }
    }
    grid
}

#[inline]
fn axis_value(coord: f64, lo: f64, hi: f64, center: f64, sigma: f64, kappa: f64) -> f64 {
    let d = (coord - center) / sigma;
    let g = (-0.5 * d * d).exp();
    let step = sigmoid((coord - lo) / kappa) * sigmoid((hi - coord) / kappa);
    g * step
}

/// Hard mask: 1 where the pixel center lies inside `[l, r] x [t, b]`.
pub fn binary_mask(b: &BoxParams, height: usize, width: usize) -> MaskGrid {
    let mut grid = MaskGrid::zeros(height, width);
    let rows = center_index_range(b.top, b.bottom, height);
    let cols = center_index_range(b.left, b.right, width);
    if let (Some((y0, y1)), Some((x0, x1))) = (rows, cols) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                grid.set(y, x, 1.0);
            }
        }
    }
    grid
}

/// A smooth box mask together with its exact partial derivatives with
/// respect to the four box coordinates.
#[derive(Debug, Clone)]
pub struct MaskWithGrad {
    pub value: MaskGrid,
    /// Partials ordered `[d/d_left, d/d_top, d/d_right, d/d_bottom]`.
    pub grad: [MaskGrid; 4],
}

/// Evaluates [`box_mask`] and its gradient in one pass.
///
/// The chain includes `kappa`'s dependence on the box extent (each step
/// profile therefore depends on all four coordinates) and, when
/// normalization is on, the quotient rule through the peak pixel.
pub fn box_mask_with_grad(
    b: &BoxParams,
    height: usize,
    width: usize,
    params: &MaskParams,
) -> MaskWithGrad {
    let ss = params.sigma_scale;
    let w = b.width();
    let h = b.height();
    let (cx, cy) = b.center();
    let sx = ss * w;
    let sy = ss * h;

    let diag = (h * h + w * w).sqrt();
    let raw_kappa = params.lambda_edge * diag;
    let floored = raw_kappa <= params.kappa_floor;
    let kappa = if floored { params.kappa_floor } else { raw_kappa };
    // d(kappa)/d[l, t, r, b]; zero when the floor is active.
    let dk = if floored || diag == 0.0 {
        [0.0; 4]
    } else {
        let f = params.lambda_edge / diag;
        [-f * w, -f * h, f * w, f * h]
    };

    let mut value = MaskGrid::zeros(height, width);
    let mut grad = [
        MaskGrid::zeros(height, width),
        MaskGrid::zeros(height, width),
        MaskGrid::zeros(height, width),
        MaskGrid::zeros(height, width),
    ];

    // Per-axis profiles and their partials are separable; precompute rows
    // and columns, then combine.
    let x_parts: Vec<AxisPoint> = (0..width)
        .map(|x| {
            axis_point(
                pixel_center(x, width),
                b.left,
                b.right,
                cx,
                sx,
                ss,
                kappa,
                &dk,
                Axis::Horizontal,
            )
        })
        .collect();
    let y_parts: Vec<AxisPoint> = (0..height)
        .map(|y| {
            axis_point(
                pixel_center(y, height),
                b.top,
                b.bottom,
                cy,
                sy,
                ss,
                kappa,
                &dk,
                Axis::Vertical,
            )
        })
        .collect();

    for y in 0..height {
        let yp = &y_parts[y];
        for x in 0..width {
            let xp = &x_parts[x];
            let m = xp.value * yp.value;
            value.set(y, x, m);
            for k in 0..4 {
                grad[k].set(y, x, xp.grad[k] * yp.value + xp.value * yp.grad[k]);
            }
        }
    }

    if params.normalize_kernel {
        let peak = value.max();
        if peak > PEAK_EPS {
            let (py, px) = value.argmax();
            let peak_grad = [
                grad[0].get(py, px),
                grad[1].get(py, px),
                grad[2].get(py, px),
                grad[3].get(py, px),
            ];
            for y in 0..height {
                for x in 0..width {
                    let m = value.get(y, x);
                    for k in 0..4 {
                        let g = grad[k].get(y, x);
                        grad[k].set(y, x, (g * peak - m * peak_grad[k]) / (peak * peak));
                    }
                    value.set(y, x, m / peak);
                }
            }
        }
    }

    MaskWithGrad { value, grad }
}

enum Axis {
    Horizontal,
    Vertical,
}

/// One axis' contribution at a single coordinate: Gaussian times step
/// profile, with partials against all four box coordinates.
struct AxisPoint {
    value: f64,
    grad: [f64; 4],
}

#[allow(clippy::too_many_arguments)]
fn axis_point(
    coord: f64,
    lo: f64,
    hi: f64,
    center: f64,
    sigma: f64,
    sigma_scale: f64,
    kappa: f64,
    dkappa: &[f64; 4],
    axis: Axis,
) -> AxisPoint {
    // Coordinate slots in [l, t, r, b] owned by this axis.
    let (lo_slot, hi_slot) = match axis {
        Axis::Horizontal => (0usize, 2usize),
        Axis::Vertical => (1usize, 3usize),
    };

    let d = (coord - center) / sigma;
    let g = (-0.5 * d * d).exp();
    // Raising `lo` shifts the center toward +coord and narrows sigma;
    // raising `hi` shifts it the same way and widens sigma.
    let common = g * d / sigma;
    let dg_lo = common * (0.5 - d * sigma_scale);
    let dg_hi = common * (0.5 + d * sigma_scale);

    let a = (coord - lo) / kappa;
    let c = (hi - coord) / kappa;
    let s1 = sigmoid(a);
    let s2 = sigmoid(c);
    let s1p = s1 * (1.0 - s1);
    let s2p = s2 * (1.0 - s2);
    let step = s1 * s2;
    debug_assert_eq!(g * step, axis_value(coord, lo, hi, center, sigma, kappa));

    let mut grad = [0.0; 4];
    for k in 0..4 {
        // Argument partials: direct shift plus the kappa chain.
        let mut da = -a * dkappa[k] / kappa;
        let mut dc = -c * dkappa[k] / kappa;
        if k == lo_slot {
            da -= 1.0 / kappa;
        }
        if k == hi_slot {
            dc += 1.0 / kappa;
        }
        let dstep = s1p * s2 * da + s1 * s2p * dc;
        let dg = if k == lo_slot {
            dg_lo
        } else if k == hi_slot {
            dg_hi
        } else {
            0.0
        };
        grad[k] = dg * step + g * dstep;
    }

    AxisPoint {
        value: g * step,
        grad,
    }
}
