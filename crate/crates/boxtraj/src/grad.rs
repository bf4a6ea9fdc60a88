//! Exact differentiation of the total loss with respect to all box
//! coordinates, an independent finite-difference oracle, and a grad-check
//! harness.
//!
//! The pipeline graph is static and shallow (masks -> edit -> stack ->
//! loss), so the adjoints are hand-chained layer by layer instead of going
//! through a general tape. The recorded pre-edit fields from a stack run
//! are all the state the backward pass needs: the contraction, linear map
//! and pooling are linear, and the softmax backward only reads its own
//! output. Projection is excluded from differentiation; the optimizer
//! projects after each update.

use crate::backbone::{SceneSpec, StackRun, ToyStack};
use crate::editing::{edit_value_da, edit_value_dm, EditMode, EditParams};
use crate::field::FieldTensor;
use crate::geometry::{BoxParams, Trajectory};
use crate::masks::{binary_mask, box_mask, box_mask_with_grad, MaskGrid, MaskParams};
use crate::objective::{
    attention_losses, loss_reg, loss_total, LossBreakdown, LossWeights, MaskSource,
    ObjectiveError,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("gradient has a non-finite entry at frame {frame}, coordinate {coord}")]
    NonFiniteGradient { frame: usize, coord: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Backbone(#[from] crate::backbone::BackboneError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Everything one loss evaluation needs besides the boxes being optimized.
#[derive(Clone)]
pub struct PipelineState<'a> {
    pub stack: &'a ToyStack,
    pub scene: &'a SceneSpec,
    pub user: &'a Trajectory,
    pub edit_params: EditParams,
    pub mask_params: MaskParams,
    pub weights: LossWeights,
    /// 1-based denoise timestep driving the synthetic noise level.
    pub timestep: usize,
}

/// Gradient of the total loss: one 4-vector per frame, ordered
/// `[d/d_left, d/d_top, d/d_right, d/d_bottom]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub per_frame: Vec<[f64; 4]>,
}

impl GradVector {
    pub fn zeros(frames: usize) -> Self {
        Self {
            per_frame: vec![[0.0; 4]; frames],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.per_frame.iter().flatten().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.per_frame
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Loss masks for every contributing layer and frame.
///
/// The user anchor is a frozen binary mask. The current-box anchor is
/// rasterized with the smooth box mask instead: the anchor then moves
/// differentiably with the box, so the attention terms can feel content
/// beyond the frozen footprint. (The toy stack has no spatial token mixing,
/// so a hard current-box mask would only change at pixel-center crossings
/// and every smooth branch of the landscape would be anchor-frozen.)
fn loss_masks(
    state: &PipelineState<'_>,
    current: &Trajectory,
    run: &StackRun,
) -> Vec<Vec<MaskGrid>> {
    run.next_layer_fields()
        .map(|(_, field)| match state.weights.mask_source {
            MaskSource::UserBox => state
                .user
                .frames
                .iter()
                .map(|b| binary_mask(b, field.height, field.width))
                .collect(),
            MaskSource::CurrentBox => current
                .frames
                .iter()
                .map(|b| box_mask(b, field.height, field.width, &state.mask_params))
                .collect(),
        })
        .collect()
}

fn breakdown_from_run(
    state: &PipelineState<'_>,
    current: &Trajectory,
    run: &StackRun,
) -> Result<LossBreakdown, GradError> {
    let next_fields: Vec<(usize, &FieldTensor)> = run.next_layer_fields().collect();
    let masks = loss_masks(state, current, run);
    let attention = attention_losses(&next_fields, &masks, &state.weights.token_set)?;
    let reg = loss_reg(current, state.user)?;
    Ok(loss_total(attention, reg, &state.weights))
}

/// Runs the pipeline with the given edit and returns the loss breakdown.
pub fn eval_loss(
    state: &PipelineState<'_>,
    current: &Trajectory,
    mode: EditMode,
) -> Result<LossBreakdown, GradError> {
    let run = state.stack.run_stack(
        state.scene,
        current,
        mode,
        state.timestep,
        &state.edit_params,
        &state.mask_params,
    )?;
    breakdown_from_run(state, current, &run)
}

/// Total loss and its exact gradient with respect to all `4F` box
/// coordinates, through the differentiable edit.
pub fn grad_total(
    state: &PipelineState<'_>,
    current: &Trajectory,
) -> Result<(LossBreakdown, GradVector), GradError> {
    let stack = state.stack;
    let run = stack.run_stack(
        state.scene,
        current,
        EditMode::Differentiable,
        state.timestep,
        &state.edit_params,
        &state.mask_params,
    )?;
    let masks = loss_masks(state, current, &run);
    let next_fields: Vec<(usize, &FieldTensor)> = run.next_layer_fields().collect();
    let attention = attention_losses(&next_fields, &masks, &state.weights.token_set)?;
    let reg = loss_reg(current, state.user)?;
    let breakdown = loss_total(attention, reg, &state.weights);

    let frames = current.len();
    let layer_count = run.layers.len();
    let n_slices = breakdown.slices.len() as f64;
    let mut grad = GradVector::zeros(frames);

    // Loss gradient with respect to each contributing layer's field. The
    // user-anchored binary masks are constants; the current-box smooth
    // masks move with the box, and that motion is accumulated into the box
    // gradient below.
    let mut loss_grads: Vec<Option<FieldTensor>> = vec![None; layer_count];
    for (pos, (layer, field)) in next_fields.iter().enumerate() {
        let mut g = FieldTensor::zeros(
            field.channels,
            field.frames,
            field.height,
            field.width,
            field.tokens,
        );
        for f in 0..field.frames {
            let slice = breakdown
                .slices
                .iter()
                .find(|s| s.frame == f && s.layer == *layer)
                .expect("slice recorded for every (frame, layer)");
            let r = slice.inside_fraction;
            let q = 1.0 - r;
            let mask = &masks[pos][f];
            // d/dA of [(1-r)^2 + lambda_neg (1-q)^2] / n_slices
            let attn_coeff = -2.0 * (1.0 - r) / (slice.mass * n_slices);
            let neg_coeff = -2.0 * state.weights.lambda_neg * (1.0 - q) / (slice.mass * n_slices);
            for c in 0..field.channels {
                for y in 0..field.height {
                    for x in 0..field.width {
                        let m = mask.get(y, x);
                        let v = attn_coeff * (m - r) + neg_coeff * ((1.0 - m) - q);
                        for &t in &state.weights.token_set {
                            g.set(c, f, y, x, t, v);
                        }
                    }
                }
            }
        }
        loss_grads[*layer] = Some(g);
    }

    // Anchor-motion path: with current-box masks, each slice's ratio also
    // changes because the mask itself moves with the box.
    if state.weights.mask_source == MaskSource::CurrentBox {
        for (layer, field) in &next_fields {
            for (f, b) in current.frames.iter().enumerate() {
                let slice = breakdown
                    .slices
                    .iter()
                    .find(|s| s.frame == f && s.layer == *layer)
                    .expect("slice recorded for every (frame, layer)");
                let r = slice.inside_fraction;
                let q = 1.0 - r;
                let coeff = (-2.0 * (1.0 - r) + 2.0 * state.weights.lambda_neg * (1.0 - q))
                    / (slice.mass * n_slices);
                let mask = box_mask_with_grad(b, field.height, field.width, &state.mask_params);
                let mut acc = [0.0f64; 4];
                for y in 0..field.height {
                    for x in 0..field.width {
                        let mut mass_here = 0.0;
                        for c in 0..field.channels {
                            for &t in &state.weights.token_set {
                                mass_here += field.get(c, f, y, x, t);
                            }
                        }
                        let d = coeff * mass_here;
                        for k in 0..4 {
                            acc[k] += d * mask.grad[k].get(y, x);
                        }
                    }
                }
                for k in 0..4 {
                    grad.per_frame[f][k] += acc[k];
                }
            }
        }
    }

    // Reverse sweep: start at the deepest layer and walk the transitions
    // back, folding in each layer's own loss gradient and the edit adjoint.
    let mut g_field = loss_grads[layer_count - 1]
        .take()
        .expect("deepest layer contributes to the loss");
    for l in (0..layer_count - 1).rev() {
        let g_edited = backward_transition(stack, l, &run.layers[l + 1].pre_edit, &g_field);
        let mut g_pre = backward_edit(state, current, &run.layers[l].pre_edit, &g_edited, &mut grad, l);
        if let Some(lg) = loss_grads[l].take() {
            for (a, b) in g_pre.data.iter_mut().zip(&lg.data) {
                *a += b;
            }
        }
        g_field = g_pre;
    }
    // g_field now holds dL/dA[0]; the synthetic input is constant in the
    // boxes, so nothing further flows from it.

    // Deviation penalty: mean over frames of the squared 4-vector distance.
    let reg_scale = 2.0 * state.weights.lambda_reg / frames as f64;
    for f in 0..frames {
        let cur = current.frames[f].coords();
        let usr = state.user.frames[f].coords();
        for k in 0..4 {
            grad.per_frame[f][k] += reg_scale * (cur[k] - usr[k]);
        }
    }

    for (f, g) in grad.per_frame.iter().enumerate() {
        for (k, v) in g.iter().enumerate() {
            if !v.is_finite() {
                return Err(GradError::NonFiniteGradient { frame: f, coord: k });
            }
        }
    }
    Ok((breakdown, grad))
}

/// Adjoint of one attention block: from the gradient at `A[l+1]` to the
/// gradient at the edited field feeding transition `l`.
fn backward_transition(
    stack: &ToyStack,
    l: usize,
    a_next: &FieldTensor,
    g_next: &FieldTensor,
) -> FieldTensor {
    let spec = stack.spec();
    let cur = spec.ladder[l];
    let next = spec.ladder[l + 1];
    let dim = stack.tokens();
    let scale = stack.logit_scale(l);
    let values = stack.layer_values(l);
    let keys = stack.layer_values(l + 1);
    let map = stack.transition_map(l);
    let frames = a_next.frames;

    let mut g_edited = FieldTensor::zeros(cur.channels, frames, cur.height, cur.width, dim);
    let mut g_mixed = vec![0.0f64; cur.height * cur.width * dim];
    let mut g_logits = vec![0.0f64; dim];

    for c_out in 0..next.channels {
        let c_in = stack.channel_source(l, c_out);
        for f in 0..frames {
            g_mixed.iter_mut().for_each(|v| *v = 0.0);
            for y2 in 0..next.height {
                for x2 in 0..next.width {
                    // softmax backward, reading only its own output
                    let mut dot = 0.0;
                    for t in 0..dim {
                        dot += g_next.get(c_out, f, y2, x2, t) * a_next.get(c_out, f, y2, x2, t);
                    }
                    for (t, slot) in g_logits.iter_mut().enumerate() {
                        *slot = a_next.get(c_out, f, y2, x2, t)
                            * (g_next.get(c_out, f, y2, x2, t) - dot);
                    }
                    // logits -> pooled features -> the four source pixels
                    for e in 0..dim {
                        let mut gp = 0.0;
                        for (t, &gl) in g_logits.iter().enumerate() {
                            gp += gl * keys.get(t, e);
                        }
                        gp *= scale * 0.25;
                        g_mixed[((2 * y2) * cur.width + 2 * x2) * dim + e] += gp;
                        g_mixed[((2 * y2) * cur.width + 2 * x2 + 1) * dim + e] += gp;
                        g_mixed[((2 * y2 + 1) * cur.width + 2 * x2) * dim + e] += gp;
                        g_mixed[((2 * y2 + 1) * cur.width + 2 * x2 + 1) * dim + e] += gp;
                    }
                }
            }
            // mixed = feat . map, feat = A~ . values
            for y in 0..cur.height {
                for x in 0..cur.width {
                    let base = (y * cur.width + x) * dim;
                    for t in 0..dim {
                        let mut acc = 0.0;
                        for d in 0..dim {
                            let mut g_feat = 0.0;
                            for e in 0..dim {
                                g_feat += g_mixed[base + e] * map.get(d, e);
                            }
                            acc += g_feat * values.get(t, d);
                        }
                        let i = g_edited.idx(c_in, f, y, x, t);
                        g_edited.data[i] += acc;
                    }
                }
            }
        }
    }
    g_edited
}

/// Adjoint of the differentiable edit at layer `l`: propagates to the
/// pre-edit field and accumulates the box-coordinate gradient through the
/// mask partials.
fn backward_edit(
    state: &PipelineState<'_>,
    current: &Trajectory,
    a_pre: &FieldTensor,
    g_edited: &FieldTensor,
    grad: &mut GradVector,
    _layer: usize,
) -> FieldTensor {
    let edit = &state.edit_params;
    let edited_channels = edit.edited_channels(a_pre.channels);
    let tracked = state.stack.spec().tracked_tokens.min(a_pre.tokens);
    let mut g_pre = g_edited.clone();

    for (f, b) in current.frames.iter().enumerate() {
        let mask = box_mask_with_grad(b, a_pre.height, a_pre.width, &state.mask_params);
        let mut acc = [0.0f64; 4];
        for c in 0..edited_channels {
            for y in 0..a_pre.height {
                for x in 0..a_pre.width {
                    let m = mask.value.get(y, x);
                    let da = edit_value_da(m, edit);
                    for t in 0..tracked {
                        let g = g_edited.get(c, f, y, x, t);
                        let i = g_pre.idx(c, f, y, x, t);
                        g_pre.data[i] = g * da;
                        let dm = g * edit_value_dm(a_pre.get(c, f, y, x, t), edit);
                        for k in 0..4 {
                            acc[k] += dm * mask.grad[k].get(y, x);
                        }
                    }
                }
            }
        }
        for k in 0..4 {
            grad.per_frame[f][k] += acc[k];
        }
    }
    g_pre
}

/// Central finite differences of the full pipeline loss, `2 * 4F`
/// evaluations. The oracle the analytic gradient is checked against.
pub fn fd_gradient(
    state: &PipelineState<'_>,
    current: &Trajectory,
    mode: EditMode,
    step: f64,
) -> Result<GradVector, GradError> {
    fd_gradient_of(state, current, mode, step, |b| b.total)
}

/// Finite differences of any scalar read off the loss breakdown.
pub fn fd_gradient_of(
    state: &PipelineState<'_>,
    current: &Trajectory,
    mode: EditMode,
    step: f64,
    select: impl Fn(&LossBreakdown) -> f64,
) -> Result<GradVector, GradError> {
    if step.is_nan() || step <= 0.0 {
        return Err(GradError::InvalidStep(step));
    }
    let frames = current.len();
    let mut grad = GradVector::zeros(frames);
    let flat = current.to_flat();
    for i in 0..4 * frames {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += step;
        minus[i] -= step;
        let l_plus = select(&eval_loss(state, &unchecked_trajectory(&plus), mode)?);
        let l_minus = select(&eval_loss(state, &unchecked_trajectory(&minus), mode)?);
        grad.per_frame[i / 4][i % 4] = (l_plus - l_minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Builds a trajectory without validation or projection: the probe points
/// of the finite-difference stencil must not be snapped back.
fn unchecked_trajectory(flat: &[f64]) -> Trajectory {
    Trajectory::new(
        flat.chunks_exact(4)
            .map(|c| BoxParams {
                left: c[0],
                top: c[1],
                right: c[2],
                bottom: c[3],
            })
            .collect(),
    )
}

/// Relative error used throughout the grad checks.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Grad-check configuration.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub trials: usize,
    /// Pass bar on the 95th-percentile relative error.
    pub tolerance: f64,
    pub fd_step: f64,
    pub seed: u64,
    /// Edit used by the pipeline under test. With the discrete baseline the
    /// comparison is expected to fail: its finite differences vanish while
    /// the analytic gradient of the smooth edit does not.
    pub edit_mode: EditMode,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            tolerance: 1e-3,
            fd_step: 1e-5,
            seed: 0,
            edit_mode: EditMode::Differentiable,
        }
    }
}

/// One compared coordinate.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckRow {
    pub trial: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a grad-check run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub p95: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the configuration documents a known-dead gradient path.
    pub expected_fail: bool,
    pub wall: std::time::Duration,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        format!(
            "gradcheck: {} comparisons, p95 rel err {:.3e} vs tolerance {:.1e} -> {}{}",
            self.rows.len(),
            self.p95,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" },
            if self.expected_fail { " (expected)" } else { "" },
        )
    }
}

/// Samples random boxes, scenes, seeds and edge widths, and compares the
/// analytic gradient against central finite differences per coordinate.
pub fn gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport, GradError> {
    use crate::backbone::{BackboneSpec, LayerSpec};

    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();

    for trial in 0..config.trials {
        let spec = BackboneSpec {
            ladder: vec![
                LayerSpec::new(40, 40, 8),
                LayerSpec::new(20, 20, 8),
                LayerSpec::new(10, 10, 8),
                LayerSpec::new(5, 5, 8),
            ],
            tracked_tokens: 1,
            seed: rng.random::<u64>(),
            denoise_steps: 40,
            edit_steps: 5,
        };
        let stack = spec.build()?;
        let frames = 1 + (trial % 2); // alternate 1- and 2-frame cases
        let scene = SceneSpec::linear(
            (rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)),
            (rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)),
            (rng.random_range(0.06..0.15), rng.random_range(0.06..0.15)),
            frames,
            rng.random_range(0.02..0.15),
            rng.random::<u64>(),
        );
        let sample_box = |rng: &mut ChaCha8Rng| {
            let w = rng.random_range(0.18..0.45);
            let h = rng.random_range(0.18..0.45);
            let l = rng.random_range(0.02..0.96 - w);
            let t = rng.random_range(0.02..0.96 - h);
            BoxParams::new(l, t, l + w, t + h).unwrap()
        };
        let current = Trajectory::new((0..frames).map(|_| sample_box(&mut rng)).collect());
        let user = Trajectory::new(
            current
                .frames
                .iter()
                .map(|b| {
                    let dx = rng.random_range(-0.02..0.02);
                    let dy = rng.random_range(-0.02..0.02);
                    BoxParams {
                        left: b.left + dx,
                        top: b.top + dy,
                        right: b.right + dx,
                        bottom: b.bottom + dy,
                    }
                })
                .collect(),
        );
        // log-uniform edge strength across the sweep range
        let lambda_edge = 10f64.powf(rng.random_range(-3.0..-1.0));
        let state = PipelineState {
            stack: &stack,
            scene: &scene,
            user: &user,
            edit_params: EditParams::default(),
            mask_params: MaskParams {
                lambda_edge,
                normalize_kernel: rng.random::<bool>(),
                ..Default::default()
            },
            weights: LossWeights::default(),
            timestep: 1 + trial % 5,
        };

        let (_, analytic) = grad_total(&state, &current)?;
        let numeric = fd_gradient(&state, &current, config.edit_mode, config.fd_step)?;
        let (af, nf) = (analytic.flat(), numeric.flat());
        for (i, (a, n)) in af.iter().zip(&nf).enumerate() {
            rows.push(GradCheckRow {
                trial,
                coordinate: i,
                analytic: *a,
                numeric: *n,
                rel_err: rel_err(*a, *n),
            });
        }
    }

    let mut errs: Vec<f64> = rows.iter().map(|r| r.rel_err).collect();
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((errs.len() as f64 * 0.95).ceil() as usize).saturating_sub(1);
    let p95 = errs.get(idx).copied().unwrap_or(f64::NAN);
    Ok(GradCheckReport {
        p95,
        tolerance: config.tolerance,
        passed: p95 < config.tolerance,
        expected_fail: config.edit_mode == EditMode::Baseline,
        rows,
        wall: start.elapsed(),
    })
}
