//! Adam updates on box parameters and the interleaved loop: on each of the
//! first `edit_steps` denoise steps, run `inner_steps` optimization
//! iterations (evaluate the edited stack, differentiate, Adam-update the
//! boxes, project); every denoise step then performs the plain un-edited
//! evaluation, the desk-scale analog of the generator's own denoise pass.

use crate::backbone::{SceneSpec, ToyStack};
use crate::editing::{EditMode, EditParams};
use crate::geometry::{project_box, Trajectory, DEFAULT_MIN_SIZE};
use crate::grad::{grad_total, eval_loss, GradError, PipelineState};
use crate::masks::MaskParams;
use crate::objective::LossWeights;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("parameter and gradient lengths differ: {params} vs {grads}")]
    LengthMismatch { params: usize, grads: usize },
    #[error("loop config rejected: {0}")]
    BadConfig(String),
    /// Numerical failure mid-run; carries the iterations completed so far.
    #[error("aborted at iteration {iteration}: {source}")]
    Numerical {
        iteration: usize,
        source: GradError,
        completed: Vec<IterationRow>,
    },
    #[error(transparent)]
    Eval(#[from] GradError),
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: usize,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    /// One descent update in place. Returns raw (unprojected) parameters.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimizeError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(OptimizeError::LengthMismatch {
                params: params.len(),
                grads: grads.len(),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Schedule and step sizes for the interleaved loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Total denoise steps.
    pub denoise_steps: usize,
    /// Leading steps that edit and optimize.
    pub edit_steps: usize,
    /// Optimization iterations per edit step.
    pub inner_steps: usize,
    /// Adam learning rate in normalized coordinate units.
    pub learning_rate: f64,
    /// Minimum box extent enforced by projection.
    pub min_box_size: f64,
    pub seed: u64,
    /// Accepted for interface parity and ignored: only spatial attention is
    /// edited. A warning is surfaced on the report when set.
    pub temporal_edit_steps: Option<usize>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            denoise_steps: 40,
            edit_steps: 5,
            inner_steps: 5,
            learning_rate: 0.01,
            min_box_size: DEFAULT_MIN_SIZE,
            seed: 0,
            temporal_edit_steps: None,
        }
    }
}

/// One optimization iteration's record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRow {
    /// 1-based overall iteration index.
    pub iteration: usize,
    /// 1-based denoise step the iteration ran on.
    pub denoise_step: usize,
    /// 0-based inner index within the denoise step.
    pub inner_step: usize,
    pub attn: f64,
    pub neg: f64,
    pub reg: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct OptReport {
    pub initial: Trajectory,
    pub final_trajectory: Trajectory,
    pub rows: Vec<IterationRow>,
    pub denoise_steps: usize,
    pub edit_steps: usize,
    pub inner_steps: usize,
    pub warnings: Vec<String>,
    pub wall: Duration,
}

/// Runs the full interleaved loop and returns the adjusted trajectory.
///
/// Deterministic given the stack seed and scene; aborts with the completed
/// iterations attached if the gradient turns non-finite.
pub fn optimize_trajectory(
    user: &Trajectory,
    stack: &ToyStack,
    scene: &SceneSpec,
    weights: &LossWeights,
    loop_cfg: &LoopConfig,
    edit_params: &EditParams,
    mask_params: &MaskParams,
) -> Result<OptReport, OptimizeError> {
    let spec = stack.spec();
    if loop_cfg.denoise_steps != spec.denoise_steps || loop_cfg.edit_steps != spec.edit_steps {
        return Err(OptimizeError::BadConfig(format!(
            "loop schedule {}/{} disagrees with the stack's {}/{}",
            loop_cfg.denoise_steps, loop_cfg.edit_steps, spec.denoise_steps, spec.edit_steps
        )));
    }
    if loop_cfg.edit_steps > loop_cfg.denoise_steps {
        return Err(OptimizeError::BadConfig(
            "edit steps exceed denoise steps".into(),
        ));
    }
    if user.is_empty() {
        return Err(OptimizeError::BadConfig("empty trajectory".into()));
    }

    let start = Instant::now();
    let mut warnings = Vec::new();
    if let Some(kt) = loop_cfg.temporal_edit_steps {
        warnings.push(format!(
            "temporal_edit_steps = {kt} accepted but ignored: only spatial attention is edited"
        ));
    }

    let frames = user.len();
    let mut flat = user.to_flat();
    let mut current = user.clone();
    let mut adam = AdamState::new(4 * frames, loop_cfg.learning_rate);
    let mut rows: Vec<IterationRow> = Vec::with_capacity(loop_cfg.edit_steps * loop_cfg.inner_steps);

    for denoise_step in 1..=loop_cfg.denoise_steps {
        if denoise_step <= loop_cfg.edit_steps {
            for inner in 0..loop_cfg.inner_steps {
                let state = PipelineState {
                    stack,
                    scene,
                    user,
                    edit_params: *edit_params,
                    mask_params: *mask_params,
                    weights: weights.clone(),
                    timestep: denoise_step,
                };
                let (breakdown, grad) = match grad_total(&state, &current) {
                    Ok(v) => v,
                    Err(source) => {
                        return Err(OptimizeError::Numerical {
                            iteration: rows.len() + 1,
                            source,
                            completed: rows,
                        })
                    }
                };
                rows.push(IterationRow {
                    iteration: rows.len() + 1,
                    denoise_step,
                    inner_step: inner,
                    attn: breakdown.attn,
                    neg: breakdown.neg,
                    reg: breakdown.reg,
                    total: breakdown.total,
                    grad_norm: grad.norm(),
                });
                adam.update(&mut flat, &grad.flat())?;
                for (f, chunk) in flat.chunks_exact_mut(4).enumerate() {
                    let projected =
                        project_box(chunk[0], chunk[1], chunk[2], chunk[3], loop_cfg.min_box_size);
                    chunk.copy_from_slice(&projected.coords());
                    current.frames[f] = projected;
                }
            }
        }
        // plain evaluation of this denoise step, without edits
        let state = PipelineState {
            stack,
            scene,
            user,
            edit_params: *edit_params,
            mask_params: *mask_params,
            weights: weights.clone(),
            timestep: denoise_step,
        };
        eval_loss(&state, &current, EditMode::Identity)?;
    }

    Ok(OptReport {
        initial: user.clone(),
        final_trajectory: current,
        rows,
        denoise_steps: loop_cfg.denoise_steps,
        edit_steps: loop_cfg.edit_steps,
        inner_steps: loop_cfg.inner_steps,
        warnings,
        wall: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneSpec, LayerSpec};
    use crate::geometry::BoxParams;

    fn bx(l: f64, t: f64, r: f64, b: f64) -> BoxParams {
        BoxParams::new(l, t, r, b).unwrap()
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut adam = AdamState::new(4, 0.01);
        let mut params = vec![0.1, 0.2, 0.3, 0.4];
        adam.update(&mut params, &[0.0; 4]).unwrap();
        assert_eq!(params, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let mut adam = AdamState::new(2, 0.01);
        let mut params = vec![0.5, 0.5];
        adam.update(&mut params, &[3.7, -0.002]).unwrap();
        // bias-corrected first step is lr * sign(g) up to epsilon
        assert!((params[0] - (0.5 - 0.01)).abs() < 1e-6);
        assert!((params[1] - (0.5 + 0.01)).abs() < 1e-4);
    }

    #[test]
    fn adam_descends_on_constant_gradient() {
        let mut adam = AdamState::new(1, 0.01);
        let mut params = vec![0.5];
        adam.update(&mut params, &[1.0]).unwrap();
        let after_one = params[0];
        adam.update(&mut params, &[1.0]).unwrap();
        assert!(after_one < 0.5);
        assert!(params[0] < after_one);
    }

    #[test]
    fn adam_length_mismatch() {
        let mut adam = AdamState::new(2, 0.01);
        let mut params = vec![0.1, 0.2];
        assert!(matches!(
            adam.update(&mut params, &[1.0]),
            Err(OptimizeError::LengthMismatch { .. })
        ));
    }

    fn small_stack(seed: u64) -> crate::backbone::ToyStack {
        BackboneSpec {
            ladder: vec![
                LayerSpec::new(16, 16, 4),
                LayerSpec::new(8, 8, 4),
                LayerSpec::new(4, 4, 4),
            ],
            tracked_tokens: 1,
            seed,
            denoise_steps: 8,
            edit_steps: 2,
        }
        .build()
        .unwrap()
    }

    fn small_loop() -> LoopConfig {
        LoopConfig {
            denoise_steps: 8,
            edit_steps: 2,
            inner_steps: 3,
            ..Default::default()
        }
    }

    #[test]
    fn iteration_accounting() {
        let stack = small_stack(3);
        let scene = SceneSpec::linear((0.55, 0.5), (0.55, 0.5), (0.1, 0.1), 2, 0.1, 1);
        let user = Trajectory::new(vec![bx(0.35, 0.4, 0.55, 0.6); 2]);
        let report = optimize_trajectory(
            &user,
            &stack,
            &scene,
            &LossWeights::default(),
            &small_loop(),
            &EditParams::default(),
            &MaskParams::default(),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2 * 3);
        assert!(report.rows.iter().all(|r| r.denoise_step <= 2));
        assert_eq!(
            report.rows.iter().map(|r| r.iteration).collect::<Vec<_>>(),
            (1..=6).collect::<Vec<_>>()
        );
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn loop_is_bit_reproducible() {
        let scene = SceneSpec::linear((0.55, 0.5), (0.6, 0.5), (0.1, 0.1), 2, 0.1, 1);
        let user = Trajectory::new(vec![bx(0.35, 0.4, 0.55, 0.6); 2]);
        let run = || {
            let stack = small_stack(3);
            optimize_trajectory(
                &user,
                &stack,
                &scene,
                &LossWeights::default(),
                &small_loop(),
                &EditParams::default(),
                &MaskParams::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.final_trajectory, b.final_trajectory);
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn every_intermediate_box_stays_valid() {
        let stack = small_stack(9);
        let scene = SceneSpec::linear((0.8, 0.5), (0.8, 0.5), (0.08, 0.08), 1, 0.1, 2);
        // box near the canvas edge so projection has to act
        let user = Trajectory::new(vec![bx(0.85, 0.4, 0.99, 0.6)]);
        let report = optimize_trajectory(
            &user,
            &stack,
            &scene,
            &LossWeights {
                lambda_reg: 0.01,
                ..Default::default()
            },
            &small_loop(),
            &EditParams::default(),
            &MaskParams::default(),
        )
        .unwrap();
        for b in &report.final_trajectory.frames {
            assert!(b.is_valid());
            assert!(b.width() >= DEFAULT_MIN_SIZE * (1.0 - 1e-12));
        }
    }

    #[test]
    fn huge_regularizer_pins_the_user_box() {
        let stack = small_stack(4);
        let scene = SceneSpec::linear((0.6, 0.5), (0.6, 0.5), (0.1, 0.1), 1, 0.1, 3);
        let user = Trajectory::new(vec![bx(0.35, 0.4, 0.55, 0.6)]);
        let report = optimize_trajectory(
            &user,
            &stack,
            &scene,
            &LossWeights {
                lambda_reg: 1e6,
                ..Default::default()
            },
            &LoopConfig {
                learning_rate: 1e-4,
                ..small_loop()
            },
            &EditParams::default(),
            &MaskParams::default(),
        )
        .unwrap();
        for (a, b) in report
            .final_trajectory
            .frames
            .iter()
            .zip(&user.frames)
        {
            for (x, y) in a.coords().iter().zip(b.coords()) {
                assert!((x - y).abs() < 1e-3, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn box_moves_toward_the_attention_blob() {
        // Scene blob offset +0.1 in x from the user box center: the final
        // center must land strictly between the user's and the blob's, and
        // the first next-layer field must hold more tracked mass under the
        // final box than under the user box.
        use crate::backbone::SceneSpec;
        use crate::evaluation::inside_mass_fraction;
        use crate::objective::lambda_reg_for_canvas;

        let spec = crate::backbone::BackboneSpec {
            seed: 77,
            ..Default::default()
        };
        let stack = spec.build().unwrap();
        let scene = SceneSpec::linear((0.46, 0.5), (0.46, 0.5), (0.12, 0.12), 1, 0.04, 9);
        let user = Trajectory::new(vec![bx(0.28, 0.42, 0.44, 0.58)]);
        let weights = LossWeights {
            lambda_reg: lambda_reg_for_canvas(0.1, (40, 40)),
            ..Default::default()
        };
        let report = optimize_trajectory(
            &user,
            &stack,
            &scene,
            &weights,
            &LoopConfig::default(),
            &EditParams::default(),
            &MaskParams::default(),
        )
        .unwrap();
        let final_cx = report.final_trajectory.frames[0].center().0;
        let user_cx = user.frames[0].center().0;
        assert!(
            final_cx > user_cx && final_cx < 0.46,
            "final center x {final_cx} not strictly between {user_cx} and 0.46"
        );
        let edit = EditParams::default();
        let masks = MaskParams::default();
        let inside_user =
            inside_mass_fraction(&stack, &scene, &user, &edit, &masks, 1).unwrap();
        let inside_final = inside_mass_fraction(
            &stack,
            &scene,
            &report.final_trajectory,
            &edit,
            &masks,
            1,
        )
        .unwrap();
        assert!(
            inside_final > inside_user,
            "inside mass {inside_final} did not exceed {inside_user}"
        );
    }

    #[test]
    fn temporal_steps_are_accepted_with_warning() {
        let stack = small_stack(5);
        let scene = SceneSpec::linear((0.5, 0.5), (0.5, 0.5), (0.1, 0.1), 1, 0.1, 4);
        let user = Trajectory::new(vec![bx(0.35, 0.4, 0.55, 0.6)]);
        let report = optimize_trajectory(
            &user,
            &stack,
            &scene,
            &LossWeights::default(),
            &LoopConfig {
                temporal_edit_steps: Some(5),
                ..small_loop()
            },
            &EditParams::default(),
            &MaskParams::default(),
        )
        .unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("spatial"));
    }

    #[test]
    fn mismatched_schedule_is_rejected() {
        let stack = small_stack(6);
        let scene = SceneSpec::linear((0.5, 0.5), (0.5, 0.5), (0.1, 0.1), 1, 0.1, 4);
        let user = Trajectory::new(vec![bx(0.35, 0.4, 0.55, 0.6)]);
        let bad = LoopConfig {
            denoise_steps: 40,
            edit_steps: 5,
            ..Default::default()
        };
        assert!(matches!(
            optimize_trajectory(
                &user,
                &stack,
                &scene,
                &LossWeights::default(),
                &bad,
                &EditParams::default(),
                &MaskParams::default(),
            ),
            Err(OptimizeError::BadConfig(_))
        ));
    }
}
