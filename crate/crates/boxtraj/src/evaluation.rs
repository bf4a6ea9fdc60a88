//! Control-adherence metric and the hyperparameter sweep harness.
//!
//! The metric is the closest-box mean IoU: per frame, the control box is
//! matched against whichever detected box overlaps it most (detection
//! scores are deliberately ignored: score-based matching gets distracted by
//! off-target detections), frames with no detection contribute zero, and
//! the per-frame values are averaged.

use crate::backbone::{BackboneSpec, SceneSpec, ToyStack};
use crate::editing::{EditMode, EditParams};
use crate::geometry::{iou, BoxParams, DetectionRecord, Trajectory};
use crate::masks::{binary_mask, MaskParams};
use crate::objective::{lambda_reg_for_canvas, LossWeights};
use crate::optimizer::{optimize_trajectory, LoopConfig, OptReport, OptimizeError};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty control trajectory")]
    EmptyTrajectory,
    #[error("unknown sweep parameter {0:?}")]
    UnknownParameter(String),
    #[error("empty sweep ladder")]
    EmptyLadder,
}

/// Closest-box mean IoU between a control trajectory and per-frame
/// detections. Scores are ignored; frames without detections contribute 0.
pub fn miou(controls: &Trajectory, detections: &[DetectionRecord]) -> Result<f64, EvalError> {
    if controls.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let by_frame: HashMap<usize, &DetectionRecord> =
        detections.iter().map(|r| (r.frame_index, r)).collect();
    let mut sum = 0.0;
    for (k, control) in controls.frames.iter().enumerate() {
        let best = by_frame
            .get(&k)
            .map(|rec| {
                rec.boxes
                    .iter()
                    .map(|d| iou(control, &d.bbox))
                    .fold(0.0f64, f64::max)
            })
            .unwrap_or(0.0);
        sum += best;
    }
    Ok(sum / controls.len() as f64)
}

/// Mean over frames of the Euclidean distance between box 4-vectors.
pub fn trajectory_deviation(a: &Trajectory, b: &Trajectory) -> f64 {
    assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .frames
        .iter()
        .zip(&b.frames)
        .map(|(x, y)| {
            x.coords()
                .iter()
                .zip(y.coords())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    sum / a.len() as f64
}

/// Fraction of tracked-token attention mass of the first next-layer field
/// that falls inside the trajectory's own boxes, averaged over frames. The
/// stack runs with the differentiable edit at timestep `t`.
pub fn inside_mass_fraction(
    stack: &ToyStack,
    scene: &SceneSpec,
    traj: &Trajectory,
    edit_params: &EditParams,
    mask_params: &MaskParams,
    t: usize,
) -> Result<f64, crate::backbone::BackboneError> {
    let run = stack.run_stack(scene, traj, EditMode::Differentiable, t, edit_params, mask_params)?;
    let field = &run.layers[1].pre_edit;
    let tracked = stack.spec().tracked_tokens.min(field.tokens);
    let mut acc = 0.0;
    for (f, b) in traj.frames.iter().enumerate() {
        let mask = binary_mask(b, field.height, field.width);
        let mut inside = 0.0;
        let mut total = 0.0;
        for c in 0..field.channels {
            for y in 0..field.height {
                for x in 0..field.width {
                    let m = mask.get(y, x);
                    for tok in 0..tracked {
                        let a = field.get(c, f, y, x, tok);
                        total += a;
                        inside += a * m;
                    }
                }
            }
        }
        acc += inside / total;
    }
    Ok(acc / traj.len() as f64)
}

/// One ready-to-optimize scenario: a scene, the user trajectory, and the
/// full parameter set.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub spec: BackboneSpec,
    pub scene: SceneSpec,
    pub user: Trajectory,
    pub canvas: (u32, u32),
    pub loop_cfg: LoopConfig,
    pub edit_params: EditParams,
    pub mask_params: MaskParams,
    pub weights: LossWeights,
}

impl Fixture {
    pub fn optimize(&self) -> Result<OptReport, OptimizeError> {
        let stack = self
            .spec
            .build()
            .map_err(|e| OptimizeError::BadConfig(e.to_string()))?;
        optimize_trajectory(
            &self.user,
            &stack,
            &self.scene,
            &self.weights,
            &self.loop_cfg,
            &self.edit_params,
            &self.mask_params,
        )
    }
}

/// Offset-blob scenarios: the scene's attention blob sits a constant offset
/// away from the user box center, so a correct optimizer drags each box
/// toward the blob without abandoning the user's placement.
pub fn offset_blob_suite(frames: usize) -> Vec<Fixture> {
    // name, blob path start, blob path end, box offset from blob, seed
    type OffsetCase = (&'static str, (f64, f64), (f64, f64), (f64, f64), u64);
    let cases: [OffsetCase; 6] = [
        ("offset_east", (0.45, 0.5), (0.55, 0.5), (-0.1, 0.0), 101),
        ("offset_west", (0.55, 0.5), (0.45, 0.5), (0.1, 0.0), 102),
        ("offset_south", (0.5, 0.45), (0.5, 0.55), (0.0, -0.1), 103),
        ("offset_north", (0.5, 0.55), (0.5, 0.45), (0.0, 0.1), 104),
        ("offset_diagonal", (0.42, 0.42), (0.58, 0.58), (-0.072, -0.072), 105),
        ("offset_static", (0.6, 0.5), (0.6, 0.5), (-0.1, 0.0), 106),
    ];
    let canvas = (40, 40);
    cases
        .iter()
        .map(|&(name, start, end, offset, seed)| {
            let scene = SceneSpec::linear(start, end, (0.12, 0.12), frames, 0.04, seed);
            // Sized so the blob core sits just beyond the box edge: the
            // smooth anchor then feels the content imbalance directly.
            let half = 0.08;
            let user = Trajectory::new(
                scene
                    .blob_centers
                    .iter()
                    .map(|&(bx, by)| {
                        let cx = bx + offset.0;
                        let cy = by + offset.1;
                        BoxParams::new(cx - half, cy - half, cx + half, cy + half).unwrap()
                    })
                    .collect(),
            );
            Fixture {
                name: name.to_string(),
                spec: BackboneSpec {
                    seed: seed ^ 0x5eed,
                    ..Default::default()
                },
                scene,
                user,
                canvas,
                loop_cfg: LoopConfig::default(),
                edit_params: EditParams::default(),
                mask_params: MaskParams::default(),
                weights: LossWeights {
                    lambda_reg: lambda_reg_for_canvas(0.1, canvas),
                    ..Default::default()
                },
            }
        })
        .collect()
}

/// Knobs the sweep harness can ladder over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    LambdaRegScale,
    LambdaNeg,
    LambdaEdge,
    NormalizeKernel,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Result<Self, EvalError> {
        match name {
            "lambda_reg_scale" => Ok(Self::LambdaRegScale),
            "lambda_neg" => Ok(Self::LambdaNeg),
            "lambda_edge" => Ok(Self::LambdaEdge),
            "normalize_kernel" => Ok(Self::NormalizeKernel),
            other => Err(EvalError::UnknownParameter(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LambdaRegScale => "lambda_reg_scale",
            Self::LambdaNeg => "lambda_neg",
            Self::LambdaEdge => "lambda_edge",
            Self::NormalizeKernel => "normalize_kernel",
        }
    }
}

/// A parameter ladder over a fixture set.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Aggregated metrics for one ladder value.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub value: f64,
    /// Mean final deviation from the user trajectory.
    pub mean_deviation: f64,
    /// Mean inside-mass fraction of the first next-layer field under the
    /// final boxes.
    pub mean_inside_mass: f64,
    /// Mean final total loss.
    pub mean_total_loss: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
}

/// Runs every fixture at every ladder value. Deterministic given the sweep
/// seed, which reseeds each fixture's backbone and scene.
pub fn run_sweep(spec: &SweepSpec, fixtures: &[Fixture]) -> Result<SweepTable, OptimizeError> {
    if spec.values.is_empty() {
        return Err(OptimizeError::BadConfig("empty sweep ladder".into()));
    }
    let mut rows = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let mut dev = 0.0;
        let mut inside = 0.0;
        let mut total_loss = 0.0;
        for (i, fixture) in fixtures.iter().enumerate() {
            let mut fx = fixture.clone();
            fx.spec.seed ^= spec.seed.rotate_left(i as u32);
            fx.scene.texture_seed ^= spec.seed;
            match spec.parameter {
                SweepParameter::LambdaRegScale => {
                    fx.weights.lambda_reg = lambda_reg_for_canvas(value, fx.canvas);
                }
                SweepParameter::LambdaNeg => fx.weights.lambda_neg = value,
                SweepParameter::LambdaEdge => fx.mask_params.lambda_edge = value,
                SweepParameter::NormalizeKernel => {
                    fx.mask_params.normalize_kernel = value != 0.0;
                }
            }
            let report = fx.optimize()?;
            let stack = fx
                .spec
                .build()
                .map_err(|e| OptimizeError::BadConfig(e.to_string()))?;
            dev += trajectory_deviation(&report.final_trajectory, &fx.user);
            inside += inside_mass_fraction(
                &stack,
                &fx.scene,
                &report.final_trajectory,
                &fx.edit_params,
                &fx.mask_params,
                1,
            )
            .map_err(|e| OptimizeError::BadConfig(e.to_string()))?;
            total_loss += report.rows.last().map(|r| r.total).unwrap_or(f64::NAN);
        }
        let n = fixtures.len() as f64;
        rows.push(SweepRow {
            value,
            mean_deviation: dev / n,
            mean_inside_mass: inside / n,
            mean_total_loss: total_loss / n,
        });
    }
    Ok(SweepTable {
        parameter: spec.parameter,
        rows,
    })
}
