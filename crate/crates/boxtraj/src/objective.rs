//! The optimization objective: attention maximization inside the control
//! box, a balancing term that retains attention outside it, and a deviation
//! penalty tying the boxes to user intent.
//!
//! Attention terms work on ratios of sums, so they are invariant to positive
//! rescaling of the fields. Each `(frame, layer)` slice contributes a
//! squared deficit; contributions are averaged uniformly over slices.

use crate::field::FieldTensor;
use crate::geometry::Trajectory;
use crate::masks::MaskGrid;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    /// A field slice carries no attention mass at all; the ratio losses are
    /// undefined rather than silently zero.
    #[error("zero attention mass at frame {frame}, layer {layer}")]
    ZeroAttentionMass { frame: usize, layer: usize },
    #[error("trajectories have {got} and {expected} frames")]
    FrameCountMismatch { got: usize, expected: usize },
    #[error("no slices to reduce")]
    NoSlices,
}

/// Which box anchors the loss masks.
///
/// The control boxes being optimized are the user's boxes under continuous
/// adjustment, so the default anchors the masks to the current box: the
/// objective then rewards moving the edit toward content the network
/// already attends to, with the deviation penalty holding it near the
/// original placement. Anchoring to the frozen original box is kept as an
/// ablation; in this backbone it pins the optimum at the starting position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    /// The frozen original box (ablation mode).
    UserBox,
    /// The box currently being optimized (default).
    CurrentBox,
}

/// Weights and token selection for the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Weight of the balancing (outside-attention) term.
    pub lambda_neg: f64,
    /// Weight of the deviation penalty.
    pub lambda_reg: f64,
    pub mask_source: MaskSource,
    /// Tracked token indices the losses read.
    pub token_set: Vec<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_neg: 10.0,
            lambda_reg: lambda_reg_for_canvas(0.1, (40, 40)),
            mask_source: MaskSource::CurrentBox,
            token_set: vec![0],
        }
    }
}

/// Deviation-penalty weight: `scale * sqrt(pixels)` of the generation
/// canvas.
pub fn lambda_reg_for_canvas(scale: f64, canvas: (u32, u32)) -> f64 {
    scale * ((canvas.0 as f64) * (canvas.1 as f64)).sqrt()
}

/// Per-(frame, layer) loss contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceLoss {
    pub frame: usize,
    pub layer: usize,
    /// Fraction of tracked-token mass inside the mask.
    pub inside_fraction: f64,
    /// Total tracked-token mass of the slice (the ratio denominator).
    pub mass: f64,
    /// `(1 - inside_fraction)^2`
    pub attn: f64,
    /// `(1 - outside_fraction)^2`
    pub neg: f64,
}

/// Both attention terms over all next-layer slices.
#[derive(Debug, Clone)]
pub struct AttentionLosses {
    pub attn: f64,
    pub neg: f64,
    pub slices: Vec<SliceLoss>,
}

/// Evaluates the attention and balancing losses.
///
/// `next_fields` pairs each contributing layer index with its
/// softmax-produced field; `masks[i][frame]` is the binary loss mask at that
/// layer's resolution. Sums run over channels, spatial positions, and the
/// tokens in `token_set`.
pub fn attention_losses(
    next_fields: &[(usize, &FieldTensor)],
    masks: &[Vec<MaskGrid>],
    token_set: &[usize],
) -> Result<AttentionLosses, ObjectiveError> {
    assert_eq!(next_fields.len(), masks.len(), "one mask set per layer");
    let mut slices = Vec::new();
    for ((layer, field), layer_masks) in next_fields.iter().zip(masks) {
        assert_eq!(layer_masks.len(), field.frames, "one mask per frame");
        for f in 0..field.frames {
            let mask = &layer_masks[f];
            let mut inside = 0.0;
            let mut outside = 0.0;
            let mut total = 0.0;
            for c in 0..field.channels {
                for y in 0..field.height {
                    for x in 0..field.width {
                        let m = mask.get(y, x);
                        for &t in token_set {
                            let a = field.get(c, f, y, x, t);
                            total += a;
                            inside += a * m;
                            outside += a * (1.0 - m);
                        }
                    }
                }
            }
            if total <= 0.0 {
                return Err(ObjectiveError::ZeroAttentionMass { frame: f, layer: *layer });
            }
            let r = inside / total;
            let q = outside / total;
            slices.push(SliceLoss {
                frame: f,
                layer: *layer,
                inside_fraction: r,
                mass: total,
                attn: (1.0 - r) * (1.0 - r),
                neg: (1.0 - q) * (1.0 - q),
            });
        }
    }
    if slices.is_empty() {
        return Err(ObjectiveError::NoSlices);
    }
    let n = slices.len() as f64;
    Ok(AttentionLosses {
        attn: slices.iter().map(|s| s.attn).sum::<f64>() / n,
        neg: slices.iter().map(|s| s.neg).sum::<f64>() / n,
        slices,
    })
}

/// Mean over slices of the inside-attention deficit.
pub fn loss_attn(
    next_fields: &[(usize, &FieldTensor)],
    masks: &[Vec<MaskGrid>],
    token_set: &[usize],
) -> Result<f64, ObjectiveError> {
    attention_losses(next_fields, masks, token_set).map(|l| l.attn)
}

/// Mean over slices of the outside-attention deficit.
pub fn loss_neg_attn(
    next_fields: &[(usize, &FieldTensor)],
    masks: &[Vec<MaskGrid>],
    token_set: &[usize],
) -> Result<f64, ObjectiveError> {
    attention_losses(next_fields, masks, token_set).map(|l| l.neg)
}

/// Mean over frames of the squared Euclidean distance between box
/// 4-vectors, so the penalty weight is independent of the frame count.
pub fn loss_reg(current: &Trajectory, user: &Trajectory) -> Result<f64, ObjectiveError> {
    if current.len() != user.len() {
        return Err(ObjectiveError::FrameCountMismatch {
            got: current.len(),
            expected: user.len(),
        });
    }
    if current.is_empty() {
        return Err(ObjectiveError::NoSlices);
    }
    let sum: f64 = current
        .frames
        .iter()
        .zip(&user.frames)
        .map(|(a, b)| {
            a.coords()
                .iter()
                .zip(b.coords())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / current.len() as f64)
}

/// All loss components and the weighted total.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub attn: f64,
    pub neg: f64,
    pub reg: f64,
    pub total: f64,
    pub slices: Vec<SliceLoss>,
}

/// Combines components: `attn + lambda_neg * neg + lambda_reg * reg`.
pub fn loss_total(attention: AttentionLosses, reg: f64, weights: &LossWeights) -> LossBreakdown {
    let total = attention.attn + weights.lambda_neg * attention.neg + weights.lambda_reg * reg;
    LossBreakdown {
        attn: attention.attn,
        neg: attention.neg,
        reg,
        total,
        slices: attention.slices,
    }
}
