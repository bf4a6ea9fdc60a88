//! A deterministic toy cross-attention stack.
//!
//! Stands in for the generator: it synthesizes a layer-0 attention field
//! from a seeded scene (a smooth blob plus decaying background noise),
//! accepts edited attention at each layer, and produces the next layer's
//! attention by contracting with token values, mixing through a fixed
//! seeded linear map, 2x2 average pooling down the resolution ladder, and a
//! scaled-dot-product softmax over the token axis.
//!
//! The token axis holds the tracked tokens first plus one aggregate
//! background token, so every softmax slice is a genuine distribution. All
//! evaluation is sequential and seeded: identical inputs give bit-identical
//! fields.

use crate::editing::{apply_edit, EditMode, EditParams};
use crate::field::FieldTensor;
use crate::geometry::{pixel_center, Trajectory};
use crate::masks::MaskParams;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Contrast between blob and flat background in the synthetic logits.
const BLOB_GAIN: f64 = 6.0;
/// Logit bias of the background token.
const BACKGROUND_BIAS: f64 = 1.0;
/// Sharpening applied to the scaled dot product between layers. Decays
/// with depth: coarse grids get flatter token softmaxes, mirroring how
/// focus spreads over the pooled cells.
const LOGIT_GAIN: f64 = 4.0;
/// Jitter amplitude on the identity-anchored token values.
const VALUE_JITTER: f64 = 0.02;
/// Jitter amplitude on the per-transition linear map.
const MAP_JITTER: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum BackboneError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad ladder: {0}")]
    BadLadder(String),
    #[error("bad scene: {0}")]
    BadScene(String),
}

/// One rung of the resolution ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LayerSpec {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }
}

/// Static description of the toy stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    /// Per-layer resolutions and channel counts, highest resolution first.
    pub ladder: Vec<LayerSpec>,
    /// Number of tracked text tokens (edited and read by the loss).
    pub tracked_tokens: usize,
    pub seed: u64,
    /// Total denoise steps; drives the noise decay schedule.
    pub denoise_steps: usize,
    /// Leading steps on which edits (and optimization) run.
    pub edit_steps: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            ladder: vec![
                LayerSpec::new(40, 40, 8),
                LayerSpec::new(20, 20, 8),
                LayerSpec::new(10, 10, 8),
                LayerSpec::new(5, 5, 8),
            ],
            tracked_tokens: 1,
            seed: 0,
            denoise_steps: 40,
            edit_steps: 5,
        }
    }
}

impl BackboneSpec {
    /// Token axis length: tracked tokens plus the background token.
    pub fn token_axis(&self) -> usize {
        self.tracked_tokens + 1
    }

    pub fn build(&self) -> Result<ToyStack, BackboneError> {
        if self.ladder.is_empty() {
            return Err(BackboneError::BadLadder("empty ladder".into()));
        }
        if self.tracked_tokens == 0 {
            return Err(BackboneError::BadLadder("no tracked tokens".into()));
        }
        if self.edit_steps > self.denoise_steps {
            return Err(BackboneError::BadLadder(format!(
                "edit steps {} exceed denoise steps {}",
                self.edit_steps, self.denoise_steps
            )));
        }
        for w in self.ladder.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !a.height.is_multiple_of(2)
                || !a.width.is_multiple_of(2)
                || b.height != a.height / 2
                || b.width != a.width / 2
            {
                return Err(BackboneError::BadLadder(format!(
                    "{}x{} does not pool 2x2 into {}x{}",
                    a.height, a.width, b.height, b.width
                )));
            }
            if a.channels == 0 || b.channels == 0 {
                return Err(BackboneError::BadLadder("zero channels".into()));
            }
        }

        let tokens = self.token_axis();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0x746f6b_u64));
        let mut values = Vec::with_capacity(self.ladder.len());
        values.push(Matrix::jittered_identity(tokens, VALUE_JITTER, &mut rng));
        let mut maps = Vec::with_capacity(self.ladder.len().saturating_sub(1));
        for _ in 0..self.ladder.len().saturating_sub(1) {
            let map = Matrix::jittered_identity(tokens, MAP_JITTER, &mut rng);
            let next_values = values.last().unwrap().matmul(&map);
            values.push(next_values);
            maps.push(map);
        }
        Ok(ToyStack {
            spec: self.clone(),
            tokens,
            values,
            maps,
        })
    }
}

/// Synthetic scene content: a moving blob over seeded background texture.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Blob center per frame, in normalized coordinates.
    pub blob_centers: Vec<(f64, f64)>,
    /// Blob standard deviation per axis, normalized.
    pub blob_extent: (f64, f64),
    /// Background noise level as a fraction of the blob peak.
    pub noise_level: f64,
    pub texture_seed: u64,
}

impl SceneSpec {
    /// A blob translating linearly from `start` to `end` over `frames`.
    pub fn linear(
        start: (f64, f64),
        end: (f64, f64),
        extent: (f64, f64),
        frames: usize,
        noise_level: f64,
        texture_seed: u64,
    ) -> Self {
        let blob_centers = (0..frames)
            .map(|f| {
                let a = if frames > 1 {
                    f as f64 / (frames - 1) as f64
                } else {
                    0.0
                };
                (
                    start.0 + a * (end.0 - start.0),
                    start.1 + a * (end.1 - start.1),
                )
            })
            .collect();
        Self {
            blob_centers,
            blob_extent: extent,
            noise_level,
            texture_seed,
        }
    }

    pub fn frames(&self) -> usize {
        self.blob_centers.len()
    }

    fn validate(&self) -> Result<(), BackboneError> {
        if self.blob_centers.is_empty() {
            return Err(BackboneError::BadScene("no frames".into()));
        }
        if self.blob_extent.0 <= 0.0 || self.blob_extent.1 <= 0.0 {
            return Err(BackboneError::BadScene("non-positive blob extent".into()));
        }
        for &(x, y) in &self.blob_centers {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(BackboneError::BadScene(format!(
                    "blob center ({x}, {y}) outside the unit square"
                )));
            }
        }
        Ok(())
    }
}

/// Pre- and post-edit attention at one layer.
#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub pre_edit: FieldTensor,
    pub post_edit: FieldTensor,
}

/// Recorded fields from one pass through the stack.
#[derive(Debug, Clone)]
pub struct StackRun {
    pub layers: Vec<LayerRecord>,
}

impl StackRun {
    /// Softmax-produced fields downstream of an edit: layers 1 and deeper,
    /// pre-edit. These are what the losses read.
    pub fn next_layer_fields(&self) -> impl Iterator<Item = (usize, &FieldTensor)> {
        self.layers
            .iter()
            .enumerate()
            .skip(1)
            .map(|(l, rec)| (l, &rec.pre_edit))
    }
}

/// The built stack: seeded token values, per-transition maps, channel maps.
#[derive(Debug, Clone)]
pub struct ToyStack {
    spec: BackboneSpec,
    tokens: usize,
    /// Per-layer token value matrices, `tokens x tokens`.
    values: Vec<Matrix>,
    /// Per-transition linear maps on the feature axis.
    maps: Vec<Matrix>,
}

impl ToyStack {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn layer_count(&self) -> usize {
        self.spec.ladder.len()
    }

    /// Token value matrix feeding layer `l`'s contraction; also the keys
    /// that produce layer `l`'s attention.
    pub fn layer_values(&self, l: usize) -> &Matrix {
        &self.values[l]
    }

    pub fn transition_map(&self, l: usize) -> &Matrix {
        &self.maps[l]
    }

    /// Input channel backing output channel `c_out` across transition `l`.
    pub fn channel_source(&self, l: usize, c_out: usize) -> usize {
        let c_in = self.spec.ladder[l].channels;
        let c_next = self.spec.ladder[l + 1].channels;
        c_out * c_in / c_next
    }

    /// Scale applied to the dot product before the softmax at transition
    /// `l` (producing layer `l + 1`).
    pub fn logit_scale(&self, l: usize) -> f64 {
        LOGIT_GAIN / ((l + 1) as f64 * (self.tokens as f64).sqrt())
    }

    /// Noise amplitude at 1-based timestep `t`: decays linearly over the
    /// denoise schedule.
    pub fn noise_amplitude(&self, scene: &SceneSpec, t: usize) -> f64 {
        let k = self.spec.denoise_steps.max(1) as f64;
        let step = (t.max(1) - 1) as f64;
        scene.noise_level * (1.0 - step / k).max(0.0)
    }

    /// Synthesizes the layer-0 attention field for timestep `t`.
    ///
    /// Tracked-token logits carry the blob; the background token carries a
    /// flat bias; seeded noise rides on both and decays with `t`. A softmax
    /// over the token axis makes every slice a distribution.
    pub fn synth_field(&self, scene: &SceneSpec, t: usize) -> Result<FieldTensor, BackboneError> {
        scene.validate()?;
        let layer = self.spec.ladder[0];
        let frames = scene.frames();
        let amp = self.noise_amplitude(scene, t);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            mix_seed(self.spec.seed, scene.texture_seed),
            t as u64,
        ));
        let mut field = FieldTensor::zeros(layer.channels, frames, layer.height, layer.width, self.tokens);
        let mut logits = vec![0.0f64; self.tokens];
        for c in 0..layer.channels {
            for f in 0..frames {
                let (bx, by) = scene.blob_centers[f];
                let (ex, ey) = scene.blob_extent;
                for y in 0..layer.height {
                    let v = pixel_center(y, layer.height);
                    for x in 0..layer.width {
                        let u = pixel_center(x, layer.width);
                        let du = (u - bx) / ex;
                        let dv = (v - by) / ey;
                        let blob = (-0.5 * (du * du + dv * dv)).exp();
                        for (tok, slot) in logits.iter_mut().enumerate() {
                            let noise = if amp > 0.0 {
                                amp * rng.random_range(-1.0..1.0)
                            } else {
                                // keep the stream aligned across noise levels
                                let _ = rng.random_range(-1.0..1.0f64);
                                0.0
                            };
                            *slot = if tok + 1 == self.tokens {
                                BACKGROUND_BIAS + noise
                            } else {
                                BLOB_GAIN * blob + noise
                            };
                        }
                        softmax_inplace(&mut logits);
                        for (tok, &p) in logits.iter().enumerate() {
                            field.set(c, f, y, x, tok, p);
                        }
                    }
                }
            }
        }
        Ok(field)
    }

    /// One attention block: contract with token values, apply the seeded
    /// linear map, pool 2x2 to the next rung, then softmax a scaled dot
    /// product against the next layer's keys.
    pub fn forward_layer(
        &self,
        a_edited: &FieldTensor,
        l: usize,
    ) -> Result<FieldTensor, BackboneError> {
        if l + 1 >= self.spec.ladder.len() {
            return Err(BackboneError::ShapeMismatch(format!(
                "no layer after {l}"
            )));
        }
        let cur = self.spec.ladder[l];
        let next = self.spec.ladder[l + 1];
        if a_edited.channels != cur.channels
            || a_edited.height != cur.height
            || a_edited.width != cur.width
            || a_edited.tokens != self.tokens
        {
            return Err(BackboneError::ShapeMismatch(format!(
                "layer {l} expects {}x{}x{}x{} tokens {}, got {}x{}x{}x{} tokens {}",
                cur.channels,
                a_edited.frames,
                cur.height,
                cur.width,
                self.tokens,
                a_edited.channels,
                a_edited.frames,
                a_edited.height,
                a_edited.width,
                a_edited.tokens,
            )));
        }

        let frames = a_edited.frames;
        let dim = self.tokens;
        let scale = self.logit_scale(l);
        let values = &self.values[l];
        let keys = &self.values[l + 1];
        let map = &self.maps[l];
        let mut out = FieldTensor::zeros(next.channels, frames, next.height, next.width, dim);
        let mut feat = vec![0.0f64; cur.height * cur.width * dim];
        let mut mixed = vec![0.0f64; cur.height * cur.width * dim];
        let mut logits = vec![0.0f64; dim];

        for c_out in 0..next.channels {
            let c_in = self.channel_source(l, c_out);
            for f in 0..frames {
                // contract attention with token values
                for y in 0..cur.height {
                    for x in 0..cur.width {
                        let base = (y * cur.width + x) * dim;
                        for d in 0..dim {
                            let mut acc = 0.0;
                            for t in 0..dim {
                                acc += a_edited.get(c_in, f, y, x, t) * values.get(t, d);
                            }
                            feat[base + d] = acc;
                        }
                    }
                }
                // fixed linear map on the feature axis
                for p in 0..cur.height * cur.width {
                    let base = p * dim;
                    for e in 0..dim {
                        let mut acc = 0.0;
                        for d in 0..dim {
                            acc += feat[base + d] * map.get(d, e);
                        }
                        mixed[base + e] = acc;
                    }
                }
                // pool and attend
                for y2 in 0..next.height {
                    for x2 in 0..next.width {
                        for (tok, slot) in logits.iter_mut().enumerate() {
                            let mut dot = 0.0;
                            for e in 0..dim {
                                let pooled = 0.25
                                    * (mixed[((2 * y2) * cur.width + 2 * x2) * dim + e]
                                        + mixed[((2 * y2) * cur.width + 2 * x2 + 1) * dim + e]
                                        + mixed[((2 * y2 + 1) * cur.width + 2 * x2) * dim + e]
                                        + mixed[((2 * y2 + 1) * cur.width + 2 * x2 + 1) * dim + e]);
                                dot += pooled * keys.get(tok, e);
                            }
                            *slot = scale * dot;
                        }
                        softmax_inplace(&mut logits);
                        for (tok, &p) in logits.iter().enumerate() {
                            out.set(c_out, f, y2, x2, tok, p);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Runs the full ladder, applying `mode`'s edit before every layer
    /// transition, and records pre- and post-edit fields for every layer.
    pub fn run_stack(
        &self,
        scene: &SceneSpec,
        traj: &Trajectory,
        mode: EditMode,
        t: usize,
        edit_params: &EditParams,
        mask_params: &MaskParams,
    ) -> Result<StackRun, BackboneError> {
        if traj.len() != scene.frames() {
            return Err(BackboneError::ShapeMismatch(format!(
                "trajectory has {} frames, scene has {}",
                traj.len(),
                scene.frames()
            )));
        }
        let mut layers = Vec::with_capacity(self.spec.ladder.len());
        let mut current = self.synth_field(scene, t)?;
        for l in 0..self.spec.ladder.len() {
            let edited = apply_edit(
                mode,
                &current,
                &traj.frames,
                edit_params,
                mask_params,
                self.spec.tracked_tokens,
            );
            let next = if l + 1 < self.spec.ladder.len() {
                Some(self.forward_layer(&edited, l)?)
            } else {
                None
            };
            layers.push(LayerRecord {
                pre_edit: current,
                post_edit: edited,
            });
            match next {
                Some(f) => current = f,
                None => break,
            }
        }
        Ok(StackRun { layers })
    }
}

/// Average-pools one `h x w` plane down to `h/2 x w/2`.
pub fn avg_pool_2x2(plane: &[f64], height: usize, width: usize) -> Vec<f64> {
    assert_eq!(plane.len(), height * width);
    assert!(height.is_multiple_of(2) && width.is_multiple_of(2));
    let (h2, w2) = (height / 2, width / 2);
    let mut out = vec![0.0; h2 * w2];
    for y in 0..h2 {
        for x in 0..w2 {
            out[y * w2 + x] = 0.25
                * (plane[(2 * y) * width + 2 * x]
                    + plane[(2 * y) * width + 2 * x + 1]
                    + plane[(2 * y + 1) * width + 2 * x]
                    + plane[(2 * y + 1) * width + 2 * x + 1]);
        }
    }
    out
}

/// In-place softmax with max subtraction.
pub fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Small row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity plus uniform jitter of amplitude `jitter`.
    fn jittered_identity(n: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let base = if r == c { 1.0 } else { 0.0 };
                m.data[r * n + c] = base + jitter * rng.random_range(-1.0..1.0);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(r, k) * other.get(k, c);
                }
                out.data[r * other.cols + c] = acc;
            }
        }
        out
    }
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64-style avalanche over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxParams;

    fn small_spec() -> BackboneSpec {
        BackboneSpec {
            ladder: vec![
                LayerSpec::new(16, 16, 4),
                LayerSpec::new(8, 8, 4),
                LayerSpec::new(4, 4, 4),
            ],
            tracked_tokens: 1,
            seed: 11,
            denoise_steps: 40,
            edit_steps: 5,
        }
    }

    fn centered_scene(frames: usize, noise: f64) -> SceneSpec {
        SceneSpec::linear((0.5, 0.5), (0.5, 0.5), (0.12, 0.12), frames, noise, 3)
    }

    #[test]
    fn synth_is_deterministic() {
        let stack = small_spec().build().unwrap();
        let scene = centered_scene(2, 0.1);
        let a = stack.synth_field(&scene, 1).unwrap();
        let b = stack.synth_field(&scene, 1).unwrap();
        assert_eq!(a.data, b.data);
        let c = stack.synth_field(&scene, 2).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn zero_noise_peaks_at_blob() {
        let spec = BackboneSpec::default();
        let stack = spec.build().unwrap();
        let scene = SceneSpec::linear((0.25, 0.25), (0.25, 0.25), (0.1, 0.1), 1, 0.0, 0);
        let field = stack.synth_field(&scene, 1).unwrap();
        let plane = field.plane(0, 0, 0);
        let (y, x) = plane.argmax();
        // blob at 0.25 of a 40-pixel axis lands by grid position 10
        assert!((y as i64 - 10).abs() <= 1, "argmax row {y}");
        assert!((x as i64 - 10).abs() <= 1, "argmax col {x}");
    }

    #[test]
    fn synth_slices_are_distributions() {
        let stack = small_spec().build().unwrap();
        let scene = centered_scene(2, 0.1);
        let field = stack.synth_field(&scene, 1).unwrap();
        for c in 0..field.channels {
            for f in 0..field.frames {
                for y in 0..field.height {
                    for x in 0..field.width {
                        let sum: f64 = (0..field.tokens).map(|t| field.get(c, f, y, x, t)).sum();
                        assert!((sum - 1.0).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn forward_rows_sum_to_one() {
        let stack = small_spec().build().unwrap();
        let scene = centered_scene(1, 0.1);
        let a0 = stack.synth_field(&scene, 1).unwrap();
        let a1 = stack.forward_layer(&a0, 0).unwrap();
        assert_eq!(a1.height, 8);
        for c in 0..a1.channels {
            for y in 0..a1.height {
                for x in 0..a1.width {
                    let sum: f64 = (0..a1.tokens).map(|t| a1.get(c, 0, y, x, t)).sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn uniform_input_gives_uniform_output() {
        let stack = small_spec().build().unwrap();
        let mut a = FieldTensor::zeros(4, 1, 16, 16, 2);
        for y in 0..16 {
            for x in 0..16 {
                for c in 0..4 {
                    a.set(c, 0, y, x, 0, 0.3);
                    a.set(c, 0, y, x, 1, 0.7);
                }
            }
        }
        let next = stack.forward_layer(&a, 0).unwrap();
        for c in 0..4 {
            for t in 0..2 {
                let first = next.get(c, 0, 0, 0, t);
                for y in 0..8 {
                    for x in 0..8 {
                        assert!((next.get(c, 0, y, x, t) - first).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn positive_scaling_preserves_argmax() {
        let stack = small_spec().build().unwrap();
        let scene = centered_scene(1, 0.1);
        let a0 = stack.synth_field(&scene, 1).unwrap();
        let mut scaled = a0.clone();
        for v in &mut scaled.data {
            *v *= 2.5;
        }
        let n1 = stack.forward_layer(&a0, 0).unwrap();
        let n2 = stack.forward_layer(&scaled, 0).unwrap();
        for c in 0..n1.channels {
            let p1 = n1.plane(c, 0, 0);
            let p2 = n2.plane(c, 0, 0);
            assert_eq!(p1.argmax(), p2.argmax(), "channel {c}");
        }
    }

    #[test]
    fn pooling_conserves_mass() {
        let plane: Vec<f64> = (0..16 * 16).map(|i| (i % 7) as f64 * 0.21).collect();
        let pooled = avg_pool_2x2(&plane, 16, 16);
        let total: f64 = plane.iter().sum();
        let pooled_sum: f64 = pooled.iter().sum();
        assert!((pooled_sum - total / 4.0).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let stack = small_spec().build().unwrap();
        let bad = FieldTensor::zeros(4, 1, 10, 10, 2);
        assert!(matches!(
            stack.forward_layer(&bad, 0),
            Err(BackboneError::ShapeMismatch(_))
        ));
        let a0 = FieldTensor::zeros(4, 1, 4, 4, 2);
        assert!(matches!(
            stack.forward_layer(&a0, 2),
            Err(BackboneError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn identity_edit_leaves_fields_untouched() {
        let stack = small_spec().build().unwrap();
        let scene = centered_scene(1, 0.1);
        let traj = Trajectory::new(vec![BoxParams::new(0.3, 0.3, 0.7, 0.7).unwrap()]);
        let run = stack
            .run_stack(
                &scene,
                &traj,
                EditMode::Identity,
                1,
                &EditParams::default(),
                &MaskParams::default(),
            )
            .unwrap();
        assert_eq!(run.layers.len(), 3);
        for rec in &run.layers {
            assert_eq!(rec.pre_edit.data, rec.post_edit.data);
        }
    }

    #[test]
    fn ladder_of_four_records_four_pairs() {
        let stack = BackboneSpec::default().build().unwrap();
        let scene = SceneSpec::linear((0.4, 0.4), (0.6, 0.6), (0.1, 0.1), 2, 0.1, 5);
        let traj = Trajectory::new(vec![BoxParams::new(0.3, 0.3, 0.6, 0.6).unwrap(); 2]);
        let run = stack
            .run_stack(
                &scene,
                &traj,
                EditMode::Differentiable,
                1,
                &EditParams::default(),
                &MaskParams::default(),
            )
            .unwrap();
        assert_eq!(run.layers.len(), 4);
    }

    #[test]
    fn edit_concentrates_next_layer_mass() {
        // A box over the blob: the differentiable edit should raise the
        // fraction of next-layer tracked-token mass inside the box.
        let stack = BackboneSpec::default().build().unwrap();
        let scene = SceneSpec::linear((0.5, 0.5), (0.5, 0.5), (0.1, 0.1), 1, 0.1, 7);
        let bb = BoxParams::new(0.38, 0.38, 0.62, 0.62).unwrap();
        let traj = Trajectory::new(vec![bb]);
        let frac = |mode: EditMode| {
            let run = stack
                .run_stack(&scene, &traj, mode, 1, &EditParams::default(), &MaskParams::default())
                .unwrap();
            let a1 = &run.layers[1].pre_edit;
            let mask = crate::masks::binary_mask(&bb, a1.height, a1.width);
            let mut inside = 0.0;
            let mut total = 0.0;
            for c in 0..a1.channels {
                for y in 0..a1.height {
                    for x in 0..a1.width {
                        let v = a1.get(c, 0, y, x, 0);
                        total += v;
                        inside += v * mask.get(y, x);
                    }
                }
            }
            inside / total
        };
        let edited = frac(EditMode::Differentiable);
        let plain = frac(EditMode::Identity);
        assert!(
            edited > plain,
            "inside fraction with edit {edited} vs identity {plain}"
        );
    }

    #[test]
    fn bad_ladders_are_rejected() {
        let mut spec = small_spec();
        spec.ladder = vec![LayerSpec::new(15, 16, 4), LayerSpec::new(7, 8, 4)];
        assert!(matches!(spec.build(), Err(BackboneError::BadLadder(_))));
        spec.ladder = vec![];
        assert!(matches!(spec.build(), Err(BackboneError::BadLadder(_))));
    }
}
