//! Dense attention tensors: channels x frames x height x width x tokens.

use crate::masks::MaskGrid;

/// A dense rank-5 tensor of nonnegative attention values.
///
/// The token axis covers the tracked tokens first, followed by one
/// aggregate background token, so a softmax over the axis is well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    pub data: Vec<f64>,
}

impl FieldTensor {
    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize, tokens: usize) -> Self {
        Self {
            channels,
            frames,
            height,
            width,
            tokens,
            data: vec![0.0; channels * frames * height * width * tokens],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, f: usize, y: usize, x: usize, t: usize) -> usize {
        ((((c * self.frames + f) * self.height + y) * self.width) + x) * self.tokens + t
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize, y: usize, x: usize, t: usize) -> f64 {
        self.data[self.idx(c, f, y, x, t)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, f: usize, y: usize, x: usize, t: usize, v: f64) {
        let i = self.idx(c, f, y, x, t);
        self.data[i] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.frames == other.frames
            && self.height == other.height
            && self.width == other.width
            && self.tokens == other.tokens
    }

    /// Extracts one `(channel, frame, token)` plane as a mask-style grid,
    /// e.g. for heatmap rendering.
    pub fn plane(&self, c: usize, f: usize, t: usize) -> MaskGrid {
        let mut grid = MaskGrid::zeros(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                grid.set(y, x, self.get(c, f, y, x, t));
            }
        }
        grid
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_roundtrip() {
        let mut f = FieldTensor::zeros(2, 3, 4, 5, 2);
        f.set(1, 2, 3, 4, 1, 7.5);
        assert_eq!(f.get(1, 2, 3, 4, 1), 7.5);
        assert_eq!(f.data.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(f.len(), 2 * 3 * 4 * 5 * 2);
    }

    #[test]
    fn plane_extraction() {
        let mut f = FieldTensor::zeros(1, 1, 2, 2, 2);
        f.set(0, 0, 1, 0, 1, 3.0);
        let p = f.plane(0, 0, 1);
        assert_eq!(p.get(1, 0), 3.0);
        assert_eq!(p.get(0, 0), 0.0);
    }
}
