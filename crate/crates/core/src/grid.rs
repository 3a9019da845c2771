//! Dense row-major raster buffers with interleaved channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A `width × height` raster with `channels` interleaved values per pixel.
///
/// Pixel `(row, col)` channel `c` lives at `(row * width + col) * channels + c`.
/// RGB images use three channels, masks and depth maps one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Grid {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                format!("{width}x{height}x{channels}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Grid {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(row, col, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    data.push(f(row, col, c));
                }
            }
        }
        Grid {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: T) {
        let i = self.index(row, col, channel);
        self.data[i] = value;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let i = self.index(row, col, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Grid<T>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_shape(&self, width: usize, height: usize, channels: usize) -> Result<()> {
        if self.width != width || self.height != height || self.channels != channels {
            return Err(Error::shape(
                format!("{width}x{height}x{channels}"),
                format!("{}x{}x{}", self.width, self.height, self.channels),
            ));
        }
        Ok(())
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = T::from_usize_lossy(self.pixel_count().max(1));
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Average-pools by an integer `factor` in both directions.
    pub fn box_downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::InvalidInput(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = T::from_usize_lossy(factor * factor);
        Ok(Grid::from_fn(w, h, self.channels, |r, c, ch| {
            let mut acc = T::zero();
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += self.get(r * factor + dr, c * factor + dc, ch);
                }
            }
            acc / norm
        }))
    }
}

/// RGB image with values nominally in `[0, 1]`.
pub type Image<T> = Grid<T>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_layout_is_row_major_interleaved() {
        let g = Grid::<f64>::from_fn(3, 2, 2, |r, c, ch| (r * 100 + c * 10 + ch) as f64);
        assert_eq!(g.get(1, 2, 1), 121.0);
        assert_eq!(g.data[g.index(1, 0, 0)], 100.0);
        assert_eq!(g.pixel(0, 1), &[10.0, 11.0]);
    }

    #[test]
    fn downsample_averages_blocks() {
        let g = Grid::<f64>::from_fn(4, 2, 1, |_, c, _| c as f64);
        let d = g.box_downsample(2).unwrap();
        assert_eq!(d.data, vec![0.5, 2.5]);
        assert!(g.box_downsample(3).is_err());
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Grid::<f32>::from_vec(2, 2, 3, vec![0.0; 11]).is_err());
    }
}
