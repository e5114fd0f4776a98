//! Single-channel images and bilinear sampling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f32> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "image data has {} values, expected {}x{}={}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by evaluating `f(i, j)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.width + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    pub fn ensure_same_shape(&self, other: &Image<T>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(what, self.shape(), other.shape()));
        }
        Ok(())
    }

    /// Min-max rescale into [0, 1]. A constant image maps to all zeros.
    pub fn normalize(&self) -> Self {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return Self::zeros(self.height, self.width);
        }
        let range = hi - lo;
        self.map(|v| (v - lo) / range)
    }

    /// Bilinear interpolation at a real-valued (row, col) position.
    ///
    /// Coordinates are clamped to the image, so sampling outside replicates the
    /// nearest edge pixel. The result never leaves the range spanned by the
    /// four neighbours.
    pub fn sample_bilinear(&self, y: T, x: T) -> T {
        let (y0, y1, fy) = bilinear_axis(y, self.height);
        let (x0, x1, fx) = bilinear_axis(x, self.width);
        let w = self.width;
        let a = self.data[y0 * w + x0];
        let b = self.data[y0 * w + x1];
        let c = self.data[y1 * w + x0];
        let d = self.data[y1 * w + x1];
        let one = T::one();
        let top = a * (one - fx) + b * fx;
        let bottom = c * (one - fx) + d * fx;
        let v = top * (one - fy) + bottom * fy;
        let lo = a.min(b).min(c.min(d));
        let hi = a.max(b).max(c.max(d));
        v.max(lo).min(hi)
    }

    /// 2x2 block mean, used to build pyramids. Odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Self {
        let h = self.height / 2;
        let w = self.width / 2;
        let quarter = T::of_f64(0.25);
        Self::from_fn(h, w, |i, j| {
            (self.get(2 * i, 2 * j)
                + self.get(2 * i, 2 * j + 1)
                + self.get(2 * i + 1, 2 * j)
                + self.get(2 * i + 1, 2 * j + 1))
                * quarter
        })
    }
}

/// Splits a clamped coordinate into the two neighbouring indices and the
/// fractional weight of the upper one. The lower index is capped at `n - 2`
/// so that the last sample `n - 1` is reached with weight 1.
#[inline]
pub fn bilinear_axis<T: Scalar>(coord: T, n: usize) -> (usize, usize, T) {
    if n < 2 {
        return (0, 0, T::zero());
    }
    let max = T::from_usize(n - 1).unwrap();
    let c = if coord.is_nan() {
        T::zero()
    } else {
        coord.max(T::zero()).min(max)
    };
    let base = c.floor().to_usize().unwrap_or(0).min(n - 2);
    let frac = c - T::from_usize(base).unwrap();
    (base, base + 1, frac)
}
