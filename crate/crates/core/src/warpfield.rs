//! Dense displacement fields under the backward-warp convention.
//!
//! A field `phi` warps a source image `S` into `W[i, j] = S[i - phi_i[i, j], j - phi_j[i, j]]`:
//! every output pixel pulls an interpolated intensity from the source.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{bilinear_axis, Image};
use crate::netpbm::atomic_write;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"WRP1";
const HEADER_LEN: usize = 12;

/// Default number of fixed-point iterations used by [`WarpField::invert`].
pub const DEFAULT_INVERT_ITERATIONS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct WarpField<T = f32> {
    height: usize,
    width: usize,
    phi_i: Vec<T>,
    phi_j: Vec<T>,
}

impl<T: Scalar> WarpField<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, T::zero(), T::zero())
    }

    /// Uniform translation: every output pixel pulls from `(i - di, j - dj)`.
    pub fn constant(height: usize, width: usize, di: T, dj: T) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            phi_i: vec![di; n],
            phi_j: vec![dj; n],
        }
    }

    pub fn from_parts(height: usize, width: usize, phi_i: Vec<T>, phi_j: Vec<T>) -> Result<Self> {
        let n = height * width;
        if phi_i.len() != n || phi_j.len() != n {
            return Err(Error::Dimension(format!(
                "field components have {} and {} values, expected {n}",
                phi_i.len(),
                phi_j.len()
            )));
        }
        Ok(Self {
            height,
            width,
            phi_i,
            phi_j,
        })
    }

    /// Builds a field from `f(i, j) -> (phi_i, phi_j)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let n = height * width;
        let mut phi_i = Vec::with_capacity(n);
        let mut phi_j = Vec::with_capacity(n);
        for i in 0..height {
            for j in 0..width {
                let (a, b) = f(i, j);
                phi_i.push(a);
                phi_j.push(b);
            }
        }
        Self {
            height,
            width,
            phi_i,
            phi_j,
        }
    }

    pub fn from_images(phi_i: &Image<T>, phi_j: &Image<T>) -> Result<Self> {
        phi_i.ensure_same_shape(phi_j, "field components")?;
        Self::from_parts(
            phi_i.height(),
            phi_i.width(),
            phi_i.data().to_vec(),
            phi_j.data().to_vec(),
        )
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

    pub fn phi_i(&self) -> &[T] {
        &self.phi_i
    }

    pub fn phi_j(&self) -> &[T] {
        &self.phi_j
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> (T, T) {
        let k = i * self.width + j;
        (self.phi_i[k], self.phi_j[k])
    }

    pub fn component_images(&self) -> (Image<T>, Image<T>) {
        (
            Image::from_vec(self.height, self.width, self.phi_i.clone()).unwrap(),
            Image::from_vec(self.height, self.width, self.phi_j.clone()).unwrap(),
        )
    }

    pub fn cast<U: Scalar>(&self) -> WarpField<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of_f64(x.as_f64())).collect();
        WarpField {
            height: self.height,
            width: self.width,
            phi_i: conv(&self.phi_i),
            phi_j: conv(&self.phi_j),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi_i.iter().chain(&self.phi_j).all(|v| v.is_finite())
    }

    fn ensure_same_shape(&self, other: (usize, usize), what: &str) -> Result<()> {
        if self.shape() != other {
            return Err(Error::shape(what, self.shape(), other));
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            phi_i: self.phi_i.iter().map(|&v| v * s).collect(),
            phi_j: self.phi_j.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other.shape(), "field add")?;
        Ok(Self {
            height: self.height,
            width: self.width,
            phi_i: self.phi_i.iter().zip(&other.phi_i).map(|(&a, &b)| a + b).collect(),
            phi_j: self.phi_j.iter().zip(&other.phi_j).map(|(&a, &b)| a + b).collect(),
        })
    }

    /// Largest displacement magnitude `sqrt(phi_i^2 + phi_j^2)` over the grid.
    pub fn max_magnitude(&self) -> T {
        self.phi_i
            .iter()
            .zip(&self.phi_j)
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(T::zero(), T::max)
    }

    /// Largest absolute finite difference of either component along either
    /// axis, i.e. max |d phi / d x| measured between neighbouring pixels.
    pub fn max_gradient(&self) -> T {
        let (h, w) = self.shape();
        let mut m = T::zero();
        for comp in [&self.phi_i, &self.phi_j] {
            for i in 0..h {
                for j in 0..w {
                    let k = i * w + j;
                    if i + 1 < h {
                        m = m.max((comp[k + w] - comp[k]).abs());
                    }
                    if j + 1 < w {
                        m = m.max((comp[k + 1] - comp[k]).abs());
                    }
                }
            }
        }
        m
    }

    /// Bilinear sample of both components at a real position (edge-clamped).
    #[inline]
    pub fn sample(&self, y: T, x: T) -> (T, T) {
        let (y0, y1, fy) = bilinear_axis(y, self.height);
        let (x0, x1, fx) = bilinear_axis(x, self.width);
        let w = self.width;
        let one = T::one();
        let lerp = |c: &[T]| {
            let top = c[y0 * w + x0] * (one - fx) + c[y0 * w + x1] * fx;
            let bottom = c[y1 * w + x0] * (one - fx) + c[y1 * w + x1] * fx;
            top * (one - fy) + bottom * fy
        };
        (lerp(&self.phi_i), lerp(&self.phi_j))
    }

    /// Warps `src`: `W[i, j] = src(i - phi_i, j - phi_j)` with bilinear sampling.
    pub fn apply(&self, src: &Image<T>) -> Result<Image<T>> {
        self.ensure_same_shape(src.shape(), "warp apply")?;
        let mut k = 0;
        Ok(Image::from_fn(self.height, self.width, |i, j| {
            let y = T::from_usize(i).unwrap() - self.phi_i[k];
            let x = T::from_usize(j).unwrap() - self.phi_j[k];
            k += 1;
            src.sample_bilinear(y, x)
        }))
    }

    /// Composition such that `h.apply(x) ≈ self.apply(inner.apply(x))`:
    /// `h(p) = self(p) + inner(p - self(p))`.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        self.ensure_same_shape(inner.shape(), "field compose")?;
        let mut k = 0;
        Ok(Self::from_fn(self.height, self.width, |i, j| {
            let (fi, fj) = (self.phi_i[k], self.phi_j[k]);
            k += 1;
            let y = T::from_usize(i).unwrap() - fi;
            let x = T::from_usize(j).unwrap() - fj;
            let (gi, gj) = inner.sample(y, x);
            (fi + gi, fj + gj)
        }))
    }

    /// Approximate inverse by fixed-point iteration, `v <- -phi(p - v(p))`
    /// starting from `v = 0`, so that `v.apply(phi.apply(x)) ≈ x`.
    pub fn invert(&self, iterations: usize) -> Self {
        let mut v = Self::zeros(self.height, self.width);
        for _ in 0..iterations {
            let mut k = 0;
            v = Self::from_fn(self.height, self.width, |i, j| {
                let y = T::from_usize(i).unwrap() - v.phi_i[k];
                let x = T::from_usize(j).unwrap() - v.phi_j[k];
                k += 1;
                let (a, b) = self.sample(y, x);
                (-a, -b)
            });
        }
        v
    }

    /// Determinant of the Jacobian of the sampling map `p -> p - phi(p)`,
    /// by central differences. Border pixels use one-sided differences.
    pub fn jacobian_determinant(&self) -> Image<T> {
        let (h, w) = self.shape();
        let d = |c: &[T], i: usize, j: usize, along_rows: bool| -> T {
            let (lo, hi, a, b) = if along_rows {
                let (lo, hi) = (i.saturating_sub(1), (i + 1).min(h - 1));
                (lo, hi, c[lo * w + j], c[hi * w + j])
            } else {
                let (lo, hi) = (j.saturating_sub(1), (j + 1).min(w - 1));
                (lo, hi, c[i * w + lo], c[i * w + hi])
            };
            if hi == lo {
                T::zero()
            } else {
                (b - a) / T::from_usize(hi - lo).unwrap()
            }
        };
        Image::from_fn(h, w, |i, j| {
            let a = T::one() - d(&self.phi_i, i, j, true);
            let b = -d(&self.phi_i, i, j, false);
            let c = -d(&self.phi_j, i, j, true);
            let e = T::one() - d(&self.phi_j, i, j, false);
            a * e - b * c
        })
    }

    /// Resamples to twice the resolution, doubling displacements. Sample
    /// centres are aligned, so output pixel `p` reads the input at `(p + 0.5) / 2 - 0.5`.
    pub fn upsample2(&self, height: usize, width: usize) -> Self {
        let two = T::of_f64(2.0);
        let half = T::of_f64(0.5);
        let quarter = T::of_f64(0.25);
        Self::from_fn(height, width, |i, j| {
            let y = T::from_usize(i).unwrap() * half - quarter;
            let x = T::from_usize(j).unwrap() * half - quarter;
            let (a, b) = self.sample(y, x);
            (a * two, b * two)
        })
    }

    /// Serializes to the `WRP1` little-endian layout.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in self.phi_i.iter().chain(&self.phi_j) {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "warp file header truncated: expected {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad warp magic {:?}",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = height * width;
        let expected = HEADER_LEN + 8 * n;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "warp payload length mismatch: expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let vals: Vec<T> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| T::of_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let (a, b) = vals.split_at(n);
        Self::from_parts(height, width, a.to_vec(), b.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path, &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Mean absolute difference over pixels at least `margin` away from every border.
pub fn mean_abs_interior<T: Scalar>(a: &Image<T>, b: &Image<T>, margin: usize) -> Result<f64> {
    a.ensure_same_shape(b, "interior error")?;
    let (h, w) = a.shape();
    if 2 * margin >= h || 2 * margin >= w {
        return Err(Error::Dimension(format!(
            "margin {margin} leaves no interior in {h}x{w}"
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in margin..h - margin {
        for j in margin..w - margin {
            sum += (a.get(i, j).as_f64() - b.get(i, j).as_f64()).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}
