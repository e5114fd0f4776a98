use deepwarp_core::{Error, Image, Result};

use crate::real::Real;

/// Dense row-major n-dimensional array. Feature maps are `[H, W, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![T::zero(); shape.iter().product()]).unwrap()
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect()).unwrap()
    }

    /// Marks the tensor as trainable.
    pub fn param(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `[H, W, C]` dimensions; panics on other ranks.
    pub fn hwc(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [h, w, c] => (h, w, c),
            _ => panic!("expected a rank-3 tensor, got {:?}", self.shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the stored gradient.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        assert_eq!(g.len(), self.data.len(), "gradient length");
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    /// Stacks single-channel images into an `[H, W, C]` tensor.
    pub fn stack(images: &[&Image<T>]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dimension("stack needs at least one image".into()))?;
        let (h, w) = first.shape();
        for img in images {
            first.ensure_same_shape(img, "channel stack")?;
        }
        let c = images.len();
        let mut data = vec![T::zero(); h * w * c];
        for (ch, img) in images.iter().enumerate() {
            for (p, &v) in img.data().iter().enumerate() {
                data[p * c + ch] = v;
            }
        }
        Self::new(&[h, w, c], data)
    }

    /// Extracts channel `ch` of an `[H, W, C]` tensor as an image.
    pub fn channel(&self, ch: usize) -> Result<Image<T>> {
        let (h, w, c) = self.hwc();
        if ch >= c {
            return Err(Error::Dimension(format!("channel {ch} of {c}")));
        }
        Image::from_vec(h, w, self.data.iter().skip(ch).step_by(c).copied().collect())
    }
}
