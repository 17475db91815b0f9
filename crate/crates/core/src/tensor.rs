//! Dense channel-major (C × H × W) real-valued grids.
//!
//! The same type carries input images, network activations and their
//! gradients. Images handed to the public API are expected to lie in [0, 1];
//! activations are unconstrained.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

/// An image is a tensor whose values are meant to stay in [0, 1].
pub type Image = Tensor;

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for r in 0..shape.height {
                for col in 0..shape.width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn index(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.shape.height + r) * self.shape.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.index(c, r, col)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        let i = self.index(c, r, col);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(expected, self.shape));
        }
        Ok(())
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        other.ensure_shape(self.shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks tensors of identical spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let (h, w) = (parts[0].height(), parts[0].width());
        let channels = parts.iter().map(|t| t.channels()).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for t in parts {
            debug_assert_eq!((t.height(), t.width()), (h, w));
            data.extend_from_slice(&t.data);
        }
        Tensor { shape: Shape::new(channels, h, w), data }
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, counts: &[usize]) -> Vec<Tensor> {
        let p = self.shape.plane();
        let mut offset = 0;
        counts
            .iter()
            .map(|&c| {
                let data = self.data[offset * p..(offset + c) * p].to_vec();
                offset += c;
                Tensor { shape: Shape::new(c, self.height(), self.width()), data }
            })
            .collect()
    }
}
