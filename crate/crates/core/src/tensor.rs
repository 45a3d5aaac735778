//! Dense spatio-temporal tensors.
//!
//! A [`ClipTensor`] stores 64-bit floats row-major in `(B,) H, W, T, C` order,
//! so element `(h, w, t, c)` of an unbatched tensor lives at flat index
//! `((h * W + w) * T + t) * C + c`. Weight arrays of arbitrary rank use the
//! simpler [`Array`] type.

use crate::error::{Error, Result};

/// Dimensions of a clip tensor. Every component is at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorShape {
    pub batch: Option<usize>,
    pub h: usize,
    pub w: usize,
    pub t: usize,
    pub c: usize,
}

impl TensorShape {
    pub fn new(h: usize, w: usize, t: usize, c: usize) -> Result<Self> {
        let shape = Self { batch: None, h, w, t, c };
        shape.validate()?;
        Ok(shape)
    }

    pub fn batched(b: usize, h: usize, w: usize, t: usize, c: usize) -> Result<Self> {
        let shape = Self { batch: Some(b), h, w, t, c };
        shape.validate()?;
        Ok(shape)
    }

    fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero dimension in {dims:?}")));
        }
        checked_product(&dims)?;
        Ok(())
    }

    /// Dims in storage order, including the batch dim when present.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(5);
        if let Some(b) = self.batch {
            dims.push(b);
        }
        dims.extend([self.h, self.w, self.t, self.c]);
        dims
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [h, w, t, c] => Self::new(h, w, t, c),
            [b, h, w, t, c] => Self::batched(b, h, w, t, c),
            _ => Err(Error::Shape(format!("rank {} is not 4 or 5", dims.len()))),
        }
    }

    pub fn batch_len(&self) -> usize {
        self.batch.unwrap_or(1)
    }

    /// Element count of one sample.
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.t * self.c
    }

    pub fn numel(&self) -> usize {
        self.batch_len() * self.sample_len()
    }

    /// Sites per sample (`H·W·T`).
    pub fn sites(&self) -> usize {
        self.h * self.w * self.t
    }

    pub fn with_channels(&self, c: usize) -> Self {
        Self { c, ..*self }
    }

    pub fn unbatched(&self) -> Self {
        Self { batch: None, ..*self }
    }

    pub fn same_site_dims(&self, other: &Self) -> bool {
        self.batch_len() == other.batch_len() && self.h == other.h && self.w == other.w && self.t == other.t
    }

    pub fn index(&self, h: usize, w: usize, t: usize, c: usize) -> usize {
        ((h * self.w + w) * self.t + t) * self.c + c
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(b) = self.batch {
            write!(f, "{b}x")?;
        }
        write!(f, "{}x{}x{}x{}", self.h, self.w, self.t, self.c)
    }
}

pub(crate) fn checked_product(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d).ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))
    })
}

/// Dense `(B,) H × W × T × C` tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl ClipTensor {
    pub fn new_filled(shape: TensorShape, value: f64) -> Self {
        Self { data: vec![value; shape.numel()], shape }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Self::new_filled(shape, 0.0)
    }

    pub fn from_vec(shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Mismatch(format!("shape {shape} needs {} elements, got {}", shape.numel(), data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Builds an unbatched tensor from a function of `(h, w, t, c)`.
    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let shape = shape.unbatched();
        let mut data = Vec::with_capacity(shape.numel());
        for h in 0..shape.h {
            for w in 0..shape.w {
                for t in 0..shape.t {
                    for c in 0..shape.c {
                        data.push(f(h, w, t, c));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, h: usize, w: usize, t: usize, c: usize) -> f64 {
        self.data[self.shape.index(h, w, t, c)]
    }

    pub fn set(&mut self, h: usize, w: usize, t: usize, c: usize, value: f64) {
        let i = self.shape.index(h, w, t, c);
        self.data[i] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Mismatch(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// L∞ distance.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Iterates over the samples of a batched tensor (a single sample if unbatched).
    pub fn samples(&self) -> impl Iterator<Item = ClipTensor> + '_ {
        let inner = self.shape.unbatched();
        self.data.chunks(inner.numel()).map(move |chunk| ClipTensor { shape: inner, data: chunk.to_vec() })
    }

    /// Stacks unbatched samples along a new batch dim.
    pub fn stack(samples: &[ClipTensor]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Shape("cannot stack zero samples".into()))?;
        let inner = first.shape.unbatched();
        let mut data = Vec::with_capacity(inner.numel() * samples.len());
        for s in samples {
            if s.shape != inner {
                return Err(Error::Mismatch(format!("stack: {} vs {}", s.shape, inner)));
            }
            data.extend_from_slice(&s.data);
        }
        let shape = TensorShape { batch: Some(samples.len()), ..inner };
        Ok(Self { shape, data })
    }

    /// Concatenates along the channel axis; part `k` occupies its contiguous
    /// channel block in input order.
    pub fn concat_channels(parts: &[&ClipTensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of zero parts".into()))?;
        for p in parts {
            if !p.shape.same_site_dims(&first.shape) || p.shape.batch != first.shape.batch {
                return Err(Error::Mismatch(format!("concat: {} vs {}", p.shape, first.shape)));
            }
        }
        let total_c: usize = parts.iter().map(|p| p.shape.c).sum();
        let shape = first.shape.with_channels(total_c);
        let sites = shape.batch_len() * shape.sites();
        let mut data = Vec::with_capacity(sites * total_c);
        for site in 0..sites {
            for p in parts {
                let c = p.shape.c;
                data.extend_from_slice(&p.data[site * c..(site + 1) * c]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Channels `start..start + len` as a new tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let c = self.shape.c;
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!("channel slice {start}..{} out of 0..{c}", start + len)));
        }
        let data = self.data.chunks(c).flat_map(|site| site[start..start + len].iter().copied()).collect();
        Ok(Self { shape: self.shape.with_channels(len), data })
    }
}

/// Row-major n-dimensional array used for weights and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = checked_product(dims)?;
        if n != data.len() {
            return Err(Error::Mismatch(format!("array dims {dims:?} need {n} elements, got {}", data.len())));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn expect_dims(&self, dims: &[usize], what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Mismatch(format!("{what}: expected dims {dims:?}, got {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Array) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Mismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}
