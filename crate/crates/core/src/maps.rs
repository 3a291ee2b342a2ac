//! Spatial maps over the patch grid.
//!
//! Both maps are stored row-major; the semantic map keeps channels innermost
//! so the vector of a patch is a contiguous slice.

use crate::error::{Result, ScmError};
use crate::scalar::Real;
use crate::tensor_store::Tensor;

/// Single-channel H x W map (attention map, coupled score map, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap<T = f64> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// H x W x C per-class map.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap<T = f64> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> ScoreMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(ScmError::Shape(format!(
                "{} values do not fill a {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(ScmError::Shape(format!(
                "maps differ in shape: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn values(&self) -> ScoreMap<f64> {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.value()).collect(),
        }
    }

    pub fn lift<U: Real>(&self) -> ScoreMap<U> {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64(v.value())).collect(),
        }
    }
}

impl ScoreMap<f64> {
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.height, self.width], &self.data)
            .expect("map dims are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            [h, w] => ScoreMap::new(*h, *w, t.to_f64()),
            dims => Err(ScmError::Shape(format!(
                "score map needs a rank-2 tensor, got dims {dims:?}"
            ))),
        }
    }
}

impl<T: Real> SemanticMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(ScmError::Shape(format!(
                "{} values do not fill a {height}x{width}x{channels} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, r: usize, c: usize, k: usize) -> T {
        self.data[(r * self.width + c) * self.channels + k]
    }

    /// Channel vector of the patch with flat index `i`.
    pub fn patch(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> Result<ScoreMap<T>> {
        if k >= self.channels {
            return Err(ScmError::Argument(format!(
                "channel {k} out of range for {} channels",
                self.channels
            )));
        }
        Ok(ScoreMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(k).step_by(self.channels).copied().collect(),
        })
    }

    /// Multiply every channel of each patch by the matching entry of `m`.
    pub fn scale_patches(&self, m: &ScoreMap<T>) -> Result<Self> {
        if (self.height, self.width) != (m.height(), m.width()) {
            return Err(ScmError::Shape(format!(
                "semantic map {}x{} vs score map {}x{}",
                self.height,
                self.width,
                m.height(),
                m.width()
            )));
        }
        let data = self
            .data
            .chunks(self.channels)
            .zip(m.as_slice())
            .flat_map(|(patch, &s)| patch.iter().map(move |&v| v * s))
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn values(&self) -> SemanticMap<f64> {
        SemanticMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| v.value()).collect(),
        }
    }

    pub fn lift<U: Real>(&self) -> SemanticMap<U> {
        SemanticMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64(v.value())).collect(),
        }
    }
}

impl SemanticMap<f64> {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.height, self.width, self.channels], &self.data)
            .expect("map dims are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            [h, w, c] => SemanticMap::new(*h, *w, *c, t.to_f64()),
            dims => Err(ScmError::Shape(format!(
                "semantic map needs a rank-3 tensor, got dims {dims:?}"
            ))),
        }
    }
}
