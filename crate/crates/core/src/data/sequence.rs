use crate::error::{Error, Result};
use crate::tensor::{DiffArray, Scalar};

/// A `T x C x H x W` block of frames with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl FrameSequence {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("frame sequence dims must be positive, got {:?}", dims)));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::dim(format!("dims {:?} do not match {} values", dims, data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData(i));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!("frame value {} outside [0, 1]", v)));
        }
        Ok(FrameSequence { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        FrameSequence { dims, data: vec![0.0; dims.iter().product()] }
    }

    /// Clamps into `[0, 1]` and maps non-finite values to 0.
    pub fn from_clamped(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let data = data.into_iter().map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 }).collect();
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn frame_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames() {
            return Err(Error::dim(format!("frame range {}..{} out of 0..{}", start, end, self.frames())));
        }
        let n = self.frame_len();
        Ok(FrameSequence {
            dims: [end - start, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[start * n..end * n].to_vec(),
        })
    }

    pub fn to_diff<T: Scalar>(&self) -> DiffArray<T> {
        DiffArray::from_vec(&self.dims, self.data.iter().map(|&v| T::lit(v as f64)).collect())
            .expect("dims match data")
    }
}
