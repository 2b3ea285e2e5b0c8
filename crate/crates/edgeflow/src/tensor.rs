//! Dense row-major tensors and the channel algebra the rest of the crate
//! builds on.
//!
//! Feature maps are rank-3 `[channels, height, width]`, convolution kernels
//! rank-4 `[out_ch, in_ch, kh, kw]`, dense weights rank-2, vectors rank-1.
//! The flattening rule is row-major with the last dimension fastest, shared
//! by the wire codec and every operator.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape must have at least one dimension")]
    EmptyShape,
    #[error("dimension {index} is zero; all dimensions must be >= 1")]
    ZeroDim { index: usize },
    #[error("element count overflows the addressable range")]
    TooLarge,
    #[error("data length {data} does not match shape element count {expected}")]
    DataMismatch { data: usize, expected: usize },
    #[error("expected rank {expected}, got rank {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("concat requires at least one part")]
    EmptyConcat,
    #[error("part {index} has spatial size {got_h}x{got_w}, expected {want_h}x{want_w}")]
    SpatialMismatch {
        index: usize,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("channel slice {start}..{} out of range for {channels} channels", start + count)]
    SliceOutOfRange {
        start: usize,
        count: usize,
        channels: usize,
    },
}

/// Dimension list of a tensor. All dimensions are >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self, TensorError> {
        if dims.is_empty() {
            return Err(TensorError::EmptyShape);
        }
        let mut count: usize = 1;
        for (index, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(TensorError::ZeroDim { index });
            }
            count = count.checked_mul(d).ok_or(TensorError::TooLarge)?;
        }
        // Element payloads are at most 4 bytes each; keep the byte count
        // addressable too.
        count.checked_mul(4).ok_or(TensorError::TooLarge)?;
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn elem_count(&self) -> usize {
        self.0.iter().product()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Dense f32 tensor, row-major, last dimension fastest. Immutable once built;
/// cheap to clone only when small, so operators return fresh buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != shape.elem_count() {
            return Err(TensorError::DataMismatch {
                data: data.len(),
                expected: shape.elem_count(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.elem_count();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        let n = shape.elem_count();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_dims(dims: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        Tensor::new(Shape::new(dims.to_vec())?, data)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn elem_count(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret the same flat buffer under a new shape with an equal
    /// element count.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Tensor, TensorError> {
        let shape = Shape::new(dims.to_vec())?;
        Tensor::new(shape, self.data.clone())
    }

    fn expect_rank(&self, expected: usize) -> Result<(), TensorError> {
        if self.rank() != expected {
            return Err(TensorError::RankMismatch {
                expected,
                got: self.rank(),
            });
        }
        Ok(())
    }

    /// Channel count of a rank-3 feature map.
    pub fn channels(&self) -> Result<usize, TensorError> {
        self.expect_rank(3)?;
        Ok(self.shape.dims()[0])
    }
}

/// Stack rank-3 parts along the channel axis, in argument order. Part `i`'s
/// channel block lands at the sum of the preceding parts' channel counts.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor, TensorError> {
    let first = parts.first().ok_or(TensorError::EmptyConcat)?;
    first.expect_rank(3)?;
    let (h, w) = (first.shape.dims()[1], first.shape.dims()[2]);
    let mut channels = 0usize;
    for (index, part) in parts.iter().enumerate() {
        part.expect_rank(3)?;
        let d = part.shape.dims();
        if d[1] != h || d[2] != w {
            return Err(TensorError::SpatialMismatch {
                index,
                got_h: d[1],
                got_w: d[2],
                want_h: h,
                want_w: w,
            });
        }
        channels += d[0];
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for part in parts {
        data.extend_from_slice(&part.data);
    }
    Tensor::new(Shape::new(vec![channels, h, w])?, data)
}

/// Contiguous channel block `[start, start + count)` of a rank-3 tensor,
/// values copied verbatim. Inverse of [`concat_channels`].
pub fn slice_channels(t: &Tensor, start: usize, count: usize) -> Result<Tensor, TensorError> {
    let channels = t.channels()?;
    if start.checked_add(count).is_none_or(|end| end > channels) {
        return Err(TensorError::SliceOutOfRange {
            start,
            count,
            channels,
        });
    }
    let d = t.shape.dims();
    let plane = d[1] * d[2];
    let data = t.data[start * plane..(start + count) * plane].to_vec();
    Tensor::new(Shape::new(vec![count, d[1], d[2]])?, data)
}
