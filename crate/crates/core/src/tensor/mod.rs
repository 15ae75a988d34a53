//! Dense rank-4 tensors in `(N, C, H, W)` layout and the numeric kernels the
//! rest of the crate is built from.
//!
//! Everything here works in `f32` and is a pure function of its inputs. The
//! only external help is `matrixmultiply`'s single-threaded `sgemm`, which the
//! convolution kernels use after an im2col rearrangement.

mod conv;
mod map;
mod pool;

pub use conv::{conv2d_backward, conv2d_forward, conv2d_param_grads, conv_output_size, ConvGrads};
pub use map::{upsample_nearest, Map2d};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward, PoolIndices,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a rank-4 tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Number of elements in one spatial plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Number of elements belonging to one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Flat row-major offset of `(n, c, y, x)`.
    #[inline]
    pub const fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub(crate) fn ensure_nonempty(&self, what: &str) -> Result<()> {
        if self.numel() == 0 {
            return Err(Error::shape(format!(
                "{what}: tensor has an empty dimension {self}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major `(N, C, H, W)` tensor of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "buffer of {} values cannot back a tensor of shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f32 {
        let i = self.shape.offset(n, c, y, x);
        &mut self.data[i]
    }

    /// All values of batch item `n`.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.shape.item();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// The spatial plane of channel `c` of item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let len = self.shape.plane();
        let start = (n * self.shape.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let len = self.shape.plane();
        let start = (n * self.shape.c + c) * len;
        &mut self.data[start..start + len]
    }

    /// Copies a contiguous range of batch items into a new tensor.
    pub fn slice_items(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.shape.n {
            return Err(Error::shape(format!(
                "item range {start}..{end} out of bounds for batch of {}",
                self.shape.n
            )));
        }
        let len = self.shape.item();
        Tensor::from_vec(
            Shape::new(end - start, self.shape.c, self.shape.h, self.shape.w),
            self.data[start * len..end * len].to_vec(),
        )
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.ensure_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f32) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f32
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Elementwise product `a ⊙ b`.
///
/// `b` either has `a`'s shape, or is a spatial mask of shape `(1, 1, H, W)`
/// broadcast over batch and channels, or a per-item spatial mask of shape
/// `(N, 1, H, W)` broadcast over channels.
pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let sa = a.shape();
    let sb = b.shape();
    if sa == sb {
        return a.zip_map(b, |x, y| x * y);
    }
    let spatial_ok = sb.c == 1 && sb.h == sa.h && sb.w == sa.w;
    if !spatial_ok || !(sb.n == 1 || sb.n == sa.n) {
        return Err(Error::shape(format!(
            "cannot broadcast {sb} against {sa}: expected equal shapes, (1, 1, H, W) or (N, 1, H, W)"
        )));
    }
    let plane = sa.plane();
    let mut out = a.clone();
    for n in 0..sa.n {
        let mask = b.plane(if sb.n == 1 { 0 } else { n }, 0);
        for c in 0..sa.c {
            let dst = out.plane_mut(n, c);
            for i in 0..plane {
                dst[i] *= mask[i];
            }
        }
    }
    Ok(out)
}
