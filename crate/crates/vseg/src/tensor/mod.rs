//! Dense 5-axis tensors and the primitive numerical kernels.
//!
//! Layout is row-major `(n, c, d, h, w)`: batch, channel, depth, height,
//! width. Tensors are immutable once constructed (cheap to clone, safe to
//! share across threads); every kernel allocates its output.

mod conv;
mod ops;

pub use conv::{
    conv3d, conv3d_grad_bias, conv3d_grad_input, conv3d_grad_weights, conv_transpose3d,
    conv_transpose3d_grad_input, conv_transpose3d_grad_weights,
};
pub use ops::{
    add, batch_norm_backward, batch_norm_infer, batch_norm_infer_backward, batch_norm_train,
    broadcast_mul, broadcast_mul_grads, concat_channels, concat_split_grad, global_avg_pool,
    global_avg_pool_grad, relu, relu_grad, select_channel, select_channel_grad, sigmoid,
    sigmoid_grad, softmax2, softmax2_grad, BnStats,
};

use crate::error::{Axis, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::Arc;

/// Element width of a tensor's storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Scalar types tensors can hold. Implemented for `f32` and `f64`;
/// all tests and gradient checks run in `f64`.
pub trait Element:
    Copy
    + PartialOrd
    + PartialEq
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
}

macro_rules! impl_element {
    ($t:ty, $p:expr) => {
        impl Element for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const PRECISION: Precision = $p;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline]
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
        }
    };
}

impl_element!(f32, Precision::Single);
impl_element!(f64, Precision::Double);

/// Extents of a 5-axis tensor: `(n, c, d, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Self {
        Shape5 { n, c, d, h, w }
    }

    /// Total element count. Panics on overflow; `validate` reports it as an error.
    pub fn len(&self) -> usize {
        self.n * self.c * self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> (usize, usize, usize) {
        (self.d, self.h, self.w)
    }

    pub fn spatial_len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn with_c(&self, c: usize) -> Self {
        Shape5 { c, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, v) in [
            (Axis::Batch, self.n),
            (Axis::Channel, self.c),
            (Axis::Depth, self.d),
            (Axis::Height, self.h),
            (Axis::Width, self.w),
        ] {
            if v == 0 {
                return Err(Error::InvalidSpec {
                    op: "shape",
                    reason: format!("{axis} extent must be >= 1"),
                });
            }
        }
        self.n
            .checked_mul(self.c)
            .and_then(|v| v.checked_mul(self.d))
            .and_then(|v| v.checked_mul(self.h))
            .and_then(|v| v.checked_mul(self.w))
            .ok_or_else(|| Error::InvalidSpec {
                op: "shape",
                reason: "element count overflows the addressable range".into(),
            })?;
        Ok(())
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        (((n * self.c + c) * self.d + z) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape5 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}x{}x{}x{}x{})",
            self.n, self.c, self.d, self.h, self.w
        )
    }
}

/// Immutable dense tensor. Clones share storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<E: Element = f64> {
    shape: Shape5,
    data: Arc<[E]>,
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{} [", self.shape)?;
        for (i, v) in self.data.iter().take(8).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > 8 {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}

impl<E: Element> Tensor<E> {
    pub fn zeros(shape: Shape5) -> Self {
        shape.validate().expect("invalid shape");
        Tensor {
            shape,
            data: vec![E::ZERO; shape.len()].into(),
        }
    }

    pub fn full(shape: Shape5, v: E) -> Self {
        shape.validate().expect("invalid shape");
        Tensor {
            shape,
            data: vec![v; shape.len()].into(),
        }
    }

    pub fn from_vec(shape: Shape5, data: Vec<E>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::InvalidSpec {
                op: "tensor",
                reason: format!(
                    "data length {} does not match shape {} ({} elements)",
                    data.len(),
                    shape,
                    shape.len()
                ),
            });
        }
        Ok(Tensor {
            shape,
            data: data.into(),
        })
    }

    /// Scalar tensor of shape (1,1,1,1,1).
    pub fn scalar(v: E) -> Self {
        Tensor::full(Shape5::new(1, 1, 1, 1, 1), v)
    }

    pub fn randn(shape: Shape5, mean: f64, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(mean, std).expect("std must be finite and non-negative");
        let data: Vec<E> = (0..shape.len())
            .map(|_| E::from_f64(dist.sample(rng)))
            .collect();
        Tensor::from_vec(shape, data).expect("length matches by construction")
    }

    pub fn rand_uniform(shape: Shape5, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data: Vec<E> = (0..shape.len())
            .map(|_| E::from_f64(rng.random_range(lo..hi)))
            .collect();
        Tensor::from_vec(shape, data).expect("length matches by construction")
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> E {
        self.data[self.shape.offset(n, c, z, y, x)]
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        let data: Vec<E> = self.data.iter().map(|&v| f(v)).collect();
        Tensor {
            shape: self.shape,
            data: data.into(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<E>, op: &'static str, f: impl Fn(E, E) -> E) -> Result<Tensor<E>> {
        check_same_shape(op, self.shape, other.shape)?;
        let data: Vec<E> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data: data.into(),
        })
    }

    pub fn sum(&self) -> E {
        let mut acc = E::ZERO;
        for &v in self.data.iter() {
            acc += v;
        }
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data: Vec<F> = self.data.iter().map(|v| F::from_f64(v.to_f64())).collect();
        Tensor {
            shape: self.shape,
            data: data.into(),
        }
    }
}

/// Report the first differing axis between two shapes that must be equal.
pub(crate) fn check_same_shape(op: &'static str, a: Shape5, b: Shape5) -> Result<()> {
    for (axis, ea, eb) in [
        (Axis::Batch, a.n, b.n),
        (Axis::Channel, a.c, b.c),
        (Axis::Depth, a.d, b.d),
        (Axis::Height, a.h, b.h),
        (Axis::Width, a.w, b.w),
    ] {
        if ea != eb {
            return Err(Error::ShapeMismatch {
                op,
                axis,
                expected: ea,
                got: eb,
            });
        }
    }
    Ok(())
}

/// Geometry of one convolution: channel counts, kernel extents, stride,
/// isotropic dilation, and zero padding per side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub dilation: usize,
    pub padding: (usize, usize, usize),
}

impl ConvSpec {
    /// Stride-1 convolution with "same" geometry: output spatial extent
    /// equals input extent for any odd kernel and any dilation.
    pub fn same(in_channels: usize, out_channels: usize, k: usize, dilation: usize) -> Self {
        debug_assert!(k % 2 == 1, "same-padding needs an odd kernel");
        let pad = dilation * (k - 1) / 2;
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k, k),
            stride: (1, 1, 1),
            dilation,
            padding: (pad, pad, pad),
        }
    }

    /// 1x1x1 channel-mixing convolution.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec::same(in_channels, out_channels, 1, 1)
    }

    /// 3x3x3 stride-2 convolution halving each spatial extent (even inputs).
    pub fn downsample(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (3, 3, 3),
            stride: (2, 2, 2),
            dilation: 1,
            padding: (1, 1, 1),
        }
    }

    /// 2x2x2 stride-2 spec for `conv_transpose3d`: doubles each spatial extent.
    pub fn deconv(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (2, 2, 2),
            stride: (2, 2, 2),
            dilation: 1,
            padding: (0, 0, 0),
        }
    }

    pub(crate) fn validate_common(&self, op: &'static str) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec {
                op,
                reason: "channel counts must be >= 1".into(),
            });
        }
        let (kd, kh, kw) = self.kernel;
        if kd == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidSpec {
                op,
                reason: "kernel extents must be >= 1".into(),
            });
        }
        let (sd, sh, sw) = self.stride;
        if sd == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidSpec {
                op,
                reason: "stride must be >= 1".into(),
            });
        }
        if self.dilation == 0 {
            return Err(Error::InvalidSpec {
                op,
                reason: "dilation must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Validation for forward convolution: kernel extents must be odd.
    pub fn validate_conv(&self) -> Result<()> {
        self.validate_common("conv3d")?;
        let (kd, kh, kw) = self.kernel;
        if kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidSpec {
                op: "conv3d",
                reason: format!("kernel extents must be odd, got ({kd}, {kh}, {kw})"),
            });
        }
        Ok(())
    }

    /// Validation for transposed convolution: the only geometry the network
    /// uses is exact spatial doubling (stride 2, kernel − 2·padding = 2).
    pub fn validate_deconv(&self) -> Result<()> {
        self.validate_common("conv_transpose3d")?;
        let (kd, kh, kw) = self.kernel;
        let (sd, sh, sw) = self.stride;
        let (pd, ph, pw) = self.padding;
        for (axis, k, s, p) in [
            (Axis::Depth, kd, sd, pd),
            (Axis::Height, kh, sh, ph),
            (Axis::Width, kw, sw, pw),
        ] {
            if s != 2 || k < 2 * p + 2 || k - 2 * p != 2 {
                return Err(Error::InvalidSpec {
                    op: "conv_transpose3d",
                    reason: format!(
                        "{axis} axis: need stride 2 and kernel - 2*padding = 2 for exact doubling \
                         (kernel {k}, stride {s}, padding {p})"
                    ),
                });
            }
        }
        if self.dilation != 1 {
            return Err(Error::InvalidSpec {
                op: "conv_transpose3d",
                reason: "dilation must be 1".into(),
            });
        }
        Ok(())
    }

    /// Output spatial extents of the forward convolution:
    /// `floor((in + 2·pad − dilation·(k−1) − 1) / stride) + 1` per axis.
    pub fn output_extent(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (kd, kh, kw) = self.kernel;
        let (sd, sh, sw) = self.stride;
        let (pd, ph, pw) = self.padding;
        let one = |axis: Axis, i: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let eff = self.dilation * (k - 1) + 1;
            if i + 2 * p < eff {
                return Err(Error::EmptyOutput {
                    op: "conv3d",
                    axis,
                    input: i + 2 * p,
                    needed: eff,
                });
            }
            Ok((i + 2 * p - eff) / s + 1)
        };
        Ok((
            one(Axis::Depth, input.0, kd, sd, pd)?,
            one(Axis::Height, input.1, kh, sh, ph)?,
            one(Axis::Width, input.2, kw, sw, pw)?,
        ))
    }

    /// Shape of the weight tensor: `(out_c, in_c, kd, kh, kw)` packed into
    /// a `Shape5`.
    pub fn weight_shape(&self) -> Shape5 {
        Shape5::new(
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
            self.kernel.2,
        )
    }

    /// Weight shape for `conv_transpose3d`: `(in_c, out_c, kd, kh, kw)`.
    pub fn deconv_weight_shape(&self) -> Shape5 {
        Shape5::new(
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
            self.kernel.2,
        )
    }

    /// Shape of the bias tensor: one value per output channel.
    pub fn bias_shape(&self) -> Shape5 {
        Shape5::new(1, self.out_channels, 1, 1, 1)
    }
}

/// Run `f(chunk_index, chunk)` over consecutive `chunk`-sized pieces of
/// `data`. Each element is written by exactly one invocation, and every
/// reduction happens sequentially inside one invocation, so the result does
/// not depend on thread scheduling.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_chunk<T: Send, F: Fn(usize, &mut [T]) + Sync>(
    data: &mut [T],
    chunk: usize,
    f: F,
) {
    use rayon::prelude::*;
    data.par_chunks_mut(chunk.max(1))
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_chunk<T, F: Fn(usize, &mut [T])>(data: &mut [T], chunk: usize, f: F) {
    for (i, c) in data.chunks_mut(chunk.max(1)).enumerate() {
        f(i, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_row_major() {
        let s = Shape5::new(2, 3, 4, 5, 6);
        assert_eq!(s.offset(0, 0, 0, 0, 0), 0);
        assert_eq!(s.offset(0, 0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 0, 1, 0), 6);
        assert_eq!(s.offset(0, 0, 1, 0, 0), 30);
        assert_eq!(s.offset(0, 1, 0, 0, 0), 120);
        assert_eq!(s.offset(1, 0, 0, 0, 0), 360);
        assert_eq!(s.len(), 720);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Shape5::new(1, 0, 2, 2, 2).validate().is_err());
        assert!(Shape5::new(1, 1, 1, 1, 1).validate().is_ok());
    }

    #[test]
    fn from_vec_checks_length() {
        let s = Shape5::new(1, 1, 1, 1, 3);
        assert!(Tensor::from_vec(s, vec![1.0, 2.0]).is_err());
        assert!(Tensor::from_vec(s, vec![1.0, 2.0, 3.0]).is_ok());
    }

    #[test]
    fn same_padding_preserves_extent() {
        for k in [1usize, 3, 5, 7] {
            for dil in [1usize, 2, 4, 8] {
                let spec = ConvSpec::same(1, 1, k, dil);
                let out = spec.output_extent((16, 16, 16)).unwrap();
                assert_eq!(out, (16, 16, 16), "k={k} dil={dil}");
            }
        }
    }

    #[test]
    fn output_extent_error_names_axis() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (3, 3, 3),
            stride: (1, 1, 1),
            dilation: 4,
            padding: (0, 0, 0),
        };
        // effective extent 9 > 4: no valid output positions
        let err = spec.output_extent((4, 16, 16)).unwrap_err();
        match err {
            Error::EmptyOutput { axis, .. } => assert_eq!(axis, Axis::Depth),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn deconv_validation() {
        assert!(ConvSpec::deconv(4, 2).validate_deconv().is_ok());
        let mut bad = ConvSpec::deconv(4, 2);
        bad.stride = (1, 2, 2);
        assert!(bad.validate_deconv().is_err());
        let mut bad = ConvSpec::deconv(4, 2);
        bad.kernel = (3, 2, 2);
        assert!(bad.validate_deconv().is_err());
    }
}
