//! 3-D convolution, its gradients, and the transposed variant.
//!
//! Every kernel assigns each output plane `(n, c)` to exactly one worker and
//! accumulates contributions in a fixed nested-loop order, so results are
//! bit-identical whatever the thread count.
//!
//! Weight layouts: `conv3d` takes `(out_c, in_c, kd, kh, kw)`;
//! `conv_transpose3d` takes `(in_c, out_c, kd, kh, kw)`.

use super::{check_same_shape, for_each_chunk, ConvSpec, Element, Shape5, Tensor};
use crate::error::{Axis, Error, Result};

/// Positions `o < iter_ext` whose sampled index `o*stride + k_off - pad`
/// lands inside `[0, target_ext)`, as a half-open range.
#[inline]
fn stride_range(
    k_off: usize,
    pad: usize,
    stride: usize,
    iter_ext: usize,
    target_ext: usize,
) -> (usize, usize) {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    if target_ext - 1 + pad < k_off {
        return (0, 0);
    }
    let hi = ((target_ext - 1 + pad - k_off) / stride).min(iter_ext - 1);
    if hi < lo {
        (0, 0)
    } else {
        (lo, hi + 1)
    }
}

fn check_weights<E: Element>(
    op: &'static str,
    weights: &Tensor<E>,
    expected: Shape5,
) -> Result<()> {
    check_same_shape(op, expected, weights.shape())
}

fn check_bias<E: Element>(op: &'static str, bias: &Tensor<E>, out_c: usize) -> Result<()> {
    check_same_shape(op, Shape5::new(1, out_c, 1, 1, 1), bias.shape())
}

fn check_in_channels<E: Element>(
    op: &'static str,
    input: &Tensor<E>,
    expected: usize,
) -> Result<()> {
    if input.shape().c != expected {
        return Err(Error::ShapeMismatch {
            op,
            axis: Axis::Channel,
            expected,
            got: input.shape().c,
        });
    }
    Ok(())
}

/// Dilated strided 3-D convolution with zero padding and optional bias.
pub fn conv3d<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    spec.validate_conv()?;
    check_in_channels("conv3d", input, spec.in_channels)?;
    check_weights("conv3d", weights, spec.weight_shape())?;
    if let Some(b) = bias {
        check_bias("conv3d", b, spec.out_channels)?;
    }
    let ishape = input.shape();
    let (od, oh, ow) = spec.output_extent(ishape.spatial())?;
    let oshape = Shape5::new(ishape.n, spec.out_channels, od, oh, ow);

    let (in_c, in_d, in_h, in_w) = (ishape.c, ishape.d, ishape.h, ishape.w);
    let (kd, kh, kw) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let dil = spec.dilation;
    let x = input.data();
    let w = weights.data();

    let mut out = vec![E::ZERO; oshape.len()];
    for_each_chunk(&mut out, od * oh * ow, |plane, chunk| {
        let n = plane / spec.out_channels;
        let oc = plane % spec.out_channels;
        let b = bias.map_or(E::ZERO, |b| b.data()[oc]);
        chunk.fill(b);
        for ic in 0..in_c {
            let x_base = ishape.offset(n, ic, 0, 0, 0);
            for kz in 0..kd {
                let (zlo, zhi) = stride_range(kz * dil, pd, sd, od, in_d);
                for ky in 0..kh {
                    let (ylo, yhi) = stride_range(ky * dil, ph, sh, oh, in_h);
                    for kx in 0..kw {
                        let (xlo, xhi) = stride_range(kx * dil, pw, sw, ow, in_w);
                        if zlo >= zhi || ylo >= yhi || xlo >= xhi {
                            continue;
                        }
                        let wv = w[((oc * in_c + ic) * kd * kh * kw)
                            + (kz * kh + ky) * kw
                            + kx];
                        for oz in zlo..zhi {
                            let iz = oz * sd + kz * dil - pd;
                            for oy in ylo..yhi {
                                let iy = oy * sh + ky * dil - ph;
                                let row = x_base + (iz * in_h + iy) * in_w;
                                let out_row = &mut chunk[(oz * oh + oy) * ow..][xlo..xhi];
                                if sw == 1 {
                                    let ix0 = xlo + kx * dil - pw;
                                    let in_row = &x[row + ix0..row + ix0 + (xhi - xlo)];
                                    for (o, &v) in out_row.iter_mut().zip(in_row) {
                                        *o += wv * v;
                                    }
                                } else {
                                    for (o, ox) in out_row.iter_mut().zip(xlo..xhi) {
                                        *o += wv * x[row + ox * sw + kx * dil - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(oshape, out)
}

/// Gradient of `conv3d` with respect to its input.
pub fn conv3d_grad_input<E: Element>(
    grad_out: &Tensor<E>,
    weights: &Tensor<E>,
    spec: &ConvSpec,
    input_spatial: (usize, usize, usize),
) -> Result<Tensor<E>> {
    spec.validate_conv()?;
    check_weights("conv3d_grad_input", weights, spec.weight_shape())?;
    let gshape = grad_out.shape();
    let expect = spec.output_extent(input_spatial)?;
    check_same_shape(
        "conv3d_grad_input",
        Shape5::new(gshape.n, spec.out_channels, expect.0, expect.1, expect.2),
        gshape,
    )?;
    let (in_d, in_h, in_w) = input_spatial;
    let ishape = Shape5::new(gshape.n, spec.in_channels, in_d, in_h, in_w);
    let (od, oh, ow) = (gshape.d, gshape.h, gshape.w);
    let (kd, kh, kw) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let dil = spec.dilation;
    let g = grad_out.data();
    let w = weights.data();
    let out_c = spec.out_channels;
    let in_c = spec.in_channels;

    let mut gx = vec![E::ZERO; ishape.len()];
    for_each_chunk(&mut gx, in_d * in_h * in_w, |plane, chunk| {
        let n = plane / in_c;
        let ic = plane % in_c;
        for oc in 0..out_c {
            let g_base = gshape.offset(n, oc, 0, 0, 0);
            for kz in 0..kd {
                let (zlo, zhi) = stride_range(kz * dil, pd, sd, od, in_d);
                for ky in 0..kh {
                    let (ylo, yhi) = stride_range(ky * dil, ph, sh, oh, in_h);
                    for kx in 0..kw {
                        let (xlo, xhi) = stride_range(kx * dil, pw, sw, ow, in_w);
                        if zlo >= zhi || ylo >= yhi || xlo >= xhi {
                            continue;
                        }
                        let wv = w[((oc * in_c + ic) * kd * kh * kw)
                            + (kz * kh + ky) * kw
                            + kx];
                        for oz in zlo..zhi {
                            let iz = oz * sd + kz * dil - pd;
                            for oy in ylo..yhi {
                                let iy = oy * sh + ky * dil - ph;
                                let g_row = g_base + (oz * oh + oy) * ow;
                                let in_row =
                                    &mut chunk[(iz * in_h + iy) * in_w..][..in_w];
                                if sw == 1 {
                                    let ix0 = xlo + kx * dil - pw;
                                    for (ox, t) in
                                        (xlo..xhi).zip(in_row[ix0..].iter_mut())
                                    {
                                        *t += wv * g[g_row + ox];
                                    }
                                } else {
                                    for ox in xlo..xhi {
                                        in_row[ox * sw + kx * dil - pw] +=
                                            wv * g[g_row + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(ishape, gx)
}

/// Gradient of `conv3d` with respect to its weights.
pub fn conv3d_grad_weights<E: Element>(
    grad_out: &Tensor<E>,
    input: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    spec.validate_conv()?;
    check_in_channels("conv3d_grad_weights", input, spec.in_channels)?;
    let ishape = input.shape();
    let gshape = grad_out.shape();
    let expect = spec.output_extent(ishape.spatial())?;
    check_same_shape(
        "conv3d_grad_weights",
        Shape5::new(ishape.n, spec.out_channels, expect.0, expect.1, expect.2),
        gshape,
    )?;
    let (in_d, in_h, in_w) = ishape.spatial();
    let (od, oh, ow) = gshape.spatial();
    let (kd, kh, kw) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let dil = spec.dilation;
    let x = input.data();
    let g = grad_out.data();
    let in_c = spec.in_channels;
    let wshape = spec.weight_shape();

    let mut gw = vec![E::ZERO; wshape.len()];
    for_each_chunk(&mut gw, kd * kh * kw, |pair, chunk| {
        let oc = pair / in_c;
        let ic = pair % in_c;
        for kz in 0..kd {
            let (zlo, zhi) = stride_range(kz * dil, pd, sd, od, in_d);
            for ky in 0..kh {
                let (ylo, yhi) = stride_range(ky * dil, ph, sh, oh, in_h);
                for kx in 0..kw {
                    let (xlo, xhi) = stride_range(kx * dil, pw, sw, ow, in_w);
                    let mut acc = E::ZERO;
                    for n in 0..gshape.n {
                        let g_base = gshape.offset(n, oc, 0, 0, 0);
                        let x_base = ishape.offset(n, ic, 0, 0, 0);
                        for oz in zlo..zhi {
                            let iz = oz * sd + kz * dil - pd;
                            for oy in ylo..yhi {
                                let iy = oy * sh + ky * dil - ph;
                                let g_row = g_base + (oz * oh + oy) * ow;
                                let x_row = x_base + (iz * in_h + iy) * in_w;
                                if sw == 1 {
                                    let ix0 = xlo + kx * dil - pw;
                                    for (ox, ix) in (xlo..xhi).zip(ix0..) {
                                        acc += g[g_row + ox] * x[x_row + ix];
                                    }
                                } else {
                                    for ox in xlo..xhi {
                                        acc += g[g_row + ox]
                                            * x[x_row + ox * sw + kx * dil - pw];
                                    }
                                }
                            }
                        }
                    }
                    chunk[(kz * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });
    Tensor::from_vec(wshape, gw)
}

/// Gradient of a convolution with respect to its bias: per-channel sum of
/// the output gradient.
pub fn conv3d_grad_bias<E: Element>(grad_out: &Tensor<E>) -> Tensor<E> {
    let gshape = grad_out.shape();
    let g = grad_out.data();
    let sp = gshape.spatial_len();
    let mut gb = vec![E::ZERO; gshape.c];
    for_each_chunk(&mut gb, 1, |oc, cell| {
        let mut acc = E::ZERO;
        for n in 0..gshape.n {
            let base = gshape.offset(n, oc, 0, 0, 0);
            for &v in &g[base..base + sp] {
                acc += v;
            }
        }
        cell[0] = acc;
    });
    Tensor::from_vec(Shape5::new(1, gshape.c, 1, 1, 1), gb)
        .expect("length matches by construction")
}

/// Transposed 3-D convolution (fractionally-strided upsampling). The only
/// accepted geometry doubles each spatial extent: stride 2 with
/// `kernel − 2·padding = 2`. Weight layout is `(in_c, out_c, kd, kh, kw)`.
pub fn conv_transpose3d<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    spec.validate_deconv()?;
    check_in_channels("conv_transpose3d", input, spec.in_channels)?;
    let wshape = Shape5::new(
        spec.in_channels,
        spec.out_channels,
        spec.kernel.0,
        spec.kernel.1,
        spec.kernel.2,
    );
    check_weights("conv_transpose3d", weights, wshape)?;
    if let Some(b) = bias {
        check_bias("conv_transpose3d", b, spec.out_channels)?;
    }
    let ishape = input.shape();
    let (in_d, in_h, in_w) = ishape.spatial();
    let oshape = Shape5::new(
        ishape.n,
        spec.out_channels,
        2 * in_d,
        2 * in_h,
        2 * in_w,
    );
    let (od, oh, ow) = oshape.spatial();
    let (kd, kh, kw) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let x = input.data();
    let w = weights.data();
    let in_c = spec.in_channels;
    let out_c = spec.out_channels;

    let mut out = vec![E::ZERO; oshape.len()];
    for_each_chunk(&mut out, od * oh * ow, |plane, chunk| {
        let n = plane / out_c;
        let oc = plane % out_c;
        let b = bias.map_or(E::ZERO, |b| b.data()[oc]);
        chunk.fill(b);
        for ic in 0..in_c {
            let x_base = ishape.offset(n, ic, 0, 0, 0);
            for kz in 0..kd {
                let (zlo, zhi) = stride_range(kz, pd, sd, in_d, od);
                for ky in 0..kh {
                    let (ylo, yhi) = stride_range(ky, ph, sh, in_h, oh);
                    for kx in 0..kw {
                        let (xlo, xhi) = stride_range(kx, pw, sw, in_w, ow);
                        if zlo >= zhi || ylo >= yhi || xlo >= xhi {
                            continue;
                        }
                        let wv = w[((ic * out_c + oc) * kd * kh * kw)
                            + (kz * kh + ky) * kw
                            + kx];
                        for iz in zlo..zhi {
                            let oz = iz * sd + kz - pd;
                            for iy in ylo..yhi {
                                let oy = iy * sh + ky - ph;
                                let x_row = x_base + (iz * in_h + iy) * in_w;
                                let out_row = &mut chunk[(oz * oh + oy) * ow..][..ow];
                                for ix in xlo..xhi {
                                    out_row[ix * sw + kx - pw] += wv * x[x_row + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(oshape, out)
}

/// Gradient of `conv_transpose3d` with respect to its input.
pub fn conv_transpose3d_grad_input<E: Element>(
    grad_out: &Tensor<E>,
    weights: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    spec.validate_deconv()?;
    let gshape = grad_out.shape();
    let (od, oh, ow) = gshape.spatial();
    if od % 2 != 0 || oh % 2 != 0 || ow % 2 != 0 || gshape.c != spec.out_channels {
        return Err(Error::InvalidSpec {
            op: "conv_transpose3d_grad_input",
            reason: format!(
                "output gradient {} incompatible with doubling from {} channels",
                gshape, spec.in_channels
            ),
        });
    }
    let ishape = Shape5::new(gshape.n, spec.in_channels, od / 2, oh / 2, ow / 2);
    let (in_d, in_h, in_w) = ishape.spatial();
    let (kd, kh, kw) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let g = grad_out.data();
    let w = weights.data();
    let in_c = spec.in_channels;
    let out_c = spec.out_channels;

    let mut gx = vec![E::ZERO; ishape.len()];
    for_each_chunk(&mut gx, in_d * in_h * in_w, |plane, chunk| {
        let n = plane / in_c;
        let ic = plane % in_c;
        for oc in 0..out_c {
            let g_base = gshape.offset(n, oc, 0, 0, 0);
            for kz in 0..kd {
                let (zlo, zhi) = stride_range(kz, pd, sd, in_d, od);
                for ky in 0..kh {
                    let (ylo, yhi) = stride_range(ky, ph, sh, in_h, oh);
                    for kx in 0..kw {
                        let (xlo, xhi) = stride_range(kx, pw, sw, in_w, ow);
                        if zlo >= zhi || ylo >= yhi || xlo >= xhi {
                            continue;
                        }
                        let wv = w[((ic * out_c + oc) * kd * kh * kw)
                            + (kz * kh + ky) * kw
                            + kx];
                        for iz in zlo..zhi {
                            let oz = iz * sd + kz - pd;
                            for iy in ylo..yhi {
                                let oy = iy * sh + ky - ph;
                                let g_row = g_base + (oz * oh + oy) * ow;
                                let in_row = &mut chunk[(iz * in_h + iy) * in_w..][..in_w];
                                for ix in xlo..xhi {
                                    in_row[ix] += wv * g[g_row + ix * sw + kx - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(ishape, gx)
}

/// Gradient of `conv_transpose3d` with respect to its weights.
pub fn conv_transpose3d_grad_weights<E: Element>(
    grad_out: &Tensor<E>,
    input: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    spec.validate_deconv()?;
    check_in_channels("conv_transpose3d_grad_weights", input, spec.in_channels)?;
    let ishape = input.shape();
    let gshape = grad_out.shape();
    let (in_d, in_h, in_w) = ishape.spatial();
    check_same_shape(
        "conv_transpose3d_grad_weights",
        Shape5::new(ishape.n, spec.out_channels, 2 * in_d, 2 * in_h, 2 * in_w),
        gshape,
    )?;
    let (od, oh, ow) = gshape.spatial();
    let (kd, kh, kw) = spec.kernel;
    let (sd, sh, sw) = spec.stride;
    let (pd, ph, pw) = spec.padding;
    let x = input.data();
    let g = grad_out.data();
    let out_c = spec.out_channels;
    let wshape = Shape5::new(spec.in_channels, out_c, kd, kh, kw);

    let mut gw = vec![E::ZERO; wshape.len()];
    for_each_chunk(&mut gw, kd * kh * kw, |pair, chunk| {
        let ic = pair / out_c;
        let oc = pair % out_c;
        for kz in 0..kd {
            let (zlo, zhi) = stride_range(kz, pd, sd, in_d, od);
            for ky in 0..kh {
                let (ylo, yhi) = stride_range(ky, ph, sh, in_h, oh);
                for kx in 0..kw {
                    let (xlo, xhi) = stride_range(kx, pw, sw, in_w, ow);
                    let mut acc = E::ZERO;
                    for n in 0..gshape.n {
                        let g_base = gshape.offset(n, oc, 0, 0, 0);
                        let x_base = ishape.offset(n, ic, 0, 0, 0);
                        for iz in zlo..zhi {
                            let oz = iz * sd + kz - pd;
                            for iy in ylo..yhi {
                                let oy = iy * sh + ky - ph;
                                let g_row = g_base + (oz * oh + oy) * ow;
                                let x_row = x_base + (iz * in_h + iy) * in_w;
                                for ix in xlo..xhi {
                                    acc += x[x_row + ix] * g[g_row + ix * sw + kx - pw];
                                }
                            }
                        }
                    }
                    chunk[(kz * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });
    Tensor::from_vec(wshape, gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape5, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn dilated_line_matches_hand_computation() {
        // Taps [1, 0, 1] at dilation 2 span 5 samples, so a length-5 input
        // yields one output: x[0] + x[4] = 6.
        let x = t(Shape5::new(1, 1, 1, 1, 5), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = t(Shape5::new(1, 1, 1, 1, 3), vec![1.0, 0.0, 1.0]);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (1, 1, 3),
            stride: (1, 1, 1),
            dilation: 2,
            padding: (0, 0, 0),
        };
        let y = conv3d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape().spatial(), (1, 1, 1));
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn two_tap_pairs_via_dilation() {
        // Sliding sum of entries two apart: out[i] = x[i] + x[i+2],
        // realised with k=3, taps [1, 0, 1] and dilation 1.
        let x = t(Shape5::new(1, 1, 1, 1, 5), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = t(Shape5::new(1, 1, 1, 1, 3), vec![1.0, 0.0, 1.0]);
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (1, 1, 3),
            stride: (1, 1, 1),
            dilation: 1,
            padding: (0, 0, 0),
        };
        let y = conv3d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 8.0]);
    }

    #[test]
    fn pointwise_mixes_channels() {
        let x = t(Shape5::new(1, 2, 1, 1, 2), vec![1.0, 2.0, 10.0, 20.0]);
        let w = t(Shape5::new(1, 2, 1, 1, 1), vec![2.0, 3.0]);
        let b = t(Shape5::new(1, 1, 1, 1, 1), vec![0.5]);
        let spec = ConvSpec::pointwise(2, 1);
        let y = conv3d(&x, &w, Some(&b), &spec).unwrap();
        // 2*1 + 3*10 + 0.5 = 32.5 ; 2*2 + 3*20 + 0.5 = 64.5
        assert_eq!(y.data(), &[32.5, 64.5]);
    }

    #[test]
    fn transpose_spreads_single_voxel() {
        // One input voxel through a 2x2x2 all-ones kernel at stride 2 fills
        // the eight output voxels with the input value.
        let x = t(Shape5::new(1, 1, 1, 1, 1), vec![3.0]);
        let w = Tensor::full(Shape5::new(1, 1, 2, 2, 2), 1.0);
        let spec = ConvSpec::deconv(1, 1);
        let y = conv_transpose3d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape5::new(1, 1, 2, 2, 2));
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn transpose_outputs_do_not_overlap_at_stride_two() {
        // Kernel weights only on the first z/y plane: each input voxel
        // paints its own 2-wide cell of the first output row.
        let x = t(Shape5::new(1, 1, 1, 1, 2), vec![1.0, 10.0]);
        let w = Tensor::from_vec(
            Shape5::new(1, 1, 2, 2, 2),
            vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let spec = ConvSpec::deconv(1, 1);
        let y = conv_transpose3d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), Shape5::new(1, 1, 2, 2, 4));
        assert_eq!(&y.data()[0..4], &[1.0, 2.0, 10.0, 20.0]);
    }

    #[test]
    fn grad_bias_sums_channels() {
        let g = t(
            Shape5::new(2, 2, 1, 1, 2),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        );
        let gb = conv3d_grad_bias(&g);
        assert_eq!(gb.shape(), Shape5::new(1, 2, 1, 1, 1));
        assert_eq!(gb.data(), &[1.0 + 2.0 + 5.0 + 6.0, 3.0 + 4.0 + 7.0 + 8.0]);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (2, 3, 3),
            stride: (1, 1, 1),
            dilation: 1,
            padding: (0, 0, 0),
        };
        let x: Tensor = Tensor::zeros(Shape5::new(1, 1, 4, 4, 4));
        let w: Tensor = Tensor::zeros(Shape5::new(1, 1, 2, 3, 3));
        assert!(conv3d(&x, &w, None, &spec).is_err());
    }

    #[test]
    fn channel_mismatch_reported() {
        let spec = ConvSpec::pointwise(3, 1);
        let x: Tensor = Tensor::zeros(Shape5::new(1, 2, 2, 2, 2));
        let w: Tensor = Tensor::zeros(spec.weight_shape());
        let err = conv3d(&x, &w, None, &spec).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
