//! Pointwise ops, pooling, channel plumbing, batch normalization, and the
//! two-channel softmax, each paired with its analytic gradient.

use super::{check_same_shape, for_each_chunk, Element, Shape5, Tensor};
use crate::error::{Axis, Error, Result};

pub fn relu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| v.max(E::ZERO))
}

/// Gradient of `relu` given the op's input. The subgradient at exactly zero
/// is taken as zero.
pub fn relu_grad<E: Element>(grad_out: &Tensor<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    grad_out.zip_map(x, "relu_grad", |g, v| if v > E::ZERO { g } else { E::ZERO })
}

pub fn sigmoid<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| {
        // Branch on sign for numerical stability at large |v|.
        if v >= E::ZERO {
            E::ONE / (E::ONE + (-v).exp())
        } else {
            let e = v.exp();
            e / (E::ONE + e)
        }
    })
}

/// Gradient of `sigmoid` given the op's *output* `y`: `g · y · (1 − y)`.
pub fn sigmoid_grad<E: Element>(grad_out: &Tensor<E>, y: &Tensor<E>) -> Result<Tensor<E>> {
    grad_out.zip_map(y, "sigmoid_grad", |g, v| g * v * (E::ONE - v))
}

pub fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.zip_map(b, "add", |x, y| x + y)
}

/// Mean over the spatial axes, keeping `(n, c, 1, 1, 1)`.
pub fn global_avg_pool<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let s = x.shape();
    let sp = s.spatial_len();
    let inv = E::from_f64(1.0 / sp as f64);
    let data = x.data();
    let mut out = vec![E::ZERO; s.n * s.c];
    for_each_chunk(&mut out, 1, |i, cell| {
        let base = i * sp;
        let mut acc = E::ZERO;
        for &v in &data[base..base + sp] {
            acc += v;
        }
        cell[0] = acc * inv;
    });
    Tensor::from_vec(Shape5::new(s.n, s.c, 1, 1, 1), out)
        .expect("length matches by construction")
}

/// Gradient of `global_avg_pool`: spreads each pooled gradient uniformly
/// over the spatial positions it averaged.
pub fn global_avg_pool_grad<E: Element>(
    grad_out: &Tensor<E>,
    input_shape: Shape5,
) -> Result<Tensor<E>> {
    check_same_shape(
        "global_avg_pool_grad",
        Shape5::new(input_shape.n, input_shape.c, 1, 1, 1),
        grad_out.shape(),
    )?;
    let sp = input_shape.spatial_len();
    let inv = E::from_f64(1.0 / sp as f64);
    let g = grad_out.data();
    let mut out = vec![E::ZERO; input_shape.len()];
    for_each_chunk(&mut out, sp, |i, chunk| {
        chunk.fill(g[i] * inv);
    });
    Tensor::from_vec(input_shape, out)
}

/// Concatenate along the channel axis. All parts must agree on batch and
/// spatial extents.
pub fn concat_channels<E: Element>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    let first = parts.first().ok_or(Error::InvalidSpec {
        op: "concat_channels",
        reason: "need at least one input".into(),
    })?;
    let s0 = first.shape();
    let mut total_c = 0;
    for p in parts {
        check_same_shape("concat_channels", s0.with_c(p.shape().c), p.shape())?;
        total_c += p.shape().c;
    }
    let sp = s0.spatial_len();
    let oshape = s0.with_c(total_c);
    let mut out = Vec::with_capacity(oshape.len());
    for n in 0..s0.n {
        for p in parts {
            let ps = p.shape();
            let base = ps.offset(n, 0, 0, 0, 0);
            out.extend_from_slice(&p.data()[base..base + ps.c * sp]);
        }
    }
    Tensor::from_vec(oshape, out)
}

/// Split a gradient back into the channel blocks that `concat_channels`
/// joined, given the original channel widths.
pub fn concat_split_grad<E: Element>(
    grad_out: &Tensor<E>,
    widths: &[usize],
) -> Result<Vec<Tensor<E>>> {
    let s = grad_out.shape();
    let total: usize = widths.iter().sum();
    if total != s.c {
        return Err(Error::ShapeMismatch {
            op: "concat_split_grad",
            axis: Axis::Channel,
            expected: total,
            got: s.c,
        });
    }
    let sp = s.spatial_len();
    let g = grad_out.data();
    let mut parts = Vec::with_capacity(widths.len());
    let mut c0 = 0;
    for &wc in widths {
        let pshape = s.with_c(wc);
        let mut data = Vec::with_capacity(pshape.len());
        for n in 0..s.n {
            let base = s.offset(n, c0, 0, 0, 0);
            data.extend_from_slice(&g[base..base + wc * sp]);
        }
        parts.push(Tensor::from_vec(pshape, data)?);
        c0 += wc;
    }
    Ok(parts)
}

fn broadcast_compatible(op: &'static str, x: Shape5, g: Shape5) -> Result<()> {
    if g.n != x.n {
        return Err(Error::ShapeMismatch {
            op,
            axis: Axis::Batch,
            expected: x.n,
            got: g.n,
        });
    }
    for (xe, ge) in [(x.c, g.c), (x.d, g.d), (x.h, g.h), (x.w, g.w)] {
        if ge != xe && ge != 1 {
            return Err(Error::NotBroadcastable {
                op,
                a: x.to_string(),
                b: g.to_string(),
            });
        }
    }
    Ok(())
}

#[inline]
fn gate_offset(gs: Shape5, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
    gs.offset(
        n,
        if gs.c == 1 { 0 } else { c },
        if gs.d == 1 { 0 } else { z },
        if gs.h == 1 { 0 } else { y },
        if gs.w == 1 { 0 } else { x },
    )
}

/// Multiply `x` by `gate`, broadcasting gate axes of extent 1 (batch must
/// match). Covers per-sample scalars `(n,1,1,1,1)`, per-channel weights
/// `(n,c,1,1,1)`, and spatial maps `(n,1,d,h,w)`.
pub fn broadcast_mul<E: Element>(x: &Tensor<E>, gate: &Tensor<E>) -> Result<Tensor<E>> {
    let xs = x.shape();
    let gs = gate.shape();
    broadcast_compatible("broadcast_mul", xs, gs)?;
    let xd = x.data();
    let gd = gate.data();
    let sp = xs.spatial_len();
    let mut out = vec![E::ZERO; xs.len()];
    for_each_chunk(&mut out, sp, |plane, chunk| {
        let n = plane / xs.c;
        let c = plane % xs.c;
        let base = xs.offset(n, c, 0, 0, 0);
        let mut i = 0;
        for z in 0..xs.d {
            for y in 0..xs.h {
                for xx in 0..xs.w {
                    chunk[i] = xd[base + i] * gd[gate_offset(gs, n, c, z, y, xx)];
                    i += 1;
                }
            }
        }
    });
    Tensor::from_vec(xs, out)
}

/// Gradients of `broadcast_mul` for both operands. The gate gradient sums
/// the incoming gradient over every axis the gate was broadcast across.
pub fn broadcast_mul_grads<E: Element>(
    grad_out: &Tensor<E>,
    x: &Tensor<E>,
    gate: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let xs = x.shape();
    let gs = gate.shape();
    broadcast_compatible("broadcast_mul", xs, gs)?;
    check_same_shape("broadcast_mul_grads", xs, grad_out.shape())?;
    let g = grad_out.data();
    let xd = x.data();

    let gx = broadcast_mul(grad_out, gate)?;

    let mut ggate = vec![E::ZERO; gs.len()];
    let gsp = gs.spatial_len();
    for_each_chunk(&mut ggate, gsp, |plane, chunk| {
        let n = plane / gs.c;
        let gc = plane % gs.c;
        let crange = if gs.c == 1 { 0..xs.c } else { gc..gc + 1 };
        for c in crange {
            for z in 0..xs.d {
                for y in 0..xs.h {
                    for xx in 0..xs.w {
                        let go = gate_offset(gs, 0, gc, z, y, xx) - gs.offset(0, gc, 0, 0, 0);
                        let xi = xs.offset(n, c, z, y, xx);
                        chunk[go] += g[xi] * xd[xi];
                    }
                }
            }
        }
    });
    let ggate = Tensor::from_vec(gs, ggate)?;
    Ok((gx, ggate))
}

/// Per-channel mean and biased variance captured by `batch_norm_train`,
/// needed for the backward pass and for running-average updates.
#[derive(Debug, Clone)]
pub struct BnStats<E: Element = f64> {
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
}

fn check_bn_param<E: Element>(op: &'static str, p: &Tensor<E>, c: usize) -> Result<()> {
    check_same_shape(op, Shape5::new(1, c, 1, 1, 1), p.shape())
}

/// Batch normalization in training mode: normalizes each channel by the
/// batch statistics over `(n, d, h, w)`, then applies the affine pair.
pub fn batch_norm_train<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BnStats<E>)> {
    let s = x.shape();
    check_bn_param("batch_norm", gamma, s.c)?;
    check_bn_param("batch_norm", beta, s.c)?;
    let m = (s.n * s.spatial_len()) as f64;
    let sp = s.spatial_len();
    let xd = x.data();

    let mut stats = vec![E::ZERO; 2 * s.c];
    for_each_chunk(&mut stats, 2, |c, cell| {
        let mut sum = E::ZERO;
        let mut sumsq = E::ZERO;
        for n in 0..s.n {
            let base = s.offset(n, c, 0, 0, 0);
            for &v in &xd[base..base + sp] {
                sum += v;
                sumsq += v * v;
            }
        }
        let mean = sum * E::from_f64(1.0 / m);
        cell[0] = mean;
        cell[1] = (sumsq * E::from_f64(1.0 / m) - mean * mean).max(E::ZERO);
    });
    let mean: Vec<E> = stats.iter().step_by(2).copied().collect();
    let var: Vec<E> = stats.iter().skip(1).step_by(2).copied().collect();

    let g = gamma.data();
    let b = beta.data();
    let mut out = vec![E::ZERO; s.len()];
    for_each_chunk(&mut out, sp, |plane, chunk| {
        let n = plane / s.c;
        let c = plane % s.c;
        let inv = E::ONE / (var[c] + E::from_f64(eps)).sqrt();
        let scale = g[c] * inv;
        let shift = b[c] - mean[c] * scale;
        let base = s.offset(n, c, 0, 0, 0);
        for (o, &v) in chunk.iter_mut().zip(&xd[base..base + sp]) {
            *o = v * scale + shift;
        }
    });
    let cshape = Shape5::new(1, s.c, 1, 1, 1);
    Ok((
        Tensor::from_vec(s, out)?,
        BnStats {
            mean: Tensor::from_vec(cshape, mean)?,
            var: Tensor::from_vec(cshape, var)?,
        },
    ))
}

/// Batch normalization in inference mode: a per-channel affine transform
/// using stored running statistics.
pub fn batch_norm_infer<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    eps: f64,
) -> Result<Tensor<E>> {
    let s = x.shape();
    for p in [gamma, beta, running_mean, running_var] {
        check_bn_param("batch_norm_infer", p, s.c)?;
    }
    let sp = s.spatial_len();
    let xd = x.data();
    let g = gamma.data();
    let b = beta.data();
    let rm = running_mean.data();
    let rv = running_var.data();
    let mut out = vec![E::ZERO; s.len()];
    for_each_chunk(&mut out, sp, |plane, chunk| {
        let n = plane / s.c;
        let c = plane % s.c;
        let inv = E::ONE / (rv[c] + E::from_f64(eps)).sqrt();
        let scale = g[c] * inv;
        let shift = b[c] - rm[c] * scale;
        let base = s.offset(n, c, 0, 0, 0);
        for (o, &v) in chunk.iter_mut().zip(&xd[base..base + sp]) {
            *o = v * scale + shift;
        }
    });
    Tensor::from_vec(s, out)
}

/// Backward pass of training-mode batch normalization. Returns gradients
/// for the input, gamma, and beta. With `m` elements per channel and
/// `x̂ = (x − μ)/√(σ² + ε)`:
///
/// `dx = γ/√(σ²+ε) · (g − mean(g) − x̂ · mean(g·x̂))`
pub fn batch_norm_backward<E: Element>(
    grad_out: &Tensor<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    stats: &BnStats<E>,
    eps: f64,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let s = x.shape();
    check_same_shape("batch_norm_backward", s, grad_out.shape())?;
    check_bn_param("batch_norm_backward", gamma, s.c)?;
    let m = (s.n * s.spatial_len()) as f64;
    let sp = s.spatial_len();
    let xd = x.data();
    let gd = grad_out.data();
    let mean = stats.mean.data();
    let var = stats.var.data();

    // Per-channel reductions: sum(g) and sum(g·x̂).
    let mut sums = vec![E::ZERO; 2 * s.c];
    for_each_chunk(&mut sums, 2, |c, cell| {
        let inv = E::ONE / (var[c] + E::from_f64(eps)).sqrt();
        let mut sg = E::ZERO;
        let mut sgx = E::ZERO;
        for n in 0..s.n {
            let base = s.offset(n, c, 0, 0, 0);
            for i in base..base + sp {
                let xh = (xd[i] - mean[c]) * inv;
                sg += gd[i];
                sgx += gd[i] * xh;
            }
        }
        cell[0] = sg;
        cell[1] = sgx;
    });

    let g = gamma.data();
    let mut gx = vec![E::ZERO; s.len()];
    for_each_chunk(&mut gx, sp, |plane, chunk| {
        let n = plane / s.c;
        let c = plane % s.c;
        let inv = E::ONE / (var[c] + E::from_f64(eps)).sqrt();
        let mg = sums[2 * c] * E::from_f64(1.0 / m);
        let mgx = sums[2 * c + 1] * E::from_f64(1.0 / m);
        let base = s.offset(n, c, 0, 0, 0);
        for (i, o) in chunk.iter_mut().enumerate() {
            let xh = (xd[base + i] - mean[c]) * inv;
            *o = g[c] * inv * (gd[base + i] - mg - xh * mgx);
        }
    });

    let cshape = Shape5::new(1, s.c, 1, 1, 1);
    let ggamma: Vec<E> = (0..s.c).map(|c| sums[2 * c + 1]).collect();
    let gbeta: Vec<E> = (0..s.c).map(|c| sums[2 * c]).collect();
    Ok((
        Tensor::from_vec(s, gx)?,
        Tensor::from_vec(cshape, ggamma)?,
        Tensor::from_vec(cshape, gbeta)?,
    ))
}

/// Backward pass of inference-mode batch normalization, which is a plain
/// per-channel affine map with constants taken from the running statistics.
pub fn batch_norm_infer_backward<E: Element>(
    grad_out: &Tensor<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let s = x.shape();
    check_same_shape("batch_norm_infer_backward", s, grad_out.shape())?;
    for p in [gamma, running_mean, running_var] {
        check_bn_param("batch_norm_infer_backward", p, s.c)?;
    }
    let sp = s.spatial_len();
    let xd = x.data();
    let gd = grad_out.data();
    let rm = running_mean.data();
    let rv = running_var.data();
    let g = gamma.data();

    let mut sums = vec![E::ZERO; 2 * s.c];
    for_each_chunk(&mut sums, 2, |c, cell| {
        let inv = E::ONE / (rv[c] + E::from_f64(eps)).sqrt();
        let mut sg = E::ZERO;
        let mut sgx = E::ZERO;
        for n in 0..s.n {
            let base = s.offset(n, c, 0, 0, 0);
            for i in base..base + sp {
                sg += gd[i];
                sgx += gd[i] * (xd[i] - rm[c]) * inv;
            }
        }
        cell[0] = sg;
        cell[1] = sgx;
    });

    let mut gx = vec![E::ZERO; s.len()];
    for_each_chunk(&mut gx, sp, |plane, chunk| {
        let n = plane / s.c;
        let c = plane % s.c;
        let inv = E::ONE / (rv[c] + E::from_f64(eps)).sqrt();
        let scale = g[c] * inv;
        let base = s.offset(n, c, 0, 0, 0);
        for (o, &v) in chunk.iter_mut().zip(&gd[base..base + sp]) {
            *o = v * scale;
        }
    });

    let cshape = Shape5::new(1, s.c, 1, 1, 1);
    let ggamma: Vec<E> = (0..s.c).map(|c| sums[2 * c + 1]).collect();
    let gbeta: Vec<E> = (0..s.c).map(|c| sums[2 * c]).collect();
    Ok((
        Tensor::from_vec(s, gx)?,
        Tensor::from_vec(cshape, ggamma)?,
        Tensor::from_vec(cshape, gbeta)?,
    ))
}

/// Stable softmax across exactly two channels.
pub fn softmax2<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.c != 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax2",
            axis: Axis::Channel,
            expected: 2,
            got: s.c,
        });
    }
    let sp = s.spatial_len();
    let xd = x.data();
    let mut out = vec![E::ZERO; s.len()];
    for_each_chunk(&mut out, 2 * sp, |n, chunk| {
        let b0 = s.offset(n, 0, 0, 0, 0);
        let b1 = s.offset(n, 1, 0, 0, 0);
        for i in 0..sp {
            let (a, b) = (xd[b0 + i], xd[b1 + i]);
            let m = a.max(b);
            let ea = (a - m).exp();
            let eb = (b - m).exp();
            let z = ea + eb;
            chunk[i] = ea / z;
            chunk[sp + i] = eb / z;
        }
    });
    Tensor::from_vec(s, out)
}

/// Gradient of `softmax2` given its output `y`:
/// `dx_i = y_i · (g_i − Σ_j g_j · y_j)` per voxel.
pub fn softmax2_grad<E: Element>(grad_out: &Tensor<E>, y: &Tensor<E>) -> Result<Tensor<E>> {
    let s = y.shape();
    check_same_shape("softmax2_grad", s, grad_out.shape())?;
    let sp = s.spatial_len();
    let yd = y.data();
    let gd = grad_out.data();
    let mut out = vec![E::ZERO; s.len()];
    for_each_chunk(&mut out, 2 * sp, |n, chunk| {
        let b0 = s.offset(n, 0, 0, 0, 0);
        let b1 = s.offset(n, 1, 0, 0, 0);
        for i in 0..sp {
            let dot = gd[b0 + i] * yd[b0 + i] + gd[b1 + i] * yd[b1 + i];
            chunk[i] = yd[b0 + i] * (gd[b0 + i] - dot);
            chunk[sp + i] = yd[b1 + i] * (gd[b1 + i] - dot);
        }
    });
    Tensor::from_vec(s, out)
}

/// Extract one channel as an `(n, 1, d, h, w)` tensor.
pub fn select_channel<E: Element>(x: &Tensor<E>, c: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if c >= s.c {
        return Err(Error::ShapeMismatch {
            op: "select_channel",
            axis: Axis::Channel,
            expected: s.c,
            got: c,
        });
    }
    let sp = s.spatial_len();
    let mut data = Vec::with_capacity(s.n * sp);
    for n in 0..s.n {
        let base = s.offset(n, c, 0, 0, 0);
        data.extend_from_slice(&x.data()[base..base + sp]);
    }
    Tensor::from_vec(s.with_c(1), data)
}

/// Gradient of `select_channel`: the incoming gradient lands in channel `c`;
/// all other channels are zero.
pub fn select_channel_grad<E: Element>(
    grad_out: &Tensor<E>,
    c: usize,
    input_shape: Shape5,
) -> Result<Tensor<E>> {
    check_same_shape("select_channel_grad", input_shape.with_c(1), grad_out.shape())?;
    let sp = input_shape.spatial_len();
    let g = grad_out.data();
    let mut out = vec![E::ZERO; input_shape.len()];
    for n in 0..input_shape.n {
        let base = input_shape.offset(n, c, 0, 0, 0);
        out[base..base + sp].copy_from_slice(&g[n * sp..(n + 1) * sp]);
    }
    Tensor::from_vec(input_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape5, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let x = t(Shape5::new(1, 1, 1, 1, 3), vec![0.0, 100.0, -100.0]);
        let y = sigmoid(&x);
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
        assert!(y.data()[2] > 0.0 && y.data()[2] < 1e-12);
    }

    #[test]
    fn relu_grad_masks_negatives_and_zero() {
        let x = t(Shape5::new(1, 1, 1, 1, 3), vec![-1.0, 0.0, 2.0]);
        let g = Tensor::full(x.shape(), 3.0);
        let gx = relu_grad(&g, &x).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn gap_means_each_channel() {
        let x = t(
            Shape5::new(1, 2, 1, 2, 2),
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
        );
        let y = global_avg_pool(&x);
        assert_eq!(y.shape(), Shape5::new(1, 2, 1, 1, 1));
        assert_eq!(y.data(), &[2.5, 25.0]);
        let g = t(Shape5::new(1, 2, 1, 1, 1), vec![4.0, 8.0]);
        let gx = global_avg_pool_grad(&g, x.shape()).unwrap();
        assert_eq!(gx.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = t(Shape5::new(2, 1, 1, 1, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let b = t(
            Shape5::new(2, 2, 1, 1, 2),
            vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0],
        );
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape().c, 3);
        // Sample 0 lays out a's channel then b's two channels.
        assert_eq!(&cat.data()[0..6], &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0]);
        let parts = concat_split_grad(&cat, &[1, 2]).unwrap();
        assert_eq!(parts[0].data(), a.data());
        assert_eq!(parts[1].data(), b.data());
    }

    #[test]
    fn broadcast_mul_per_channel_and_spatial() {
        let x = t(
            Shape5::new(1, 2, 1, 1, 3),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        );
        // Per-channel gate.
        let g = t(Shape5::new(1, 2, 1, 1, 1), vec![2.0, 10.0]);
        let y = broadcast_mul(&x, &g).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 40.0, 50.0, 60.0]);
        // Spatial gate shared by both channels.
        let g = t(Shape5::new(1, 1, 1, 1, 3), vec![1.0, 0.0, 2.0]);
        let y = broadcast_mul(&x, &g).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 6.0, 4.0, 0.0, 12.0]);
    }

    #[test]
    fn broadcast_mul_grads_reduce_over_broadcast_axes() {
        let x = t(
            Shape5::new(1, 2, 1, 1, 2),
            vec![1.0, 2.0, 3.0, 4.0],
        );
        let gate = t(Shape5::new(1, 1, 1, 1, 1), vec![5.0]);
        let gout = Tensor::full(x.shape(), 1.0);
        let (gx, gg) = broadcast_mul_grads(&gout, &x, &gate).unwrap();
        assert_eq!(gx.data(), &[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(gg.data(), &[10.0]); // Σ x
    }

    #[test]
    fn batch_norm_normalizes_per_channel() {
        let x = t(
            Shape5::new(2, 1, 1, 1, 2),
            vec![1.0, 2.0, 3.0, 4.0],
        );
        let gamma = Tensor::full(Shape5::new(1, 1, 1, 1, 1), 1.0);
        let beta = Tensor::zeros(Shape5::new(1, 1, 1, 1, 1));
        let (y, stats) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        assert!((stats.mean.data()[0] - 2.5).abs() < 1e-12);
        assert!((stats.var.data()[0] - 1.25).abs() < 1e-12);
        let m: f64 = y.data().iter().sum::<f64>() / 4.0;
        let v: f64 = y.data().iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-4); // eps slightly shrinks the variance
    }

    #[test]
    fn batch_norm_infer_is_affine() {
        let x = t(Shape5::new(1, 1, 1, 1, 2), vec![3.0, 5.0]);
        let one = Shape5::new(1, 1, 1, 1, 1);
        let y = batch_norm_infer(
            &x,
            &Tensor::full(one, 2.0),
            &Tensor::full(one, 1.0),
            &Tensor::full(one, 3.0),
            &Tensor::full(one, 4.0 - 1e-5),
            1e-5,
        )
        .unwrap();
        // (x − 3)/2 · 2 + 1 = x − 2
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn softmax2_sums_to_one_and_orders() {
        let x = t(Shape5::new(1, 2, 1, 1, 2), vec![1.0, -3.0, 3.0, -3.0]);
        let y = softmax2(&x).unwrap();
        for i in 0..2 {
            let s = y.data()[i] + y.data()[2 + i];
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(y.data()[0] < y.data()[2]); // bigger logit gap → larger p
    }

    #[test]
    fn select_channel_round_trip() {
        let x = t(
            Shape5::new(1, 3, 1, 1, 2),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        );
        let c1 = select_channel(&x, 1).unwrap();
        assert_eq!(c1.data(), &[3.0, 4.0]);
        let g = select_channel_grad(&c1, 1, x.shape()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
        assert!(select_channel(&x, 3).is_err());
    }
}
