//! Differentiable tensor operations.
//!
//! Each op validates shapes, runs a kernel from [`super::kernels`], and
//! installs the matching backward rule on the result.

use crate::error::{Error, Result};

use super::kernels::{self, Conv2dGeom, Tconv2dGeom};
use super::{Scalar, Tensor};

fn expect_4d(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        other => Err(Error::Dimension(format!(
            "{what} must be 4-D (NCHW), got {other:?}"
        ))),
    }
}

impl<T: Scalar> Tensor<T> {
    /// 2-D convolution with zero padding. Weight is (Cout, Cin, kH, kW),
    /// bias is (Cout).
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let [n, cin, h, w] = expect_4d(self, "conv2d input")?;
        let [cout, wcin, kh, kw] = expect_4d(weight, "conv2d weight")?;
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if bias.shape() != [cout] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d: stride must be positive".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let geom = Conv2dGeom {
            batch: n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let mut out = vec![T::zero(); n * cout * oh * ow];
        kernels::conv2d_forward(&geom, &self.data(), &weight.data(), &bias.data(), &mut out);
        Ok(Tensor::from_op(
            vec![n, cout, oh, ow],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |gout, parents| {
                let (input, weight, bias) = (&parents[0], &parents[1], &parents[2]);
                if input.requires_grad() {
                    let mut din = vec![T::zero(); input.numel()];
                    kernels::conv2d_backward_input(&geom, gout, &weight.data(), &mut din);
                    input.accumulate_grad(&din);
                }
                if weight.requires_grad() {
                    let mut dw = vec![T::zero(); weight.numel()];
                    kernels::conv2d_backward_weight(&geom, gout, &input.data(), &mut dw);
                    weight.accumulate_grad(&dw);
                }
                if bias.requires_grad() {
                    let mut db = vec![T::zero(); bias.numel()];
                    kernels::conv2d_backward_bias(&geom, gout, &mut db);
                    bias.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Transposed 2-D convolution (upsampling), no padding. Weight is
    /// (Cin, Cout, kH, kW); output extent is `(len-1)*stride + k` per axis.
    pub fn tconv2d(&self, weight: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        let [n, cin, h, w] = expect_4d(self, "tconv2d input")?;
        let [wcin, cout, kh, kw] = expect_4d(weight, "tconv2d weight")?;
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "tconv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("tconv2d: stride must be positive".into()));
        }
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        let geom = Tconv2dGeom {
            batch: n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            oh,
            ow,
        };
        let mut out = vec![T::zero(); n * cout * oh * ow];
        kernels::tconv2d_forward(&geom, &self.data(), &weight.data(), &mut out);
        Ok(Tensor::from_op(
            vec![n, cout, oh, ow],
            out,
            vec![self.clone(), weight.clone()],
            Box::new(move |gout, parents| {
                let (input, weight) = (&parents[0], &parents[1]);
                if input.requires_grad() {
                    let mut din = vec![T::zero(); input.numel()];
                    kernels::tconv2d_backward_input(&geom, gout, &weight.data(), &mut din);
                    input.accumulate_grad(&din);
                }
                if weight.requires_grad() {
                    let mut dw = vec![T::zero(); weight.numel()];
                    kernels::tconv2d_backward_weight(&geom, gout, &input.data(), &mut dw);
                    weight.accumulate_grad(&dw);
                }
            }),
        ))
    }

    /// Leaky ReLU: `x` if `x >= 0`, else `slope * x`.
    pub fn lrelu(&self, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        let mut out = vec![T::zero(); self.numel()];
        kernels::unary_map(&self.data(), &mut out, |x| {
            if x >= T::zero() {
                x
            } else {
                s * x
            }
        });
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |gout, parents| {
                let input = &parents[0];
                if input.requires_grad() {
                    let data = input.data();
                    let din: Vec<T> = gout
                        .iter()
                        .zip(data.iter())
                        .map(|(&g, &x)| if x >= T::zero() { g } else { s * g })
                        .collect();
                    drop(data);
                    input.accumulate_grad(&din);
                }
            }),
        )
    }

    /// 2x2 non-overlapping max pool. Gradient routes to the argmax, first
    /// occurrence in row-major scan on ties.
    pub fn max_pool2(&self) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_4d(self, "max_pool2 input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!(
                "max_pool2 requires even spatial dims, got {h}x{w}"
            )));
        }
        let planes = n * c;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![T::zero(); planes * oh * ow];
        let mut argmax = vec![0u32; planes * oh * ow];
        kernels::max_pool2_forward(planes, h, w, &self.data(), &mut out, &mut argmax);
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |gout, parents| {
                let input = &parents[0];
                if input.requires_grad() {
                    let mut din = vec![T::zero(); input.numel()];
                    kernels::max_pool2_backward(planes, h, w, gout, &argmax, &mut din);
                    input.accumulate_grad(&din);
                }
            }),
        ))
    }

    /// Rearrange channel blocks of size `factor^2` into `factor`-times larger
    /// spatial planes, row-major subpixel order. Inverse of
    /// [`Tensor::space_to_depth`].
    pub fn depth_to_space(&self, factor: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_4d(self, "depth_to_space input")?;
        let f2 = factor * factor;
        if factor == 0 || c % f2 != 0 {
            return Err(Error::Dimension(format!(
                "depth_to_space: {c} channels not divisible by {factor}^2"
            )));
        }
        let co = c / f2;
        let data = self.data();
        let mut out = vec![T::zero(); data.len()];
        for ni in 0..n {
            for cc in 0..co {
                for dy in 0..factor {
                    for dx in 0..factor {
                        let ci = cc * f2 + dy * factor + dx;
                        let src = ((ni * c + ci) * h) * w;
                        let dst_plane = (ni * co + cc) * (h * factor) * (w * factor);
                        for y in 0..h {
                            for x in 0..w {
                                out[dst_plane + (y * factor + dy) * (w * factor) + x * factor + dx] =
                                    data[src + y * w + x];
                            }
                        }
                    }
                }
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            vec![n, co, h * factor, w * factor],
            out,
            vec![self.clone()],
            Box::new(move |gout, parents| {
                let input = &parents[0];
                if input.requires_grad() {
                    let din = space_to_depth_raw(gout, n, co, h * factor, w * factor, factor);
                    input.accumulate_grad(&din);
                }
            }),
        ))
    }

    /// Inverse of [`Tensor::depth_to_space`]: fold `factor`x`factor` spatial
    /// neighborhoods into channel blocks.
    pub fn space_to_depth(&self, factor: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_4d(self, "space_to_depth input")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Dimension(format!(
                "space_to_depth: spatial dims {h}x{w} not divisible by {factor}"
            )));
        }
        let out = space_to_depth_raw(&self.data(), n, c, h, w, factor);
        let f2 = factor * factor;
        Ok(Tensor::from_op(
            vec![n, c * f2, h / factor, w / factor],
            out,
            vec![self.clone()],
            Box::new(move |gout, parents| {
                let input = &parents[0];
                if input.requires_grad() {
                    let g = Tensor::from_vec(&[n, c * f2, h / factor, w / factor], gout.to_vec())
                        .expect("grad shape");
                    let din = g.depth_to_space(factor).expect("inverse permutation");
                    input.accumulate_grad(&din.data());
                }
            }),
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let a = self.data();
        let b = other.data();
        let out: Vec<T> = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
        drop((a, b));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|gout, parents| {
                parents[0].accumulate_grad(gout);
                parents[1].accumulate_grad(gout);
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, factor: f64) -> Tensor<T> {
        let s = T::from_f64(factor);
        let out: Vec<T> = self.data().iter().map(|&x| s * x).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |gout, parents| {
                let input = &parents[0];
                if input.requires_grad() {
                    let din: Vec<T> = gout.iter().map(|&g| s * g).collect();
                    input.accumulate_grad(&din);
                }
            }),
        )
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data().iter() {
            acc += v;
        }
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![acc],
            vec![self.clone()],
            Box::new(move |gout, parents| {
                let input = &parents[0];
                if input.requires_grad() {
                    input.accumulate_grad(&vec![gout[0]; n]);
                }
            }),
        )
    }

    /// Mean absolute difference (L1), as a scalar tensor.
    pub fn mean_abs_diff(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != target.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mean_abs_diff: {:?} vs {:?}",
                self.shape(),
                target.shape()
            )));
        }
        let n = self.numel();
        let inv_n = T::from_f64(1.0 / n as f64);
        let mut acc = T::zero();
        {
            let a = self.data();
            let b = target.data();
            for (&x, &y) in a.iter().zip(b.iter()) {
                acc += (x - y).abs();
            }
        }
        Ok(Tensor::from_op(
            vec![1],
            vec![acc * inv_n],
            vec![self.clone(), target.clone()],
            Box::new(move |gout, parents| {
                let (a, b) = (&parents[0], &parents[1]);
                if !a.requires_grad() && !b.requires_grad() {
                    return;
                }
                let g = gout[0] * inv_n;
                let da: Vec<T> = a
                    .data()
                    .iter()
                    .zip(b.data().iter())
                    .map(|(&x, &y)| {
                        if x > y {
                            g
                        } else if x < y {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if a.requires_grad() {
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    let db: Vec<T> = da.iter().map(|&v| -v).collect();
                    b.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Mean absolute forward difference along x plus the same along y
    /// (total variation), as a scalar tensor. The last column/row is
    /// excluded from the respective term.
    pub fn tv_mean(&self) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_4d(self, "tv_mean input")?;
        if h < 2 || w < 2 {
            return Err(Error::Dimension(format!(
                "tv_mean requires at least 2x2 spatial dims, got {h}x{w}"
            )));
        }
        let nx = n * c * h * (w - 1);
        let ny = n * c * (h - 1) * w;
        let inv_nx = T::from_f64(1.0 / nx as f64);
        let inv_ny = T::from_f64(1.0 / ny as f64);
        let mut acc_x = T::zero();
        let mut acc_y = T::zero();
        {
            let d = self.data();
            for p in 0..n * c {
                let base = p * h * w;
                for y in 0..h {
                    for x in 0..w {
                        let v = d[base + y * w + x];
                        if x + 1 < w {
                            acc_x += (d[base + y * w + x + 1] - v).abs();
                        }
                        if y + 1 < h {
                            acc_y += (d[base + (y + 1) * w + x] - v).abs();
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![1],
            vec![acc_x * inv_nx + acc_y * inv_ny],
            vec![self.clone()],
            Box::new(move |gout, parents| {
                let input = &parents[0];
                if !input.requires_grad() {
                    return;
                }
                let d = input.data();
                let mut din = vec![T::zero(); d.len()];
                let gx = gout[0] * inv_nx;
                let gy = gout[0] * inv_ny;
                let sign = |diff: T, g: T| {
                    if diff > T::zero() {
                        g
                    } else if diff < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                };
                for p in 0..n * c {
                    let base = p * h * w;
                    for y in 0..h {
                        for x in 0..w {
                            let i = base + y * w + x;
                            if x + 1 < w {
                                let s = sign(d[i + 1] - d[i], gx);
                                din[i + 1] += s;
                                din[i] += -s;
                            }
                            if y + 1 < h {
                                let s = sign(d[i + w] - d[i], gy);
                                din[i + w] += s;
                                din[i] += -s;
                            }
                        }
                    }
                }
                drop(d);
                input.accumulate_grad(&din);
            }),
        ))
    }

    /// Same data, new extents. The element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch(format!(
                "reshape: {:?} incompatible with {} elements",
                shape,
                self.numel()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|gout, parents| {
                parents[0].accumulate_grad(gout);
            }),
        ))
    }
}

fn space_to_depth_raw<T: Scalar>(
    data: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<T> {
    let f2 = factor * factor;
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![T::zero(); data.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * h * w;
            for dy in 0..factor {
                for dx in 0..factor {
                    let co = ci * f2 + dy * factor + dx;
                    let dst = (ni * c * f2 + co) * oh * ow;
                    for y in 0..oh {
                        for x in 0..ow {
                            out[dst + y * ow + x] =
                                data[src + (y * factor + dy) * w + x * factor + dx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Concatenate along the channel axis. All parts must share batch and
/// spatial extents; part order is preserved.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::Parameter("concat_channels: no parts".into()));
    }
    let [n, _, h, w] = expect_4d(&parts[0], "concat_channels part")?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = expect_4d(p, "concat_channels part")?;
        if pn != n || ph != h || pw != w {
            return Err(Error::Dimension(format!(
                "concat_channels: part shape {:?} does not align with (N={n}, H={h}, W={w})",
                p.shape()
            )));
        }
        channels.push(pc);
    }
    let ctot: usize = channels.iter().sum();
    let mut out = vec![T::zero(); n * ctot * h * w];
    let plane = h * w;
    let mut offset = 0;
    for (p, &pc) in parts.iter().zip(&channels) {
        let d = p.data();
        for ni in 0..n {
            let dst = (ni * ctot + offset) * plane;
            let src = ni * pc * plane;
            out[dst..dst + pc * plane].copy_from_slice(&d[src..src + pc * plane]);
        }
        offset += pc;
    }
    let chan_split = channels.clone();
    Ok(Tensor::from_op(
        vec![n, ctot, h, w],
        out,
        parts.to_vec(),
        Box::new(move |gout, parents| {
            let mut offset = 0;
            for (p, &pc) in parents.iter().zip(&chan_split) {
                if p.requires_grad() {
                    let mut dp = vec![T::zero(); n * pc * plane];
                    for ni in 0..n {
                        let src = (ni * ctot + offset) * plane;
                        let dst = ni * pc * plane;
                        dp[dst..dst + pc * plane].copy_from_slice(&gout[src..src + pc * plane]);
                    }
                    p.accumulate_grad(&dp);
                }
                offset += pc;
            }
        }),
    ))
}
