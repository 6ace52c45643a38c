//! Number-crunching loops behind the tensor ops.
//!
//! Every kernel comes in a `_seq` form and, with the `parallel` feature, a
//! `_par` form that splits the output into disjoint per-(image, channel)
//! chunks via rayon. Each output element is produced by exactly one task
//! with a fixed inner summation order, so results are bit-identical across
//! thread counts and across the two forms. The unsuffixed entry points
//! dispatch on the feature flag.
//!
//! Hidden from docs: this module is public only so the bench suite can
//! compare both forms in one binary.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::Scalar;

/// Geometry of a conv2d call, all in elements.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

fn conv2d_fill_plane<T: Scalar>(
    g: &Conv2dGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    n: usize,
    co: usize,
    out_plane: &mut [T],
) {
    let (h, w) = (g.h as isize, g.w as isize);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let mut acc = bias[co];
            for ci in 0..g.cin {
                let in_base = (n * g.cin + ci) * g.h * g.w;
                let w_base = ((co * g.cin + ci) * g.kh) * g.kw;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        acc += input[in_base + (iy as usize) * g.w + ix as usize]
                            * weight[w_base + ky * g.kw + kx];
                    }
                }
            }
            out_plane[oy * g.ow + ox] = acc;
        }
    }
}

pub fn conv2d_forward_seq<T: Scalar>(
    g: &Conv2dGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    for (idx, plane) in out.chunks_mut(g.oh * g.ow).enumerate() {
        conv2d_fill_plane(g, input, weight, bias, idx / g.cout, idx % g.cout, plane);
    }
}

#[cfg(feature = "parallel")]
pub fn conv2d_forward_par<T: Scalar>(
    g: &Conv2dGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    out.par_chunks_mut(g.oh * g.ow)
        .enumerate()
        .for_each(|(idx, plane)| {
            conv2d_fill_plane(g, input, weight, bias, idx / g.cout, idx % g.cout, plane)
        });
}

pub fn conv2d_forward<T: Scalar>(
    g: &Conv2dGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    #[cfg(feature = "parallel")]
    conv2d_forward_par(g, input, weight, bias, out);
    #[cfg(not(feature = "parallel"))]
    conv2d_forward_seq(g, input, weight, bias, out);
}

fn conv2d_dinput_plane<T: Scalar>(
    g: &Conv2dGeom,
    gout: &[T],
    weight: &[T],
    n: usize,
    ci: usize,
    din_plane: &mut [T],
) {
    for iy in 0..g.h {
        for ix in 0..g.w {
            let mut acc = T::zero();
            for co in 0..g.cout {
                let go_base = (n * g.cout + co) * g.oh * g.ow;
                let w_base = ((co * g.cin + ci) * g.kh) * g.kw;
                for ky in 0..g.kh {
                    let t = iy as isize + g.pad as isize - ky as isize;
                    if t < 0 || t % g.stride as isize != 0 {
                        continue;
                    }
                    let oy = (t / g.stride as isize) as usize;
                    if oy >= g.oh {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let u = ix as isize + g.pad as isize - kx as isize;
                        if u < 0 || u % g.stride as isize != 0 {
                            continue;
                        }
                        let ox = (u / g.stride as isize) as usize;
                        if ox >= g.ow {
                            continue;
                        }
                        acc += gout[go_base + oy * g.ow + ox] * weight[w_base + ky * g.kw + kx];
                    }
                }
            }
            din_plane[iy * g.w + ix] = acc;
        }
    }
}

pub fn conv2d_backward_input_seq<T: Scalar>(
    g: &Conv2dGeom,
    gout: &[T],
    weight: &[T],
    din: &mut [T],
) {
    for (idx, plane) in din.chunks_mut(g.h * g.w).enumerate() {
        conv2d_dinput_plane(g, gout, weight, idx / g.cin, idx % g.cin, plane);
    }
}

#[cfg(feature = "parallel")]
pub fn conv2d_backward_input_par<T: Scalar>(
    g: &Conv2dGeom,
    gout: &[T],
    weight: &[T],
    din: &mut [T],
) {
    din.par_chunks_mut(g.h * g.w)
        .enumerate()
        .for_each(|(idx, plane)| {
            conv2d_dinput_plane(g, gout, weight, idx / g.cin, idx % g.cin, plane)
        });
}

pub fn conv2d_backward_input<T: Scalar>(
    g: &Conv2dGeom,
    gout: &[T],
    weight: &[T],
    din: &mut [T],
) {
    #[cfg(feature = "parallel")]
    conv2d_backward_input_par(g, gout, weight, din);
    #[cfg(not(feature = "parallel"))]
    conv2d_backward_input_seq(g, gout, weight, din);
}

fn conv2d_dweight_chunk<T: Scalar>(g: &Conv2dGeom, gout: &[T], input: &[T], co: usize, dw_chunk: &mut [T]) {
    let (h, w) = (g.h as isize, g.w as isize);
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let mut acc = T::zero();
                for n in 0..g.batch {
                    let go_base = (n * g.cout + co) * g.oh * g.ow;
                    let in_base = (n * g.cin + ci) * g.h * g.w;
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            acc += gout[go_base + oy * g.ow + ox]
                                * input[in_base + (iy as usize) * g.w + ix as usize];
                        }
                    }
                }
                dw_chunk[(ci * g.kh + ky) * g.kw + kx] = acc;
            }
        }
    }
}

pub fn conv2d_backward_weight_seq<T: Scalar>(
    g: &Conv2dGeom,
    gout: &[T],
    input: &[T],
    dw: &mut [T],
) {
    for (co, chunk) in dw.chunks_mut(g.cin * g.kh * g.kw).enumerate() {
        conv2d_dweight_chunk(g, gout, input, co, chunk);
    }
}

#[cfg(feature = "parallel")]
pub fn conv2d_backward_weight_par<T: Scalar>(
    g: &Conv2dGeom,
    gout: &[T],
    input: &[T],
    dw: &mut [T],
) {
    dw.par_chunks_mut(g.cin * g.kh * g.kw)
        .enumerate()
        .for_each(|(co, chunk)| conv2d_dweight_chunk(g, gout, input, co, chunk));
}

pub fn conv2d_backward_weight<T: Scalar>(
    g: &Conv2dGeom,
    gout: &[T],
    input: &[T],
    dw: &mut [T],
) {
    #[cfg(feature = "parallel")]
    conv2d_backward_weight_par(g, gout, input, dw);
    #[cfg(not(feature = "parallel"))]
    conv2d_backward_weight_seq(g, gout, input, dw);
}

pub fn conv2d_backward_bias<T: Scalar>(g: &Conv2dGeom, gout: &[T], db: &mut [T]) {
    for co in 0..g.cout {
        let mut acc = T::zero();
        for n in 0..g.batch {
            let base = (n * g.cout + co) * g.oh * g.ow;
            for i in 0..g.oh * g.ow {
                acc += gout[base + i];
            }
        }
        db[co] = acc;
    }
}

/// Geometry of a transposed conv2d. Weight layout is (Cin, Cout, kH, kW);
/// output extent is `(len - 1) * stride + k` per axis, no padding.
#[derive(Clone, Copy, Debug)]
pub struct Tconv2dGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

fn tconv2d_fill_plane<T: Scalar>(
    g: &Tconv2dGeom,
    input: &[T],
    weight: &[T],
    n: usize,
    co: usize,
    out_plane: &mut [T],
) {
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let mut acc = T::zero();
            for ci in 0..g.cin {
                let in_base = (n * g.cin + ci) * g.h * g.w;
                let w_base = ((ci * g.cout + co) * g.kh) * g.kw;
                for ky in 0..=oy.min(g.kh - 1) {
                    let t = oy - ky;
                    if t % g.stride != 0 {
                        continue;
                    }
                    let iy = t / g.stride;
                    if iy >= g.h {
                        continue;
                    }
                    for kx in 0..=ox.min(g.kw - 1) {
                        let u = ox - kx;
                        if u % g.stride != 0 {
                            continue;
                        }
                        let ix = u / g.stride;
                        if ix >= g.w {
                            continue;
                        }
                        acc += input[in_base + iy * g.w + ix] * weight[w_base + ky * g.kw + kx];
                    }
                }
            }
            out_plane[oy * g.ow + ox] = acc;
        }
    }
}

pub fn tconv2d_forward_seq<T: Scalar>(g: &Tconv2dGeom, input: &[T], weight: &[T], out: &mut [T]) {
    for (idx, plane) in out.chunks_mut(g.oh * g.ow).enumerate() {
        tconv2d_fill_plane(g, input, weight, idx / g.cout, idx % g.cout, plane);
    }
}

#[cfg(feature = "parallel")]
pub fn tconv2d_forward_par<T: Scalar>(g: &Tconv2dGeom, input: &[T], weight: &[T], out: &mut [T]) {
    out.par_chunks_mut(g.oh * g.ow)
        .enumerate()
        .for_each(|(idx, plane)| {
            tconv2d_fill_plane(g, input, weight, idx / g.cout, idx % g.cout, plane)
        });
}

pub fn tconv2d_forward<T: Scalar>(g: &Tconv2dGeom, input: &[T], weight: &[T], out: &mut [T]) {
    #[cfg(feature = "parallel")]
    tconv2d_forward_par(g, input, weight, out);
    #[cfg(not(feature = "parallel"))]
    tconv2d_forward_seq(g, input, weight, out);
}

fn tconv2d_dinput_plane<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    weight: &[T],
    n: usize,
    ci: usize,
    din_plane: &mut [T],
) {
    for iy in 0..g.h {
        for ix in 0..g.w {
            let mut acc = T::zero();
            for co in 0..g.cout {
                let go_base = (n * g.cout + co) * g.oh * g.ow;
                let w_base = ((ci * g.cout + co) * g.kh) * g.kw;
                for ky in 0..g.kh {
                    let oy = iy * g.stride + ky;
                    for kx in 0..g.kw {
                        let ox = ix * g.stride + kx;
                        acc += gout[go_base + oy * g.ow + ox] * weight[w_base + ky * g.kw + kx];
                    }
                }
            }
            din_plane[iy * g.w + ix] = acc;
        }
    }
}

pub fn tconv2d_backward_input_seq<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    weight: &[T],
    din: &mut [T],
) {
    for (idx, plane) in din.chunks_mut(g.h * g.w).enumerate() {
        tconv2d_dinput_plane(g, gout, weight, idx / g.cin, idx % g.cin, plane);
    }
}

#[cfg(feature = "parallel")]
pub fn tconv2d_backward_input_par<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    weight: &[T],
    din: &mut [T],
) {
    din.par_chunks_mut(g.h * g.w)
        .enumerate()
        .for_each(|(idx, plane)| {
            tconv2d_dinput_plane(g, gout, weight, idx / g.cin, idx % g.cin, plane)
        });
}

pub fn tconv2d_backward_input<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    weight: &[T],
    din: &mut [T],
) {
    #[cfg(feature = "parallel")]
    tconv2d_backward_input_par(g, gout, weight, din);
    #[cfg(not(feature = "parallel"))]
    tconv2d_backward_input_seq(g, gout, weight, din);
}

fn tconv2d_dweight_chunk<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    input: &[T],
    ci: usize,
    dw_chunk: &mut [T],
) {
    for co in 0..g.cout {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let mut acc = T::zero();
                for n in 0..g.batch {
                    let in_base = (n * g.cin + ci) * g.h * g.w;
                    let go_base = (n * g.cout + co) * g.oh * g.ow;
                    for iy in 0..g.h {
                        let oy = iy * g.stride + ky;
                        for ix in 0..g.w {
                            let ox = ix * g.stride + kx;
                            acc += input[in_base + iy * g.w + ix] * gout[go_base + oy * g.ow + ox];
                        }
                    }
                }
                dw_chunk[(co * g.kh + ky) * g.kw + kx] = acc;
            }
        }
    }
}

pub fn tconv2d_backward_weight_seq<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    input: &[T],
    dw: &mut [T],
) {
    for (ci, chunk) in dw.chunks_mut(g.cout * g.kh * g.kw).enumerate() {
        tconv2d_dweight_chunk(g, gout, input, ci, chunk);
    }
}

#[cfg(feature = "parallel")]
pub fn tconv2d_backward_weight_par<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    input: &[T],
    dw: &mut [T],
) {
    dw.par_chunks_mut(g.cout * g.kh * g.kw)
        .enumerate()
        .for_each(|(ci, chunk)| tconv2d_dweight_chunk(g, gout, input, ci, chunk));
}

pub fn tconv2d_backward_weight<T: Scalar>(
    g: &Tconv2dGeom,
    gout: &[T],
    input: &[T],
    dw: &mut [T],
) {
    #[cfg(feature = "parallel")]
    tconv2d_backward_weight_par(g, gout, input, dw);
    #[cfg(not(feature = "parallel"))]
    tconv2d_backward_weight_seq(g, gout, input, dw);
}

/// 2x2 non-overlapping max pool. `argmax` records the plane-local flat
/// index of the winner (first occurrence on ties, row-major scan).
pub fn max_pool2_forward<T: Scalar>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    let fill = |p: usize, out_plane: &mut [T], arg_plane: &mut [u32]| {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (2 * oy) * w + 2 * ox;
                let mut best = input[base + best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    let v = input[base + idx];
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                out_plane[oy * ow + ox] = best;
                arg_plane[oy * ow + ox] = best_idx as u32;
            }
        }
    };
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .enumerate()
        .for_each(|(p, (o, a))| fill(p, o, a));
    #[cfg(not(feature = "parallel"))]
    for (p, (o, a)) in out
        .chunks_mut(oh * ow)
        .zip(argmax.chunks_mut(oh * ow))
        .enumerate()
    {
        fill(p, o, a);
    }
    let _ = planes;
}

pub fn max_pool2_backward<T: Scalar>(
    planes: usize,
    h: usize,
    w: usize,
    gout: &[T],
    argmax: &[u32],
    din: &mut [T],
) {
    let (oh, ow) = (h / 2, w / 2);
    let scatter = |p: usize, din_plane: &mut [T]| {
        let base = p * oh * ow;
        for i in 0..oh * ow {
            din_plane[argmax[base + i] as usize] += gout[base + i];
        }
    };
    #[cfg(feature = "parallel")]
    din.par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(p, plane)| scatter(p, plane));
    #[cfg(not(feature = "parallel"))]
    for (p, plane) in din.chunks_mut(h * w).enumerate() {
        scatter(p, plane);
    }
    let _ = planes;
}

/// Map a unary function over a slice, parallel when enabled.
pub fn unary_map<T: Scalar, F>(input: &[T], out: &mut [T], f: F)
where
    F: Fn(T) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    out.par_iter_mut()
        .zip(input.par_iter())
        .for_each(|(o, &x)| *o = f(x));
    #[cfg(not(feature = "parallel"))]
    for (o, &x) in out.iter_mut().zip(input.iter()) {
        *o = f(x);
    }
}
