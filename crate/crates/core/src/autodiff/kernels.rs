//! Slice-level convolution kernels shared by the forward and backward passes.
//!
//! All kernels use the cross-correlation convention (no kernel flip), unlike
//! the wavelet filter bank which is a true convolution.

use crate::scalar::Scalar;

/// Range of `i` in `0..count` for which `i * stride + tap - padding` lands in `0..target_len`.
#[inline]
pub(crate) fn valid_range(
    tap: usize,
    padding: usize,
    stride: usize,
    target_len: usize,
    count: usize,
) -> (usize, usize) {
    let lo = if padding > tap {
        (padding - tap).div_ceil(stride)
    } else {
        0
    };
    if target_len == 0 || target_len + padding < tap + 1 {
        return (0, 0);
    }
    let hi = ((target_len - 1 + padding - tap) / stride + 1).min(count);
    (lo.min(hi), hi)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// `y[b,co,o] = bias[co] + sum_{ci,k} w[co,ci,k] * x[b,ci,o*s+k-p]`
pub(crate) fn conv1d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut y = vec![T::zero(); g.batch * g.cout * g.len_out];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let out = &mut y[(b * g.cout + co) * g.len_out..][..g.len_out];
            if let Some(bias) = bias {
                out.iter_mut().for_each(|v| *v = bias[co]);
            }
            for ci in 0..g.cin {
                let xrow = &x[(b * g.cin + ci) * g.len_in..][..g.len_in];
                let wrow = &w[(co * g.cin + ci) * g.kernel..][..g.kernel];
                for (k, &wk) in wrow.iter().enumerate() {
                    let (o0, o1) = valid_range(k, g.padding, g.stride, g.len_in, g.len_out);
                    if o0 >= o1 {
                        continue;
                    }
                    if g.stride == 1 {
                        let start = o0 + k - g.padding;
                        for (o, xv) in out[o0..o1].iter_mut().zip(&xrow[start..start + (o1 - o0)]) {
                            *o += wk * *xv;
                        }
                    } else {
                        for o in o0..o1 {
                            out[o] += wk * xrow[o * g.stride + k - g.padding];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of [`conv1d_forward`] with respect to input, weight and bias.
pub(crate) fn conv1d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grow = &gy[(b * g.cout + co) * g.len_out..][..g.len_out];
            for ci in 0..g.cin {
                let xoff = (b * g.cin + ci) * g.len_in;
                let woff = (co * g.cin + ci) * g.kernel;
                for k in 0..g.kernel {
                    let (o0, o1) = valid_range(k, g.padding, g.stride, g.len_in, g.len_out);
                    if o0 >= o1 {
                        continue;
                    }
                    let wk = w[woff + k];
                    let mut acc = T::zero();
                    for (o, &go) in grow.iter().enumerate().take(o1).skip(o0) {
                        let idx = xoff + o * g.stride + k - g.padding;
                        acc += go * x[idx];
                        if let Some(gx) = gx.as_deref_mut() {
                            gx[idx] += wk * go;
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[woff + k] += acc;
                    }
                }
            }
        }
    }
    if let Some(gb) = gb {
        accumulate_bias_grad(g.batch, g.cout, g.len_out, gy, gb);
    }
}

/// `y[b,co,i*s+k-p] += w[ci,co,k] * x[b,ci,i]`, plus bias.
pub(crate) fn conv_transpose1d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut y = vec![T::zero(); g.batch * g.cout * g.len_out];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let out = &mut y[(b * g.cout + co) * g.len_out..][..g.len_out];
            if let Some(bias) = bias {
                out.iter_mut().for_each(|v| *v = bias[co]);
            }
            for ci in 0..g.cin {
                let xrow = &x[(b * g.cin + ci) * g.len_in..][..g.len_in];
                let woff = (ci * g.cout + co) * g.kernel;
                for k in 0..g.kernel {
                    let wk = w[woff + k];
                    let (i0, i1) = valid_range(k, g.padding, g.stride, g.len_out, g.len_in);
                    for i in i0..i1 {
                        out[i * g.stride + k - g.padding] += wk * xrow[i];
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_transpose1d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    for b in 0..g.batch {
        for co in 0..g.cout {
            let grow = &gy[(b * g.cout + co) * g.len_out..][..g.len_out];
            for ci in 0..g.cin {
                let xoff = (b * g.cin + ci) * g.len_in;
                let woff = (ci * g.cout + co) * g.kernel;
                for k in 0..g.kernel {
                    let wk = w[woff + k];
                    let (i0, i1) = valid_range(k, g.padding, g.stride, g.len_out, g.len_in);
                    let mut acc = T::zero();
                    for i in i0..i1 {
                        let gv = grow[i * g.stride + k - g.padding];
                        acc += gv * x[xoff + i];
                        if let Some(gx) = gx.as_deref_mut() {
                            gx[xoff + i] += wk * gv;
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[woff + k] += acc;
                    }
                }
            }
        }
    }
    if let Some(gb) = gb {
        accumulate_bias_grad(g.batch, g.cout, g.len_out, gy, gb);
    }
}

fn accumulate_bias_grad<T: Scalar>(batch: usize, cout: usize, len: usize, gy: &[T], gb: &mut [T]) {
    for b in 0..batch {
        for (co, acc) in gb.iter_mut().enumerate().take(cout) {
            *acc += gy[(b * cout + co) * len..][..len].iter().copied().sum::<T>();
        }
    }
}
