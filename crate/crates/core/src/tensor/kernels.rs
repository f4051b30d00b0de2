//! Raw slice kernels shared by the differentiable ops.

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is
/// `k x n`, all row-major. `trans_a` means `a` is stored `k x m`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: extents checked above; strides describe exactly the slices'
    // row-major layouts and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let span_h = height + 2 * pad;
        let span_w = width + 2 * pad;
        if stride == 0 || span_h < kernel || span_w < kernel {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (span_h - kernel) / stride + 1,
            out_w: (span_w - kernel) / stride + 1,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate for output position `o` and kernel tap `t`, or `None`
    /// in the zero padding.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * stride + t) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// One image `C x H x W` to columns `(C*k*k) x (H'*W')`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let k = g.kernel;
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ol..(row + 1) * ol];
                for oy in 0..g.out_h {
                    let sy = ConvGeom::src(oy, ky, g.stride, g.pad, g.height);
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match (
                            sy,
                            ConvGeom::src(ox, kx, g.stride, g.pad, g.width),
                        ) {
                            (Some(y), Some(xx)) => plane[y * g.width + xx],
                            _ => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image gradient.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let k = g.kernel;
    let ol = g.out_len();
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ol..(row + 1) * ol];
                for oy in 0..g.out_h {
                    let Some(y) = ConvGeom::src(oy, ky, g.stride, g.pad, g.height) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(xx) = ConvGeom::src(ox, kx, g.stride, g.pad, g.width) {
                            plane[y * g.width + xx] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Single-plane cross-correlation accumulated into `out`.
pub(crate) fn plane_correlate(plane: &[f64], w: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let k = g.kernel;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let mut acc = 0.0;
            for ky in 0..k {
                let Some(y) = ConvGeom::src(oy, ky, g.stride, g.pad, g.height) else {
                    continue;
                };
                for kx in 0..k {
                    if let Some(xx) = ConvGeom::src(ox, kx, g.stride, g.pad, g.width) {
                        acc += plane[y * g.width + xx] * w[ky * k + kx];
                    }
                }
            }
            out[oy * g.out_w + ox] += acc;
        }
    }
}

/// Gradients of [`plane_correlate`] with respect to the plane and the filter.
pub(crate) fn plane_correlate_backward(
    plane: &[f64],
    w: &[f64],
    g: &ConvGeom,
    dout: &[f64],
    dplane: &mut [f64],
    dw: &mut [f64],
) {
    let k = g.kernel;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let go = dout[oy * g.out_w + ox];
            if go == 0.0 {
                continue;
            }
            for ky in 0..k {
                let Some(y) = ConvGeom::src(oy, ky, g.stride, g.pad, g.height) else {
                    continue;
                };
                for kx in 0..k {
                    if let Some(xx) = ConvGeom::src(ox, kx, g.stride, g.pad, g.width) {
                        let idx = y * g.width + xx;
                        dplane[idx] += go * w[ky * k + kx];
                        dw[ky * k + kx] += go * plane[idx];
                    }
                }
            }
        }
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `src` (with `shape`) into a new buffer laid out as `shape`
/// permuted by `axes`.
pub(crate) fn permute_copy(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    if nd == 0 {
        return src.to_vec();
    }
    let inner = out_shape[nd - 1];
    let inner_stride = gather[nd - 1];
    let mut idx = vec![0usize; nd - 1];
    let outer: usize = out_shape[..nd - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        }
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
