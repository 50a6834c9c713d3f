//! Raw numeric kernels over `Tensor` values. No graph bookkeeping here.
//!
//! Convolutions use NCHW activations and `[out, in, k, k]` weights and are
//! lowered to GEMM through an im2col buffer.

use crate::Tensor;

/// Stride and zero padding shared by a convolution and its adjoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Output extent of a forward convolution along one axis.
    pub fn out_extent(&self, input: usize, kernel: usize) -> usize {
        let padded = input + 2 * self.padding;
        assert!(
            padded >= kernel,
            "kernel {kernel} larger than padded input {padded}"
        );
        (padded - kernel) / self.stride + 1
    }

    /// Output extent of the transposed convolution along one axis.
    pub fn transposed_extent(&self, input: usize, kernel: usize) -> usize {
        (input - 1) * self.stride + kernel - 2 * self.padding
    }
}

struct Plan {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
    geom: ConvGeom,
}

impl Plan {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfold one `[C, H, W]` image into a `[C*k*k, out_h*out_w]` matrix.
    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let k = self.kernel;
        let n_cols = self.col_cols();
        let pad = self.padding() as isize;
        let s = self.geom.stride as isize;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * s + ky as isize - pad;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, out) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - pad;
                            *out = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Fold a column matrix back into an image, accumulating overlaps.
    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let k = self.kernel;
        let n_cols = self.col_cols();
        let pad = self.padding() as isize;
        let s = self.geom.stride as isize;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.out_h {
                        let iy = oy as isize * s + ky as isize - pad;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst =
                            &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..self.out_w {
                            let ix = ox as isize * s + kx as isize - pad;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn padding(&self) -> usize {
        self.geom.padding
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    // Row/column strides for op(a) of shape m×k and op(b) of shape k×n.
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: buffer extents checked above; strides describe dense row-major storage.
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

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = dims2(a);
    let (k2, n) = dims2(b);
    assert_eq!(k, k2, "matmul inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::new([m, n], out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = dims2(a);
    let src = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new([n, m], out)
}

fn dims2(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.ndim(), 2, "expected a matrix, got shape {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

fn dims4(t: &Tensor) -> [usize; 4] {
    assert_eq!(t.ndim(), 4, "expected NCHW, got shape {:?}", t.shape());
    [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]]
}

/// Forward convolution: `[N, Ci, H, W] * [Co, Ci, k, k] -> [N, Co, Ho, Wo]`.
pub fn conv2d(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let [n, ci, h, wd] = dims4(x);
    let [co, wci, k, k2] = dims4(w);
    assert_eq!(ci, wci, "conv2d channel mismatch");
    assert_eq!(k, k2, "square kernels only");
    let plan = Plan {
        channels: ci,
        height: h,
        width: wd,
        kernel: k,
        out_h: geom.out_extent(h, k),
        out_w: geom.out_extent(wd, k),
        geom,
    };
    let (rows, cols_n) = (plan.col_rows(), plan.col_cols());
    let mut cols = vec![0.0; rows * cols_n];
    let mut out = vec![0.0; n * co * cols_n];
    let in_len = ci * h * wd;
    for s in 0..n {
        plan.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
        gemm(
            co,
            rows,
            cols_n,
            w.data(),
            false,
            &cols,
            false,
            0.0,
            &mut out[s * co * cols_n..(s + 1) * co * cols_n],
        );
    }
    Tensor::new([n, co, plan.out_h, plan.out_w], out)
}

/// Adjoint of [`conv2d`] in its input: maps `[N, Co, Ho, Wo]` back to
/// `[N, Ci, out_h, out_w]`. Also serves as the transposed convolution.
pub fn conv2d_transpose(g: &Tensor, w: &Tensor, geom: ConvGeom, out_hw: (usize, usize)) -> Tensor {
    let [n, co, gh, gw] = dims4(g);
    let [wco, ci, k, _] = dims4(w);
    assert_eq!(co, wco, "conv2d_transpose channel mismatch");
    let plan = Plan {
        channels: ci,
        height: out_hw.0,
        width: out_hw.1,
        kernel: k,
        out_h: gh,
        out_w: gw,
        geom,
    };
    assert_eq!(
        geom.out_extent(out_hw.0, k),
        gh,
        "transpose height mismatch"
    );
    assert_eq!(geom.out_extent(out_hw.1, k), gw, "transpose width mismatch");
    let (rows, cols_n) = (plan.col_rows(), plan.col_cols());
    let mut cols = vec![0.0; rows * cols_n];
    let img_len = ci * out_hw.0 * out_hw.1;
    let mut out = vec![0.0; n * img_len];
    for s in 0..n {
        gemm(
            rows,
            co,
            cols_n,
            w.data(),
            true,
            &g.data()[s * co * cols_n..(s + 1) * co * cols_n],
            false,
            0.0,
            &mut cols,
        );
        plan.col2im(&cols, &mut out[s * img_len..(s + 1) * img_len]);
    }
    Tensor::new([n, ci, out_hw.0, out_hw.1], out)
}

/// Gradient of `<conv2d(x, w), g>` with respect to `w`.
pub fn conv2d_weight_grad(x: &Tensor, g: &Tensor, geom: ConvGeom, kernel: usize) -> Tensor {
    let [n, ci, h, wd] = dims4(x);
    let [gn, co, gh, gw] = dims4(g);
    assert_eq!(n, gn, "weight grad batch mismatch");
    let plan = Plan {
        channels: ci,
        height: h,
        width: wd,
        kernel,
        out_h: gh,
        out_w: gw,
        geom,
    };
    assert_eq!(
        geom.out_extent(h, kernel),
        gh,
        "weight grad height mismatch"
    );
    assert_eq!(
        geom.out_extent(wd, kernel),
        gw,
        "weight grad width mismatch"
    );
    let (rows, cols_n) = (plan.col_rows(), plan.col_cols());
    let mut cols = vec![0.0; rows * cols_n];
    let mut out = vec![0.0; co * rows];
    let in_len = ci * h * wd;
    for s in 0..n {
        plan.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut cols);
        gemm(
            co,
            cols_n,
            rows,
            &g.data()[s * co * cols_n..(s + 1) * co * cols_n],
            false,
            &cols,
            true,
            1.0,
            &mut out,
        );
    }
    Tensor::new([co, ci, kernel, kernel], out)
}
