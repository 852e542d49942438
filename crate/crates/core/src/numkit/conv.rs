//! Temporal (1-D) convolution over a `T × C` sequence, lowered to a GEMM.
//!
//! Kernels are laid out `k × C_in × C_out`, which is exactly the row-major
//! `(k·C_in) × C_out` matrix the im2col patches multiply against.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub len_in: usize,
    pub len_out: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn check(
        x: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if x.shape().len() != 2 {
            return Err(Error::Shape {
                op: "temporal_conv",
                axis: "input rank",
                expected: 2,
                got: x.shape().len(),
            });
        }
        if kernel.shape().len() != 3 {
            return Err(Error::Shape {
                op: "temporal_conv",
                axis: "kernel rank",
                expected: 3,
                got: kernel.shape().len(),
            });
        }
        let (len_in, c_in) = (x.rows(), x.cols());
        let (k, kc_in, c_out) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
        if kc_in != c_in {
            return Err(Error::Shape {
                op: "temporal_conv",
                axis: "input channels",
                expected: kc_in,
                got: c_in,
            });
        }
        if bias.len() != c_out {
            return Err(Error::Shape {
                op: "temporal_conv",
                axis: "bias",
                expected: c_out,
                got: bias.len(),
            });
        }
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "temporal_conv: kernel size {k} must be odd"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "temporal_conv: stride must be positive".into(),
            ));
        }
        if len_in + 2 * padding < k {
            return Err(Error::Shape {
                op: "temporal_conv",
                axis: "time",
                expected: k,
                got: len_in + 2 * padding,
            });
        }
        let len_out = (len_in + 2 * padding - k) / stride + 1;
        Ok(Self {
            len_in,
            len_out,
            c_in,
            c_out,
            kernel: k,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.c_in
    }
}

/// im2col: one row of `k·C_in` values per output position, zero outside the input.
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let pl = g.patch_len();
    let mut cols = vec![0.0; g.len_out * pl];
    for o in 0..g.len_out {
        let row = &mut cols[o * pl..(o + 1) * pl];
        for j in 0..g.kernel {
            let src = (o * g.stride + j) as isize - g.padding as isize;
            if src >= 0 && (src as usize) < g.len_in {
                let s = src as usize * g.c_in;
                row[j * g.c_in..(j + 1) * g.c_in].copy_from_slice(&x[s..s + g.c_in]);
            }
        }
    }
    cols
}

/// `c[m×n] = beta·c + a[m×k]·b[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: slice lengths cover every index reachable through the given
    // dimensions and strides; callers pass dense row-major or transposed views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass. Returns the output and the im2col patches for reuse in backward.
pub(crate) fn conv_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
) -> (Tensor, Vec<f64>) {
    let cols = im2col(x.data(), g);
    let mut out = Vec::with_capacity(g.len_out * g.c_out);
    for _ in 0..g.len_out {
        out.extend_from_slice(bias.data());
    }
    let pl = g.patch_len() as isize;
    gemm(
        g.len_out,
        g.patch_len(),
        g.c_out,
        &cols,
        (pl, 1),
        kernel.data(),
        (g.c_out as isize, 1),
        1.0,
        &mut out,
    );
    (
        Tensor::new(vec![g.len_out, g.c_out], out).expect("conv output shape"),
        cols,
    )
}

pub(crate) struct ConvGrads {
    pub x: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv_backward(
    d_out: &Tensor,
    cols: &[f64],
    kernel: &Tensor,
    g: &ConvGeometry,
) -> ConvGrads {
    let pl = g.patch_len();

    let mut d_kernel = vec![0.0; pl * g.c_out];
    gemm(
        pl,
        g.len_out,
        g.c_out,
        cols,
        (1, pl as isize),
        d_out.data(),
        (g.c_out as isize, 1),
        0.0,
        &mut d_kernel,
    );

    let mut d_bias = vec![0.0; g.c_out];
    for o in 0..g.len_out {
        for (db, &d) in d_bias.iter_mut().zip(d_out.row(o)) {
            *db += d;
        }
    }

    let mut d_cols = vec![0.0; g.len_out * pl];
    gemm(
        g.len_out,
        g.c_out,
        pl,
        d_out.data(),
        (g.c_out as isize, 1),
        kernel.data(),
        (1, g.c_out as isize),
        0.0,
        &mut d_cols,
    );

    let mut d_x = vec![0.0; g.len_in * g.c_in];
    for o in 0..g.len_out {
        let row = &d_cols[o * pl..(o + 1) * pl];
        for j in 0..g.kernel {
            let src = (o * g.stride + j) as isize - g.padding as isize;
            if src >= 0 && (src as usize) < g.len_in {
                let s = src as usize * g.c_in;
                for (dx, &d) in d_x[s..s + g.c_in]
                    .iter_mut()
                    .zip(&row[j * g.c_in..(j + 1) * g.c_in])
                {
                    *dx += d;
                }
            }
        }
    }

    ConvGrads {
        x: Tensor::new(vec![g.len_in, g.c_in], d_x).expect("dx shape"),
        kernel: Tensor::new(kernel.shape().to_vec(), d_kernel).expect("dk shape"),
        bias: Tensor::new(vec![g.c_out], d_bias).expect("db shape"),
    }
}

/// Stand-alone temporal convolution: `x` is `T × C_in`, `kernel` is
/// `k × C_in × C_out`, `bias` has `C_out` entries.
///
/// Output length is `floor((T + 2·padding − k) / stride) + 1`.
pub fn temporal_conv(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::check(x, kernel, bias, stride, padding)?;
    Ok(conv_forward(x, kernel, bias, &g).0)
}
