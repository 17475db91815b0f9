//! Layer primitives with hand-written backward passes.
//!
//! Convolutions are 3×3 with zero padding 1 and are lowered to a single GEMM
//! through an im2col buffer that the forward pass hands back for reuse in the
//! backward pass.

use crate::tensor::{Shape, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

pub fn conv_out_shape(input: Shape, out_channels: usize, stride: usize) -> Shape {
    Shape::new(out_channels, (input.height - 1) / stride + 1, (input.width - 1) / stride + 1)
}

pub fn conv_weight_len(in_channels: usize, out_channels: usize) -> usize {
    out_channels * in_channels * TAPS
}

/// `c = alpha * a·b + beta * c` on row-major buffers; strides are passed
/// explicitly so transposed views cost nothing.
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
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index touched by dgemm lies inside the slices given the
    // (m, k, n) extents and strides chosen by the callers below.
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

fn im2col(x: &Tensor, stride: usize, out: Shape) -> Vec<f64> {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let n = out.plane();
    let mut cols = vec![0.0; x.channels() * TAPS * n];
    for ci in 0..x.channels() {
        let plane = x.channel(ci);
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ci * KERNEL + ky) * KERNEL + kx) * n..][..n];
                for oy in 0..out.height {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[iy as usize * w as usize..][..w as usize];
                    let dst = &mut row[oy * out.width..][..out.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], input: Shape, stride: usize, out: Shape) -> Tensor {
    let (h, w) = (input.height as isize, input.width as isize);
    let n = out.plane();
    let mut dx = Tensor::zeros(input);
    for ci in 0..input.channels {
        let plane = dx.channel_mut(ci);
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ci * KERNEL + ky) * KERNEL + kx) * n..][..n];
                for oy in 0..out.height {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w as usize..][..w as usize];
                    let src = &row[oy * out.width..][..out.width];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Saved state of a convolution forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    input: Shape,
    out: Shape,
    stride: usize,
    cols: Vec<f64>,
}

pub fn conv_forward(
    x: &Tensor,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    stride: usize,
) -> (Tensor, ConvCache) {
    let input = x.shape();
    let out = conv_out_shape(input, out_channels, stride);
    let k = input.channels * TAPS;
    let n = out.plane();
    debug_assert_eq!(weight.len(), out_channels * k);
    debug_assert_eq!(bias.len(), out_channels);
    let cols = im2col(x, stride, out);
    let mut y = Tensor::zeros(out);
    for (co, &b) in bias.iter().enumerate() {
        y.channel_mut(co).fill(b);
    }
    gemm(out_channels, k, n, weight, (k as isize, 1), &cols, (n as isize, 1), 1.0, y.data_mut());
    (y, ConvCache { input, out, stride, cols })
}

/// Accumulates weight and bias gradients into `dweight`/`dbias` and returns
/// the input gradient when `want_input_grad` is set.
pub fn conv_backward(
    cache: &ConvCache,
    weight: &[f64],
    dy: &Tensor,
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_input_grad: bool,
) -> Option<Tensor> {
    let out_channels = cache.out.channels;
    let k = cache.input.channels * TAPS;
    let n = cache.out.plane();
    debug_assert_eq!(dy.shape(), cache.out);
    for (co, db) in dbias.iter_mut().enumerate() {
        *db += dy.channel(co).iter().sum::<f64>();
    }
    // dW (Cout×K) += dY (Cout×N) · colsᵀ (N×K)
    gemm(out_channels, n, k, dy.data(), (n as isize, 1), &cache.cols, (1, n as isize), 1.0, dweight);
    if !want_input_grad {
        return None;
    }
    // dcols (K×N) = Wᵀ (K×Cout) · dY (Cout×N)
    let mut dcols = vec![0.0; k * n];
    gemm(k, out_channels, n, weight, (1, k as isize), dy.data(), (n as isize, 1), 0.0, &mut dcols);
    Some(col2im(&dcols, cache.input, cache.stride, cache.out))
}

/// Exponential linear unit (alpha = 1). Its derivative is continuous at 0,
/// which keeps central finite differences well-behaved.
pub fn elu(z: &Tensor) -> Tensor {
    z.map(|v| if v > 0.0 { v } else { v.exp_m1() })
}

/// Backward of [`elu`] expressed through its output `y`.
pub fn elu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    y.zip_map(dy, |y, g| if y > 0.0 { g } else { g * (y + 1.0) })
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// σ'(z) evaluated without forming 1 − σ(z), so it stays nonzero for large |z|.
#[inline]
pub fn sigmoid_grad(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.channels, s.height * 2, s.width * 2), |c, r, col| {
        x.get(c, r / 2, col / 2)
    })
}

pub fn upsample2x_backward(dy: &Tensor) -> Tensor {
    let s = dy.shape();
    let mut dx = Tensor::zeros(Shape::new(s.channels, s.height / 2, s.width / 2));
    for c in 0..s.channels {
        for r in 0..s.height {
            for col in 0..s.width {
                let v = dx.get(c, r / 2, col / 2) + dy.get(c, r, col);
                dx.set(c, r / 2, col / 2, v);
            }
        }
    }
    dx
}
