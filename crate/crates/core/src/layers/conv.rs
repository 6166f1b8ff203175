//! 2-D convolution (cross-correlation, no kernel flip) via im2col and dgemm.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Convolution layer with NCHW activations and KCRS weights.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    /// Cout × Cin × R × S, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    ctx: Option<ConvCtx>,
}

#[derive(Debug, Clone)]
struct ConvCtx {
    input: Vec<f64>,
    in_shape: [usize; 4],
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Self {
        let wlen = out_channels * in_channels * kernel.0 * kernel.1;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: vec![0.0; wlen],
            bias: vec![0.0; out_channels],
            grad_weight: vec![0.0; wlen],
            grad_bias: vec![0.0; out_channels],
            ctx: None,
        }
    }

    pub fn spatial_out(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (r, s) = self.kernel;
        if h + 2 * self.pad < r || w + 2 * self.pad < s || self.stride == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("input at least {r}x{s} after padding"),
                got: format!("{h}x{w} with pad {}", self.pad),
            });
        }
        Ok(((h + 2 * self.pad - r) / self.stride + 1, (w + 2 * self.pad - s) / self.stride + 1))
    }

    pub fn forward(&mut self, x: &Tensor, save_ctx: bool) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("[N, {}, H, W]", self.in_channels),
                got: format!("{shape:?}"),
            });
        }
        let [n, c_in, h, w] = [shape[0], shape[1], shape[2], shape[3]];
        let (h_out, w_out) = self.spatial_out(h, w)?;
        let (r, s) = self.kernel;
        let k = c_in * r * s;
        let spatial = h_out * w_out;
        let data = x.data();

        let mut cols = vec![0.0; k * spatial];
        let mut y = vec![0.0; n * self.out_channels * spatial];
        for sample in 0..n {
            let image = &data[sample * c_in * h * w..(sample + 1) * c_in * h * w];
            im2col(image, c_in, h, w, r, s, self.stride, self.pad, h_out, w_out, &mut cols);
            let out = &mut y[sample * self.out_channels * spatial..];
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels,
                    k,
                    spatial,
                    1.0,
                    self.weight.as_ptr(),
                    k as isize,
                    1,
                    cols.as_ptr(),
                    spatial as isize,
                    1,
                    0.0,
                    out.as_mut_ptr(),
                    spatial as isize,
                    1,
                );
            }
            for co in 0..self.out_channels {
                let b = self.bias[co];
                for v in &mut out[co * spatial..(co + 1) * spatial] {
                    *v += b;
                }
            }
        }

        if save_ctx {
            self.ctx = Some(ConvCtx { input: data.to_vec(), in_shape: [n, c_in, h, w] });
        }
        Tensor::new(&[n, self.out_channels, h_out, w_out], y)
    }

    /// Sets `grad_weight`/`grad_bias` and returns dx. Consumes the saved
    /// forward context.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let ctx = self.ctx.take().ok_or(Error::InvalidArgument(
            "conv backward called without a saved forward".into(),
        ))?;
        let [n, c_in, h, w] = ctx.in_shape;
        let (h_out, w_out) = self.spatial_out(h, w)?;
        let (r, s) = self.kernel;
        let k = c_in * r * s;
        let spatial = h_out * w_out;
        if dy.shape() != [n, self.out_channels, h_out, w_out] {
            return Err(Error::ShapeMismatch {
                expected: format!("[{n}, {}, {h_out}, {w_out}]", self.out_channels),
                got: format!("{:?}", dy.shape()),
            });
        }
        let g = dy.data();

        self.grad_weight.iter_mut().for_each(|v| *v = 0.0);
        self.grad_bias.iter_mut().for_each(|v| *v = 0.0);
        let mut cols = vec![0.0; k * spatial];
        let mut dcols = vec![0.0; k * spatial];
        let mut dx = vec![0.0; n * c_in * h * w];

        for sample in 0..n {
            let image = &ctx.input[sample * c_in * h * w..(sample + 1) * c_in * h * w];
            im2col(image, c_in, h, w, r, s, self.stride, self.pad, h_out, w_out, &mut cols);
            let gout = &g[sample * self.out_channels * spatial..(sample + 1) * self.out_channels * spatial];

            // dW += dy · colsᵀ
            unsafe {
                matrixmultiply::dgemm(
                    self.out_channels,
                    spatial,
                    k,
                    1.0,
                    gout.as_ptr(),
                    spatial as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    spatial as isize,
                    1.0,
                    self.grad_weight.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            for co in 0..self.out_channels {
                for &v in &gout[co * spatial..(co + 1) * spatial] {
                    self.grad_bias[co] += v;
                }
            }
            // dcols = Wᵀ · dy
            unsafe {
                matrixmultiply::dgemm(
                    k,
                    self.out_channels,
                    spatial,
                    1.0,
                    self.weight.as_ptr(),
                    1,
                    k as isize,
                    gout.as_ptr(),
                    spatial as isize,
                    1,
                    0.0,
                    dcols.as_mut_ptr(),
                    spatial as isize,
                    1,
                );
            }
            col2im(
                &dcols,
                c_in,
                h,
                w,
                r,
                s,
                self.stride,
                self.pad,
                h_out,
                w_out,
                &mut dx[sample * c_in * h * w..(sample + 1) * c_in * h * w],
            );
        }
        Tensor::new(&[n, c_in, h, w], dx)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    image: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    r: usize,
    s: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    cols: &mut [f64],
) {
    let mut row = 0usize;
    for ci in 0..c_in {
        for kr in 0..r {
            for kc in 0..s {
                let base = row * h_out * w_out;
                for ho in 0..h_out {
                    let hi = (ho * stride + kr) as isize - pad as isize;
                    let dst = &mut cols[base + ho * w_out..base + (ho + 1) * w_out];
                    if hi < 0 || hi >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = (ci * h + hi as usize) * w;
                    for (wo, slot) in dst.iter_mut().enumerate() {
                        let wi = (wo * stride + kc) as isize - pad as isize;
                        *slot = if wi < 0 || wi >= w as isize {
                            0.0
                        } else {
                            image[src_row + wi as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    r: usize,
    s: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    dx: &mut [f64],
) {
    let mut row = 0usize;
    for ci in 0..c_in {
        for kr in 0..r {
            for kc in 0..s {
                let base = row * h_out * w_out;
                for ho in 0..h_out {
                    let hi = (ho * stride + kr) as isize - pad as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + hi as usize) * w;
                    for wo in 0..w_out {
                        let wi = (wo * stride + kc) as isize - pad as isize;
                        if wi >= 0 && wi < w as isize {
                            dx[dst_row + wi as usize] += dcols[base + ho * w_out + wo];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_kernel_passes_input_through() {
        let mut conv = Conv2d::new(2, 2, (1, 1), 1, 0);
        // weight[co][ci] = δ.
        conv.weight = vec![1.0, 0.0, 0.0, 1.0];
        let x = Tensor::new(&[1, 2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let y = conv.forward(&x, false).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_3x3_on_constant_input_sums_the_window() {
        let mut conv = Conv2d::new(1, 1, (3, 3), 1, 0);
        conv.weight = vec![1.0; 9];
        let x = Tensor::full(&[1, 1, 5, 5], 2.0);
        let y = conv.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| (v - 18.0).abs() < 1e-12));
    }

    #[test]
    fn padding_and_stride_shapes() {
        let conv = Conv2d::new(1, 4, (3, 3), 2, 1);
        assert_eq!(conv.spatial_out(8, 8).unwrap(), (4, 4));
        let conv = Conv2d::new(1, 4, (3, 3), 1, 1);
        assert_eq!(conv.spatial_out(8, 8).unwrap(), (8, 8));
    }

    #[test]
    fn cross_correlation_convention() {
        // Kernel with a single 1 at (kr=0, kc=1) shifts the image left
        // under cross-correlation (no flip).
        let mut conv = Conv2d::new(1, 1, (1, 2), 1, 0);
        conv.weight = vec![0.0, 1.0];
        let x = Tensor::new(&[1, 1, 1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let y = conv.forward(&x, false).unwrap();
        assert_eq!(y.data(), &[20.0, 30.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        use crate::gradcheck::{max_rel_err_fd, FD_STEP};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut conv = Conv2d::new(2, 3, (3, 3), 1, 1);
        conv.weight = (0..conv.weight.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        conv.bias = (0..3).map(|_| rng.random_range(-0.2..0.2)).collect();
        let x: Vec<f64> = (0..2 * 2 * 4 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shape = [2usize, 2, 4, 4];

        let xt = Tensor::new(&shape, x.clone()).unwrap();
        conv.forward(&xt, true).unwrap();
        let dy = Tensor::new(&[2, 3, 4, 4], w.clone()).unwrap();
        let dx = conv.backward(&dy).unwrap();

        let weight0 = conv.weight.clone();
        let bias0 = conv.bias.clone();

        let mut f_x = |xs: &[f64]| {
            let mut c = conv.clone();
            let y = c.forward(&Tensor::new(&shape, xs.to_vec()).unwrap(), false).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        assert!(max_rel_err_fd(&mut f_x, &x, dx.data(), FD_STEP) < 1e-6);

        let mut f_w = |ws: &[f64]| {
            let mut c = conv.clone();
            c.weight = ws.to_vec();
            let y = c.forward(&xt, false).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        assert!(max_rel_err_fd(&mut f_w, &weight0, &conv.grad_weight, FD_STEP) < 1e-6);

        let mut f_b = |bs: &[f64]| {
            let mut c = conv.clone();
            c.bias = bs.to_vec();
            let y = c.forward(&xt, false).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        assert!(max_rel_err_fd(&mut f_b, &bias0, &conv.grad_bias, FD_STEP) < 1e-6);
    }
}
