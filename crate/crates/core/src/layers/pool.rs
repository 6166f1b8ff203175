//! Max, average, and global-average pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    ctx: Option<PoolCtx>,
}

#[derive(Debug, Clone)]
struct PoolCtx {
    in_shape: [usize; 4],
    /// Flat input index of each output's maximum (ties: first in scan order).
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub kernel: usize,
    pub stride: usize,
    in_shape: Option<[usize; 4]>,
}

/// Collapses each channel's spatial extent to its mean: NCHW → [N, C].
#[derive(Debug, Clone)]
pub struct GlobalAvgPool {
    in_shape: Option<[usize; 4]>,
}

fn pooled_extent(h: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 || h < kernel {
        return Err(Error::ShapeMismatch {
            expected: format!("spatial extent >= kernel {kernel}"),
            got: format!("{h}"),
        });
    }
    Ok((h - kernel) / stride + 1)
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride, ctx: None }
    }

    pub fn out_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch { expected: "NCHW".into(), got: format!("{shape:?}") });
        }
        Ok(vec![
            shape[0],
            shape[1],
            pooled_extent(shape[2], self.kernel, self.stride)?,
            pooled_extent(shape[3], self.kernel, self.stride)?,
        ])
    }

    pub fn forward(&mut self, x: &Tensor, save_ctx: bool) -> Result<Tensor> {
        let out_shape = self.out_shape(x.shape())?;
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (h_out, w_out) = (out_shape[2], out_shape[3]);
        let data = x.data();
        let mut y = vec![0.0; n * c * h_out * w_out];
        let mut argmax = vec![0usize; y.len()];
        let mut out = 0usize;
        for nc in 0..n * c {
            let base = nc * h * w;
            for ho in 0..h_out {
                for wo in 0..w_out {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for kr in 0..self.kernel {
                        for kc in 0..self.kernel {
                            let idx = base + (ho * self.stride + kr) * w + wo * self.stride + kc;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y[out] = best;
                    argmax[out] = best_idx;
                    out += 1;
                }
            }
        }
        if save_ctx {
            self.ctx = Some(PoolCtx { in_shape: [n, c, h, w], argmax });
        }
        Tensor::new(&out_shape, y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let ctx = self.ctx.take().ok_or(Error::InvalidArgument(
            "maxpool backward called without a saved forward".into(),
        ))?;
        let [n, c, h, w] = ctx.in_shape;
        let mut dx = vec![0.0; n * c * h * w];
        for (g, &idx) in dy.data().iter().zip(&ctx.argmax) {
            dx[idx] += g;
        }
        Tensor::new(&[n, c, h, w], dx)
    }
}

impl AvgPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride, in_shape: None }
    }

    pub fn out_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch { expected: "NCHW".into(), got: format!("{shape:?}") });
        }
        Ok(vec![
            shape[0],
            shape[1],
            pooled_extent(shape[2], self.kernel, self.stride)?,
            pooled_extent(shape[3], self.kernel, self.stride)?,
        ])
    }

    pub fn forward(&mut self, x: &Tensor, save_ctx: bool) -> Result<Tensor> {
        let out_shape = self.out_shape(x.shape())?;
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (h_out, w_out) = (out_shape[2], out_shape[3]);
        let data = x.data();
        let norm = 1.0 / (self.kernel * self.kernel) as f64;
        let mut y = vec![0.0; n * c * h_out * w_out];
        let mut out = 0usize;
        for nc in 0..n * c {
            let base = nc * h * w;
            for ho in 0..h_out {
                for wo in 0..w_out {
                    let mut acc = 0.0;
                    for kr in 0..self.kernel {
                        for kc in 0..self.kernel {
                            acc += data[base + (ho * self.stride + kr) * w + wo * self.stride + kc];
                        }
                    }
                    y[out] = acc * norm;
                    out += 1;
                }
            }
        }
        if save_ctx {
            self.in_shape = Some([n, c, h, w]);
        }
        Tensor::new(&out_shape, y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = self.in_shape.take().ok_or(Error::InvalidArgument(
            "avgpool backward called without a saved forward".into(),
        ))?;
        let (h_out, w_out) = (dy.shape()[2], dy.shape()[3]);
        let norm = 1.0 / (self.kernel * self.kernel) as f64;
        let mut dx = vec![0.0; n * c * h * w];
        let g = dy.data();
        let mut src = 0usize;
        for nc in 0..n * c {
            let base = nc * h * w;
            for ho in 0..h_out {
                for wo in 0..w_out {
                    let spread = g[src] * norm;
                    for kr in 0..self.kernel {
                        for kc in 0..self.kernel {
                            dx[base + (ho * self.stride + kr) * w + wo * self.stride + kc] += spread;
                        }
                    }
                    src += 1;
                }
            }
        }
        Tensor::new(&[n, c, h, w], dx)
    }
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { in_shape: None }
    }

    pub fn forward(&mut self, x: &Tensor, save_ctx: bool) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch { expected: "NCHW".into(), got: format!("{shape:?}") });
        }
        let [n, c, h, w] = [shape[0], shape[1], shape[2], shape[3]];
        let spatial = (h * w) as f64;
        let data = x.data();
        let mut y = vec![0.0; n * c];
        for nc in 0..n * c {
            y[nc] = data[nc * h * w..(nc + 1) * h * w].iter().sum::<f64>() / spatial;
        }
        if save_ctx {
            self.in_shape = Some([n, c, h, w]);
        }
        Tensor::new(&[n, c], y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = self.in_shape.take().ok_or(Error::InvalidArgument(
            "global avgpool backward called without a saved forward".into(),
        ))?;
        let spatial = (h * w) as f64;
        let mut dx = vec![0.0; n * c * h * w];
        for nc in 0..n * c {
            let spread = dy.data()[nc] / spatial;
            dx[nc * h * w..(nc + 1) * h * w].iter_mut().for_each(|v| *v = spread);
        }
        Tensor::new(&[n, c, h, w], dx)
    }
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_maxima() {
        let x = Tensor::new(&[1, 1, 2, 4], vec![1., 5., 2., 0., 3., 0.5, 7., 4.]).unwrap();
        let mut pool = MaxPool2d::new(2, 2);
        let y = pool.forward(&x, true).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5.0, 7.0]);
        let dx = pool.backward(&Tensor::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0., 1., 0., 0., 0., 0., 2., 0.]);
    }

    #[test]
    fn avgpool_spreads_gradient_evenly() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1., 3., 5., 7.]).unwrap();
        let mut pool = AvgPool2d::new(2, 2);
        let y = pool.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = pool.backward(&Tensor::new(&[1, 1, 1, 1], vec![8.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn global_avgpool_reduces_to_channel_means() {
        let x = Tensor::new(&[1, 2, 1, 2], vec![1., 3., 10., 30.]).unwrap();
        let mut pool = GlobalAvgPool::new();
        let y = pool.forward(&x, true).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.0, 20.0]);
        let dx = pool.backward(&Tensor::new(&[1, 2], vec![2.0, 4.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 2.0, 2.0]);
    }
}
