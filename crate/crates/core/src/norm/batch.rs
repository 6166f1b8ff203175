//! Batch normalization with learnable affine parameters and running
//! statistics for inference (Ioffe & Szegedy, 2015).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ncl_dims;

/// Per-channel batch-norm state. The running statistics follow
/// μ̂ ← (1−λ)·μ̂ + λ·μ_B with `momentum` playing the role of λ.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Saved forward quantities for [`bn_backward`].
#[derive(Debug)]
pub struct BnCtx {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    dims: (usize, usize, usize),
    shape: Vec<usize>,
    batch_stats: bool,
}

/// Batch-norm forward. In training mode the per-channel statistics come from
/// the batch (over N and the spatial extent) and the running statistics are
/// updated; in inference mode the running statistics are used unchanged.
pub fn bn_forward(x: &Tensor, state: &mut BnState, training: bool) -> Result<(Tensor, BnCtx)> {
    let (n, c, l) = ncl_dims(x)?;
    if c != state.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", state.channels()),
            got: format!("{c}"),
        });
    }
    let data = x.data();
    let m = (n * l) as f64;

    let (mean, var) = if training {
        let mut mean = vec![0.0; c];
        for n_idx in 0..n {
            for c_idx in 0..c {
                let base = (n_idx * c + c_idx) * l;
                for &v in &data[base..base + l] {
                    mean[c_idx] += v;
                }
            }
        }
        for v in mean.iter_mut() {
            *v /= m;
        }
        let mut var = vec![0.0; c];
        for n_idx in 0..n {
            for c_idx in 0..c {
                let base = (n_idx * c + c_idx) * l;
                for &v in &data[base..base + l] {
                    let diff = v - mean[c_idx];
                    var[c_idx] += diff * diff;
                }
            }
        }
        for v in var.iter_mut() {
            *v /= m;
        }
        for c_idx in 0..c {
            state.running_mean[c_idx] =
                (1.0 - state.momentum) * state.running_mean[c_idx] + state.momentum * mean[c_idx];
            state.running_var[c_idx] =
                (1.0 - state.momentum) * state.running_var[c_idx] + state.momentum * var[c_idx];
        }
        (mean, var)
    } else {
        (state.running_mean.clone(), state.running_var.clone())
    };

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + state.epsilon).sqrt()).collect();
    let mut xhat = vec![0.0; data.len()];
    let mut y = vec![0.0; data.len()];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let base = (n_idx * c + c_idx) * l;
            for off in 0..l {
                let i = base + off;
                xhat[i] = (data[i] - mean[c_idx]) * inv_std[c_idx];
                y[i] = state.gamma[c_idx] * xhat[i] + state.beta[c_idx];
            }
        }
    }

    let ctx = BnCtx {
        xhat,
        inv_std,
        gamma: state.gamma.clone(),
        dims: (n, c, l),
        shape: x.shape().to_vec(),
        batch_stats: training,
    };
    Ok((Tensor::new(x.shape(), y)?, ctx))
}

/// Exact batch-norm gradient: returns (dx, dγ, dβ).
pub fn bn_backward(ctx: BnCtx, dy: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (n, c, l) = ctx.dims;
    if dy.shape() != ctx.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", ctx.shape),
            got: format!("{:?}", dy.shape()),
        });
    }
    let g = dy.data();
    let m = (n * l) as f64;

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let base = (n_idx * c + c_idx) * l;
            for off in 0..l {
                let i = base + off;
                dgamma[c_idx] += g[i] * ctx.xhat[i];
                dbeta[c_idx] += g[i];
            }
        }
    }

    let mut dx = vec![0.0; g.len()];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let base = (n_idx * c + c_idx) * l;
            let scale = ctx.gamma[c_idx] * ctx.inv_std[c_idx];
            for off in 0..l {
                let i = base + off;
                dx[i] = if ctx.batch_stats {
                    scale * (g[i] - dbeta[c_idx] / m - ctx.xhat[i] * dgamma[c_idx] / m)
                } else {
                    // Inference statistics are constants.
                    scale * g[i]
                };
            }
        }
    }
    Ok((Tensor::new(&ctx.shape, dx)?, dgamma, dbeta))
}
