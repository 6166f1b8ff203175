//! Network-facing wrapper around the normalization layers: owns the state,
//! the saved forward context, and the parameter gradients.

use crate::error::{Error, Result};
use crate::norm::{
    bn_backward, bn_forward, mn_backward, partition_norm_backward, partition_norm_forward,
    uan_backward, uan_forward_infer, uan_forward_train, uan_moving_average_update, BnCtx, BnState,
    MnCtx, MnLayer, Partition, PartitionCtx, UanCtx, UanMode, UanState,
};
use crate::tensor::Tensor;

#[derive(Debug)]
pub enum NormLayer {
    Batch {
        state: BnState,
        grad_gamma: Vec<f64>,
        grad_beta: Vec<f64>,
        ctx: Option<BnCtx>,
    },
    Partition {
        partition: Partition,
        epsilon: f64,
        ctx: Option<PartitionCtx>,
    },
    Mixture {
        layer: MnLayer,
        /// Components to fit in the EM stage when the layer is built unfitted.
        components: usize,
        grad_gamma: Vec<f64>,
        grad_beta: Vec<f64>,
        ctx: Option<MnCtx>,
    },
    Uan {
        state: UanState,
        grad_logits: Vec<f64>,
        grad_means: Vec<f64>,
        grad_log_vars: Vec<f64>,
        grad_gamma: Vec<f64>,
        grad_beta: Vec<f64>,
        ctx: Option<UanCtx>,
    },
}

impl NormLayer {
    pub fn batch(channels: usize, epsilon: f64) -> Self {
        NormLayer::Batch {
            state: BnState::new(channels).with_epsilon(epsilon),
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            ctx: None,
        }
    }

    pub fn partition(partition: Partition, epsilon: f64) -> Self {
        NormLayer::Partition { partition, epsilon, ctx: None }
    }

    pub fn mixture(components: usize, channels: usize, epsilon: f64, affine: bool) -> Self {
        let mut layer = MnLayer::unfitted(epsilon);
        if affine {
            layer.affine = Some(crate::norm::Affine::identity(channels));
        }
        NormLayer::Mixture {
            layer,
            components,
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            ctx: None,
        }
    }

    pub fn uan(state: UanState) -> Self {
        let (k, d) = (state.k(), state.dim());
        NormLayer::Uan {
            state,
            grad_logits: vec![0.0; k],
            grad_means: vec![0.0; k * d],
            grad_log_vars: vec![0.0; k * d],
            grad_gamma: vec![0.0; d],
            grad_beta: vec![0.0; d],
            ctx: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        match self {
            NormLayer::Batch { state, ctx, .. } => {
                let (y, c) = bn_forward(x, state, training)?;
                if training {
                    *ctx = Some(c);
                }
                Ok(y)
            }
            NormLayer::Partition { partition, epsilon, ctx } => {
                let (y, c) = partition_norm_forward(x, *partition, *epsilon)?;
                if training {
                    *ctx = Some(c);
                }
                Ok(y)
            }
            NormLayer::Mixture { layer, ctx, .. } => {
                if training {
                    let (y, c) = layer.forward_train(x)?;
                    *ctx = Some(c);
                    Ok(y)
                } else {
                    layer.forward_infer(x)
                }
            }
            NormLayer::Uan { state, ctx, .. } => {
                if training {
                    let (y, c) = uan_forward_train(x, state)?;
                    *ctx = Some(c);
                    Ok(y)
                } else {
                    uan_forward_infer(x, state)
                }
            }
        }
    }

    /// Consumes the saved context, fills parameter gradients, returns dx.
    /// A moving-average UAN layer also applies its statistics update here,
    /// once per batch; its cluster parameters then receive no gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let missing =
            || Error::InvalidArgument("norm backward called without a saved forward".into());
        match self {
            NormLayer::Batch { grad_gamma, grad_beta, ctx, .. } => {
                let (dx, dgamma, dbeta) = bn_backward(ctx.take().ok_or_else(missing)?, dy)?;
                *grad_gamma = dgamma;
                *grad_beta = dbeta;
                Ok(dx)
            }
            NormLayer::Partition { ctx, .. } => {
                partition_norm_backward(ctx.take().ok_or_else(missing)?, dy)
            }
            NormLayer::Mixture { grad_gamma, grad_beta, ctx, .. } => {
                let (dx, affine) = mn_backward(ctx.take().ok_or_else(missing)?, dy)?;
                if let Some((dgamma, dbeta)) = affine {
                    *grad_gamma = dgamma;
                    *grad_beta = dbeta;
                }
                Ok(dx)
            }
            NormLayer::Uan {
                state,
                grad_logits,
                grad_means,
                grad_log_vars,
                grad_gamma,
                grad_beta,
                ctx,
            } => {
                let ctx = ctx.take().ok_or_else(missing)?;
                if state.mode == UanMode::MovingAverage {
                    uan_moving_average_update(state, &ctx)?;
                }
                let grads = uan_backward(ctx, dy)?;
                if state.mode == UanMode::Weight {
                    *grad_logits = grads.d_weight_logits;
                    *grad_means = grads.d_means;
                    *grad_log_vars = grads.d_log_vars;
                } else {
                    grad_logits.iter_mut().for_each(|v| *v = 0.0);
                    grad_means.iter_mut().for_each(|v| *v = 0.0);
                    grad_log_vars.iter_mut().for_each(|v| *v = 0.0);
                }
                if let Some(dgamma) = grads.d_gamma {
                    *grad_gamma = dgamma;
                }
                if let Some(dbeta) = grads.d_beta {
                    *grad_beta = dbeta;
                }
                Ok(grads.dx)
            }
        }
    }

    /// Optimizer-visible (parameter, gradient) pairs. Cluster parameters of a
    /// moving-average UAN layer are excluded; they are not optimizer state.
    pub fn for_each_trainable(&mut self, f: &mut dyn FnMut(&mut Vec<f64>, &Vec<f64>)) {
        match self {
            NormLayer::Batch { state, grad_gamma, grad_beta, .. } => {
                f(&mut state.gamma, grad_gamma);
                f(&mut state.beta, grad_beta);
            }
            NormLayer::Partition { .. } => {}
            NormLayer::Mixture { layer, grad_gamma, grad_beta, .. } => {
                if let Some(affine) = &mut layer.affine {
                    f(&mut affine.gamma, grad_gamma);
                    f(&mut affine.beta, grad_beta);
                }
            }
            NormLayer::Uan {
                state,
                grad_logits,
                grad_means,
                grad_log_vars,
                grad_gamma,
                grad_beta,
                ..
            } => {
                if state.mode == UanMode::Weight {
                    f(&mut state.weight_logits, grad_logits);
                    f(&mut state.means, grad_means);
                    f(&mut state.log_vars, grad_log_vars);
                }
                if let Some(affine) = &mut state.affine {
                    f(&mut affine.gamma, grad_gamma);
                    f(&mut affine.beta, grad_beta);
                }
            }
        }
    }

    /// All state values, for checksums: parameters plus running statistics.
    pub fn visit_state(&self, f: &mut dyn FnMut(&[f64])) {
        match self {
            NormLayer::Batch { state, .. } => {
                f(&state.gamma);
                f(&state.beta);
                f(&state.running_mean);
                f(&state.running_var);
            }
            NormLayer::Partition { .. } => {}
            NormLayer::Mixture { layer, .. } => {
                if let Some(gmm) = layer.gmm() {
                    f(gmm.weights());
                    for row in gmm.means() {
                        f(row);
                    }
                    for row in gmm.variances() {
                        f(row);
                    }
                }
                if let Some(affine) = &layer.affine {
                    f(&affine.gamma);
                    f(&affine.beta);
                }
            }
            NormLayer::Uan { state, .. } => {
                f(&state.weight_logits);
                f(&state.means);
                f(&state.log_vars);
                if let Some(affine) = &state.affine {
                    f(&affine.gamma);
                    f(&affine.beta);
                }
            }
        }
    }

    /// Trainable parameter count of this slot.
    pub fn param_count(&self) -> usize {
        match self {
            NormLayer::Batch { state, .. } => 2 * state.channels(),
            NormLayer::Partition { .. } => 0,
            NormLayer::Mixture { layer, .. } => {
                layer.affine.as_ref().map_or(0, |a| a.gamma.len() + a.beta.len())
            }
            NormLayer::Uan { state, .. } => state.param_count(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NormLayer::Batch { .. } => "bn",
            NormLayer::Partition { partition, .. } => match partition {
                Partition::Batch => "bn-partition",
                Partition::Layer => "ln",
                Partition::Instance => "in",
                Partition::Group(_) => "gn",
            },
            NormLayer::Mixture { .. } => "mn",
            NormLayer::Uan { .. } => "uan",
        }
    }
}
