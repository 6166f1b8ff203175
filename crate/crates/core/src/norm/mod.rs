//! Normalization layers.
//!
//! Six layers share this module: batch normalization with running statistics,
//! the partition transform that unifies layer/instance/group normalization,
//! mixture normalization over a frozen EM-fitted GMM, and unsupervised
//! adaptive normalization whose cluster parameters are live network state
//! (updated either as weights by backpropagation or by a per-batch moving
//! average). Each training forward returns a context object that its
//! backward consumes exactly once.

mod batch;
pub mod checkpoint;
mod mixture;
mod partition;
mod uan;

pub use batch::{bn_backward, bn_forward, BnCtx, BnState};
pub use mixture::{
    mixture_norm_backward, mixture_norm_forward, mn_backward, Affine, MixtureCtx, MnCtx, MnLayer,
    ResponsibilitySource,
};
pub(crate) use mixture::mixture_forward_given_tau;
pub use partition::{partition_norm_backward, partition_norm_forward, Partition, PartitionCtx};
pub use uan::{
    uan_backward, uan_forward_infer, uan_forward_train, uan_init, uan_moving_average_update,
    UanCtx, UanGrads, UanMode, UanState,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interprets an activation tensor as (N, C, L): rank 4 is NCHW with
/// L = H·W, rank 3 is taken as-is, rank 2 as (N, C, 1).
pub(crate) fn ncl_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    let shape = x.shape();
    let (n, c, l) = match shape.len() {
        2 => (shape[0], shape[1], 1),
        3 => (shape[0], shape[1], shape[2]),
        4 => (shape[0], shape[1], shape[2] * shape[3]),
        _ => {
            return Err(Error::ShapeMismatch {
                expected: "rank 2, 3 or 4 activations".into(),
                got: format!("rank {}", shape.len()),
            })
        }
    };
    if n == 0 || l == 0 {
        return Err(Error::EmptyBatch);
    }
    if c == 0 {
        return Err(Error::ShapeMismatch { expected: "C >= 1".into(), got: "C = 0".into() });
    }
    Ok((n, c, l))
}
