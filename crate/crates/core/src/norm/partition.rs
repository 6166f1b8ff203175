//! The shared partition transform behind layer, instance and group
//! normalization: center and scale each activation by the statistics of its
//! partition slab. Group(1) is exactly layer normalization and Group(C)
//! exactly instance normalization, so those variants are routed through the
//! same code path and agree bitwise.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ncl_dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// Per-channel statistics over (N, L) — batch normalization's partition.
    Batch,
    /// Per-sample statistics over (C, L).
    Layer,
    /// Per-sample, per-channel statistics over L.
    Instance,
    /// Per-sample statistics over contiguous channel groups of size C/G.
    Group(usize),
}

/// Saved forward quantities consumed by [`partition_norm_backward`].
#[derive(Debug)]
pub struct PartitionCtx {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    slab_of: SlabMap,
    dims: (usize, usize, usize),
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum SlabMap {
    /// Slab index = channel.
    PerChannel,
    /// Slab index = n * groups + channel / (C / groups).
    PerSampleGroup { groups: usize },
}

impl SlabMap {
    fn slab_count(&self, n: usize, c: usize) -> usize {
        match self {
            SlabMap::PerChannel => c,
            SlabMap::PerSampleGroup { groups } => n * groups,
        }
    }

    #[inline]
    fn slab(&self, n_idx: usize, c_idx: usize, c: usize) -> usize {
        match self {
            SlabMap::PerChannel => c_idx,
            SlabMap::PerSampleGroup { groups } => n_idx * groups + c_idx / (c / groups),
        }
    }
}

/// Normalizes `x` over the given partition: v = x − E[x], y = v / √(E[v²]+ε),
/// with population statistics taken over each slab.
pub fn partition_norm_forward(
    x: &Tensor,
    partition: Partition,
    eps: f64,
) -> Result<(Tensor, PartitionCtx)> {
    let (n, c, l) = ncl_dims(x)?;
    let slab_of = match partition {
        Partition::Batch => SlabMap::PerChannel,
        Partition::Layer => SlabMap::PerSampleGroup { groups: 1 },
        Partition::Instance => SlabMap::PerSampleGroup { groups: c },
        Partition::Group(groups) => {
            if groups == 0 || c % groups != 0 {
                return Err(Error::GroupsDontDivide { groups, channels: c });
            }
            SlabMap::PerSampleGroup { groups }
        }
    };
    let slabs = slab_of.slab_count(n, c);
    let data = x.data();

    let mut sum = vec![0.0; slabs];
    let mut count = vec![0usize; slabs];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let slab = slab_of.slab(n_idx, c_idx, c);
            let base = (n_idx * c + c_idx) * l;
            for &v in &data[base..base + l] {
                sum[slab] += v;
            }
            count[slab] += l;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &m)| s / m as f64).collect();

    let mut var = vec![0.0; slabs];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let slab = slab_of.slab(n_idx, c_idx, c);
            let base = (n_idx * c + c_idx) * l;
            for &v in &data[base..base + l] {
                let diff = v - mean[slab];
                var[slab] += diff * diff;
            }
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .zip(&count)
        .map(|(v, &m)| 1.0 / (v / m as f64 + eps).sqrt())
        .collect();

    let mut xhat = vec![0.0; data.len()];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let slab = slab_of.slab(n_idx, c_idx, c);
            let base = (n_idx * c + c_idx) * l;
            for off in 0..l {
                xhat[base + off] = (data[base + off] - mean[slab]) * inv_std[slab];
            }
        }
    }

    let y = Tensor::new(x.shape(), xhat.clone())?;
    let ctx = PartitionCtx { xhat, inv_std, slab_of, dims: (n, c, l), shape: x.shape().to_vec() };
    Ok((y, ctx))
}

/// Exact gradient of the partition transform:
/// dx = inv_std · (g − mean(g) − x̂ · mean(g ⊙ x̂)) per slab.
pub fn partition_norm_backward(ctx: PartitionCtx, dy: &Tensor) -> Result<Tensor> {
    let (n, c, l) = ctx.dims;
    if dy.shape() != ctx.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", ctx.shape),
            got: format!("{:?}", dy.shape()),
        });
    }
    let g = dy.data();
    let slabs = ctx.slab_of.slab_count(n, c);
    let mut sum_g = vec![0.0; slabs];
    let mut sum_gx = vec![0.0; slabs];
    let mut count = vec![0usize; slabs];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let slab = ctx.slab_of.slab(n_idx, c_idx, c);
            let base = (n_idx * c + c_idx) * l;
            for off in 0..l {
                sum_g[slab] += g[base + off];
                sum_gx[slab] += g[base + off] * ctx.xhat[base + off];
            }
            count[slab] += l;
        }
    }

    let mut dx = vec![0.0; g.len()];
    for n_idx in 0..n {
        for c_idx in 0..c {
            let slab = ctx.slab_of.slab(n_idx, c_idx, c);
            let m = count[slab] as f64;
            let base = (n_idx * c + c_idx) * l;
            for off in 0..l {
                let i = base + off;
                dx[i] = ctx.inv_std[slab]
                    * (g[i] - sum_g[slab] / m - ctx.xhat[i] * sum_gx[slab] / m);
            }
        }
    }
    Tensor::new(&ctx.shape, dx)
}
