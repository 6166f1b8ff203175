//! Mixture normalizing transform (Kalayeh & Shah, 2019).
//!
//! Each spatial position carries a C-dimensional feature vector; a diagonal
//! Gaussian mixture over that space assigns it responsibilities τ. Per
//! component, activations are centered and scaled by τ̂-weighted batch
//! statistics (τ̂ is τ renormalized over the mini-batch), then the per-
//! component results are aggregated as Σ_k (τ_k/√λ_k)·x̂^k.
//!
//! Mixture normalization proper uses a frozen, EM-fitted mixture: τ is a
//! constant function of the input for gradient purposes. The adaptive layer
//! in [`super::uan`] reuses the same forward but differentiates through τ.

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::tensor::Tensor;

use super::ncl_dims;
use super::uan::UanState;

/// A component whose total batch responsibility falls below this mass
/// contributes zero output and zero gradient for the step (its τ̂-weighted
/// statistics would be 0/0 otherwise).
pub(crate) const DEAD_MASS: f64 = 1e-12;

const LN_2PI: f64 = 1.8378770664093453;

/// Optional per-channel scale and shift applied after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Affine {
    pub fn identity(channels: usize) -> Self {
        Self { gamma: vec![1.0; channels], beta: vec![0.0; channels] }
    }
}

/// Where the responsibilities of a mixture forward come from.
pub enum ResponsibilitySource<'a> {
    /// A frozen, EM-fitted mixture (mixture normalization).
    FrozenGmm(&'a GmmParams),
    /// The live cluster parameters of an adaptive layer.
    Uan(&'a UanState),
}

/// Everything a mixture backward needs: the input, responsibilities, masses,
/// τ̂-weighted statistics, and (for the adaptive layer) the cluster
/// parameters the responsibilities were computed from.
#[derive(Debug)]
pub struct MixtureCtx {
    pub(crate) x: Vec<f64>,
    pub(crate) shape: Vec<usize>,
    pub(crate) dims: (usize, usize, usize),
    /// P×K responsibilities, P = N·L.
    pub(crate) tau: Vec<f64>,
    /// Per-component total batch responsibility S_k.
    pub(crate) mass: Vec<f64>,
    /// K×C τ̂-weighted means.
    pub(crate) wmean: Vec<f64>,
    /// K×C τ̂-weighted variances.
    pub(crate) wvar: Vec<f64>,
    /// K×C √(wvar + ε).
    pub(crate) denom: Vec<f64>,
    pub(crate) dead: Vec<bool>,
    pub(crate) lambdas: Vec<f64>,
    #[allow(dead_code)]
    pub(crate) eps: f64,
    /// (means, variances), each K×C, present when τ must be differentiated.
    pub(crate) tau_params: Option<(Vec<f64>, Vec<f64>)>,
}

impl MixtureCtx {
    pub fn components(&self) -> usize {
        self.lambdas.len()
    }

    /// Mean responsibility per component over the batch.
    pub fn mean_tau(&self) -> Vec<f64> {
        let positions = (self.dims.0 * self.dims.2) as f64;
        self.mass.iter().map(|&s| s / positions).collect()
    }
}

/// Mixture normalizing transform over a mini-batch.
///
/// The feature dimension of the mixture must equal the channel count; the
/// batch statistics for each component span every sample and spatial
/// position. Returns the normalized activations and the backward context.
pub fn mixture_norm_forward(
    x: &Tensor,
    source: ResponsibilitySource<'_>,
    eps: f64,
) -> Result<(Tensor, MixtureCtx)> {
    match source {
        ResponsibilitySource::FrozenGmm(gmm) => {
            let k = gmm.k();
            let d = gmm.dim();
            let mut means = Vec::with_capacity(k * d);
            let mut vars = Vec::with_capacity(k * d);
            for kk in 0..k {
                means.extend_from_slice(&gmm.means()[kk]);
                vars.extend_from_slice(&gmm.variances()[kk]);
            }
            mixture_forward_impl(x, gmm.weights().to_vec(), means, vars, eps, false)
        }
        ResponsibilitySource::Uan(state) => mixture_forward_impl(
            x,
            state.lambdas(),
            state.means.clone(),
            state.variances(),
            eps,
            true,
        ),
    }
}

pub(crate) fn mixture_forward_impl(
    x: &Tensor,
    lambdas: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
    eps: f64,
    save_tau_params: bool,
) -> Result<(Tensor, MixtureCtx)> {
    let (n, c, l) = ncl_dims(x)?;
    let k = lambdas.len();
    if means.len() != k * c || vars.len() != k * c {
        return Err(Error::DimensionMismatch { expected: c, got: means.len() / k.max(1) });
    }
    let data = x.data();
    let positions = n * l;

    // Per-component constant of the log density: ln λ − ½(C·ln2π + Σ ln σ²).
    let mut base = vec![0.0; k];
    for kk in 0..k {
        let logdet: f64 = vars[kk * c..(kk + 1) * c].iter().map(|v| v.ln()).sum();
        base[kk] = lambdas[kk].ln() - 0.5 * (c as f64 * LN_2PI + logdet);
    }

    // Responsibilities per position (log-space softmax over components).
    let mut tau = vec![0.0; positions * k];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        let row = &mut tau[p * k..(p + 1) * k];
        for kk in 0..k {
            let mu = &means[kk * c..(kk + 1) * c];
            let var = &vars[kk * c..(kk + 1) * c];
            let mut quad = 0.0;
            for ci in 0..c {
                let diff = data[pos_base + ci * l] - mu[ci];
                quad += diff * diff / var[ci];
            }
            row[kk] = base[kk] - 0.5 * quad;
        }
        crate::gmm::softmax_in_place(row);
    }

    mixture_forward_given_tau(x, tau, lambdas, eps, save_tau_params.then_some((means, vars)))
}

/// The τ̂-statistics half of the transform, with responsibilities supplied by
/// the caller. This is exactly the function of x that the frozen-mixture
/// backward differentiates (τ held constant).
pub(crate) fn mixture_forward_given_tau(
    x: &Tensor,
    tau: Vec<f64>,
    lambdas: Vec<f64>,
    eps: f64,
    tau_params: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<(Tensor, MixtureCtx)> {
    let (n, c, l) = ncl_dims(x)?;
    let k = lambdas.len();
    let data = x.data();
    let positions = n * l;
    if tau.len() != positions * k {
        return Err(Error::DimensionMismatch { expected: positions * k, got: tau.len() });
    }

    let mut mass = vec![0.0; k];
    for p in 0..positions {
        for kk in 0..k {
            mass[kk] += tau[p * k + kk];
        }
    }
    let dead: Vec<bool> = mass.iter().map(|&m| m < DEAD_MASS).collect();

    // τ̂-weighted mean and variance per component and channel.
    let mut wmean = vec![0.0; k * c];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        for kk in 0..k {
            if dead[kk] {
                continue;
            }
            let t = tau[p * k + kk] / mass[kk];
            for ci in 0..c {
                wmean[kk * c + ci] += t * data[pos_base + ci * l];
            }
        }
    }
    let mut wvar = vec![0.0; k * c];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        for kk in 0..k {
            if dead[kk] {
                continue;
            }
            let t = tau[p * k + kk] / mass[kk];
            for ci in 0..c {
                let diff = data[pos_base + ci * l] - wmean[kk * c + ci];
                wvar[kk * c + ci] += t * diff * diff;
            }
        }
    }
    let denom: Vec<f64> = wvar.iter().map(|&v| (v + eps).sqrt()).collect();

    // Aggregate: y = Σ_k (τ_k/√λ_k)·(x − m_k)/√(s²_k + ε).
    let inv_sqrt_lam: Vec<f64> = lambdas.iter().map(|&lam| 1.0 / lam.sqrt()).collect();
    let mut y = vec![0.0; data.len()];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        for ci in 0..c {
            let mut acc = 0.0;
            for kk in 0..k {
                if dead[kk] {
                    continue;
                }
                let xhat = (data[pos_base + ci * l] - wmean[kk * c + ci]) / denom[kk * c + ci];
                acc += tau[p * k + kk] * inv_sqrt_lam[kk] * xhat;
            }
            y[pos_base + ci * l] = acc;
        }
    }

    let ctx = MixtureCtx {
        x: data.to_vec(),
        shape: x.shape().to_vec(),
        dims: (n, c, l),
        tau,
        mass,
        wmean,
        wvar,
        denom,
        dead,
        lambdas,
        eps,
        tau_params,
    };
    Ok((Tensor::new(&ctx.shape, y)?, ctx))
}

/// Gradient of [`mixture_norm_forward`] with the responsibilities held
/// constant — the frozen-mixture reading used by mixture normalization.
pub fn mixture_norm_backward(ctx: MixtureCtx, dy: &Tensor) -> Result<Tensor> {
    if dy.shape() != ctx.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", ctx.shape),
            got: format!("{:?}", dy.shape()),
        });
    }
    let grads = mixture_backward_impl(&ctx, dy.data(), false);
    Tensor::new(&ctx.shape, grads.dx)
}

/// Gradients of a mixture forward. `dlam`/`dmean`/`dvar` are populated only
/// when the backward differentiates through the responsibilities.
pub(crate) struct MixtureGrads {
    pub dx: Vec<f64>,
    pub dlam: Vec<f64>,
    pub dmean: Vec<f64>,
    pub dvar: Vec<f64>,
}

/// Exact gradient of [`mixture_forward_impl`].
///
/// With `through_tau` false the responsibilities are treated as constants
/// (the frozen-mixture case) and only the τ̂-weighted statistics path
/// contributes to dx. With `through_tau` true the softmax over component log
/// densities is differentiated as well, which is the only route by which the
/// cluster means and variances receive gradient; the weights additionally
/// receive gradient from the 1/√λ_k aggregation factor.
pub(crate) fn mixture_backward_impl(
    ctx: &MixtureCtx,
    g: &[f64],
    through_tau: bool,
) -> MixtureGrads {
    let (n, c, l) = ctx.dims;
    let k = ctx.components();
    let positions = n * l;
    let x = &ctx.x;
    let tau = &ctx.tau;
    debug_assert_eq!(g.len(), x.len());

    let r: Vec<f64> = ctx.lambdas.iter().map(|&lam| 1.0 / lam.sqrt()).collect();

    // Σ_p τ·G and Σ_p τ·G·v per (component, channel).
    let mut sum_tg = vec![0.0; k * c];
    let mut sum_tgv = vec![0.0; k * c];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        for kk in 0..k {
            if ctx.dead[kk] {
                continue;
            }
            let t = tau[p * k + kk];
            if t == 0.0 {
                continue;
            }
            for ci in 0..c {
                let gv = g[pos_base + ci * l];
                let v = x[pos_base + ci * l] - ctx.wmean[kk * c + ci];
                sum_tg[kk * c + ci] += t * gv;
                sum_tgv[kk * c + ci] += t * gv * v;
            }
        }
    }

    // ∂L/∂s², ∂L/∂m (via the centered values; Σ_p τ̂·v = 0 analytically) and
    // ∂L/∂r per component.
    let mut ds2 = vec![0.0; k * c];
    let mut dm = vec![0.0; k * c];
    let mut dr = vec![0.0; k];
    for kk in 0..k {
        if ctx.dead[kk] {
            continue;
        }
        for ci in 0..c {
            let idx = kk * c + ci;
            let d = ctx.denom[idx];
            ds2[idx] = -r[kk] * sum_tgv[idx] / (2.0 * d * d * d);
            dm[idx] = -r[kk] * sum_tg[idx] / d;
            dr[kk] += sum_tgv[idx] / d;
        }
    }

    // Statistics-path dx (shared by the frozen and adaptive cases).
    let mut dx = vec![0.0; x.len()];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        for ci in 0..c {
            let gv = g[pos_base + ci * l];
            let xv = x[pos_base + ci * l];
            let mut acc = 0.0;
            for kk in 0..k {
                if ctx.dead[kk] {
                    continue;
                }
                let idx = kk * c + ci;
                let t = tau[p * k + kk];
                let th = t / ctx.mass[kk];
                let v = xv - ctx.wmean[idx];
                acc += r[kk] * t * gv / ctx.denom[idx];
                acc += 2.0 * th * v * ds2[idx];
                acc += th * dm[idx];
            }
            dx[pos_base + ci * l] += acc;
        }
    }

    if !through_tau {
        return MixtureGrads { dx, dlam: Vec::new(), dmean: Vec::new(), dvar: Vec::new() };
    }
    let (means, vars) = ctx
        .tau_params
        .as_ref()
        .expect("through_tau backward requires saved cluster parameters");

    // ∂L/∂τ via the aggregation term and the τ̂ normalization.
    let mut t1 = vec![0.0; positions * k];
    let mut dtau_hat = vec![0.0; positions * k];
    let mut inner = vec![0.0; k];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        for kk in 0..k {
            if ctx.dead[kk] {
                continue;
            }
            let mut t1_acc = 0.0;
            let mut dth = 0.0;
            for ci in 0..c {
                let idx = kk * c + ci;
                let gv = g[pos_base + ci * l];
                let xv = x[pos_base + ci * l];
                let v = xv - ctx.wmean[idx];
                t1_acc += (v / ctx.denom[idx]) * gv;
                dth += ds2[idx] * v * v + dm[idx] * xv;
            }
            t1[p * k + kk] = r[kk] * t1_acc;
            dtau_hat[p * k + kk] = dth;
            inner[kk] += tau[p * k + kk] / ctx.mass[kk] * dth;
        }
    }

    let mut dlam = vec![0.0; k];
    let mut dmean = vec![0.0; k * c];
    let mut dvar = vec![0.0; k * c];
    let mut dtau_row = vec![0.0; k];
    for p in 0..positions {
        let pos_base = (p / l) * c * l + (p % l);
        let mut dot = 0.0;
        for kk in 0..k {
            dtau_row[kk] = if ctx.dead[kk] {
                0.0
            } else {
                t1[p * k + kk] + (dtau_hat[p * k + kk] - inner[kk]) / ctx.mass[kk]
            };
            dot += tau[p * k + kk] * dtau_row[kk];
        }
        for kk in 0..k {
            let dg = tau[p * k + kk] * (dtau_row[kk] - dot);
            if dg == 0.0 {
                continue;
            }
            dlam[kk] += dg / ctx.lambdas[kk];
            for ci in 0..c {
                let idx = kk * c + ci;
                let var = vars[idx];
                let diff = x[pos_base + ci * l] - means[idx];
                dmean[idx] += dg * diff / var;
                dvar[idx] += dg * (diff * diff / (2.0 * var * var) - 0.5 / var);
                dx[pos_base + ci * l] -= dg * diff / var;
            }
        }
    }
    // The 1/√λ aggregation factor.
    for kk in 0..k {
        if !ctx.dead[kk] {
            dlam[kk] += dr[kk] * (-0.5) * ctx.lambdas[kk].powf(-1.5);
        }
    }

    MixtureGrads { dx, dlam, dmean, dvar }
}

/// Mixture-normalization layer: an EM-fitted mixture, frozen for the whole
/// of training, plus per-component running statistics for inference.
#[derive(Debug, Clone)]
pub struct MnLayer {
    gmm: Option<GmmParams>,
    pub eps: f64,
    /// EMA factor for the inference statistics, same convention as
    /// [`super::BnState`]: stat ← (1−m)·stat + m·batch.
    pub momentum: f64,
    pub affine: Option<Affine>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

/// Backward context of an [`MnLayer`] forward.
#[derive(Debug)]
pub struct MnCtx {
    inner: MixtureCtx,
    /// Pre-affine output, saved only when an affine transform is attached.
    pre_affine: Option<Vec<f64>>,
    gamma: Option<Vec<f64>>,
}

impl MnLayer {
    /// A layer awaiting its EM fit; forward passes fail until
    /// [`set_gmm`](Self::set_gmm) is called.
    pub fn unfitted(eps: f64) -> Self {
        Self { gmm: None, eps, momentum: 0.1, affine: None, running_mean: Vec::new(), running_var: Vec::new() }
    }

    pub fn from_gmm(gmm: GmmParams, eps: f64) -> Self {
        let mut layer = Self::unfitted(eps);
        layer.set_gmm(gmm);
        layer
    }

    pub fn set_gmm(&mut self, gmm: GmmParams) {
        let size = gmm.k() * gmm.dim();
        self.running_mean = vec![0.0; size];
        self.running_var = vec![1.0; size];
        self.gmm = Some(gmm);
    }

    pub fn gmm(&self) -> Option<&GmmParams> {
        self.gmm.as_ref()
    }

    pub fn is_fitted(&self) -> bool {
        self.gmm.is_some()
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    /// Restores previously saved running statistics (K×C each).
    pub fn set_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        let expected = self.gmm.as_ref().map_or(0, |g| g.k() * g.dim());
        if mean.len() != expected || var.len() != expected {
            return Err(Error::InvalidParams(format!(
                "running statistics must have {expected} entries"
            )));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    /// Training forward: responsibilities from the frozen mixture, statistics
    /// from the batch. Updates the per-component running statistics.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, MnCtx)> {
        let gmm = self.gmm.as_ref().ok_or(Error::GmmNotFitted)?;
        let (mut y, inner) = mixture_norm_forward(x, ResponsibilitySource::FrozenGmm(gmm), self.eps)?;
        let size = self.running_mean.len();
        for idx in 0..size {
            let kk = idx / inner.dims.1;
            if inner.dead[kk] {
                continue;
            }
            self.running_mean[idx] =
                (1.0 - self.momentum) * self.running_mean[idx] + self.momentum * inner.wmean[idx];
            self.running_var[idx] =
                (1.0 - self.momentum) * self.running_var[idx] + self.momentum * inner.wvar[idx];
        }
        let (pre_affine, gamma) = match &self.affine {
            Some(affine) => {
                let pre = y.data().to_vec();
                apply_affine(&mut y, &inner.dims, affine);
                (Some(pre), Some(affine.gamma.clone()))
            }
            None => (None, None),
        };
        Ok((y, MnCtx { inner, pre_affine, gamma }))
    }

    /// Inference forward: per-sample responsibilities from the frozen
    /// mixture, running statistics instead of batch statistics.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let gmm = self.gmm.as_ref().ok_or(Error::GmmNotFitted)?;
        let (n, c, l) = ncl_dims(x)?;
        if gmm.dim() != c {
            return Err(Error::DimensionMismatch { expected: gmm.dim(), got: c });
        }
        let k = gmm.k();
        let data = x.data();
        let mut feat = vec![0.0; c];
        let mut tau = vec![0.0; k];
        let mut y = vec![0.0; data.len()];
        for p in 0..n * l {
            let pos_base = (p / l) * c * l + (p % l);
            for ci in 0..c {
                feat[ci] = data[pos_base + ci * l];
            }
            gmm.posterior_into(&feat, &mut tau);
            for ci in 0..c {
                let mut acc = 0.0;
                for kk in 0..k {
                    let idx = kk * c + ci;
                    let xhat = (feat[ci] - self.running_mean[idx])
                        / (self.running_var[idx] + self.eps).sqrt();
                    acc += tau[kk] / gmm.weights()[kk].sqrt() * xhat;
                }
                y[pos_base + ci * l] = acc;
            }
        }
        let mut out = Tensor::new(x.shape(), y)?;
        if let Some(affine) = &self.affine {
            apply_affine(&mut out, &(n, c, l), affine);
        }
        Ok(out)
    }
}

pub(crate) fn apply_affine(y: &mut Tensor, dims: &(usize, usize, usize), affine: &Affine) {
    let (n, c, l) = *dims;
    let data = y.data_mut();
    for n_idx in 0..n {
        for ci in 0..c {
            let base = (n_idx * c + ci) * l;
            for off in 0..l {
                data[base + off] = affine.gamma[ci] * data[base + off] + affine.beta[ci];
            }
        }
    }
}

/// Splits an upstream gradient through a per-channel affine transform,
/// returning (d_pre_affine, dγ, dβ).
pub(crate) fn affine_backward(
    g: &[f64],
    pre: &[f64],
    gamma: &[f64],
    dims: &(usize, usize, usize),
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, c, l) = *dims;
    let mut dpre = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n_idx in 0..n {
        for ci in 0..c {
            let base = (n_idx * c + ci) * l;
            for off in 0..l {
                let i = base + off;
                dpre[i] = gamma[ci] * g[i];
                dgamma[ci] += g[i] * pre[i];
                dbeta[ci] += g[i];
            }
        }
    }
    (dpre, dgamma, dbeta)
}

/// Gradient of a frozen-mixture forward: (dx, optional (dγ, dβ)).
///
/// The mixture itself is frozen, so the responsibilities are constants here;
/// only the τ̂-weighted statistics path flows into dx.
pub fn mn_backward(ctx: MnCtx, dy: &Tensor) -> Result<(Tensor, Option<(Vec<f64>, Vec<f64>)>)> {
    if dy.shape() != ctx.inner.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", ctx.inner.shape),
            got: format!("{:?}", dy.shape()),
        });
    }
    let (g, affine_grads) = match (&ctx.pre_affine, &ctx.gamma) {
        (Some(pre), Some(gamma)) => {
            let (dpre, dgamma, dbeta) = affine_backward(dy.data(), pre, gamma, &ctx.inner.dims);
            (dpre, Some((dgamma, dbeta)))
        }
        _ => (dy.data().to_vec(), None),
    };
    let grads = mixture_backward_impl(&ctx.inner, &g, false);
    Ok((Tensor::new(&ctx.inner.shape, grads.dx)?, affine_grads))
}
