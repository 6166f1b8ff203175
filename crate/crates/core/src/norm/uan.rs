//! Unsupervised adaptive normalization.
//!
//! The layer owns the Gaussian-mixture parameters it normalizes with. They
//! are stored unconstrained — weights as softmax logits, variances as
//! log-variances — so the simplex and positivity constraints hold
//! structurally no matter how the parameters are updated. Two update modes
//! exist: `Weight` treats the cluster parameters as ordinary network weights
//! trained by backpropagation (the backward differentiates through the
//! responsibilities), while `MovingAverage` tracks the τ̂-weighted batch
//! statistics with momentum after every batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::mixture::{
    affine_backward, apply_affine, mixture_backward_impl, mixture_forward_impl, Affine, MixtureCtx,
};
use super::ncl_dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UanMode {
    /// Cluster parameters are trained by backpropagation.
    Weight,
    /// Cluster parameters track batch statistics with momentum.
    MovingAverage,
}

/// Trainable state of an adaptive-normalization layer.
///
/// Derived quantities: λ = softmax(weight_logits), σ² = exp(log_vars).
#[derive(Debug, Clone, PartialEq)]
pub struct UanState {
    k: usize,
    d: usize,
    pub weight_logits: Vec<f64>,
    /// K×d cluster means, row-major.
    pub means: Vec<f64>,
    /// K×d log-variances.
    pub log_vars: Vec<f64>,
    pub mode: UanMode,
    pub momentum: f64,
    pub epsilon: f64,
    pub affine: Option<Affine>,
}

impl UanState {
    pub fn new(k: usize, d: usize, weight_logits: Vec<f64>, means: Vec<f64>, log_vars: Vec<f64>) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::InvalidParams("k and d must be at least 1".into()));
        }
        if weight_logits.len() != k || means.len() != k * d || log_vars.len() != k * d {
            return Err(Error::InvalidParams(format!(
                "inconsistent lengths for k={k}, d={d}: {} logits, {} means, {} log_vars",
                weight_logits.len(),
                means.len(),
                log_vars.len()
            )));
        }
        Ok(Self {
            k,
            d,
            weight_logits,
            means,
            log_vars,
            mode: UanMode::Weight,
            momentum: 0.9,
            epsilon: 1e-5,
            affine: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn with_mode(mut self, mode: UanMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_affine(mut self) -> Self {
        self.affine = Some(Affine::identity(self.d));
        self
    }

    /// Mixture weights on the simplex (softmax of the logits).
    pub fn lambdas(&self) -> Vec<f64> {
        let mut lam = self.weight_logits.clone();
        crate::gmm::softmax_in_place(&mut lam);
        lam
    }

    /// Per-cluster diagonal variances, strictly positive.
    pub fn variances(&self) -> Vec<f64> {
        self.log_vars.iter().map(|&u| u.exp()).collect()
    }

    /// Trainable parameter count: K·d means + K·d log-variances + K logits,
    /// plus 2·d when the optional affine transform is attached.
    pub fn param_count(&self) -> usize {
        let base = 2 * self.k * self.d + self.k;
        base + if self.affine.is_some() { 2 * self.d } else { 0 }
    }
}

/// Initializes a UAN layer the way the layer is meant to start out: cluster
/// means uniform in [−1, 1], standard deviations uniform in [0.001, 0.01],
/// and raw weights uniform in [0.01, 0.99] normalized onto the simplex.
/// Deterministic for a fixed seed.
pub fn uan_init(k: usize, d: usize, seed: u64) -> UanState {
    assert!(k >= 1 && d >= 1, "k and d must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let log_vars: Vec<f64> = (0..k * d)
        .map(|_| {
            let sigma: f64 = rng.random_range(0.001..=0.01);
            2.0 * sigma.ln()
        })
        .collect();
    let mut raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..=0.99)).collect();
    let sum: f64 = raw.iter().sum();
    for v in raw.iter_mut() {
        *v /= sum;
    }
    let logits: Vec<f64> = raw.iter().map(|&l| l.ln()).collect();
    UanState::new(k, d, logits, means, log_vars).expect("sizes are consistent by construction")
}

/// Backward context of a training forward.
#[derive(Debug)]
pub struct UanCtx {
    pub(crate) inner: MixtureCtx,
    pre_affine: Option<Vec<f64>>,
    gamma: Option<Vec<f64>>,
}

/// Training forward: responsibilities from the current cluster parameters,
/// τ̂-weighted statistics from the batch.
pub fn uan_forward_train(x: &Tensor, state: &UanState) -> Result<(Tensor, UanCtx)> {
    let (_, c, _) = ncl_dims(x)?;
    if c != state.d {
        return Err(Error::DimensionMismatch { expected: state.d, got: c });
    }
    let (mut y, inner) = mixture_forward_impl(
        x,
        state.lambdas(),
        state.means.clone(),
        state.variances(),
        state.epsilon,
        true,
    )?;
    let (pre_affine, gamma) = match &state.affine {
        Some(affine) => {
            let pre = y.data().to_vec();
            apply_affine(&mut y, &inner.dims, affine);
            (Some(pre), Some(affine.gamma.clone()))
        }
        None => (None, None),
    };
    Ok((y, UanCtx { inner, pre_affine, gamma }))
}

/// Inference transform: no batch statistics, each activation is normalized
/// with the stored cluster parameters alone,
/// y = Σ_k (τ_k(x)/√λ_k) · (x − μ_k)/σ_k.
pub fn uan_forward_infer(x: &Tensor, state: &UanState) -> Result<Tensor> {
    let (n, c, l) = ncl_dims(x)?;
    if c != state.d {
        return Err(Error::DimensionMismatch { expected: state.d, got: c });
    }
    let k = state.k;
    let lambdas = state.lambdas();
    let vars = state.variances();
    let inv_sigma: Vec<f64> = vars.iter().map(|&v| 1.0 / v.sqrt()).collect();
    let inv_sqrt_lam: Vec<f64> = lambdas.iter().map(|&lam| 1.0 / lam.sqrt()).collect();
    let log_lam: Vec<f64> = lambdas.iter().map(|&lam| lam.ln()).collect();

    let data = x.data();
    let mut y = vec![0.0; data.len()];
    let mut logits = vec![0.0; k];
    for p in 0..n * l {
        let pos_base = (p / l) * c * l + (p % l);
        for kk in 0..k {
            let mut quad = 0.0;
            let mut logdet = 0.0;
            for ci in 0..c {
                let idx = kk * c + ci;
                let diff = data[pos_base + ci * l] - state.means[idx];
                quad += diff * diff / vars[idx];
                logdet += state.log_vars[idx];
            }
            logits[kk] = log_lam[kk] - 0.5 * (logdet + quad);
        }
        crate::gmm::softmax_in_place(&mut logits);
        for ci in 0..c {
            let mut acc = 0.0;
            for kk in 0..k {
                let idx = kk * c + ci;
                acc += logits[kk]
                    * inv_sqrt_lam[kk]
                    * (data[pos_base + ci * l] - state.means[idx])
                    * inv_sigma[idx];
            }
            y[pos_base + ci * l] = acc;
        }
    }
    let mut out = Tensor::new(x.shape(), y)?;
    if let Some(affine) = &state.affine {
        apply_affine(&mut out, &(n, c, l), affine);
    }
    Ok(out)
}

/// Gradients of [`uan_forward_train`] with respect to the input and every
/// trainable parameter.
#[derive(Debug)]
pub struct UanGrads {
    pub dx: Tensor,
    pub d_weight_logits: Vec<f64>,
    pub d_means: Vec<f64>,
    pub d_log_vars: Vec<f64>,
    pub d_gamma: Option<Vec<f64>>,
    pub d_beta: Option<Vec<f64>>,
}

/// Exact backward of the adaptive layer, differentiating through the
/// responsibilities. The cluster means and variances receive gradient only
/// via τ (the normalization statistics are batch quantities, not parameters);
/// the weights additionally receive gradient from the 1/√λ_k factor. The
/// results are chained through the reparameterizations λ = softmax(logits)
/// and σ² = exp(log_vars).
pub fn uan_backward(ctx: UanCtx, dy: &Tensor) -> Result<UanGrads> {
    if dy.shape() != ctx.inner.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", ctx.inner.shape),
            got: format!("{:?}", dy.shape()),
        });
    }
    let (g, d_gamma, d_beta) = match (&ctx.pre_affine, &ctx.gamma) {
        (Some(pre), Some(gamma)) => {
            let (dpre, dgamma, dbeta) = affine_backward(dy.data(), pre, gamma, &ctx.inner.dims);
            (dpre, Some(dgamma), Some(dbeta))
        }
        _ => (dy.data().to_vec(), None, None),
    };
    let grads = mixture_backward_impl(&ctx.inner, &g, true);

    // λ = softmax(logits): dlogit_k = λ_k (dλ_k − Σ_j λ_j dλ_j).
    let lambdas = &ctx.inner.lambdas;
    let dot: f64 = lambdas.iter().zip(&grads.dlam).map(|(l, d)| l * d).sum();
    let d_weight_logits: Vec<f64> =
        lambdas.iter().zip(&grads.dlam).map(|(l, d)| l * (d - dot)).collect();

    // σ² = exp(u): du = dσ² · σ².
    let vars = &ctx.inner.tau_params.as_ref().expect("adaptive ctx carries parameters").1;
    let d_log_vars: Vec<f64> = grads.dvar.iter().zip(vars.iter()).map(|(dv, v)| dv * v).collect();

    Ok(UanGrads {
        dx: Tensor::new(&ctx.inner.shape, grads.dx)?,
        d_weight_logits,
        d_means: grads.dmean,
        d_log_vars,
        d_gamma,
        d_beta,
    })
}

/// Moving-average update after a training forward:
/// λ_k ← m·λ_k + (1−m)·mean(τ_k), then renormalized onto the simplex;
/// μ_k and σ²_k move toward the τ̂-weighted batch mean and variance the same
/// way. The unconstrained fields are back-solved (logits = ln λ,
/// log_vars = ln σ²). Components with no batch responsibility keep their
/// mean and variance.
pub fn uan_moving_average_update(state: &mut UanState, ctx: &UanCtx) -> Result<()> {
    if state.mode != UanMode::MovingAverage {
        return Err(Error::InvalidArgument(
            "moving-average update requires MovingAverage mode".into(),
        ));
    }
    let (_, c, _) = ctx.inner.dims;
    if c != state.d || ctx.inner.components() != state.k {
        return Err(Error::DimensionMismatch { expected: state.d, got: c });
    }
    let m = state.momentum;
    let mean_tau = ctx.inner.mean_tau();
    let lambdas = state.lambdas();
    let mut new_lam: Vec<f64> =
        (0..state.k).map(|kk| m * lambdas[kk] + (1.0 - m) * mean_tau[kk]).collect();
    let sum: f64 = new_lam.iter().sum();
    for lam in new_lam.iter_mut() {
        *lam /= sum;
    }
    state.weight_logits = new_lam.iter().map(|&lam| lam.ln()).collect();

    let vars = state.variances();
    for kk in 0..state.k {
        if ctx.inner.dead[kk] {
            continue;
        }
        for ci in 0..c {
            let idx = kk * c + ci;
            let new_mean = m * state.means[idx] + (1.0 - m) * ctx.inner.wmean[idx];
            let new_var = m * vars[idx] + (1.0 - m) * ctx.inner.wvar[idx];
            state.means[idx] = new_mean;
            state.log_vars[idx] = new_var.ln();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::{partition_norm_forward, Partition};

    fn sample(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(shape, (0..shape.iter().product()).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap()
    }

    /// A state with O(1) scales, kinder to finite differences than the
    /// tight-σ initialization.
    fn moderate_state(k: usize, d: usize, seed: u64) -> UanState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..k).map(|_| rng.random_range(-0.7..0.7)).collect();
        let means = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let log_vars = (0..k * d).map(|_| rng.random_range(-0.5..0.5)).collect();
        UanState::new(k, d, logits, means, log_vars).unwrap()
    }

    #[test]
    fn init_respects_stated_ranges() {
        for seed in 0..50 {
            let state = uan_init(3, 4, seed);
            let lam = state.lambdas();
            assert!((lam.iter().sum::<f64>() - 1.0).abs() < 1e-12, "seed {seed}");
            assert!(lam.iter().all(|&l| l > 0.0));
            for &u in &state.log_vars {
                let sigma = (u / 2.0).exp();
                assert!((0.001..=0.01).contains(&sigma), "seed {seed}: σ = {sigma}");
            }
            for &mu in &state.means {
                assert!((-1.0..=1.0).contains(&mu));
            }
        }
    }

    #[test]
    fn init_is_reproducible() {
        assert_eq!(uan_init(4, 7, 99), uan_init(4, 7, 99));
        assert_ne!(uan_init(4, 7, 99), uan_init(4, 7, 100));
    }

    #[test]
    fn parameter_count_is_2kd_plus_k() {
        assert_eq!(uan_init(3, 64, 0).param_count(), 387);
        assert_eq!(uan_init(5, 128, 0).param_count(), 1285);
        assert_eq!(uan_init(2, 1, 0).param_count(), 6);
    }

    #[test]
    fn single_cluster_train_forward_is_batch_standardization() {
        // τ ≡ 1 whatever the cluster parameters are.
        let x = sample(1, &[6, 3, 4]);
        let state = moderate_state(1, 3, 5).with_epsilon(1e-5);
        let (y, _) = uan_forward_train(&x, &state).unwrap();
        let (y_ref, _) = partition_norm_forward(&x, Partition::Batch, 1e-5).unwrap();
        for (a, b) in y.data().iter().zip(y_ref.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_is_invariant_under_joint_cluster_permutation() {
        let x = sample(2, &[5, 2, 3]);
        let state = moderate_state(3, 2, 8);
        let (y, _) = uan_forward_train(&x, &state).unwrap();

        // Rotate the clusters: (0,1,2) -> (2,0,1).
        let perm = [2usize, 0, 1];
        let d = state.dim();
        let logits: Vec<f64> = perm.iter().map(|&p| state.weight_logits[p]).collect();
        let mut means = vec![0.0; 3 * d];
        let mut log_vars = vec![0.0; 3 * d];
        for (dst, &src) in perm.iter().enumerate() {
            means[dst * d..(dst + 1) * d].copy_from_slice(&state.means[src * d..(src + 1) * d]);
            log_vars[dst * d..(dst + 1) * d]
                .copy_from_slice(&state.log_vars[src * d..(src + 1) * d]);
        }
        let permuted = UanState::new(3, d, logits, means, log_vars).unwrap();
        let (y_perm, _) = uan_forward_train(&x, &permuted).unwrap();
        for (a, b) in y.data().iter().zip(y_perm.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_identity_for_standard_single_cluster() {
        let state = UanState::new(1, 1, vec![0.0], vec![0.0], vec![0.0]).unwrap();
        let x = Tensor::new(&[3, 1], vec![-1.3, 0.2, 2.5]).unwrap();
        let y = uan_forward_infer(&x, &state).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn inference_zero_at_the_cluster_mean() {
        let state = UanState::new(1, 1, vec![0.0], vec![1.7], vec![-0.4]).unwrap();
        let x = Tensor::new(&[1, 1], vec![1.7]).unwrap();
        let y = uan_forward_infer(&x, &state).unwrap();
        assert_eq!(y.data()[0], 0.0);
    }

    #[test]
    fn inference_matches_posterior_composition() {
        // λ=[.5,.5], μ=[0,2], σ=[1,1], x=0 → y ≈ −0.33716.
        let state = UanState::new(
            2,
            1,
            vec![0.5f64.ln(), 0.5f64.ln()],
            vec![0.0, 2.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let x = Tensor::new(&[1, 1], vec![0.0]).unwrap();
        let y = uan_forward_infer(&x, &state).unwrap();
        assert!((y.data()[0] - (-0.337_156_777_996_362_2)).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_parameter_gradients_vanish() {
        let x = sample(3, &[4, 2, 2]);
        let state = moderate_state(1, 2, 11);
        let (_, ctx) = uan_forward_train(&x, &state).unwrap();
        let dy = sample(4, &[4, 2, 2]);
        let grads = uan_backward(ctx, &dy).unwrap();
        assert!(grads.d_means.iter().all(|&v| v.abs() < 1e-12));
        assert!(grads.d_log_vars.iter().all(|&v| v.abs() < 1e-12));
        assert!(grads.d_weight_logits.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_upstream_gradient_zeroes_everything() {
        let x = sample(5, &[4, 3, 2]);
        let state = moderate_state(3, 3, 6);
        let (_, ctx) = uan_forward_train(&x, &state).unwrap();
        let grads = uan_backward(ctx, &Tensor::zeros(&[4, 3, 2])).unwrap();
        assert!(grads.dx.data().iter().all(|&v| v == 0.0));
        assert!(grads.d_means.iter().all(|&v| v == 0.0));
        assert!(grads.d_log_vars.iter().all(|&v| v == 0.0));
        assert!(grads.d_weight_logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moving_average_with_unit_momentum_is_a_no_op() {
        let x = Tensor::new(&[4, 1], vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        let mut state = moderate_state(2, 1, 9).with_mode(UanMode::MovingAverage).with_momentum(1.0);
        let before_lam = state.lambdas();
        let before_means = state.means.clone();
        let before_vars = state.variances();
        let (_, ctx) = uan_forward_train(&x, &state).unwrap();
        uan_moving_average_update(&mut state, &ctx).unwrap();
        for (a, b) in state.lambdas().iter().zip(&before_lam) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in state.means.iter().zip(&before_means) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in state.variances().iter().zip(&before_vars) {
            assert!((a - b).abs() / b < 1e-12);
        }
    }

    #[test]
    fn moving_average_with_zero_momentum_adopts_batch_statistics() {
        let x = Tensor::new(&[4, 1], vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        let mut state = moderate_state(2, 1, 10).with_mode(UanMode::MovingAverage).with_momentum(0.0);
        let (_, ctx) = uan_forward_train(&x, &state).unwrap();
        let mean_tau = ctx.inner.mean_tau();
        let wmean = ctx.inner.wmean.clone();
        let wvar = ctx.inner.wvar.clone();
        uan_moving_average_update(&mut state, &ctx).unwrap();
        let lam = state.lambdas();
        let tau_sum: f64 = mean_tau.iter().sum();
        for kk in 0..2 {
            assert!((lam[kk] - mean_tau[kk] / tau_sum).abs() < 1e-12);
            assert!((state.means[kk] - wmean[kk]).abs() < 1e-12);
            assert!((state.variances()[kk] - wvar[kk]).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_average_matches_hand_computed_convex_combination() {
        // Frozen from an independent evaluation of the update rule.
        let state_base = UanState::new(
            2,
            1,
            vec![0.4f64.ln(), 0.6f64.ln()],
            vec![-1.0, 1.0],
            vec![0.5f64.ln(), 2.0f64.ln()],
        )
        .unwrap();
        let mut state = state_base.with_mode(UanMode::MovingAverage).with_momentum(0.9);
        let x = Tensor::new(&[4, 1], vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        let (_, ctx) = uan_forward_train(&x, &state).unwrap();
        uan_moving_average_update(&mut state, &ctx).unwrap();

        let lam = state.lambdas();
        assert!((lam[0] - 0.400_773_300_985_918_4).abs() < 1e-12);
        assert!((lam[1] - 0.599_226_699_014_081_65).abs() < 1e-12);
        assert!((state.means[0] - (-1.047_507_584_774_258_5)).abs() < 1e-12);
        assert!((state.means[1] - 1.001_548_309_323_751_8).abs() < 1e-12);
        let vars = state.variances();
        assert!((vars[0] - 0.483_863_265_277_895_25).abs() < 1e-12);
        assert!((vars[1] - 1.945_882_468_380_487_8).abs() < 1e-12);
    }

    #[test]
    fn moving_average_requires_matching_mode() {
        let x = Tensor::new(&[2, 1], vec![0.0, 1.0]).unwrap();
        let mut state = moderate_state(2, 1, 12); // Weight mode
        let (_, ctx) = uan_forward_train(&x, &state).unwrap();
        assert!(matches!(
            uan_moving_average_update(&mut state, &ctx),
            Err(Error::InvalidArgument(_))
        ));
    }
}
