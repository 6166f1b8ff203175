//! Central-finite-difference verification of every backward pass.
//!
//! Each check builds a scalar probe loss L = Σ y ⊙ W for a fixed random
//! projection W, computes the analytic gradient through the layer's backward,
//! and compares against (L(θ+h) − L(θ−h)) / 2h coordinate by coordinate.
//! Mixture layers are held to 1e-4 relative error, everything else to 1e-6.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gmm::GmmParams;
use crate::norm::{
    bn_backward, bn_forward, mn_backward, partition_norm_backward, partition_norm_forward,
    uan_backward, uan_forward_train, Affine, BnState, MnLayer, Partition, ResponsibilitySource,
    UanMode, UanState,
};
use crate::tensor::Tensor;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance for the simple layers (BN, LN, IN, GN, conv, dense, ...).
pub const SIMPLE_TOL: f64 = 1e-6;
/// Tolerance for the mixture layers (MN, UAN), whose responsibilities make
/// the composite less benign for finite differences.
pub const MIXTURE_TOL: f64 = 1e-4;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

/// Relative error with a unit floor, so near-zero gradients are compared
/// absolutely and large ones relatively.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Worst relative error between `analytic` and central differences of `f`
/// over every coordinate of `x0`.
pub fn max_rel_err_fd(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    assert_eq!(x0.len(), analytic.len());
    let mut probe = x0.to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let saved = probe[i];
        probe[i] = saved + h;
        let plus = f(&probe);
        probe[i] = saved - h;
        let minus = f(&probe);
        probe[i] = saved;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

fn probe_loss(y: &Tensor, w: &[f64]) -> f64 {
    y.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

struct NormCase {
    x: Vec<f64>,
    w: Vec<f64>,
    shape: Vec<usize>,
}

impl NormCase {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = vec![6usize, 2, 4];
        NormCase {
            x: rand_vec(&mut rng, 48, -2.0, 2.0),
            w: rand_vec(&mut rng, 48, -1.0, 1.0),
            shape,
        }
    }

    fn tensor(&self) -> Tensor {
        Tensor::new(&self.shape, self.x.clone()).unwrap()
    }

    fn dy(&self) -> Tensor {
        Tensor::new(&self.shape, self.w.clone()).unwrap()
    }
}

fn moderate_uan_state(seed: u64, k: usize, d: usize) -> UanState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    UanState::new(
        k,
        d,
        rand_vec(&mut rng, k, -0.7, 0.7),
        rand_vec(&mut rng, k * d, -1.0, 1.0),
        rand_vec(&mut rng, k * d, -0.5, 0.5),
    )
    .unwrap()
    .with_mode(UanMode::Weight)
}

fn moderate_gmm(seed: u64, k: usize, d: usize) -> GmmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a11);
    let mut raw = rand_vec(&mut rng, k, 0.2, 1.0);
    let sum: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|v| *v /= sum);
    let means = (0..k).map(|_| rand_vec(&mut rng, d, -1.5, 1.5)).collect();
    let vars = (0..k).map(|_| rand_vec(&mut rng, d, 0.4, 2.0)).collect();
    GmmParams::new(raw, means, vars).unwrap()
}

/// Gradient checks for every normalization layer: dx for all six kinds, and
/// parameter gradients where the layer has parameters. Runs `cases` seeded
/// instances per check.
pub fn check_norm_layers(cases: usize, seed: u64) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    let eps = 1e-5;

    // Batch normalization: dx, dγ, dβ.
    let mut bn_dx = 0.0f64;
    let mut bn_dgamma = 0.0f64;
    let mut bn_dbeta = 0.0f64;
    for case in 0..cases {
        let nc = NormCase::new(seed + case as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000 + case as u64);
        let gamma = rand_vec(&mut rng, 2, 0.5, 1.5);
        let beta = rand_vec(&mut rng, 2, -0.5, 0.5);
        let make_state = |gamma: &[f64], beta: &[f64]| {
            let mut s = BnState::new(2).with_epsilon(eps);
            s.gamma = gamma.to_vec();
            s.beta = beta.to_vec();
            s
        };
        let mut state = make_state(&gamma, &beta);
        let (_, ctx) = bn_forward(&nc.tensor(), &mut state, true).unwrap();
        let (dx, dgamma, dbeta) = bn_backward(ctx, &nc.dy()).unwrap();

        let shape = nc.shape.clone();
        let w = nc.w.clone();
        let mut f_x = |xs: &[f64]| {
            let mut s = make_state(&gamma, &beta);
            let (y, _) =
                bn_forward(&Tensor::new(&shape, xs.to_vec()).unwrap(), &mut s, true).unwrap();
            probe_loss(&y, &w)
        };
        bn_dx = bn_dx.max(max_rel_err_fd(&mut f_x, &nc.x, dx.data(), FD_STEP));

        let x = nc.tensor();
        let mut f_gamma = |gs: &[f64]| {
            let mut s = make_state(gs, &beta);
            let (y, _) = bn_forward(&x, &mut s, true).unwrap();
            probe_loss(&y, &w)
        };
        bn_dgamma = bn_dgamma.max(max_rel_err_fd(&mut f_gamma, &gamma, &dgamma, FD_STEP));
        let mut f_beta = |bs: &[f64]| {
            let mut s = make_state(&gamma, bs);
            let (y, _) = bn_forward(&x, &mut s, true).unwrap();
            probe_loss(&y, &w)
        };
        bn_dbeta = bn_dbeta.max(max_rel_err_fd(&mut f_beta, &beta, &dbeta, FD_STEP));
    }
    reports.push(report("bn/dx", bn_dx, SIMPLE_TOL, cases));
    reports.push(report("bn/dgamma", bn_dgamma, SIMPLE_TOL, cases));
    reports.push(report("bn/dbeta", bn_dbeta, SIMPLE_TOL, cases));

    // Partition transforms: layer, instance, group.
    for (name, partition) in [
        ("ln/dx", Partition::Layer),
        ("in/dx", Partition::Instance),
        ("gn/dx", Partition::Group(2)),
    ] {
        let mut worst = 0.0f64;
        for case in 0..cases {
            let nc = NormCase::new(seed + 40 + case as u64);
            let (_, ctx) = partition_norm_forward(&nc.tensor(), partition, eps).unwrap();
            let dx = partition_norm_backward(ctx, &nc.dy()).unwrap();
            let shape = nc.shape.clone();
            let w = nc.w.clone();
            let mut f = |xs: &[f64]| {
                let (y, _) = partition_norm_forward(
                    &Tensor::new(&shape, xs.to_vec()).unwrap(),
                    partition,
                    eps,
                )
                .unwrap();
                probe_loss(&y, &w)
            };
            worst = worst.max(max_rel_err_fd(&mut f, &nc.x, dx.data(), FD_STEP));
        }
        reports.push(report(name, worst, SIMPLE_TOL, cases));
    }

    // Mixture normalization over a frozen GMM. The frozen-mixture contract
    // treats τ as a constant function of the input, so dx is checked against
    // the transform with the responsibilities pinned at their forward values;
    // the optional affine pair is checked through the layer.
    let mut mn_dx = 0.0f64;
    let mut mn_dgamma = 0.0f64;
    let mut mn_dbeta = 0.0f64;
    for case in 0..cases {
        let nc = NormCase::new(seed + 80 + case as u64);
        let gmm = moderate_gmm(seed + 80 + case as u64, 3, 2);
        let (_, ctx0) =
            crate::norm::mixture_norm_forward(&nc.tensor(), ResponsibilitySource::FrozenGmm(&gmm), eps)
                .unwrap();
        let tau0 = ctx0.tau.clone();
        let lam0 = ctx0.lambdas.clone();
        let dx = crate::norm::mixture_norm_backward(ctx0, &nc.dy()).unwrap();

        let shape = nc.shape.clone();
        let w = nc.w.clone();
        let mut f_x = |xs: &[f64]| {
            let (y, _) = crate::norm::mixture_forward_given_tau(
                &Tensor::new(&shape, xs.to_vec()).unwrap(),
                tau0.clone(),
                lam0.clone(),
                eps,
                None,
            )
            .unwrap();
            probe_loss(&y, &w)
        };
        mn_dx = mn_dx.max(max_rel_err_fd(&mut f_x, &nc.x, dx.data(), FD_STEP));

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2000 + case as u64);
        let gamma = rand_vec(&mut rng, 2, 0.5, 1.5);
        let beta = rand_vec(&mut rng, 2, -0.5, 0.5);
        let make_layer = |gamma: &[f64], beta: &[f64]| {
            let mut layer = MnLayer::from_gmm(gmm.clone(), eps);
            layer.affine = Some(Affine { gamma: gamma.to_vec(), beta: beta.to_vec() });
            layer
        };
        let mut layer = make_layer(&gamma, &beta);
        let (_, ctx) = layer.forward_train(&nc.tensor()).unwrap();
        let (_, affine_grads) = mn_backward(ctx, &nc.dy()).unwrap();
        let (dgamma, dbeta) = affine_grads.unwrap();

        let x = nc.tensor();
        let mut f_gamma = |gs: &[f64]| {
            let mut layer = make_layer(gs, &beta);
            let (y, _) = layer.forward_train(&x).unwrap();
            probe_loss(&y, &w)
        };
        mn_dgamma = mn_dgamma.max(max_rel_err_fd(&mut f_gamma, &gamma, &dgamma, FD_STEP));
        let mut f_beta = |bs: &[f64]| {
            let mut layer = make_layer(&gamma, bs);
            let (y, _) = layer.forward_train(&x).unwrap();
            probe_loss(&y, &w)
        };
        mn_dbeta = mn_dbeta.max(max_rel_err_fd(&mut f_beta, &beta, &dbeta, FD_STEP));
    }
    reports.push(report("mn/dx", mn_dx, MIXTURE_TOL, cases));
    reports.push(report("mn/dgamma", mn_dgamma, MIXTURE_TOL, cases));
    reports.push(report("mn/dbeta", mn_dbeta, MIXTURE_TOL, cases));

    // Adaptive layer: dx and every cluster parameter, differentiating
    // through the responsibilities. K = 3 clusters over C = 2 channels.
    let mut uan_dx = 0.0f64;
    let mut uan_dlogits = 0.0f64;
    let mut uan_dmeans = 0.0f64;
    let mut uan_dlogvars = 0.0f64;
    for case in 0..cases {
        let nc = NormCase::new(seed + 120 + case as u64);
        let state = moderate_uan_state(seed + 120 + case as u64, 3, 2);
        let (_, ctx) = uan_forward_train(&nc.tensor(), &state).unwrap();
        let grads = uan_backward(ctx, &nc.dy()).unwrap();

        let shape = nc.shape.clone();
        let w = nc.w.clone();
        let mut f_x = |xs: &[f64]| {
            let (y, _) =
                uan_forward_train(&Tensor::new(&shape, xs.to_vec()).unwrap(), &state).unwrap();
            probe_loss(&y, &w)
        };
        uan_dx = uan_dx.max(max_rel_err_fd(&mut f_x, &nc.x, grads.dx.data(), FD_STEP));

        let x = nc.tensor();
        let mut f_logits = |ls: &[f64]| {
            let mut s = state.clone();
            s.weight_logits = ls.to_vec();
            let (y, _) = uan_forward_train(&x, &s).unwrap();
            probe_loss(&y, &w)
        };
        uan_dlogits = uan_dlogits.max(max_rel_err_fd(
            &mut f_logits,
            &state.weight_logits,
            &grads.d_weight_logits,
            FD_STEP,
        ));

        let mut f_means = |ms: &[f64]| {
            let mut s = state.clone();
            s.means = ms.to_vec();
            let (y, _) = uan_forward_train(&x, &s).unwrap();
            probe_loss(&y, &w)
        };
        uan_dmeans =
            uan_dmeans.max(max_rel_err_fd(&mut f_means, &state.means, &grads.d_means, FD_STEP));

        let mut f_logvars = |us: &[f64]| {
            let mut s = state.clone();
            s.log_vars = us.to_vec();
            let (y, _) = uan_forward_train(&x, &s).unwrap();
            probe_loss(&y, &w)
        };
        uan_dlogvars = uan_dlogvars.max(max_rel_err_fd(
            &mut f_logvars,
            &state.log_vars,
            &grads.d_log_vars,
            FD_STEP,
        ));
    }
    reports.push(report("uan/dx", uan_dx, MIXTURE_TOL, cases));
    reports.push(report("uan/dlogits", uan_dlogits, MIXTURE_TOL, cases));
    reports.push(report("uan/dmeans", uan_dmeans, MIXTURE_TOL, cases));
    reports.push(report("uan/dlogvars", uan_dlogvars, MIXTURE_TOL, cases));

    reports
}

fn report(name: &str, max_rel_err: f64, tolerance: f64, cases: usize) -> CheckReport {
    CheckReport { name: name.into(), max_rel_err, tolerance, cases }
}
