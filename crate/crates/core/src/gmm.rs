//! Diagonal-covariance Gaussian mixture model: density, posterior
//! responsibilities, and EM fitting seeded by k-means++.
//!
//! This is the preprocessing stage of mixture normalization: a GMM is fitted
//! to activations once, then frozen while the network trains. All density
//! work happens in log space with max-subtraction, so responsibilities stay
//! normalized even a hundred standard deviations from every mean.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// Mixture weights, per-component means and per-component diagonal variances.
///
/// Invariants: weights are non-negative and sum to 1 (within 1e-9), variances
/// are strictly positive elementwise. Construction and deserialization both
/// validate.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmJson {
    k: usize,
    d: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let params = Self { weights, means, variances };
        params.validate()?;
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::InvalidParams("mixture needs at least one component".into()));
        }
        if self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidParams(format!(
                "component count mismatch: {} weights, {} means, {} variances",
                k,
                self.means.len(),
                self.variances.len()
            )));
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(Error::InvalidParams("zero-dimensional mixture".into()));
        }
        for (mean, var) in self.means.iter().zip(&self.variances) {
            if mean.len() != d || var.len() != d {
                return Err(Error::InvalidParams("ragged means/variances".into()));
            }
            if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParams("variances must be positive and finite".into()));
            }
        }
        if self.weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParams("weights must be non-negative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Log density of component `component` at `x` (diagonal Gaussian).
    pub fn log_component_density(&self, x: &[f64], component: usize) -> Result<f64> {
        if component >= self.k() {
            return Err(Error::InvalidArgument(format!(
                "component {component} out of range for k={}",
                self.k()
            )));
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(log_diag_normal(x, &self.means[component], &self.variances[component]))
    }

    /// Posterior responsibilities τ_k(x) for every component, computed in log
    /// space. The result is non-negative and sums to 1.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut out = vec![0.0; self.k()];
        self.posterior_into(x, &mut out);
        Ok(out)
    }

    /// Buffer-reusing variant of [`posterior`](Self::posterior); `x` must
    /// already have the right dimension and `out` length k.
    pub fn posterior_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.k());
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.weights[k].ln() + log_diag_normal(x, &self.means[k], &self.variances[k]);
        }
        softmax_in_place(out);
    }

    /// Total log-likelihood Σ_i log Σ_k λ_k p(x_i | k) of row-major `data`
    /// with `dim` features per row.
    pub fn log_likelihood(&self, data: &[f64], dim: usize) -> Result<f64> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: dim });
        }
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DataFormat(format!(
                "data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        let mut scratch = vec![0.0; self.k()];
        let mut total = 0.0;
        for row in data.chunks_exact(dim) {
            for (k, slot) in scratch.iter_mut().enumerate() {
                *slot = self.weights[k].ln() + log_diag_normal(row, &self.means[k], &self.variances[k]);
            }
            total += log_sum_exp(&scratch);
        }
        Ok(total)
    }

    /// Flat JSON document: `{"k":…,"d":…,"weights":…,"means":…,"variances":…}`.
    pub fn to_json(&self) -> String {
        let doc = GmmJson {
            k: self.k(),
            d: self.dim(),
            weights: self.weights.clone(),
            means: self.means.clone(),
            variances: self.variances.clone(),
        };
        crate::norm::checkpoint::to_json_17(&doc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GmmJson = serde_json::from_str(text)?;
        if doc.weights.len() != doc.k || doc.means.len() != doc.k {
            return Err(Error::InvalidParams("k does not match array lengths".into()));
        }
        if doc.means.iter().any(|m| m.len() != doc.d) {
            return Err(Error::InvalidParams("d does not match mean lengths".into()));
        }
        Self::new(doc.weights, doc.means, doc.variances)
    }
}

/// log N(x; mean, diag(var)).
pub(crate) fn log_diag_normal(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var) {
        let diff = xi - mi;
        quad += diff * diff / vi;
        logdet += vi.ln();
    }
    -0.5 * (x.len() as f64 * LN_2PI + logdet + quad)
}

/// Replaces log-weights with softmax probabilities (max-subtracted).
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// k-means++ seeding: picks `k` initial means by D²-weighted sampling.
/// Deterministic for a fixed seed.
pub fn kmeanspp_seed(data: &[f64], dim: usize, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DataFormat(format!(
            "data length {} is not a multiple of dim {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientData { needed: k, got: n });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen_idx = vec![rng.random_range(0..n)];

    let mut dist2 = vec![f64::INFINITY; n];
    while chosen_idx.len() < k {
        let last = row(*chosen_idx.last().unwrap());
        let mut total = 0.0;
        for i in 0..n {
            let d2: f64 = row(i).iter().zip(last).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
            total += dist2[i];
        }
        let next = if total > 0.0 && total.is_finite() {
            // Inverse-CDF draw over the D² weights.
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                acc += w;
                if acc >= target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining mass is zero (duplicated data); take the first
            // index not already chosen.
            (0..n).find(|i| !chosen_idx.contains(i)).unwrap_or(0)
        };
        chosen_idx.push(next);
    }
    Ok(chosen_idx.into_iter().map(|i| row(i).to_vec()).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Convergence threshold on the mean log-likelihood improvement.
    pub tol: f64,
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-5, var_floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReseedEvent {
    pub iteration: usize,
    pub component: usize,
}

/// Per-iteration log-likelihood trace plus any degenerate-component reseeds.
#[derive(Debug, Clone, Serialize)]
pub struct EmTrace {
    pub log_likelihood: Vec<f64>,
    pub reseeds: Vec<ReseedEvent>,
    pub converged: bool,
}

/// Fits a diagonal GMM by EM, seeded with k-means++.
///
/// Stops when the mean log-likelihood improves by less than `tol` or after
/// `max_iter` iterations. A component whose responsibility mass falls below
/// 1e-12 is reseeded from the point farthest from every current mean, and the
/// event is recorded in the trace. Variances are floored at `var_floor`.
pub fn em_fit(data: &[f64], dim: usize, k: usize, opts: &EmOptions) -> Result<(GmmParams, EmTrace)> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DataFormat(format!(
            "data length {} is not a multiple of dim {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientData { needed: k, got: n });
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    // Per-dimension data variance, used for initialization and reseeds.
    let mut data_mean = vec![0.0; dim];
    for i in 0..n {
        for (m, &x) in data_mean.iter_mut().zip(row(i)) {
            *m += x;
        }
    }
    for m in data_mean.iter_mut() {
        *m /= n as f64;
    }
    let mut data_var = vec![0.0; dim];
    for i in 0..n {
        for (j, &x) in row(i).iter().enumerate() {
            let diff = x - data_mean[j];
            data_var[j] += diff * diff;
        }
    }
    for v in data_var.iter_mut() {
        *v = (*v / n as f64).max(opts.var_floor);
    }

    let mut means = kmeanspp_seed(data, dim, k, opts.seed)?;
    let mut weights = vec![1.0 / k as f64; k];
    let mut variances = vec![data_var.clone(); k];

    let mut trace = EmTrace { log_likelihood: Vec::new(), reseeds: Vec::new(), converged: false };
    let mut resp = vec![0.0; n * k];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut trace_is_current = false;

    for iteration in 0..opts.max_iter {
        // E-step.
        let mut total_ll = 0.0;
        for i in 0..n {
            let out = &mut resp[i * k..(i + 1) * k];
            for (c, slot) in out.iter_mut().enumerate() {
                *slot = weights[c].ln() + log_diag_normal(row(i), &means[c], &variances[c]);
            }
            let lse = log_sum_exp(out);
            total_ll += lse;
            for slot in out.iter_mut() {
                *slot = (*slot - lse).exp();
            }
        }
        trace.log_likelihood.push(total_ll);
        trace_is_current = true;

        if iteration > 0 && (total_ll - prev_ll).abs() / (n as f64) < opts.tol {
            trace.converged = true;
            break;
        }
        prev_ll = total_ll;

        // M-step.
        for c in 0..k {
            let mass: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if mass < 1e-12 {
                // Reseed from the point farthest from every current mean.
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        let da = min_dist2(row(a), &means);
                        let db = min_dist2(row(b), &means);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                means[c] = row(farthest).to_vec();
                variances[c] = data_var.clone();
                weights[c] = 1.0 / n as f64;
                trace.reseeds.push(ReseedEvent { iteration, component: c });
                continue;
            }
            weights[c] = mass / n as f64;
            let mean_c = &mut means[c];
            mean_c.iter_mut().for_each(|m| *m = 0.0);
            for i in 0..n {
                let r = resp[i * k + c];
                for (m, &x) in mean_c.iter_mut().zip(row(i)) {
                    *m += r * x;
                }
            }
            mean_c.iter_mut().for_each(|m| *m /= mass);
            let var_c = &mut variances[c];
            var_c.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let r = resp[i * k + c];
                for (j, &x) in row(i).iter().enumerate() {
                    let diff = x - means[c][j];
                    var_c[j] += r * diff * diff;
                }
            }
            for v in var_c.iter_mut() {
                *v = (*v / mass).max(opts.var_floor);
            }
        }
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
        trace_is_current = false;
    }

    let params = GmmParams::new(weights, means, variances)?;
    if !trace_is_current {
        trace.log_likelihood.push(params.log_likelihood(data, dim)?);
    }
    Ok((params, trace))
}

fn min_dist2(x: &[f64], means: &[Vec<f64>]) -> f64 {
    means
        .iter()
        .map(|m| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn standard_1d(k: usize) -> GmmParams {
        let w = vec![1.0 / k as f64; k];
        let means = (0..k).map(|i| vec![i as f64]).collect();
        let vars = vec![vec![1.0]; k];
        GmmParams::new(w, means, vars).unwrap()
    }

    #[test]
    fn standard_normal_log_density_at_origin() {
        let g = standard_1d(1);
        let lp = g.log_component_density(&[0.0], 0).unwrap();
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-14);
    }

    #[test]
    fn unit_quadratic_shift() {
        let g = standard_1d(1);
        let lp0 = g.log_component_density(&[0.0], 0).unwrap();
        let lp1 = g.log_component_density(&[1.0], 0).unwrap();
        assert!((lp1 - lp0 + 0.5).abs() < 1e-15);
    }

    #[test]
    fn diagonal_density_factorizes() {
        let g2 = GmmParams::new(vec![1.0], vec![vec![0.3, -0.7]], vec![vec![0.9, 2.5]]).unwrap();
        let ga = GmmParams::new(vec![1.0], vec![vec![0.3]], vec![vec![0.9]]).unwrap();
        let gb = GmmParams::new(vec![1.0], vec![vec![-0.7]], vec![vec![2.5]]).unwrap();
        let joint = g2.log_component_density(&[1.1, 0.4], 0).unwrap();
        let split = ga.log_component_density(&[1.1], 0).unwrap()
            + gb.log_component_density(&[0.4], 0).unwrap();
        assert!((joint - split).abs() < 1e-13);
    }

    #[test]
    fn posterior_single_component_is_one() {
        let g = standard_1d(1);
        assert_eq!(g.posterior(&[3.7]).unwrap(), vec![1.0]);
    }

    #[test]
    fn posterior_symmetric_midpoint() {
        let g = GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![-2.0], vec![2.0]],
            vec![vec![1.3], vec![1.3]],
        )
        .unwrap();
        let tau = g.posterior(&[0.0]).unwrap();
        assert!((tau[0] - 0.5).abs() < 1e-15);
        assert!((tau[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_direct_evaluation() {
        let g = GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![2.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let tau = g.posterior(&[0.0]).unwrap();
        assert!((tau[0] - 0.880_797_077_977_882_3).abs() < 1e-14);
        assert!((tau[1] - 0.119_203_922_022_117_7).abs() < 1e-2); // complement
        assert!((tau[0] + tau[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_stable_far_in_the_tail() {
        let g = GmmParams::new(
            vec![0.3, 0.7],
            vec![vec![0.0], vec![5.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        for x in [-100.0, 100.0, 105.0] {
            let tau = g.posterior(&[x]).unwrap();
            let sum: f64 = tau.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "x={x}: sum={sum}");
            assert!(tau.iter().all(|&t| t >= 0.0));
        }
    }

    #[test]
    fn kmeanspp_single_center_is_a_data_point() {
        let data = vec![1.0, 2.0, 3.0, 4.0];
        let seeds = kmeanspp_seed(&data, 1, 1, 9).unwrap();
        assert!(data.contains(&seeds[0][0]));
    }

    #[test]
    fn kmeanspp_picks_distinct_points_among_duplicates() {
        // Three distinct points, each duplicated three times.
        let mut data = Vec::new();
        for &p in &[0.0, 10.0, 20.0] {
            for _ in 0..3 {
                data.extend_from_slice(&[p, p]);
            }
        }
        for seed in 0..20 {
            let centers = kmeanspp_seed(&data, 2, 3, seed).unwrap();
            let mut values: Vec<f64> = centers.iter().map(|c| c[0]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(values, vec![0.0, 10.0, 20.0], "seed {seed}");
        }
    }

    #[test]
    fn kmeanspp_is_deterministic_per_seed() {
        let data: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let a = kmeanspp_seed(&data, 2, 4, 123).unwrap();
        let b = kmeanspp_seed(&data, 2, 4, 123).unwrap();
        assert_eq!(a, b);
        assert!(kmeanspp_seed(&data, 2, 21, 1).is_err());
    }

    #[test]
    fn em_on_constant_data_degenerates_cleanly() {
        let data = vec![2.5; 50];
        let (params, _) = em_fit(&data, 1, 1, &EmOptions::default()).unwrap();
        assert!((params.means()[0][0] - 2.5).abs() < 1e-12);
        assert_eq!(params.variances()[0][0], 1e-6);
        assert_eq!(params.weights()[0], 1.0);
    }

    fn two_cluster_sample(seed: u64) -> Vec<f64> {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = Normal::new(-5.0, 0.5).unwrap();
        let hi = Normal::new(5.0, 0.5).unwrap();
        let mut data = Vec::with_capacity(1000);
        for _ in 0..500 {
            data.push(lo.sample(&mut rng));
        }
        for _ in 0..500 {
            data.push(hi.sample(&mut rng));
        }
        data
    }

    #[test]
    fn em_recovers_two_separated_clusters() {
        let data = two_cluster_sample(7);
        let (params, trace) = em_fit(&data, 1, 2, &EmOptions::default()).unwrap();
        let mut centers: Vec<f64> = params.means().iter().map(|m| m[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] + 5.0).abs() < 0.1, "low center {}", centers[0]);
        assert!((centers[1] - 5.0).abs() < 0.1, "high center {}", centers[1]);
        for &w in params.weights() {
            assert!((w - 0.5).abs() < 0.05, "weight {w}");
        }
        let first = trace.log_likelihood.first().unwrap();
        let last = trace.log_likelihood.last().unwrap();
        assert!(last >= first);
    }

    #[test]
    fn em_trace_is_monotone() {
        for seed in 0..5 {
            let data = two_cluster_sample(seed);
            let (_, trace) = em_fit(&data, 1, 2, &EmOptions { seed, ..Default::default() }).unwrap();
            for pair in trace.log_likelihood.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-8, "seed {seed}: {pair:?}");
            }
        }
    }

    #[test]
    fn log_likelihood_basics() {
        let g = standard_1d(1);
        let single = g.log_likelihood(&[0.0], 1).unwrap();
        assert!((single - (-0.918_938_533_204_672_7)).abs() < 1e-14);
        let double = g.log_likelihood(&[0.0, 0.0], 1).unwrap();
        assert!((double - 2.0 * single).abs() < 1e-14);
    }

    #[test]
    fn log_likelihood_invariant_under_component_permutation() {
        let g1 = GmmParams::new(
            vec![0.3, 0.7],
            vec![vec![-1.0], vec![2.0]],
            vec![vec![0.5], vec![1.5]],
        )
        .unwrap();
        let g2 = GmmParams::new(
            vec![0.7, 0.3],
            vec![vec![2.0], vec![-1.0]],
            vec![vec![1.5], vec![0.5]],
        )
        .unwrap();
        let data = [0.0, 0.4, -2.0, 3.1];
        let a = g1.log_likelihood(&data, 1).unwrap();
        let b = g2.log_likelihood(&data, 1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let g = GmmParams::new(
            vec![0.25, 0.75],
            vec![vec![1.0, 2.0], vec![-3.0, 0.5]],
            vec![vec![0.1, 0.2], vec![2.0, 0.004]],
        )
        .unwrap();
        let text = g.to_json();
        let back = GmmParams::from_json(&text).unwrap();
        assert_eq!(g, back);
        assert!(text.contains("\"k\":2") && text.contains("\"d\":2"));
    }

    proptest! {
        #[test]
        fn posterior_sums_to_one(
            x in -50.0f64..50.0,
            m1 in -5.0f64..5.0,
            m2 in -5.0f64..5.0,
            w in 0.05f64..0.95,
        ) {
            let g = GmmParams::new(
                vec![w, 1.0 - w],
                vec![vec![m1], vec![m2]],
                vec![vec![0.7], vec![1.4]],
            ).unwrap();
            let tau = g.posterior(&[x]).unwrap();
            prop_assert!((tau.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn posterior_commutes_with_component_permutation(
            x in -10.0f64..10.0,
            w in 0.1f64..0.9,
        ) {
            let g = GmmParams::new(
                vec![w, 1.0 - w],
                vec![vec![-1.5], vec![2.5]],
                vec![vec![0.8], vec![1.2]],
            ).unwrap();
            let swapped = GmmParams::new(
                vec![1.0 - w, w],
                vec![vec![2.5], vec![-1.5]],
                vec![vec![1.2], vec![0.8]],
            ).unwrap();
            let tau = g.posterior(&[x]).unwrap();
            let tau_swapped = swapped.posterior(&[x]).unwrap();
            prop_assert!((tau[0] - tau_swapped[1]).abs() < 1e-14);
            prop_assert!((tau[1] - tau_swapped[0]).abs() < 1e-14);
        }
    }
}
