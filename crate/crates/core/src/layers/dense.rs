//! Fully connected layer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// in × out, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    ctx: Option<Vec<f64>>,
    ctx_rows: usize,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
            grad_weight: vec![0.0; in_features * out_features],
            grad_bias: vec![0.0; out_features],
            ctx: None,
            ctx_rows: 0,
        }
    }

    pub fn forward(&mut self, x: &Tensor, save_ctx: bool) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_features {
            return Err(Error::ShapeMismatch {
                expected: format!("[N, {}]", self.in_features),
                got: format!("{shape:?}"),
            });
        }
        let n = shape[0];
        let mut y = vec![0.0; n * self.out_features];
        unsafe {
            matrixmultiply::dgemm(
                n,
                self.in_features,
                self.out_features,
                1.0,
                x.data().as_ptr(),
                self.in_features as isize,
                1,
                self.weight.as_ptr(),
                self.out_features as isize,
                1,
                0.0,
                y.as_mut_ptr(),
                self.out_features as isize,
                1,
            );
        }
        for row in y.chunks_exact_mut(self.out_features) {
            for (v, &b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        if save_ctx {
            self.ctx = Some(x.data().to_vec());
            self.ctx_rows = n;
        }
        Tensor::new(&[n, self.out_features], y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let input = self.ctx.take().ok_or(Error::InvalidArgument(
            "dense backward called without a saved forward".into(),
        ))?;
        let n = self.ctx_rows;
        if dy.shape() != [n, self.out_features] {
            return Err(Error::ShapeMismatch {
                expected: format!("[{n}, {}]", self.out_features),
                got: format!("{:?}", dy.shape()),
            });
        }
        let g = dy.data();

        // dW = xᵀ · dy
        unsafe {
            matrixmultiply::dgemm(
                self.in_features,
                n,
                self.out_features,
                1.0,
                input.as_ptr(),
                1,
                self.in_features as isize,
                g.as_ptr(),
                self.out_features as isize,
                1,
                0.0,
                self.grad_weight.as_mut_ptr(),
                self.out_features as isize,
                1,
            );
        }
        self.grad_bias.iter_mut().for_each(|v| *v = 0.0);
        for row in g.chunks_exact(self.out_features) {
            for (slot, &v) in self.grad_bias.iter_mut().zip(row) {
                *slot += v;
            }
        }
        // dx = dy · Wᵀ
        let mut dx = vec![0.0; n * self.in_features];
        unsafe {
            matrixmultiply::dgemm(
                n,
                self.out_features,
                self.in_features,
                1.0,
                g.as_ptr(),
                self.out_features as isize,
                1,
                self.weight.as_ptr(),
                1,
                self.out_features as isize,
                0.0,
                dx.as_mut_ptr(),
                self.in_features as isize,
                1,
            );
        }
        Tensor::new(&[n, self.in_features], dx)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let mut dense = Dense::new(3, 3);
        for i in 0..3 {
            dense.weight[i * 3 + i] = 1.0;
        }
        let x = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = dense.forward(&x, false).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn backward_matches_finite_differences() {
        use crate::gradcheck::{max_rel_err_fd, FD_STEP};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut dense = Dense::new(4, 3);
        dense.weight = (0..12).map(|_| rng.random_range(-0.8..0.8)).collect();
        dense.bias = (0..3).map(|_| rng.random_range(-0.3..0.3)).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();

        let xt = Tensor::new(&[2, 4], x.clone()).unwrap();
        dense.forward(&xt, true).unwrap();
        let dx = dense.backward(&Tensor::new(&[2, 3], w.clone()).unwrap()).unwrap();

        let weight0 = dense.weight.clone();
        let mut f_x = |xs: &[f64]| {
            let mut layer = dense.clone();
            let y = layer.forward(&Tensor::new(&[2, 4], xs.to_vec()).unwrap(), false).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        assert!(max_rel_err_fd(&mut f_x, &x, dx.data(), FD_STEP) < 1e-6);

        let mut f_w = |ws: &[f64]| {
            let mut layer = dense.clone();
            layer.weight = ws.to_vec();
            let y = layer.forward(&xt, false).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        assert!(max_rel_err_fd(&mut f_w, &weight0, &dense.grad_weight, FD_STEP) < 1e-6);
    }
}
