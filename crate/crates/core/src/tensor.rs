//! Dense row-major tensor of `f64` values.
//!
//! Activations are carried as NCHW tensors; reductions here implement the
//! population-statistics convention (divide by the element count, no Bessel
//! correction). Every operation returns a fresh tensor and rejects non-finite
//! results instead of letting NaN/Inf propagate silently.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} elements for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value at a multi-index. Panics on an out-of-range index.
    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut offset = 0;
        for (axis, (&i, &extent)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < extent, "index {i} out of range on axis {axis}");
            offset = offset * extent + i;
        }
        self.data[offset]
    }

    fn strides(shape: &[usize]) -> Vec<usize> {
        let mut strides = vec![1; shape.len()];
        for axis in (0..shape.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * shape[axis + 1];
        }
        strides
    }

    fn validate_axes(&self, axes: &[usize]) -> Result<Vec<usize>> {
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() {
            return Err(Error::InvalidArgument("duplicate reduction axis".into()));
        }
        for &axis in &sorted {
            if axis >= self.rank() {
                return Err(Error::InvalidAxis { axis, rank: self.rank() });
            }
        }
        Ok(sorted)
    }

    fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Arithmetic mean over the given axes.
    ///
    /// With `keep_dims` the reduced axes stay at extent 1, otherwise they are
    /// removed; reducing every axis yields a rank-0 tensor.
    pub fn mean_over(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
        let axes = self.validate_axes(axes)?;
        let (sums, out_shape, count) = self.reduce_sum(&axes, keep_dims);
        let data: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        Tensor::new(&out_shape, data)?.check_finite("mean_over")
    }

    /// Population variance over the given axes (divide by the count).
    pub fn var_over(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
        let axes = self.validate_axes(axes)?;
        let mean = self.mean_over(&axes, true)?;
        let centered = self.sub(&mean)?;
        let squared: Vec<f64> = centered.data.iter().map(|v| v * v).collect();
        let squared = Tensor::new(&self.shape, squared)?;
        let (sums, out_shape, count) = squared.reduce_sum(&axes, keep_dims);
        let data: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        Tensor::new(&out_shape, data)?.check_finite("var_over")
    }

    /// Shared reduction kernel: sums over `axes` (assumed validated, sorted).
    fn reduce_sum(&self, axes: &[usize], keep_dims: bool) -> (Vec<f64>, Vec<usize>, usize) {
        let rank = self.rank();
        let reduced: Vec<bool> = (0..rank).map(|a| axes.contains(&a)).collect();
        let kept_shape: Vec<usize> = (0..rank)
            .map(|a| if reduced[a] { 1 } else { self.shape[a] })
            .collect();
        let out_shape: Vec<usize> = if keep_dims {
            kept_shape.clone()
        } else {
            (0..rank).filter(|&a| !reduced[a]).map(|a| self.shape[a]).collect()
        };
        let count: usize = (0..rank).filter(|&a| reduced[a]).map(|a| self.shape[a]).product();
        let kept_strides = Self::strides(&kept_shape);

        let mut sums = vec![0.0; kept_shape.iter().product()];
        let mut index = vec![0usize; rank];
        for &value in &self.data {
            let mut out_offset = 0;
            for axis in 0..rank {
                if !reduced[axis] {
                    out_offset += index[axis] * kept_strides[axis];
                }
            }
            sums[out_offset] += value;
            // Row-major odometer increment.
            for axis in (0..rank).rev() {
                index[axis] += 1;
                if index[axis] < self.shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        (sums, out_shape, count.max(1))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "add", |a, b| Ok(a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "sub", |a, b| Ok(a - b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "mul", |a, b| Ok(a * b))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "div", |a, b| {
            if b == 0.0 {
                Err(Error::DivisionByZero)
            } else {
                Ok(a / b)
            }
        })
    }

    /// Elementwise combination with broadcasting of singleton extents.
    /// Ranks must match; each axis must agree or have extent 1 on one side.
    fn zip_broadcast(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> Result<f64>,
    ) -> Result<Tensor> {
        if self.rank() != other.rank() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape),
                got: format!("{:?}", other.shape),
            });
        }
        let rank = self.rank();
        let mut out_shape = vec![0usize; rank];
        for axis in 0..rank {
            let (a, b) = (self.shape[axis], other.shape[axis]);
            out_shape[axis] = if a == b {
                a
            } else if a == 1 {
                b
            } else if b == 1 {
                a
            } else {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", self.shape),
                    got: format!("{:?}", other.shape),
                });
            };
        }

        let a_strides = Self::strides(&self.shape);
        let b_strides = Self::strides(&other.shape);
        let mut data = vec![0.0; out_shape.iter().product()];
        let mut index = vec![0usize; rank];
        for slot in data.iter_mut() {
            let mut a_off = 0;
            let mut b_off = 0;
            for axis in 0..rank {
                if self.shape[axis] != 1 {
                    a_off += index[axis] * a_strides[axis];
                }
                if other.shape[axis] != 1 {
                    b_off += index[axis] * b_strides[axis];
                }
            }
            *slot = f(self.data[a_off], other.data[b_off])?;
            for axis in (0..rank).rev() {
                index[axis] += 1;
                if index[axis] < out_shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        Tensor::new(&out_shape, data)?.check_finite(op)
    }

    /// Reinterprets the row-major data under a new shape with the same
    /// element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let count: usize = new_shape.iter().product();
        if count != self.data.len() {
            return Err(Error::ElementCountMismatch { from: self.data.len(), to: count });
        }
        Ok(Tensor { shape: new_shape.to_vec(), data: self.data.clone() })
    }

    /// Axis permutation (copying). `perm[i]` names the source axis for output
    /// axis `i`.
    pub fn transpose(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        if perm.len() != rank {
            return Err(Error::InvalidArgument(format!(
                "permutation length {} does not match rank {rank}",
                perm.len()
            )));
        }
        let mut seen = vec![false; rank];
        for &axis in perm {
            if axis >= rank || seen[axis] {
                return Err(Error::InvalidArgument(format!("invalid permutation {perm:?}")));
            }
            seen[axis] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&a| self.shape[a]).collect();
        let in_strides = Self::strides(&self.shape);
        let mut data = vec![0.0; self.data.len()];
        let mut index = vec![0usize; rank];
        for slot in data.iter_mut() {
            let mut offset = 0;
            for (out_axis, &src_axis) in perm.iter().enumerate() {
                offset += index[out_axis] * in_strides[src_axis];
            }
            *slot = self.data[offset];
            for axis in (0..rank).rev() {
                index[axis] += 1;
                if index[axis] < out_shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Splits the channel axis (axis 1) into `groups` contiguous groups of
    /// `C / groups` channels each.
    pub fn slice_channel_group(&self, groups: usize) -> Result<Vec<Tensor>> {
        if self.rank() < 2 {
            return Err(Error::ShapeMismatch {
                expected: "rank >= 2 (N, C, ...)".into(),
                got: format!("rank {}", self.rank()),
            });
        }
        let channels = self.shape[1];
        if groups == 0 || channels % groups != 0 {
            return Err(Error::GroupsDontDivide { groups, channels });
        }
        let per_group = channels / groups;
        let n = self.shape[0];
        let inner: usize = self.shape[2..].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape[1] = per_group;

        let mut result = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut data = Vec::with_capacity(n * per_group * inner);
            for sample in 0..n {
                let start = (sample * channels + g * per_group) * inner;
                data.extend_from_slice(&self.data[start..start + per_group * inner]);
            }
            result.push(Tensor { shape: out_shape.clone(), data });
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mean_of_small_vector() {
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let m = t.mean_over(&[0], false).unwrap();
        assert_eq!(m.rank(), 0);
        assert_eq!(m.data(), &[2.0]);
    }

    #[test]
    fn mean_of_zeros_all_axes() {
        let t = Tensor::zeros(&[4, 3]);
        let m = t.mean_over(&[0, 1], false).unwrap();
        assert_eq!(m.data(), &[0.0]);
    }

    #[test]
    fn mean_of_constant_is_constant() {
        let t = Tensor::full(&[2, 3, 4], 7.25);
        for axes in [vec![0], vec![1], vec![2], vec![0, 2], vec![0, 1, 2]] {
            let m = t.mean_over(&axes, false).unwrap();
            assert!(m.data().iter().all(|&v| v == 7.25), "axes {axes:?}");
        }
    }

    #[test]
    fn mean_keep_dims_shape() {
        let t = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let m = t.mean_over(&[0], true).unwrap();
        assert_eq!(m.shape(), &[1, 3]);
        assert_eq!(m.data(), &[2.5, 3.5, 4.5]);
    }

    #[test]
    fn variance_is_population_variance() {
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let v = t.var_over(&[0], false).unwrap();
        assert!(close(v.data()[0], 2.0 / 3.0, 1e-15));

        let t = Tensor::new(&[2], vec![0.0, 2.0]).unwrap();
        let v = t.var_over(&[0], false).unwrap();
        assert_eq!(v.data(), &[1.0]);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let t = Tensor::full(&[5, 2], -3.5);
        let v = t.var_over(&[0, 1], false).unwrap();
        assert_eq!(v.data(), &[0.0]);
    }

    #[test]
    fn invalid_axis_rejected() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(matches!(t.mean_over(&[2], false), Err(Error::InvalidAxis { axis: 2, rank: 2 })));
        assert!(matches!(t.var_over(&[5], false), Err(Error::InvalidAxis { .. })));
    }

    #[test]
    fn elementwise_add_and_identity_mul() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        let ones = Tensor::ones(&[2]);
        assert_eq!(a.mul(&ones).unwrap().data(), a.data());
    }

    #[test]
    fn broadcast_div_by_singleton() {
        let a = Tensor::new(&[2], vec![2.0, 4.0]).unwrap();
        let b = Tensor::new(&[1], vec![2.0]).unwrap();
        assert_eq!(a.div(&b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let a = Tensor::ones(&[2]);
        let b = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(a.div(&b), Err(Error::DivisionByZero)));
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
        let c = Tensor::zeros(&[2]);
        assert!(matches!(a.add(&c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let t = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.reshape(&[6]).unwrap();
        assert_eq!(r.data(), &[1., 2., 3., 4., 5., 6.]);
        assert!(matches!(t.reshape(&[4]), Err(Error::ElementCountMismatch { .. })));
    }

    #[test]
    fn transpose_twice_is_identity() {
        let t = Tensor::new(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let tt = t.transpose(&[1, 0]).unwrap().transpose(&[1, 0]).unwrap();
        assert_eq!(tt, t);
    }

    #[test]
    fn channel_groups_are_contiguous() {
        // N=1, C=4, L=1 with channel value = channel index.
        let t = Tensor::new(&[1, 4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let groups = t.slice_channel_group(2).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].data(), &[0.0, 1.0]);
        assert_eq!(groups[1].data(), &[2.0, 3.0]);
        assert!(matches!(t.slice_channel_group(3), Err(Error::GroupsDontDivide { .. })));
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let a = Tensor::new(&[1], vec![1e308]).unwrap();
        assert!(matches!(a.add(&a), Err(Error::NonFinite { .. })));
    }

    proptest! {
        #[test]
        fn centering_zeroes_the_mean(values in proptest::collection::vec(-10.0f64..10.0, 6..48)) {
            let n = values.len();
            let t = Tensor::new(&[n], values).unwrap();
            let mean = t.mean_over(&[0], true).unwrap();
            let centered = t.sub(&mean).unwrap();
            let m2 = centered.mean_over(&[0], false).unwrap();
            prop_assert!(m2.data()[0].abs() < 1e-12);
        }

        #[test]
        fn variance_matches_moment_identity(values in proptest::collection::vec(-10.0f64..10.0, 4..40)) {
            let n = values.len();
            let t = Tensor::new(&[n], values.clone()).unwrap();
            let var = t.var_over(&[0], false).unwrap().data()[0];
            let sq = Tensor::new(&[n], values.iter().map(|v| v * v).collect()).unwrap();
            let ex2 = sq.mean_over(&[0], false).unwrap().data()[0];
            let ex = t.mean_over(&[0], false).unwrap().data()[0];
            prop_assert!((var - (ex2 - ex * ex)).abs() < 1e-9);
        }

        #[test]
        fn reshape_transpose_roundtrip_is_bitwise(values in proptest::collection::vec(-100.0f64..100.0, 24)) {
            let t = Tensor::new(&[2, 3, 4], values).unwrap();
            let r = t.reshape(&[4, 6]).unwrap().reshape(&[2, 3, 4]).unwrap();
            prop_assert_eq!(r.data(), t.data());
            for perm in [[0usize, 1, 2], [2, 1, 0], [1, 2, 0], [2, 0, 1]] {
                let mut inverse = [0usize; 3];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let round = t.transpose(&perm).unwrap().transpose(&inverse).unwrap();
                prop_assert_eq!(round.data(), t.data());
            }
        }
    }
}
