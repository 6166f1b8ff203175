//! Minimal trainable layer set and the network container.
//!
//! Enough to assemble the experiment architectures: convolution, dense,
//! ReLU, max/avg/global pooling, flatten, softmax cross-entropy, and a
//! normalization slot that can hold any of the six normalization layers.
//! Every backward pass is verified against central finite differences.

mod build;
mod checkpoint;
mod conv;
mod dense;
mod loss;
mod norm_layer;
mod pool;

pub use build::{build_mlp, build_shallow_cnn, ModelSpec, NormKind, NormPlacement, NormSpec};
pub use conv::Conv2d;
pub use dense::Dense;
pub use loss::softmax_cross_entropy;
pub use norm_layer::NormLayer;
pub use pool::{AvgPool2d, GlobalAvgPool, MaxPool2d};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// He-uniform initialization: U[−√(6/fan_in), √(6/fan_in)].
pub fn he_uniform(rng: &mut impl Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self { mask: None }
    }

    pub fn forward(&mut self, x: &Tensor, save_ctx: bool) -> Result<Tensor> {
        let data: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
        if save_ctx {
            self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        }
        Tensor::new(x.shape(), data)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or(Error::InvalidArgument(
            "relu backward called without a saved forward".into(),
        ))?;
        let data: Vec<f64> =
            dy.data().iter().zip(&mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
        Tensor::new(dy.shape(), data)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self { in_shape: None }
    }

    pub fn forward(&mut self, x: &Tensor, save_ctx: bool) -> Result<Tensor> {
        let n = x.shape()[0];
        let rest: usize = x.shape()[1..].iter().product();
        if save_ctx {
            self.in_shape = Some(x.shape().to_vec());
        }
        x.reshape(&[n, rest])
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let shape = self.in_shape.take().ok_or(Error::InvalidArgument(
            "flatten backward called without a saved forward".into(),
        ))?;
        dy.reshape(&shape)
    }
}

#[derive(Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu(Relu),
    MaxPool(MaxPool2d),
    AvgPool(AvgPool2d),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Norm(NormLayer),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(x, training),
            Layer::Dense(l) => l.forward(x, training),
            Layer::Relu(l) => l.forward(x, training),
            Layer::MaxPool(l) => l.forward(x, training),
            Layer::AvgPool(l) => l.forward(x, training),
            Layer::GlobalAvgPool(l) => l.forward(x, training),
            Layer::Flatten(l) => l.forward(x, training),
            Layer::Norm(l) => l.forward(x, training),
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(dy),
            Layer::Dense(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::MaxPool(l) => l.backward(dy),
            Layer::AvgPool(l) => l.backward(dy),
            Layer::GlobalAvgPool(l) => l.backward(dy),
            Layer::Flatten(l) => l.backward(dy),
            Layer::Norm(l) => l.backward(dy),
        }
    }

    /// Output shape for a given input shape (batch included); errors when the
    /// shapes are incompatible. Used to validate a network at construction.
    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(l) => {
                if in_shape.len() != 4 || in_shape[1] != l.in_channels {
                    return Err(Error::ShapeMismatch {
                        expected: format!("[N, {}, H, W]", l.in_channels),
                        got: format!("{in_shape:?}"),
                    });
                }
                let (h, w) = l.spatial_out(in_shape[2], in_shape[3])?;
                Ok(vec![in_shape[0], l.out_channels, h, w])
            }
            Layer::Dense(l) => {
                if in_shape.len() != 2 || in_shape[1] != l.in_features {
                    return Err(Error::ShapeMismatch {
                        expected: format!("[N, {}]", l.in_features),
                        got: format!("{in_shape:?}"),
                    });
                }
                Ok(vec![in_shape[0], l.out_features])
            }
            Layer::Relu(_) => Ok(in_shape.to_vec()),
            Layer::MaxPool(l) => l.out_shape(in_shape),
            Layer::AvgPool(l) => l.out_shape(in_shape),
            Layer::GlobalAvgPool(_) => {
                if in_shape.len() != 4 {
                    return Err(Error::ShapeMismatch {
                        expected: "NCHW".into(),
                        got: format!("{in_shape:?}"),
                    });
                }
                Ok(vec![in_shape[0], in_shape[1]])
            }
            Layer::Flatten(_) => Ok(vec![in_shape[0], in_shape[1..].iter().product()]),
            Layer::Norm(norm) => {
                if in_shape.len() < 2 || in_shape.len() > 4 {
                    return Err(Error::ShapeMismatch {
                        expected: "rank 2..4 activations".into(),
                        got: format!("{in_shape:?}"),
                    });
                }
                let channels = in_shape[1];
                let expected = match norm {
                    NormLayer::Batch { state, .. } => Some(state.channels()),
                    NormLayer::Partition { partition, .. } => {
                        if let crate::norm::Partition::Group(g) = partition {
                            if *g == 0 || channels % *g != 0 {
                                return Err(Error::GroupsDontDivide {
                                    groups: *g,
                                    channels,
                                });
                            }
                        }
                        None
                    }
                    NormLayer::Mixture { grad_gamma, .. } => Some(grad_gamma.len()),
                    NormLayer::Uan { state, .. } => Some(state.dim()),
                };
                if let Some(expected) = expected {
                    if expected != channels {
                        return Err(Error::ShapeMismatch {
                            expected: format!("{expected} channels"),
                            got: format!("{channels}"),
                        });
                    }
                }
                Ok(in_shape.to_vec())
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(l) => l.param_count(),
            Layer::Dense(l) => l.param_count(),
            Layer::Norm(l) => l.param_count(),
            _ => 0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::AvgPool(_) => "avgpool",
            Layer::GlobalAvgPool(_) => "global_avgpool",
            Layer::Flatten(_) => "flatten",
            Layer::Norm(l) => l.kind_name(),
        }
    }

    pub fn for_each_trainable(&mut self, f: &mut dyn FnMut(&mut Vec<f64>, &Vec<f64>)) {
        match self {
            Layer::Conv2d(l) => {
                f(&mut l.weight, &l.grad_weight);
                f(&mut l.bias, &l.grad_bias);
            }
            Layer::Dense(l) => {
                f(&mut l.weight, &l.grad_weight);
                f(&mut l.bias, &l.grad_bias);
            }
            Layer::Norm(l) => l.for_each_trainable(f),
            _ => {}
        }
    }

    pub fn visit_state(&self, f: &mut dyn FnMut(&[f64])) {
        match self {
            Layer::Conv2d(l) => {
                f(&l.weight);
                f(&l.bias);
            }
            Layer::Dense(l) => {
                f(&l.weight);
                f(&l.bias);
            }
            Layer::Norm(l) => l.visit_state(f),
            _ => {}
        }
    }

    /// Gradient of this layer's leading parameter tensor (the weights for
    /// conv/dense), used for gradient-variance telemetry.
    pub fn primary_grad(&self) -> Option<&[f64]> {
        match self {
            Layer::Conv2d(l) => Some(&l.grad_weight),
            Layer::Dense(l) => Some(&l.grad_weight),
            Layer::Norm(NormLayer::Uan { grad_means, .. }) => Some(grad_means),
            Layer::Norm(NormLayer::Batch { grad_gamma, .. }) => Some(grad_gamma),
            _ => None,
        }
    }
}

/// An ordered stack of layers with construction-time shape validation.
#[derive(Debug)]
pub struct Network {
    layers: Vec<Layer>,
    /// Input shape without the batch axis.
    input_shape: Vec<usize>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_shape: &[usize]) -> Result<Self> {
        let mut shape = Vec::with_capacity(input_shape.len() + 1);
        shape.push(2usize); // probe batch size
        shape.extend_from_slice(input_shape);
        for (index, layer) in layers.iter().enumerate() {
            shape = layer.out_shape(&shape).map_err(|e| {
                Error::InvalidArgument(format!(
                    "layer {index} ({}) rejects input: {e}",
                    layer.kind_name()
                ))
            })?;
        }
        Ok(Self { layers, input_shape: input_shape.to_vec() })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut current = x.clone();
        for layer in &mut self.layers {
            current = layer.forward(&current, training)?;
        }
        Ok(current)
    }

    /// Backpropagates through the stack, consuming the saved contexts and
    /// filling every layer's parameter gradients.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut current = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            current = layer.backward(&current)?;
        }
        Ok(current)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn for_each_trainable(&mut self, mut f: impl FnMut(usize, &mut Vec<f64>, &Vec<f64>)) {
        let mut index = 0usize;
        for layer in &mut self.layers {
            layer.for_each_trainable(&mut |param, grad| {
                f(index, param, grad);
                index += 1;
            });
        }
    }

    /// Lengths of every optimizer-visible parameter tensor, in walk order.
    pub fn trainable_lengths(&mut self) -> Vec<usize> {
        let mut lengths = Vec::new();
        self.for_each_trainable(|_, param, _| lengths.push(param.len()));
        lengths
    }

    /// Gradient monitored for variance telemetry: the leading parameter of
    /// `layer_index` when given, otherwise of the first parameterized layer.
    pub fn monitored_grad(&self, layer_index: Option<usize>) -> Option<&[f64]> {
        match layer_index {
            Some(index) => self.layers.get(index).and_then(Layer::primary_grad),
            None => self.layers.iter().find_map(Layer::primary_grad),
        }
    }

    /// FNV-1a hash over every state value's bits: parameters, running
    /// statistics, cluster parameters. Changes iff some state changed.
    pub fn state_hash(&self) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        for layer in &self.layers {
            layer.visit_state(&mut |values| {
                for v in values {
                    hash ^= v.to_bits();
                    hash = hash.wrapping_mul(0x100000001b3);
                }
            });
        }
        hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn relu_clamps_and_masks() {
        let mut relu = Relu::new();
        let x = Tensor::new(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        let y = relu.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let dx = relu.backward(&Tensor::ones(&[4])).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn network_rejects_incompatible_layers() {
        let layers = vec![
            Layer::Flatten(Flatten::new()),
            Layer::Dense(Dense::new(9, 4)),
            Layer::Dense(Dense::new(5, 2)), // 4 != 5
        ];
        assert!(Network::new(layers, &[1, 3, 3]).is_err());
    }

    #[test]
    fn forward_backward_roundtrip_shapes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(1, 2, (3, 3), 1, 1);
        conv.weight = he_uniform(&mut rng, 9, conv.weight.len());
        let mut dense = Dense::new(2 * 4 * 4, 3);
        dense.weight = he_uniform(&mut rng, dense.in_features, dense.weight.len());
        let layers = vec![
            Layer::Conv2d(conv),
            Layer::Relu(Relu::new()),
            Layer::Flatten(Flatten::new()),
            Layer::Dense(dense),
        ];
        let mut net = Network::new(layers, &[1, 4, 4]).unwrap();
        let x = Tensor::full(&[2, 1, 4, 4], 0.3);
        let y = net.forward(&x, true).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        let dx = net.backward(&Tensor::ones(&[2, 3])).unwrap();
        assert_eq!(dx.shape(), x.shape());
        assert!(net.param_count() > 0);
    }

    #[test]
    fn state_hash_tracks_mutation() {
        let mut net = Network::new(
            vec![Layer::Flatten(Flatten::new()), Layer::Dense(Dense::new(4, 2))],
            &[4],
        )
        .unwrap();
        let h0 = net.state_hash();
        if let Layer::Dense(d) = &mut net.layers_mut()[1] {
            d.weight[0] += 1.0;
        }
        assert_ne!(h0, net.state_hash());
    }
}
