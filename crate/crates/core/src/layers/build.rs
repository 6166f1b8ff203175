//! Architecture builders for the experiment networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::norm::{uan_init, Partition, UanMode};

use super::{he_uniform, Conv2d, Dense, Flatten, GlobalAvgPool, Layer, Network, NormLayer, Relu};

/// Which normalization layer fills a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    None,
    Batch,
    Layer,
    Instance,
    Group,
    Mixture,
    Uan,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Batch => "bn",
            NormKind::Layer => "ln",
            NormKind::Instance => "in",
            NormKind::Group => "gn",
            NormKind::Mixture => "mn",
            NormKind::Uan => "uan",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(match text {
            "none" => NormKind::None,
            "bn" | "batch" => NormKind::Batch,
            "ln" | "layer" => NormKind::Layer,
            "in" | "instance" => NormKind::Instance,
            "gn" | "group" => NormKind::Group,
            "mn" | "mixture" => NormKind::Mixture,
            "uan" => NormKind::Uan,
            other => return Err(Error::InvalidArgument(format!("unknown norm kind {other:?}"))),
        })
    }
}

/// Where the chosen normalization goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPlacement {
    /// The third of the four conv-block slots (the others hold BN); the
    /// substitution protocol for comparing normalization layers.
    ThirdSlot,
    /// Every hidden slot of an MLP.
    Hidden,
    /// Directly on the network input, ahead of everything else.
    First,
}

/// Full description of the normalization choice for a model.
#[derive(Debug, Clone)]
pub struct NormSpec {
    pub kind: NormKind,
    /// Mixture components for MN/UAN.
    pub k: usize,
    /// Channel groups for GN.
    pub groups: usize,
    pub epsilon: f64,
    pub uan_mode: UanMode,
    /// Moving-average momentum for UAN's MovingAverage mode.
    pub momentum: f64,
    pub affine: bool,
    pub placement: NormPlacement,
}

impl Default for NormSpec {
    fn default() -> Self {
        Self {
            kind: NormKind::Batch,
            k: 3,
            groups: 2,
            epsilon: 1e-5,
            uan_mode: UanMode::Weight,
            momentum: 0.9,
            affine: false,
            placement: NormPlacement::ThirdSlot,
        }
    }
}

impl NormSpec {
    /// Builds the slot layer of this spec's kind for `channels` channels.
    /// `seed` keeps UAN initialization deterministic per slot.
    pub fn make_layer(&self, channels: usize, seed: u64) -> Result<NormLayer> {
        Ok(match self.kind {
            NormKind::None => {
                return Err(Error::InvalidArgument("no layer for norm kind none".into()))
            }
            NormKind::Batch => NormLayer::batch(channels, self.epsilon),
            NormKind::Layer => NormLayer::partition(Partition::Layer, self.epsilon),
            NormKind::Instance => NormLayer::partition(Partition::Instance, self.epsilon),
            NormKind::Group => {
                if self.groups == 0 || channels % self.groups != 0 {
                    return Err(Error::GroupsDontDivide { groups: self.groups, channels });
                }
                NormLayer::partition(Partition::Group(self.groups), self.epsilon)
            }
            NormKind::Mixture => NormLayer::mixture(self.k, channels, self.epsilon, self.affine),
            NormKind::Uan => {
                let mut state = uan_init(self.k, channels, seed)
                    .with_mode(self.uan_mode)
                    .with_momentum(self.momentum)
                    .with_epsilon(self.epsilon);
                if self.affine {
                    state = state.with_affine();
                }
                NormLayer::uan(state)
            }
        })
    }
}

/// Model family plus layer widths.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ShallowCnn,
    Mlp,
}

/// Four conv blocks (conv 3×3 → ReLU → norm), then global average pooling
/// and a dense head. The third norm slot holds the spec's kind; the other
/// slots hold plain BN, mirroring the layer-substitution protocol. With
/// `NormPlacement::First` the chosen layer is additionally placed on the
/// raw input.
pub fn build_shallow_cnn(
    in_shape: (usize, usize, usize),
    num_classes: usize,
    widths: &[usize],
    norm: &NormSpec,
    seed: u64,
) -> Result<Network> {
    if widths.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "shallow CNN expects 4 conv widths, got {}",
            widths.len()
        )));
    }
    if norm.kind == NormKind::Uan && norm.k == 0 {
        return Err(Error::InvalidArgument("UAN needs k >= 1".into()));
    }
    let (c_in, h, w) = in_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();

    if norm.placement == NormPlacement::First && norm.kind != NormKind::None {
        layers.push(Layer::Norm(norm.make_layer(c_in, seed ^ 0xF1257)?));
    }

    let mut channels = c_in;
    for (slot, &width) in widths.iter().enumerate() {
        let mut conv = Conv2d::new(channels, width, (3, 3), 1, 1);
        conv.weight = he_uniform(&mut rng, channels * 9, conv.weight.len());
        layers.push(Layer::Conv2d(conv));
        layers.push(Layer::Relu(Relu::new()));
        let slot_layer = if slot == 2 && norm.placement == NormPlacement::ThirdSlot {
            match norm.kind {
                NormKind::None => None,
                _ => Some(norm.make_layer(width, seed ^ (0x51 + slot as u64))?),
            }
        } else {
            Some(NormLayer::batch(width, norm.epsilon))
        };
        if let Some(slot_layer) = slot_layer {
            layers.push(Layer::Norm(slot_layer));
        }
        channels = width;
    }

    layers.push(Layer::GlobalAvgPool(GlobalAvgPool::new()));
    let mut head = Dense::new(channels, num_classes);
    head.weight = he_uniform(&mut rng, channels, head.weight.len());
    layers.push(Layer::Dense(head));

    Network::new(layers, &[c_in, h, w])
}

/// Flatten → (dense → ReLU → norm)+ → dense head. With
/// `NormPlacement::First` the chosen norm layer runs on the raw input and
/// the hidden slots are left bare; with `Hidden` every hidden slot gets it.
pub fn build_mlp(
    in_shape: (usize, usize, usize),
    num_classes: usize,
    hidden: &[usize],
    norm: &NormSpec,
    seed: u64,
) -> Result<Network> {
    if hidden.is_empty() {
        return Err(Error::InvalidArgument("MLP needs at least one hidden width".into()));
    }
    let (c_in, h, w) = in_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();

    if norm.placement == NormPlacement::First && norm.kind != NormKind::None {
        layers.push(Layer::Norm(norm.make_layer(c_in, seed ^ 0xF1257)?));
    }
    layers.push(Layer::Flatten(Flatten::new()));

    let mut features = c_in * h * w;
    for (slot, &width) in hidden.iter().enumerate() {
        let mut dense = Dense::new(features, width);
        dense.weight = he_uniform(&mut rng, features, dense.weight.len());
        layers.push(Layer::Dense(dense));
        layers.push(Layer::Relu(Relu::new()));
        if norm.placement == NormPlacement::Hidden && norm.kind != NormKind::None {
            layers.push(Layer::Norm(norm.make_layer(width, seed ^ (0xA7 + slot as u64))?));
        }
        features = width;
    }
    let mut head = Dense::new(features, num_classes);
    head.weight = he_uniform(&mut rng, features, head.weight.len());
    layers.push(Layer::Dense(head));

    Network::new(layers, &[c_in, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm_kind_of(layer: &Layer) -> Option<&'static str> {
        match layer {
            Layer::Norm(n) => Some(n.kind_name()),
            _ => None,
        }
    }

    #[test]
    fn bn_spec_fills_all_four_slots_with_bn() {
        let net = build_shallow_cnn((3, 8, 8), 10, &[4, 4, 8, 8], &NormSpec::default(), 1).unwrap();
        let kinds: Vec<_> = net.layers().iter().filter_map(norm_kind_of).collect();
        assert_eq!(kinds, vec!["bn"; 4]);
    }

    #[test]
    fn uan_spec_occupies_the_third_slot_only() {
        let spec = NormSpec { kind: NormKind::Uan, k: 3, ..Default::default() };
        let net = build_shallow_cnn((3, 8, 8), 10, &[4, 4, 8, 8], &spec, 1).unwrap();
        let kinds: Vec<_> = net.layers().iter().filter_map(norm_kind_of).collect();
        assert_eq!(kinds, vec!["bn", "bn", "uan", "bn"]);
        let uan = net
            .layers()
            .iter()
            .find_map(|l| match l {
                Layer::Norm(NormLayer::Uan { state, .. }) => Some(state),
                _ => None,
            })
            .unwrap();
        assert_eq!(uan.k(), 3);
        assert_eq!(uan.dim(), 8);
    }

    #[test]
    fn total_parameter_count_is_the_sum_of_layer_counts() {
        let spec = NormSpec { kind: NormKind::Uan, k: 3, ..Default::default() };
        let net = build_shallow_cnn((3, 8, 8), 10, &[4, 4, 8, 8], &spec, 1).unwrap();
        let per_layer: usize = net.layers().iter().map(Layer::param_count).sum();
        assert_eq!(net.param_count(), per_layer);
        // conv1 3→4 + conv2 4→4 + conv3 4→8 + conv4 8→8, 3×3 kernels with bias.
        let conv = 3 * 4 * 9 + 4 + 4 * 4 * 9 + 4 + 4 * 8 * 9 + 8 + 8 * 8 * 9 + 8;
        // Three BN slots (γ, β) + UAN slot (2·k·d + k) + dense head.
        let norms = 2 * 4 + 2 * 4 + 2 * 8 + (2 * 3 * 8 + 3);
        let head = 8 * 10 + 10;
        assert_eq!(net.param_count(), conv + norms + head);
    }

    #[test]
    fn mlp_with_first_placement_normalizes_the_input() {
        let spec = NormSpec {
            kind: NormKind::Uan,
            k: 2,
            placement: NormPlacement::First,
            ..Default::default()
        };
        let net = build_mlp((1, 4, 4), 3, &[8], &spec, 5).unwrap();
        assert_eq!(net.layers()[0].kind_name(), "uan");
        assert_eq!(net.layers()[1].kind_name(), "flatten");
    }

    #[test]
    fn invalid_gn_groups_are_rejected() {
        let spec = NormSpec { kind: NormKind::Group, groups: 3, ..Default::default() };
        assert!(build_shallow_cnn((3, 8, 8), 10, &[4, 4, 8, 8], &spec, 1).is_err());
    }
}
