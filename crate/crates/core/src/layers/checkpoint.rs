//! Network checkpoints: a directory of per-layer JSON files plus a manifest.
//!
//! `manifest.json` lists the input shape and one file per layer; each layer
//! file is a self-describing tagged document carrying the layer's
//! configuration and parameters with 17-significant-digit floats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::norm::checkpoint::to_json_17;
use crate::norm::{BnState, MnLayer, Partition, UanState};

use super::{
    AvgPool2d, Conv2d, Dense, Flatten, GlobalAvgPool, Layer, MaxPool2d, Network, NormLayer, Relu,
};

#[derive(Serialize, Deserialize)]
struct Manifest {
    input_shape: Vec<usize>,
    layers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerJson {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        pad: usize,
        weight: TensorJson,
        bias: Vec<f64>,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        weight: TensorJson,
        bias: Vec<f64>,
    },
    Relu {},
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool {},
    Flatten {},
    BatchNorm {
        state: serde_json::Value,
    },
    PartitionNorm {
        partition: String,
        groups: Option<usize>,
        epsilon: f64,
    },
    MixtureNorm {
        components: usize,
        channels: usize,
        epsilon: f64,
        momentum: f64,
        gmm: Option<serde_json::Value>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        gamma: Option<Vec<f64>>,
        beta: Option<Vec<f64>>,
    },
    Uan {
        state: serde_json::Value,
    },
}

fn layer_to_json(layer: &Layer) -> Result<LayerJson> {
    Ok(match layer {
        Layer::Conv2d(l) => LayerJson::Conv2d {
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            kernel: [l.kernel.0, l.kernel.1],
            stride: l.stride,
            pad: l.pad,
            weight: TensorJson {
                shape: vec![l.out_channels, l.in_channels, l.kernel.0, l.kernel.1],
                data: l.weight.clone(),
            },
            bias: l.bias.clone(),
        },
        Layer::Dense(l) => LayerJson::Dense {
            in_features: l.in_features,
            out_features: l.out_features,
            weight: TensorJson { shape: vec![l.in_features, l.out_features], data: l.weight.clone() },
            bias: l.bias.clone(),
        },
        Layer::Relu(_) => LayerJson::Relu {},
        Layer::MaxPool(l) => LayerJson::MaxPool { kernel: l.kernel, stride: l.stride },
        Layer::AvgPool(l) => LayerJson::AvgPool { kernel: l.kernel, stride: l.stride },
        Layer::GlobalAvgPool(_) => LayerJson::GlobalAvgPool {},
        Layer::Flatten(_) => LayerJson::Flatten {},
        Layer::Norm(NormLayer::Batch { state, .. }) => LayerJson::BatchNorm {
            state: serde_json::from_str(&state.to_json())?,
        },
        Layer::Norm(NormLayer::Partition { partition, epsilon, .. }) => {
            let (name, groups) = match partition {
                Partition::Batch => ("batch", None),
                Partition::Layer => ("layer", None),
                Partition::Instance => ("instance", None),
                Partition::Group(g) => ("group", Some(*g)),
            };
            LayerJson::PartitionNorm { partition: name.into(), groups, epsilon: *epsilon }
        }
        Layer::Norm(NormLayer::Mixture { layer, components, grad_gamma, .. }) => {
            LayerJson::MixtureNorm {
                components: *components,
                channels: grad_gamma.len(),
                epsilon: layer.eps,
                momentum: layer.momentum,
                gmm: match layer.gmm() {
                    Some(gmm) => Some(serde_json::from_str(&gmm.to_json())?),
                    None => None,
                },
                running_mean: layer.running_mean().to_vec(),
                running_var: layer.running_var().to_vec(),
                gamma: layer.affine.as_ref().map(|a| a.gamma.clone()),
                beta: layer.affine.as_ref().map(|a| a.beta.clone()),
            }
        }
        Layer::Norm(NormLayer::Uan { state, .. }) => LayerJson::Uan {
            state: serde_json::from_str(&state.to_json())?,
        },
    })
}

fn layer_from_json(doc: LayerJson) -> Result<Layer> {
    Ok(match doc {
        LayerJson::Conv2d { in_channels, out_channels, kernel, stride, pad, weight, bias } => {
            let mut layer = Conv2d::new(in_channels, out_channels, (kernel[0], kernel[1]), stride, pad);
            if weight.data.len() != layer.weight.len() || bias.len() != out_channels {
                return Err(Error::InvalidParams("conv2d checkpoint size mismatch".into()));
            }
            layer.weight = weight.data;
            layer.bias = bias;
            Layer::Conv2d(layer)
        }
        LayerJson::Dense { in_features, out_features, weight, bias } => {
            let mut layer = Dense::new(in_features, out_features);
            if weight.data.len() != layer.weight.len() || bias.len() != out_features {
                return Err(Error::InvalidParams("dense checkpoint size mismatch".into()));
            }
            layer.weight = weight.data;
            layer.bias = bias;
            Layer::Dense(layer)
        }
        LayerJson::Relu {} => Layer::Relu(Relu::new()),
        LayerJson::MaxPool { kernel, stride } => Layer::MaxPool(MaxPool2d::new(kernel, stride)),
        LayerJson::AvgPool { kernel, stride } => Layer::AvgPool(AvgPool2d::new(kernel, stride)),
        LayerJson::GlobalAvgPool {} => Layer::GlobalAvgPool(GlobalAvgPool::new()),
        LayerJson::Flatten {} => Layer::Flatten(Flatten::new()),
        LayerJson::BatchNorm { state } => {
            let state = BnState::from_json(&serde_json::to_string(&state)?)?;
            let channels = state.channels();
            Layer::Norm(NormLayer::Batch {
                state,
                grad_gamma: vec![0.0; channels],
                grad_beta: vec![0.0; channels],
                ctx: None,
            })
        }
        LayerJson::PartitionNorm { partition, groups, epsilon } => {
            let partition = match (partition.as_str(), groups) {
                ("batch", _) => Partition::Batch,
                ("layer", _) => Partition::Layer,
                ("instance", _) => Partition::Instance,
                ("group", Some(g)) => Partition::Group(g),
                _ => return Err(Error::InvalidParams(format!("bad partition {partition:?}"))),
            };
            Layer::Norm(NormLayer::partition(partition, epsilon))
        }
        LayerJson::MixtureNorm {
            components,
            channels,
            epsilon,
            momentum,
            gmm,
            running_mean,
            running_var,
            gamma,
            beta,
        } => {
            let mut layer = MnLayer::unfitted(epsilon);
            layer.momentum = momentum;
            if let Some(gmm) = gmm {
                layer.set_gmm(GmmParams::from_json(&serde_json::to_string(&gmm)?)?);
                layer.set_running_stats(running_mean, running_var)?;
            }
            layer.affine = match (gamma, beta) {
                (Some(gamma), Some(beta)) => Some(crate::norm::Affine { gamma, beta }),
                _ => None,
            };
            Layer::Norm(NormLayer::Mixture {
                layer,
                components,
                grad_gamma: vec![0.0; channels],
                grad_beta: vec![0.0; channels],
                ctx: None,
            })
        }
        LayerJson::Uan { state } => {
            Layer::Norm(NormLayer::uan(UanState::from_json(&serde_json::to_string(&state)?)?))
        }
    })
}

impl Network {
    /// Writes `manifest.json` and one `layer_###.json` per layer into `dir`
    /// (created if needed).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (index, layer) in self.layers().iter().enumerate() {
            let doc = layer_to_json(layer)?;
            let file = format!("layer_{index:03}_{}.json", layer.kind_name());
            fs::write(dir.join(&file), to_json_17(&doc))?;
            files.push(file);
        }
        let manifest = Manifest { input_shape: self.input_shape().to_vec(), layers: files };
        fs::write(dir.join("manifest.json"), to_json_17(&manifest))?;
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Network> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for file in &manifest.layers {
            let doc: LayerJson = serde_json::from_str(&fs::read_to_string(dir.join(file))?)?;
            layers.push(layer_from_json(doc)?);
        }
        Network::new(layers, &manifest.input_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{build_shallow_cnn, NormKind, NormSpec};
    use crate::tensor::Tensor;

    #[test]
    fn checkpoint_round_trip_preserves_behavior() {
        let spec = NormSpec { kind: NormKind::Uan, k: 2, ..Default::default() };
        let mut net = build_shallow_cnn((1, 6, 6), 4, &[2, 2, 3, 3], &spec, 33).unwrap();
        let x = Tensor::full(&[2, 1, 6, 6], 0.25);
        let y_before = net.forward(&x, false).unwrap();

        let dir = tempfile::tempdir().unwrap();
        net.save_checkpoint(dir.path()).unwrap();
        let mut restored = Network::load_checkpoint(dir.path()).unwrap();
        let y_after = restored.forward(&x, false).unwrap();
        assert_eq!(y_before.data(), y_after.data());
        assert_eq!(net.state_hash(), restored.state_hash());
    }
}
