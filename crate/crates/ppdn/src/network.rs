//! Configurable feedforward classifier.
//!
//! The network exposes, per input batch, both the logits and the ordered
//! features of every hidden layer enrolled in the matching set Ω. Features
//! are post-activation outputs; layer index 0 is the first hidden layer and
//! the logits layer is never enrollable.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{softmax_row, Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

#[derive(Clone, Debug)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    /// Hidden-layer indices whose features join the matching loss.
    pub omega_layers: BTreeSet<usize>,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        let h = hidden_dims.len();
        NetworkConfig {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
            omega_layers: (0..h).collect(),
        }
    }

    pub fn with_omega(mut self, omega: impl IntoIterator<Item = usize>) -> Self {
        self.omega_layers = omega.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden dims must be positive".into()));
        }
        if let Some(&bad) = self
            .omega_layers
            .iter()
            .find(|&&l| l >= self.hidden_dims.len())
        {
            return Err(Error::InvalidConfig(format!(
                "omega layer {bad} out of range for {} hidden layers",
                self.hidden_dims.len()
            )));
        }
        Ok(())
    }

    /// Layer widths from input through logits.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let layers = config
            .dims()
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(vec![w[0], w[1]]),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        NetworkParams { layers }
    }

    /// All parameters flattened in fixed order: per layer, weight then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }
}

/// Xavier-uniform initialization: weights in ±√(6/(fan_in+fan_out)),
/// biases zero. Deterministic given the seed.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = config
        .dims()
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let weight_data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            Layer {
                weight: Tensor::new(vec![fan_in, fan_out], weight_data).unwrap(),
                bias: Tensor::zeros(vec![fan_out]),
            }
        })
        .collect();
    Ok(NetworkParams { layers })
}

/// Graph handles for one registration of the parameters: `(weight, bias)`
/// per layer. Both branch passes of a pair share these nodes.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub layers: Vec<(NodeId, NodeId)>,
}

/// Registers every parameter on the graph exactly once.
pub fn register_params(graph: &mut Graph, params: &NetworkParams) -> ParamNodes {
    let layers = params
        .layers
        .iter()
        .map(|layer| {
            (
                graph.parameter(layer.weight.clone()),
                graph.parameter(layer.bias.clone()),
            )
        })
        .collect();
    ParamNodes { layers }
}

/// Differentiable outputs of one batch pass: the logits node and one feature
/// node per enrolled Ω layer, in ascending layer order.
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub logits: NodeId,
    pub omega_features: Vec<NodeId>,
}

/// Records the full forward pass of `x` on the graph.
pub fn forward_pass(
    graph: &mut Graph,
    nodes: &ParamNodes,
    config: &NetworkConfig,
    x: NodeId,
) -> Result<ForwardResult> {
    let hidden = config.hidden_dims.len();
    let mut h = x;
    let mut omega_features = Vec::with_capacity(config.omega_layers.len());
    for (k, &(w, b)) in nodes.layers.iter().enumerate() {
        let pre = graph.matmul(h, w)?;
        let pre = graph.add(pre, b)?;
        if k < hidden {
            h = match config.activation {
                Activation::Relu => graph.relu(pre),
            };
            if config.omega_layers.contains(&k) {
                omega_features.push(h);
            }
        } else {
            h = pre;
        }
    }
    Ok(ForwardResult {
        logits: h,
        omega_features,
    })
}

/// Single-image (or batch) inference: raw logits, no pair structure.
pub fn logits_for(params: &NetworkParams, config: &NetworkConfig, x: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, params);
    let input = graph.constant(x.clone());
    let result = forward_pass(&mut graph, &nodes, config, input)?;
    graph.forward(&Default::default())?;
    Ok(graph.value(result.logits).unwrap().clone())
}

/// Softmax class probabilities per row.
pub fn predict_proba(params: &NetworkParams, config: &NetworkConfig, x: &Tensor) -> Result<Tensor> {
    let logits = logits_for(params, config, x)?;
    let c = logits.row_len();
    let mut data = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(c) {
        data.extend(softmax_row(row));
    }
    Tensor::new(logits.shape().to_vec(), data)
}
