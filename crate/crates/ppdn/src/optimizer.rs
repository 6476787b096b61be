//! Plain SGD and its peak-gradient-suppressed variant.
//!
//! Both modes consume gradients of the batch-averaged data term; the weight
//! decay derivative `2λW` is applied here, to weight matrices only. The two
//! modes differ solely in which gating the training loop uses when building
//! the loss graph: `Sgd` backpropagates through both branches of J1, `Pgs`
//! suppresses the peak branch.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::{NetworkConfig, NetworkParams, ParamNodes};
use crate::objective::{ppdn_loss, BranchGating, LossBreakdown, OmegaNormalization, PairBatch};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptMode {
    Sgd,
    Pgs,
}

impl OptMode {
    /// The branch gating this update rule trains under.
    pub fn gating(self) -> BranchGating {
        match self {
            OptMode::Sgd => BranchGating::None,
            OptMode::Pgs => BranchGating::SuppressPeak,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub mode: OptMode,
    pub iterations: usize,
    pub batch_size: usize,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be a finite non-negative number",
                self.learning_rate
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda {} must be finite and non-negative",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Gradients for one layer, shaped like the layer itself.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients for every layer, aligned with `NetworkParams::layers`.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    /// Flattened in the same fixed order as `NetworkParams::flatten`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }
}

/// Reads the accumulated gradients off a graph after `backward`.
pub fn collect_grads(graph: &Graph, nodes: &ParamNodes) -> Result<ParamGrads> {
    let layers = nodes
        .layers
        .iter()
        .enumerate()
        .map(|(l, &(w, b))| {
            let weight = graph
                .grad(w)
                .cloned()
                .ok_or_else(|| Error::MissingGradient {
                    name: format!("layer {l} weight"),
                })?;
            let bias = graph.grad(b).cloned().ok_or_else(|| Error::MissingGradient {
                name: format!("layer {l} bias"),
            })?;
            Ok(LayerGrads { weight, bias })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamGrads { layers })
}

/// One in-place update: `W ← W − γ(g + 2λW)` for weights,
/// `b ← b − γ g` for biases.
pub fn step(
    params: &mut NetworkParams,
    grads: &ParamGrads,
    config: &OptimizerConfig,
) -> Result<()> {
    config.validate()?;
    if grads.layers.len() != params.layers.len() {
        return Err(Error::MissingGradient {
            name: format!(
                "expected {} layers of gradients, got {}",
                params.layers.len(),
                grads.layers.len()
            ),
        });
    }
    let gamma = config.learning_rate;
    let lambda = config.lambda;
    for (l, (layer, grad)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
        for (w, g) in layer.weight.data_mut().iter_mut().zip(grad.weight.data()) {
            *w -= gamma * (g + 2.0 * lambda * *w);
        }
        for (b, g) in layer.bias.data_mut().iter_mut().zip(grad.bias.data()) {
            *b -= gamma * g;
        }
        if !layer.weight.is_finite() {
            return Err(Error::NonFiniteUpdate {
                name: format!("layer {l} weight"),
            });
        }
        if !layer.bias.is_finite() {
            return Err(Error::NonFiniteUpdate {
                name: format!("layer {l} bias"),
            });
        }
    }
    Ok(())
}

/// Builds, differentiates, and steps through one batch; returns the
/// evaluated breakdown.
pub fn train_step(
    params: &mut NetworkParams,
    batch: &PairBatch,
    net_config: &NetworkConfig,
    normalization: OmegaNormalization,
    opt: &OptimizerConfig,
) -> Result<LossBreakdown> {
    let mut graph = Graph::new();
    let loss = ppdn_loss(
        &mut graph,
        params,
        net_config,
        batch,
        opt.lambda,
        opt.mode.gating(),
        normalization,
    )?;
    graph.backward(loss.nodes.data_term)?;
    let grads = collect_grads(&graph, &loss.nodes.params)?;
    step(params, &grads, opt)?;
    Ok(loss.breakdown)
}

/// One pass over the given batches; returns the mean breakdown, or `None`
/// for an empty sequence (parameters untouched).
pub fn train_epoch(
    params: &mut NetworkParams,
    batches: &[PairBatch],
    net_config: &NetworkConfig,
    normalization: OmegaNormalization,
    opt: &OptimizerConfig,
) -> Result<Option<LossBreakdown>> {
    let mut breakdowns = Vec::with_capacity(batches.len());
    for batch in batches {
        breakdowns.push(train_step(params, batch, net_config, normalization, opt)?);
    }
    Ok(LossBreakdown::mean(&breakdowns))
}
