//! The paired training objective.
//!
//! `ppdn_loss` assembles, on one graph: the feature-matching term over the
//! Ω layers (J1, on L2-normalized per-sample feature vectors), the two
//! recognition cross-entropies (J2 peak, J3 non-peak), and the weight-norm
//! regularizer. Gates sit between every peak-branch Ω feature and the J1
//! computation; suppressing the peak branch changes gradients only, never
//! the loss value.

use crate::error::{Error, Result};
use crate::graph::{GateMode, Graph, NodeId};
use crate::network::{forward_pass, register_params, NetworkConfig, NetworkParams, ParamNodes};
use crate::tensor::Tensor;

/// Which branch's J1 gradient contribution is suppressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchGating {
    /// Standard training: gradients flow through both branches.
    None,
    /// The peak branch's Ω features pass through blocked gates on the way
    /// into J1, so only non-peak features are driven by the matching loss.
    SuppressPeak,
}

/// Aligned (non-peak, peak) inputs with labels; the unit of training.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub x_nonpeak: Tensor,
    pub x_peak: Tensor,
    pub y_nonpeak: Vec<usize>,
    pub y_peak: Vec<usize>,
}

impl PairBatch {
    /// Builds a batch, enforcing that each row pairs samples of the same
    /// class.
    pub fn new(
        x_nonpeak: Tensor,
        x_peak: Tensor,
        y_nonpeak: Vec<usize>,
        y_peak: Vec<usize>,
    ) -> Result<Self> {
        if x_nonpeak.shape() != x_peak.shape() || x_nonpeak.shape().len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "pair inputs must be matching matrices, got {:?} and {:?}",
                x_nonpeak.shape(),
                x_peak.shape()
            )));
        }
        let n = x_nonpeak.shape()[0];
        if y_nonpeak.len() != n || y_peak.len() != n {
            return Err(Error::InvalidConfig(format!(
                "label lengths {}/{} do not match batch size {n}",
                y_nonpeak.len(),
                y_peak.len()
            )));
        }
        if let Some(row) = (0..n).find(|&i| y_nonpeak[i] != y_peak[i]) {
            return Err(Error::InvalidConfig(format!(
                "pair at row {row} mixes classes {} and {}",
                y_nonpeak[row], y_peak[row]
            )));
        }
        Ok(PairBatch {
            x_nonpeak,
            x_peak,
            y_nonpeak,
            y_peak,
        })
    }

    pub fn len(&self) -> usize {
        self.y_nonpeak.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_nonpeak.is_empty()
    }

    /// The same pairs with the two branches exchanged.
    pub fn swapped(&self) -> PairBatch {
        PairBatch {
            x_nonpeak: self.x_peak.clone(),
            x_peak: self.x_nonpeak.clone(),
            y_nonpeak: self.y_peak.clone(),
            y_peak: self.y_nonpeak.clone(),
        }
    }
}

/// How Ω features are normalized before the distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmegaNormalization {
    /// Features concatenated into one vector per sample, then normalized.
    Concat,
    /// Each layer's feature vector normalized on its own.
    PerLayer,
    /// No normalization; diagnostic use only.
    Raw,
}

/// The decomposed loss value: total = (j1 + j2 + j3)/N + lambda * reg.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub reg: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.j1 += b.j1;
            acc.j2 += b.j2;
            acc.j3 += b.j3;
            acc.reg += b.reg;
            acc.total += b.total;
            acc.lambda = b.lambda;
        }
        acc.j1 /= n;
        acc.j2 /= n;
        acc.j3 /= n;
        acc.reg /= n;
        acc.total /= n;
        Some(acc)
    }
}

/// Graph handles of an assembled pair loss.
#[derive(Clone, Debug)]
pub struct PairLossNodes {
    /// Full objective including the regularizer; differentiable.
    pub total: NodeId,
    /// `(j1 + j2 + j3)/N` — the term the training loop backpropagates; the
    /// optimizer applies the decay derivative itself.
    pub data_term: NodeId,
    pub j1: NodeId,
    pub j2: NodeId,
    pub j3: NodeId,
    pub reg: NodeId,
    pub params: ParamNodes,
}

/// An evaluated pair loss: scalar breakdown plus the graph handles.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub breakdown: LossBreakdown,
    pub nodes: PairLossNodes,
}

/// Σ over the batch of the squared distance between the two branches'
/// (normalized) Ω feature vectors. Gate nodes must already be applied by the
/// caller where suppression is wanted.
pub fn feature_match_loss(
    graph: &mut Graph,
    features_nonpeak: &[NodeId],
    features_peak: &[NodeId],
    normalization: OmegaNormalization,
) -> Result<NodeId> {
    if features_nonpeak.len() != features_peak.len() || features_nonpeak.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "feature lists must be non-empty and equal length, got {} and {}",
            features_nonpeak.len(),
            features_peak.len()
        )));
    }
    let branch = |graph: &mut Graph, feats: &[NodeId]| -> Result<NodeId> {
        match normalization {
            OmegaNormalization::Concat => {
                let cat = concat_maybe(graph, feats)?;
                graph.l2_normalize(cat)
            }
            OmegaNormalization::PerLayer => {
                let normed: Result<Vec<NodeId>> = feats
                    .iter()
                    .map(|&f| graph.l2_normalize(f))
                    .collect();
                concat_maybe(graph, &normed?)
            }
            OmegaNormalization::Raw => concat_maybe(graph, feats),
        }
    };
    let nonpeak = branch(graph, features_nonpeak)?;
    let peak = branch(graph, features_peak)?;
    graph.squared_diff_sum(peak, nonpeak)
}

fn concat_maybe(graph: &mut Graph, parts: &[NodeId]) -> Result<NodeId> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        graph.concat(parts)
    }
}

/// Assembles the full objective on `graph`, runs the forward pass, and
/// returns the evaluated breakdown. Two forward passes share one parameter
/// registration; the peak branch's Ω features pass through gates whose mode
/// follows `gating`.
pub fn ppdn_loss(
    graph: &mut Graph,
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &PairBatch,
    lambda: f64,
    gating: BranchGating,
    normalization: OmegaNormalization,
) -> Result<PairLoss> {
    config.validate()?;
    if config.omega_layers.is_empty() {
        return Err(Error::InvalidConfig(
            "omega_layers must be non-empty for the pair objective".into(),
        ));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("negative lambda {lambda}")));
    }
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty pair batch".into()));
    }

    let n = batch.len() as f64;
    let param_nodes = register_params(graph, params);

    let x_nonpeak = graph.constant(batch.x_nonpeak.clone());
    let x_peak = graph.constant(batch.x_peak.clone());
    let fwd_nonpeak = forward_pass(graph, &param_nodes, config, x_nonpeak)?;
    let fwd_peak = forward_pass(graph, &param_nodes, config, x_peak)?;

    let gate_mode = match gating {
        BranchGating::None => GateMode::Open,
        BranchGating::SuppressPeak => GateMode::Blocked,
    };
    let peak_gated: Vec<NodeId> = fwd_peak
        .omega_features
        .iter()
        .map(|&f| graph.gate(f, gate_mode))
        .collect();

    let j1 = feature_match_loss(graph, &fwd_nonpeak.omega_features, &peak_gated, normalization)?;
    let j2 = graph.softmax_cross_entropy(fwd_peak.logits, &batch.y_peak)?;
    let j3 = graph.softmax_cross_entropy(fwd_nonpeak.logits, &batch.y_nonpeak)?;

    let j12 = graph.add(j1, j2)?;
    let j123 = graph.add(j12, j3)?;
    let data_term = graph.scale(j123, 1.0 / n);

    // reg = Σ ‖W‖² over weight matrices; biases excluded.
    let mut reg: Option<NodeId> = None;
    for &(w, _) in &param_nodes.layers {
        let zero = graph.constant(Tensor::zeros(graph.entry(w).shape.clone()));
        let sq = graph.squared_diff_sum(w, zero)?;
        reg = Some(match reg {
            Some(acc) => graph.add(acc, sq)?,
            None => sq,
        });
    }
    let reg = reg.expect("network has at least one layer");
    let penalty = graph.scale(reg, lambda);
    let total = graph.add(data_term, penalty)?;

    graph.forward(&Default::default())?;

    let breakdown = LossBreakdown {
        j1: graph.scalar_value(j1),
        j2: graph.scalar_value(j2),
        j3: graph.scalar_value(j3),
        reg: graph.scalar_value(reg),
        total: graph.scalar_value(total),
        lambda,
    };
    Ok(PairLoss {
        breakdown,
        nodes: PairLossNodes {
            total,
            data_term,
            j1,
            j2,
            j3,
            reg,
            params: param_nodes,
        },
    })
}
