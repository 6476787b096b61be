//! Central finite-difference checking of tape gradients.
//!
//! For every parameter entry, `(L(w+ε) - L(w-ε)) / 2ε` is compared against
//! the analytic gradient from `backward`. Perturbed re-evaluations hold the
//! outputs of blocked gates frozen at their base values, so the oracle
//! differentiates the same function the gated backward pass does.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{GateMode, Graph, NodeId, Op};
use crate::tensor::Tensor;

/// Relative-error floor: denominators are clamped to this.
const DENOM_FLOOR: f64 = 1e-8;

/// Worst relative error observed for one parameter node.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub node: NodeId,
    pub max_rel_error: f64,
}

/// Per-parameter finite-difference comparison results.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_parameter: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_parameter
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl Graph {
    fn ids_where(&self, pred: impl Fn(&Op) -> bool) -> Vec<NodeId> {
        (0..self.len())
            .map(NodeId::from_index)
            .filter(|&id| pred(&self.entry(id).op))
            .collect()
    }

    pub fn parameter_ids(&self) -> Vec<NodeId> {
        self.ids_where(|op| matches!(op, Op::Parameter))
    }

    pub fn blocked_gate_ids(&self) -> Vec<NodeId> {
        self.ids_where(|op| matches!(op, Op::Gate { mode: GateMode::Blocked }))
    }
}

/// Checks the analytic gradient of `loss` w.r.t. every parameter entry
/// against central finite differences with step `epsilon`.
pub fn grad_check(
    graph: &mut Graph,
    bindings: &HashMap<NodeId, Tensor>,
    loss: NodeId,
    epsilon: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::BadEpsilon(epsilon));
    }

    graph.forward(bindings)?;
    graph.backward(loss)?;

    let params = graph.parameter_ids();
    let analytic: Vec<Tensor> = params
        .iter()
        .map(|&p| graph.grad(p).unwrap().clone())
        .collect();

    // Blocked gates stay pinned at their base outputs during perturbation.
    let frozen: HashMap<NodeId, Tensor> = graph
        .blocked_gate_ids()
        .into_iter()
        .map(|id| (id, graph.value(id).unwrap().clone()))
        .collect();

    let mut per_parameter = Vec::with_capacity(params.len());
    for (&p, analytic_grad) in params.iter().zip(&analytic) {
        let base = graph.value(p).unwrap().clone();
        let mut worst = 0.0f64;
        for k in 0..base.numel() {
            let mut plus = base.clone();
            plus.data_mut()[k] += epsilon;
            graph.set_parameter(p, plus);
            graph.forward_with_frozen(bindings, &frozen)?;
            let l_plus = graph.scalar_value(loss);

            let mut minus = base.clone();
            minus.data_mut()[k] -= epsilon;
            graph.set_parameter(p, minus);
            graph.forward_with_frozen(bindings, &frozen)?;
            let l_minus = graph.scalar_value(loss);

            let numeric = (l_plus - l_minus) / (2.0 * epsilon);
            let a = analytic_grad.data()[k];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        graph.set_parameter(p, base);
        per_parameter.push(ParamCheck {
            node: p,
            max_rel_error: worst,
        });
    }

    // Leave the graph at its base forward/backward state.
    graph.forward(bindings)?;
    graph.backward(loss)?;

    Ok(GradCheckReport { per_parameter })
}
