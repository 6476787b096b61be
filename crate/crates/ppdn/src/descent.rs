//! Numerical verification that the suppressed update direction still
//! descends.
//!
//! With `d_i` the per-sample difference between the two branches' (normalized)
//! Ω feature vectors, define over the batch
//!
//!   A = Σ d_i · ∂f(x_nonpeak)/∂W        B = Σ d_i · ∂f(x_peak)/∂W
//!
//! so the full matching gradient is ∇J1 = 2(B − A) and the suppressed one is
//! ∇̃J1 = −2A. Their dot product obeys the identity
//!
//!   ⟨∇J1, ∇̃J1⟩ = −4⟨A,B⟩ + 4‖A‖² = 4‖A‖(‖A‖ − ‖B‖cosθ)
//!
//! which is positive — the suppressed direction descends on J1 — exactly when
//! ‖B‖cosθ < ‖A‖. Both routes to the dot product are computed here from
//! branch-gated backward passes and compared, and the same question is asked
//! of the total loss including the recognition and decay terms.

use crate::error::Result;
use crate::graph::{GateMode, Graph, NodeId};
use crate::network::{forward_pass, register_params, NetworkConfig, NetworkParams};
use crate::objective::{feature_match_loss, ppdn_loss, BranchGating, OmegaNormalization, PairBatch};
use crate::optimizer::collect_grads;

/// One instance's descent check.
#[derive(Clone, Copy, Debug)]
pub struct DescentReport {
    pub norm_a: f64,
    pub norm_b: f64,
    /// cos of the angle between A and B; 0 by convention when either is zero.
    pub cos_theta: f64,
    /// ⟨∇J1, ∇̃J1⟩ computed directly from the two gradient vectors.
    pub dot_value: f64,
    /// ‖B‖cosθ < ‖A‖ — the sufficient condition for `dot_value > 0`.
    pub condition_a8: bool,
    /// |dot_value − (−4⟨A,B⟩ + 4‖A‖²)|.
    pub identity_residual: f64,
    /// Whether the full suppressed update direction (J1 + J2 + J3 + decay)
    /// has positive inner product with the full gradient.
    pub total_loss_descent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Builds the matching loss alone, scaled by `factor`, with independent gate
/// modes on the two branches, and returns the flattened parameter gradient.
fn gated_j1_grad(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &PairBatch,
    normalization: OmegaNormalization,
    gate_nonpeak: GateMode,
    gate_peak: GateMode,
    factor: f64,
) -> Result<Vec<f64>> {
    let mut graph = Graph::new();
    let param_nodes = register_params(&mut graph, params);
    let x_nonpeak = graph.constant(batch.x_nonpeak.clone());
    let x_peak = graph.constant(batch.x_peak.clone());
    let fwd_nonpeak = forward_pass(&mut graph, &param_nodes, config, x_nonpeak)?;
    let fwd_peak = forward_pass(&mut graph, &param_nodes, config, x_peak)?;

    let gate_all = |graph: &mut Graph, feats: &[NodeId], mode: GateMode| -> Vec<NodeId> {
        feats.iter().map(|&f| graph.gate(f, mode)).collect()
    };
    let nonpeak = gate_all(&mut graph, &fwd_nonpeak.omega_features, gate_nonpeak);
    let peak = gate_all(&mut graph, &fwd_peak.omega_features, gate_peak);

    let j1 = feature_match_loss(&mut graph, &nonpeak, &peak, normalization)?;
    let loss = graph.scale(j1, factor);
    graph.forward(&Default::default())?;
    graph.backward(loss)?;
    Ok(collect_grads(&graph, &param_nodes)?.flatten())
}

/// The appendix aggregates, flattened over all parameters in fixed layer
/// order. Each comes from one backward pass through J1/2 with the opposite
/// branch gate-blocked.
pub fn compute_ab(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &PairBatch,
    normalization: OmegaNormalization,
) -> Result<(Vec<f64>, Vec<f64>)> {
    // ∂(J1/2)/∂W through the non-peak branch alone is −A.
    let mut a = gated_j1_grad(
        params,
        config,
        batch,
        normalization,
        GateMode::Open,
        GateMode::Blocked,
        0.5,
    )?;
    for v in &mut a {
        *v = -*v;
    }
    let b = gated_j1_grad(
        params,
        config,
        batch,
        normalization,
        GateMode::Blocked,
        GateMode::Open,
        0.5,
    )?;
    Ok((a, b))
}

/// Flattened gradient of the full objective's total under the given gating.
fn total_grad(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &PairBatch,
    lambda: f64,
    gating: BranchGating,
    normalization: OmegaNormalization,
) -> Result<Vec<f64>> {
    let mut graph = Graph::new();
    let loss = ppdn_loss(&mut graph, params, config, batch, lambda, gating, normalization)?;
    graph.backward(loss.nodes.total)?;
    Ok(collect_grads(&graph, &loss.nodes.params)?.flatten())
}

/// Populates every check for one (params, batch) instance.
pub fn descent_report(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &PairBatch,
    lambda: f64,
    normalization: OmegaNormalization,
) -> Result<DescentReport> {
    let (a, b) = compute_ab(params, config, batch, normalization)?;
    let norm_a = norm(&a);
    let norm_b = norm(&b);
    let cos_theta = if norm_a > 0.0 && norm_b > 0.0 {
        (dot(&a, &b) / (norm_a * norm_b)).clamp(-1.0, 1.0)
    } else {
        0.0
    };

    // Direct route: fresh unscaled J1 passes, ungated and peak-suppressed.
    let grad_full = gated_j1_grad(
        params,
        config,
        batch,
        normalization,
        GateMode::Open,
        GateMode::Open,
        1.0,
    )?;
    let grad_suppressed = gated_j1_grad(
        params,
        config,
        batch,
        normalization,
        GateMode::Open,
        GateMode::Blocked,
        1.0,
    )?;
    let dot_value = dot(&grad_full, &grad_suppressed);
    let identity_value = -4.0 * dot(&a, &b) + 4.0 * dot(&a, &a);
    let identity_residual = (dot_value - identity_value).abs();
    let condition_a8 = norm_b * cos_theta < norm_a;

    let g_none = total_grad(params, config, batch, lambda, BranchGating::None, normalization)?;
    let g_pgs = total_grad(
        params,
        config,
        batch,
        lambda,
        BranchGating::SuppressPeak,
        normalization,
    )?;
    let total_loss_descent = dot(&g_none, &g_pgs) > 0.0;

    Ok(DescentReport {
        norm_a,
        norm_b,
        cos_theta,
        dot_value,
        condition_a8,
        identity_residual,
        total_loss_descent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, Layer, NetworkParams};
    use crate::tensor::Tensor;

    fn identical_pair_batch() -> (NetworkConfig, NetworkParams, PairBatch) {
        let config = NetworkConfig::new(3, vec![4], 2);
        let params = build_network(&config, 21).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.2, -0.4, 0.9, 1.1, 0.3, -0.6]).unwrap();
        let batch = PairBatch::new(x.clone(), x, vec![0, 1], vec![0, 1]).unwrap();
        (config, params, batch)
    }

    #[test]
    fn identical_pairs_zero_both_aggregates() {
        let (config, params, batch) = identical_pair_batch();
        let (a, b) = compute_ab(&params, &config, &batch, OmegaNormalization::Concat).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        assert!(b.iter().all(|&v| v == 0.0));
        let report =
            descent_report(&params, &config, &batch, 1e-3, OmegaNormalization::Concat).unwrap();
        assert_eq!(report.norm_a, 0.0);
        assert_eq!(report.norm_b, 0.0);
        assert_eq!(report.cos_theta, 0.0);
        assert_eq!(report.dot_value, 0.0);
        assert_eq!(report.identity_residual, 0.0);
        assert!(!report.condition_a8);
    }

    #[test]
    fn linear_single_weight_matches_closed_form() {
        // One hidden unit, identity-like regime (positive preactivations),
        // no normalization: f(x) = w·x, so
        //   A = (w·xp − w·xn)·xn over the weight coordinate,
        //   B = (w·xp − w·xn)·xp, and both see ∂f/∂bias = 1.
        let config = NetworkConfig::new(1, vec![1], 2).with_omega([0]);
        let w = 0.8;
        let (xn, xp) = (0.5, 1.5);
        let params = NetworkParams {
            layers: vec![
                Layer {
                    weight: Tensor::matrix(1, 1, vec![w]).unwrap(),
                    bias: Tensor::vector(vec![0.0]),
                },
                Layer {
                    weight: Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap(),
                    bias: Tensor::vector(vec![0.0, 0.0]),
                },
            ],
        };
        let batch = PairBatch::new(
            Tensor::matrix(1, 1, vec![xn]).unwrap(),
            Tensor::matrix(1, 1, vec![xp]).unwrap(),
            vec![0],
            vec![0],
        )
        .unwrap();
        let (a, b) = compute_ab(&params, &config, &batch, OmegaNormalization::Raw).unwrap();
        let diff = w * xp - w * xn;
        // Flat layout: [w0, b0, W1 (2 entries), b1 (2 entries)].
        assert!((a[0] - diff * xn).abs() < 1e-12, "a[0] = {}", a[0]);
        assert!((a[1] - diff).abs() < 1e-12);
        assert!((b[0] - diff * xp).abs() < 1e-12);
        assert!((b[1] - diff).abs() < 1e-12);
        assert!(a[2..].iter().all(|&v| v == 0.0));
        assert!(b[2..].iter().all(|&v| v == 0.0));
    }

    fn random_instance(seed: u64) -> (NetworkConfig, NetworkParams, PairBatch) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let config = NetworkConfig::new(4, vec![5, 3], 3);
        let params = build_network(&config, seed ^ 0x5eed).unwrap();
        let n = rng.gen_range(1..5);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let batch = PairBatch::new(
            Tensor::matrix(n, 4, draw(&mut rng, n * 4)).unwrap(),
            Tensor::matrix(n, 4, draw(&mut rng, n * 4)).unwrap(),
            labels.clone(),
            labels,
        )
        .unwrap();
        (config, params, batch)
    }

    #[test]
    fn twice_b_minus_a_matches_the_ungated_matching_gradient() {
        for seed in 0..25 {
            let (config, params, batch) = random_instance(seed);
            let (a, b) = compute_ab(&params, &config, &batch, OmegaNormalization::Concat).unwrap();
            let full = gated_j1_grad(
                &params,
                &config,
                &batch,
                OmegaNormalization::Concat,
                GateMode::Open,
                GateMode::Open,
                1.0,
            )
            .unwrap();
            for ((av, bv), fv) in a.iter().zip(&b).zip(&full) {
                assert!(
                    (2.0 * (bv - av) - fv).abs() < 1e-10,
                    "seed {seed}: 2(B-A) = {}, grad = {fv}",
                    2.0 * (bv - av)
                );
            }
        }
    }

    #[test]
    fn identity_and_implication_hold_on_random_instances() {
        for seed in 0..50 {
            let (config, params, batch) = random_instance(seed);
            let report =
                descent_report(&params, &config, &batch, 2e-4, OmegaNormalization::Concat)
                    .unwrap();
            let bound = 1e-8 * report.dot_value.abs().max(1.0);
            assert!(
                report.identity_residual <= bound,
                "seed {seed}: residual {} > {bound}",
                report.identity_residual
            );
            if report.condition_a8 {
                assert!(report.dot_value > 0.0, "seed {seed}: condition held but dot = {}", report.dot_value);
            }
        }
    }

    #[test]
    fn suppressing_the_peak_branch_removes_exactly_its_contribution() {
        // ∇(none) − ∇(suppress-peak) of the total must equal 2B/N.
        for seed in 0..20 {
            let (config, params, batch) = random_instance(seed);
            let n = batch.len() as f64;
            let (_, b) = compute_ab(&params, &config, &batch, OmegaNormalization::Concat).unwrap();
            let g_none = total_grad(
                &params,
                &config,
                &batch,
                2e-4,
                BranchGating::None,
                OmegaNormalization::Concat,
            )
            .unwrap();
            let g_pgs = total_grad(
                &params,
                &config,
                &batch,
                2e-4,
                BranchGating::SuppressPeak,
                OmegaNormalization::Concat,
            )
            .unwrap();
            for ((gn, gp), bv) in g_none.iter().zip(&g_pgs).zip(&b) {
                assert!(
                    (gn - gp - 2.0 * bv / n).abs() < 1e-10,
                    "seed {seed}: {} vs {}",
                    gn - gp,
                    2.0 * bv / n
                );
            }
        }
    }
}
