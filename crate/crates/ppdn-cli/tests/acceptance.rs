//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Tests share a lock so wall-clock budgets are not
//! distorted by parallel interleaving.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppdn::descent::{compute_ab, descent_report};
use ppdn::graph::Graph;
use ppdn::network::{build_network, NetworkConfig, NetworkParams};
use ppdn::objective::{ppdn_loss, BranchGating, OmegaNormalization, PairBatch};
use ppdn::optimizer::{collect_grads, step, OptMode, OptimizerConfig};
use ppdn::synth::{generate_corpus, kfold_split, make_pairs, FramePolicy, PeakScore, SynthConfig};
use ppdn::tensor::Tensor;

use ppdn_cli::commands::build_protocol;
use ppdn_cli::config::ExperimentConfig;
use ppdn_cli::experiment::{
    compare, grad_check_full_loss, run_fold, select_peaks_cross_fold, small_check_batch, RunMode,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn random_instance(
    seed: u64,
    hidden: &[usize],
    max_batch: usize,
) -> (NetworkConfig, NetworkParams, PairBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, classes) = (5, 3);
    let config = NetworkConfig::new(dim, hidden.to_vec(), classes);
    let params = build_network(&config, seed ^ 0x00ff).unwrap();
    let n = rng.gen_range(1..=max_batch);
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.2..1.2)).collect()
    };
    let nonpeak = Tensor::matrix(n, dim, draw(n * dim)).unwrap();
    let peak = Tensor::matrix(n, dim, draw(n * dim)).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let batch = PairBatch::new(nonpeak, peak, labels.clone(), labels).unwrap();
    (config, params, batch)
}

const LAMBDA: f64 = 2e-4;

fn total_of(params: &NetworkParams, config: &NetworkConfig, batch: &PairBatch) -> f64 {
    let mut graph = Graph::new();
    ppdn_loss(
        &mut graph,
        params,
        config,
        batch,
        LAMBDA,
        BranchGating::None,
        OmegaNormalization::Concat,
    )
    .unwrap()
    .breakdown
    .total
}

fn data_grads(
    params: &NetworkParams,
    config: &NetworkConfig,
    batch: &PairBatch,
    gating: BranchGating,
) -> ppdn::optimizer::ParamGrads {
    let mut graph = Graph::new();
    let loss = ppdn_loss(
        &mut graph,
        params,
        config,
        batch,
        LAMBDA,
        gating,
        OmegaNormalization::Concat,
    )
    .unwrap();
    graph.backward(loss.nodes.data_term).unwrap();
    collect_grads(&graph, &loss.nodes.params).unwrap()
}

#[test]
fn acceptance_1_gradient_fidelity() {
    let _guard = serial();
    let start = Instant::now();
    let mut worst = 0.0f64;
    // Up to two hidden layers, both gating modes, batches up to 8; plus the
    // default-sized network from the stock experiment config.
    let mut cases: Vec<(NetworkConfig, NetworkParams, PairBatch)> = vec![
        random_instance(1, &[6], 8),
        random_instance(2, &[8, 5], 8),
        random_instance(3, &[4, 4], 2),
    ];
    {
        let config = ExperimentConfig::default();
        let corpus = generate_corpus(&config.synth_config()).unwrap();
        let batch = small_check_batch(&corpus, FramePolicy::FromFrame7, 8).unwrap();
        let net = config.network_config();
        let params = build_network(&net, 11).unwrap();
        cases.push((net, params, batch));
    }
    for (i, (net, params, batch)) in cases.iter().enumerate() {
        for gating in [BranchGating::None, BranchGating::SuppressPeak] {
            let err = grad_check_full_loss(
                params,
                net,
                batch,
                LAMBDA,
                OmegaNormalization::Concat,
                gating,
            )
            .unwrap();
            assert!(
                err < 1e-4,
                "case {i} gating {gating:?}: max relative error {err}"
            );
            worst = worst.max(err);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient fidelity took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 1 gradient-fidelity: PASS (worst rel err {worst:.2e}, {elapsed:.1}s)"
    );
}

#[test]
fn acceptance_2_gating_forward_invariance() {
    let _guard = serial();
    for seed in 0..100 {
        let (config, params, batch) = random_instance(seed, &[6, 4], 6);
        let total = |gating| {
            let mut graph = Graph::new();
            ppdn_loss(
                &mut graph,
                &params,
                &config,
                &batch,
                LAMBDA,
                gating,
                OmegaNormalization::Concat,
            )
            .unwrap()
            .breakdown
            .total
        };
        let open = total(BranchGating::None);
        let blocked = total(BranchGating::SuppressPeak);
        assert_eq!(
            open.to_bits(),
            blocked.to_bits(),
            "seed {seed}: {open} vs {blocked}"
        );
    }
    println!("ACCEPTANCE 2 gating-forward-invariance: PASS (100/100 bitwise identical)");
}

#[test]
fn acceptance_3_pgs_sgd_decomposition() {
    let _guard = serial();
    let gamma = 0.05;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (config, params, batch) = random_instance(seed ^ 0x3000, &[6, 4], 6);
        let n = batch.len() as f64;
        let opt = |mode| OptimizerConfig {
            learning_rate: gamma,
            lambda: LAMBDA,
            mode,
            iterations: 1,
            batch_size: batch.len(),
        };
        let mut w_sgd = params.clone();
        step(
            &mut w_sgd,
            &data_grads(&params, &config, &batch, BranchGating::None),
            &opt(OptMode::Sgd),
        )
        .unwrap();
        let mut w_pgs = params.clone();
        step(
            &mut w_pgs,
            &data_grads(&params, &config, &batch, BranchGating::SuppressPeak),
            &opt(OptMode::Pgs),
        )
        .unwrap();

        let (_, b) = compute_ab(&params, &config, &batch, OmegaNormalization::Concat).unwrap();
        for ((pgs, sgd), bv) in w_pgs.flatten().iter().zip(w_sgd.flatten()).zip(&b) {
            let expected = gamma * 2.0 * bv / n;
            let residual = ((pgs - sgd) - expected).abs();
            assert!(
                residual <= 1e-10,
                "seed {seed}: one-step difference {} vs gamma/N * peak term {expected}",
                pgs - sgd
            );
            worst = worst.max(residual);
        }
    }
    println!(
        "ACCEPTANCE 3 pgs-sgd-decomposition: PASS (100 instances, worst residual {worst:.2e})"
    );
}

#[test]
fn acceptance_4_appendix_identity_and_implication() {
    let _guard = serial();
    let mut max_scaled_residual = 0.0f64;
    let mut condition_count = 0;
    for seed in 0..500 {
        let (config, params, batch) = random_instance(seed ^ 0x4000, &[5, 4], 6);
        let report =
            descent_report(&params, &config, &batch, LAMBDA, OmegaNormalization::Concat).unwrap();
        let bound = 1e-8 * report.dot_value.abs().max(1.0);
        assert!(
            report.identity_residual <= bound,
            "seed {seed}: identity residual {} exceeds {bound}",
            report.identity_residual
        );
        max_scaled_residual = max_scaled_residual
            .max(report.identity_residual / report.dot_value.abs().max(1.0));
        if report.condition_a8 {
            condition_count += 1;
            assert!(
                report.dot_value > 0.0,
                "seed {seed}: condition held but dot-value = {}",
                report.dot_value
            );
        }
    }
    println!(
        "ACCEPTANCE 4 appendix-identity-implication: PASS (500 instances, \
         max scaled residual {max_scaled_residual:.2e}, condition held on {condition_count}, 0 violations)"
    );
}

#[test]
fn acceptance_5_descent_behavior() {
    let _guard = serial();
    let mut successes = 0;
    let trials = 200;
    for seed in 0..trials {
        let (config, params, batch) = random_instance(seed ^ 0x5000, &[6, 4], 6);
        let grads = data_grads(&params, &config, &batch, BranchGating::SuppressPeak);
        let before = total_of(&params, &config, &batch);
        let mut gamma = 1e-2;
        let mut decreased = false;
        while gamma > 1e-12 {
            let mut candidate = params.clone();
            let opt = OptimizerConfig {
                learning_rate: gamma,
                lambda: LAMBDA,
                mode: OptMode::Pgs,
                iterations: 1,
                batch_size: batch.len(),
            };
            step(&mut candidate, &grads, &opt).unwrap();
            if total_of(&candidate, &config, &batch) < before {
                decreased = true;
                break;
            }
            gamma /= 2.0;
        }
        if decreased {
            successes += 1;
        }
    }
    let fraction = successes as f64 / trials as f64;
    assert!(
        fraction >= 0.95,
        "single PGS step decreased the loss in only {successes}/{trials} trials"
    );
    println!(
        "ACCEPTANCE 5 descent-behavior: PASS ({successes}/{trials} trials decreased, fraction {fraction:.3})"
    );
}

#[test]
fn acceptance_6_ordering_replication() {
    let _guard = serial();
    let start = Instant::now();
    let config = ExperimentConfig::default();
    assert_eq!(config.synth.num_subjects, 24);
    assert_eq!(config.synth.num_classes, 6);
    assert_eq!(config.synth.frames_per_sequence, 12);
    assert_eq!(config.eval.k_folds, 10);
    assert_eq!(config.eval.seeds.len(), 5);

    let protocol = build_protocol(&config).unwrap();
    let modes = [RunMode::BaselineNoPairs, RunMode::Sgd, RunMode::Pgs];
    let output = compare(&protocol, &modes, &config.eval.seeds).unwrap();
    let weak = |mode: RunMode| -> f64 {
        output
            .weak_means
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|&(_, a)| a)
            .unwrap()
    };
    let (base, sgd, pgs) = (
        weak(RunMode::BaselineNoPairs),
        weak(RunMode::Sgd),
        weak(RunMode::Pgs),
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        pgs >= sgd && sgd >= base,
        "weak-set ordering violated: pgs {pgs:.4}, sgd {sgd:.4}, baseline {base:.4}"
    );
    assert!(
        pgs - base >= 0.02,
        "pgs-baseline gap {:.4} below 2 percentage points",
        pgs - base
    );
    assert!(elapsed < 900.0, "comparison took {elapsed:.0}s");
    println!(
        "ACCEPTANCE 6 ordering-replication: PASS (weak means pgs {pgs:.4} >= sgd {sgd:.4} >= baseline {base:.4}, gap {:.1}pp, {elapsed:.0}s)",
        (pgs - base) * 100.0
    );
}

#[test]
fn acceptance_7_omega_placement_ablation() {
    let _guard = serial();
    let config = ExperimentConfig::default();
    let seeds = &config.eval.seeds;
    let weak_mean_for = |omega: BTreeSet<usize>| -> f64 {
        let mut cfg = config.clone();
        cfg.network.omega_layers = omega;
        let protocol = build_protocol(&cfg).unwrap();
        let output = compare(&protocol, &[RunMode::Pgs], seeds).unwrap();
        output.weak_means[0].1
    };
    let both = weak_mean_for([0, 1].into_iter().collect());
    let first = weak_mean_for([0].into_iter().collect());
    let last = weak_mean_for([1].into_iter().collect());
    // Matching on both late layers must hold up against either single
    // placement, with 1pp tolerance for desk-scale variance.
    assert!(
        both >= first - 0.01,
        "both layers {both:.4} fell more than 1pp below first-layer-only {first:.4}"
    );
    assert!(
        both >= last - 0.01,
        "both layers {both:.4} fell more than 1pp below last-layer-only {last:.4}"
    );
    println!(
        "ACCEPTANCE 7 omega-placement-ablation: PASS (both {both:.4}, first-only {first:.4}, last-only {last:.4})"
    );
}

#[test]
fn acceptance_8_peak_auto_selection() {
    let _guard = serial();
    // Near-noiseless corpus: tiny frame noise, modest subject offsets.
    let mut config = ExperimentConfig::default();
    config.synth.noise_sigma = 0.01;
    config.synth.subject_offset_sigma = 0.05;
    let protocol = build_protocol(&config).unwrap();

    // Peaks picked per fold by a baseline trained on the other folds.
    let picks = select_peaks_cross_fold(&protocol, PeakScore::GroundTruthClass, 17).unwrap();
    let hits = picks
        .iter()
        .zip(&protocol.corpus)
        .filter(|(&sel, seq)| sel == seq.peak_index())
        .count();
    let hit_fraction = hits as f64 / protocol.corpus.len() as f64;
    assert!(
        hit_fraction >= 0.9,
        "auto-selection picked the final frame in only {hits}/{} sequences",
        protocol.corpus.len()
    );

    // Pair training with auto-selected peaks vs ground-truth peaks.
    let seeds = [0u64, 1];
    let folds = protocol.split.num_folds();
    let mean_weak = |protocol: &ppdn_cli::experiment::Protocol| -> f64 {
        let mut accs = Vec::new();
        for &seed in &seeds {
            for fold in 0..folds {
                let result = run_fold(protocol, RunMode::Pgs, 0, seed, fold).unwrap();
                accs.push(result.weak.accuracy());
            }
        }
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    let with_truth = mean_weak(&protocol);
    let mut auto_protocol = protocol;
    auto_protocol.peak_override = Some(picks);
    let with_auto = mean_weak(&auto_protocol);
    assert!(
        (with_auto - with_truth).abs() <= 0.02,
        "auto-peak weak accuracy {with_auto:.4} differs from ground-truth {with_truth:.4} by more than 2pp"
    );
    println!(
        "ACCEPTANCE 8 peak-auto-selection: PASS (final-frame rate {hit_fraction:.3}, weak acc auto {with_auto:.4} vs truth {with_truth:.4})"
    );
}

#[test]
fn acceptance_9_protocol_invariants() {
    let _guard = serial();
    let mut pairs_checked = 0usize;
    for seed in 0..20 {
        let synth = SynthConfig {
            num_subjects: 12,
            num_classes: 4,
            input_dim: 8,
            frames_per_sequence: 11,
            noise_sigma: 0.2,
            subject_offset_sigma: 0.4,
            seed,
            ramp: ppdn::synth::IntensityRamp::Linear,
        };
        let corpus = generate_corpus(&synth).unwrap();
        let subjects = ppdn::synth::corpus_subjects(&corpus);
        let split = kfold_split(&subjects, 4, seed).unwrap();
        for fold in 0..4 {
            let test = split.test_subjects(fold);
            let train = split.train_subjects(fold);
            assert!(
                test.iter().all(|s| !train.contains(s)),
                "seed {seed} fold {fold}: subject leak"
            );
            assert_eq!(test.len() + train.len(), subjects.len());
        }
        for policy in [FramePolicy::AllNonpeak, FramePolicy::FromFrame7] {
            let (pairs, skipped) = make_pairs(&corpus, policy);
            assert_eq!(skipped, 0);
            // Batch construction enforces the class-equality invariant.
            let batch = ppdn::synth::batch_from_pairs(&pairs).unwrap();
            assert_eq!(batch.y_nonpeak, batch.y_peak);
            pairs_checked += pairs.len();
        }
    }
    println!(
        "ACCEPTANCE 9 protocol-invariants: PASS (20 seeds, {pairs_checked} pairs, 0 violations)"
    );
}
