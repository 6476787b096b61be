//! Experiment machinery behind the CLI: seeded training loops, the
//! single-image baseline, subject-disjoint fold runs, optimizer comparison,
//! descent reporting, and full-loss gradient checking.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ppdn::descent::{descent_report, DescentReport};
use ppdn::error::Error;
use ppdn::gradcheck::grad_check;
use ppdn::graph::Graph;
use ppdn::network::{
    build_network, forward_pass, logits_for, register_params, NetworkConfig, NetworkParams,
};
use ppdn::objective::{
    ppdn_loss, BranchGating, LossBreakdown, OmegaNormalization, PairBatch,
};
use ppdn::optimizer::{collect_grads, step, train_step, OptMode, OptimizerConfig};
use ppdn::synth::{
    batch_from_pairs, corpus_subjects, kfold_split, make_eval_sets, make_pairs,
    make_pairs_with_peaks, FoldSplit, FramePolicy, Pair, SequenceSample,
};
use ppdn::tensor::Tensor;

/// What gets trained in a comparison slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunMode {
    /// Single images, cross-entropy only.
    BaselineNoPairs,
    /// Pair objective, both J1 branches backpropagated.
    Sgd,
    /// Pair objective, peak branch suppressed.
    Pgs,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::BaselineNoPairs => "baseline-no-pairs",
            RunMode::Sgd => "sgd",
            RunMode::Pgs => "pgs",
        }
    }
}

/// Mean loss over the batches of one epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossBreakdown,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn final_breakdown(&self) -> Option<LossBreakdown> {
        self.epochs.last().map(|e| e.mean)
    }

    pub fn first_breakdown(&self) -> Option<LossBreakdown> {
        self.epochs.first().map(|e| e.mean)
    }
}

/// Training failure carrying the most recent good parameter snapshot.
#[derive(Debug)]
pub enum TrainError {
    Numerical {
        source: Error,
        last_good: NetworkParams,
        completed: TrainLog,
    },
    Other(Error),
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Error {
        match e {
            TrainError::Numerical { source, .. } => source,
            TrainError::Other(source) => source,
        }
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::NonFiniteUpdate { .. })
}

fn epoch_shuffle_seed(shuffle_seed: u64, epoch: usize) -> u64 {
    shuffle_seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn shuffle_indices(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Runs `opt.iterations` pair-batch steps, reshuffling the pair list each
/// epoch. Returns per-epoch mean breakdowns; on a numerical failure the
/// epoch-start parameter snapshot rides along.
pub fn train_pairs(
    params: &mut NetworkParams,
    pairs: &[Pair],
    net: &NetworkConfig,
    normalization: OmegaNormalization,
    opt: &OptimizerConfig,
    shuffle_seed: u64,
) -> Result<TrainLog, TrainError> {
    let mut log = TrainLog::default();
    if pairs.is_empty() || opt.iterations == 0 {
        return Ok(log);
    }
    let mut steps_done = 0;
    let mut epoch = 0;
    while steps_done < opt.iterations {
        let snapshot = params.clone();
        let order = shuffle_indices(pairs.len(), epoch_shuffle_seed(shuffle_seed, epoch));
        let mut breakdowns = Vec::new();
        for chunk in order.chunks(opt.batch_size) {
            if steps_done >= opt.iterations {
                break;
            }
            let selected: Vec<Pair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let result = batch_from_pairs(&selected)
                .and_then(|batch| train_step(params, &batch, net, normalization, opt));
            match result {
                Ok(breakdown) => breakdowns.push(breakdown),
                Err(e) if is_numerical(&e) => {
                    return Err(TrainError::Numerical {
                        source: e,
                        last_good: snapshot,
                        completed: log,
                    })
                }
                Err(e) => return Err(TrainError::Other(e)),
            }
            steps_done += 1;
        }
        if let Some(mean) = LossBreakdown::mean(&breakdowns) {
            log.epochs.push(EpochStats {
                epoch,
                steps: breakdowns.len(),
                mean,
            });
        }
        epoch += 1;
    }
    Ok(log)
}

/// A single frame with its class label, for baseline training and eval.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub x: Vec<f64>,
    pub label: usize,
}

/// The frames a baseline model trains on: the same policy window the pair
/// trainer mines for non-peak frames, plus the peak frame, each once.
pub fn baseline_images(corpus: &[SequenceSample], policy: FramePolicy) -> Vec<LabeledImage> {
    let start = match policy {
        FramePolicy::AllNonpeak => 0,
        FramePolicy::FromFrame7 => 6,
    };
    let mut images = Vec::new();
    for seq in corpus {
        for t in start.min(seq.len().saturating_sub(1))..seq.len() {
            images.push(LabeledImage {
                x: seq.frames[t].data().to_vec(),
                label: seq.class_label,
            });
        }
    }
    images
}

fn cross_entropy_step(
    params: &mut NetworkParams,
    images: &[LabeledImage],
    net: &NetworkConfig,
    opt: &OptimizerConfig,
) -> Result<LossBreakdown, Error> {
    let n = images.len();
    let dim = net.input_dim;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for image in images {
        data.extend_from_slice(&image.x);
        labels.push(image.label);
    }
    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, params);
    let x = graph.constant(Tensor::matrix(n, dim, data)?);
    let result = forward_pass(&mut graph, &nodes, net, x)?;
    let ce = graph.softmax_cross_entropy(result.logits, &labels)?;
    let data_term = graph.scale(ce, 1.0 / n as f64);
    graph.forward(&HashMap::new())?;
    let ce_value = graph.scalar_value(ce);
    graph.backward(data_term)?;
    let grads = collect_grads(&graph, &nodes)?;
    step(params, &grads, opt)?;

    let reg: f64 = params
        .layers
        .iter()
        .map(|l| l.weight.data().iter().map(|w| w * w).sum::<f64>())
        .sum();
    Ok(LossBreakdown {
        j1: 0.0,
        j2: 0.0,
        j3: ce_value,
        reg,
        total: ce_value / n as f64 + opt.lambda * reg,
        lambda: opt.lambda,
    })
}

/// Cross-entropy-only training on single images.
pub fn train_baseline(
    params: &mut NetworkParams,
    images: &[LabeledImage],
    net: &NetworkConfig,
    opt: &OptimizerConfig,
    shuffle_seed: u64,
) -> Result<TrainLog, TrainError> {
    let mut log = TrainLog::default();
    if images.is_empty() || opt.iterations == 0 {
        return Ok(log);
    }
    let mut steps_done = 0;
    let mut epoch = 0;
    while steps_done < opt.iterations {
        let snapshot = params.clone();
        let order = shuffle_indices(images.len(), epoch_shuffle_seed(shuffle_seed, epoch));
        let mut breakdowns = Vec::new();
        for chunk in order.chunks(opt.batch_size) {
            if steps_done >= opt.iterations {
                break;
            }
            let selected: Vec<LabeledImage> =
                chunk.iter().map(|&i| images[i].clone()).collect();
            match cross_entropy_step(params, &selected, net, opt) {
                Ok(b) => breakdowns.push(b),
                Err(e) if is_numerical(&e) => {
                    return Err(TrainError::Numerical {
                        source: e,
                        last_good: snapshot,
                        completed: log,
                    })
                }
                Err(e) => return Err(TrainError::Other(e)),
            }
            steps_done += 1;
        }
        if let Some(mean) = LossBreakdown::mean(&breakdowns) {
            log.epochs.push(EpochStats {
                epoch,
                steps: breakdowns.len(),
                mean,
            });
        }
        epoch += 1;
    }
    Ok(log)
}

/// Accuracy of single-frame inference over the given (sequence, frame)
/// entries.
#[derive(Clone, Debug)]
pub struct SetAccuracy {
    pub correct: usize,
    pub total: usize,
    /// Per class: (correct, total).
    pub per_class: Vec<(usize, usize)>,
}

impl SetAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

pub fn evaluate(
    params: &NetworkParams,
    net: &NetworkConfig,
    corpus: &[SequenceSample],
    entries: &[(usize, usize)],
) -> Result<SetAccuracy, Error> {
    assert!(!entries.is_empty(), "evaluation set must be non-empty");
    let dim = net.input_dim;
    let mut data = Vec::with_capacity(entries.len() * dim);
    let mut labels = Vec::with_capacity(entries.len());
    for &(seq, frame) in entries {
        data.extend_from_slice(corpus[seq].frames[frame].data());
        labels.push(corpus[seq].class_label);
    }
    let logits = logits_for(params, net, &Tensor::matrix(entries.len(), dim, data)?)?;
    let mut per_class = vec![(0usize, 0usize); net.num_classes];
    let mut correct = 0;
    for (row, &label) in labels.iter().enumerate() {
        let scores = logits.row(row);
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        per_class[label].1 += 1;
        if best == label {
            per_class[label].0 += 1;
            correct += 1;
        }
    }
    Ok(SetAccuracy {
        correct,
        total: labels.len(),
        per_class,
    })
}

/// Everything one fold run needs besides (mode, seed, fold).
#[derive(Clone, Debug)]
pub struct Protocol {
    pub corpus: Vec<SequenceSample>,
    pub split: FoldSplit,
    pub net: NetworkConfig,
    pub normalization: OmegaNormalization,
    pub policy: FramePolicy,
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Peak frame override per corpus sequence (auto-selection experiments).
    pub peak_override: Option<Vec<usize>>,
}

impl Protocol {
    pub fn optimizer(&self, mode: OptMode) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            mode,
            iterations: self.iterations,
            batch_size: self.batch_size,
        }
    }

    fn filtered(&self, subjects: &[usize]) -> (Vec<SequenceSample>, Vec<usize>) {
        let mut seqs = Vec::new();
        let mut peaks = Vec::new();
        for (i, seq) in self.corpus.iter().enumerate() {
            if subjects.contains(&seq.subject_id) {
                seqs.push(seq.clone());
                peaks.push(match &self.peak_override {
                    Some(p) => p[i],
                    None => seq.peak_index(),
                });
            }
        }
        (seqs, peaks)
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub mode: RunMode,
    pub mode_index: usize,
    pub seed: u64,
    pub fold: usize,
    pub weak: SetAccuracy,
    pub peak: SetAccuracy,
    pub combined: SetAccuracy,
    pub final_breakdown: Option<LossBreakdown>,
}

impl FoldResult {
    pub fn run_id(&self) -> String {
        format!(
            "m{}-{}-s{}-f{}",
            self.mode_index,
            self.mode.name(),
            self.seed,
            self.fold
        )
    }

    pub fn set(&self, name: &str) -> &SetAccuracy {
        match name {
            "weak" => &self.weak,
            "peak" => &self.peak,
            "combined" => &self.combined,
            _ => panic!("unknown evaluation set {name}"),
        }
    }
}

fn mix_seeds(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x0100_0000_01b3).wrapping_add(fold as u64 + 1)
}

/// Trains one mode on the fold's training subjects and evaluates the three
/// test slices on the held-out subjects.
pub fn run_fold(
    protocol: &Protocol,
    mode: RunMode,
    mode_index: usize,
    seed: u64,
    fold: usize,
) -> Result<FoldResult, Error> {
    let (train_seqs, train_peaks) = protocol.filtered(&protocol.split.train_subjects(fold));
    let (test_seqs, _) = protocol.filtered(&protocol.split.test_subjects(fold));

    let mut params = build_network(&protocol.net, seed)?;
    let shuffle_seed = mix_seeds(seed, fold);
    let log = match mode {
        RunMode::BaselineNoPairs => {
            let images = baseline_images(&train_seqs, protocol.policy);
            train_baseline(
                &mut params,
                &images,
                &protocol.net,
                &protocol.optimizer(OptMode::Sgd),
                shuffle_seed,
            )?
        }
        RunMode::Sgd | RunMode::Pgs => {
            let opt_mode = if mode == RunMode::Sgd {
                OptMode::Sgd
            } else {
                OptMode::Pgs
            };
            let (pairs, _skipped) =
                make_pairs_with_peaks(&train_seqs, protocol.policy, &train_peaks);
            train_pairs(
                &mut params,
                &pairs,
                &protocol.net,
                protocol.normalization,
                &protocol.optimizer(opt_mode),
                shuffle_seed,
            )?
        }
    };

    let sets = make_eval_sets(&test_seqs)?;
    Ok(FoldResult {
        mode,
        mode_index,
        seed,
        fold,
        weak: evaluate(&params, &protocol.net, &test_seqs, &sets.weak)?,
        peak: evaluate(&params, &protocol.net, &test_seqs, &sets.peak)?,
        combined: evaluate(&params, &protocol.net, &test_seqs, &sets.combined)?,
        final_breakdown: log.final_breakdown(),
    })
}

pub const EVAL_SETS: [&str; 3] = ["weak", "peak", "combined"];

#[derive(Clone, Debug)]
pub struct ModeSetSummary {
    pub mode: RunMode,
    pub mode_index: usize,
    pub set: &'static str,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug)]
pub struct CompareOutput {
    pub rows: Vec<FoldResult>,
    pub summaries: Vec<ModeSetSummary>,
    /// Weak-set mean accuracy per compared mode entry.
    pub weak_means: Vec<(RunMode, f64)>,
    pub ordering_ok: bool,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every (mode, seed, fold) combination from identical per-seed
/// initializations, in parallel, and aggregates accuracies.
pub fn compare(
    protocol: &Protocol,
    modes: &[RunMode],
    seeds: &[u64],
) -> Result<CompareOutput, Error> {
    let folds = protocol.split.num_folds();
    let mut tasks = Vec::new();
    for (mode_index, &mode) in modes.iter().enumerate() {
        for &seed in seeds {
            for fold in 0..folds {
                tasks.push((mode_index, mode, seed, fold));
            }
        }
    }
    let mut rows = tasks
        .into_par_iter()
        .map(|(mode_index, mode, seed, fold)| run_fold(protocol, mode, mode_index, seed, fold))
        .collect::<Result<Vec<_>, Error>>()?;
    rows.sort_by_key(|r| (r.mode_index, r.seed, r.fold));

    let mut summaries = Vec::new();
    let mut weak_means = Vec::new();
    for (mode_index, &mode) in modes.iter().enumerate() {
        for set in EVAL_SETS {
            // Mean over folds per seed, then mean/std across seeds.
            let per_seed: Vec<f64> = seeds
                .iter()
                .map(|&seed| {
                    let accs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.mode_index == mode_index && r.seed == seed)
                        .map(|r| r.set(set).accuracy())
                        .collect();
                    accs.iter().sum::<f64>() / accs.len() as f64
                })
                .collect();
            let (mean, std) = mean_and_std(&per_seed);
            if set == "weak" {
                weak_means.push((mode, mean));
            }
            summaries.push(ModeSetSummary {
                mode,
                mode_index,
                set,
                mean,
                std,
            });
        }
    }

    let weak_of = |m: RunMode| -> Option<f64> {
        weak_means
            .iter()
            .filter(|(mode, _)| *mode == m)
            .map(|&(_, acc)| acc)
            .reduce(f64::min)
    };
    let mut ordering_ok = true;
    if let (Some(pgs), Some(sgd)) = (weak_of(RunMode::Pgs), weak_of(RunMode::Sgd)) {
        ordering_ok &= pgs >= sgd;
    }
    if let (Some(sgd), Some(base)) = (weak_of(RunMode::Sgd), weak_of(RunMode::BaselineNoPairs)) {
        ordering_ok &= sgd >= base;
    }
    if let (Some(pgs), Some(base)) = (weak_of(RunMode::Pgs), weak_of(RunMode::BaselineNoPairs)) {
        ordering_ok &= pgs >= base;
    }

    Ok(CompareOutput {
        rows,
        summaries,
        weak_means,
        ordering_ok,
    })
}

/// Splits the corpus subjects into k folds, seeded by the corpus seed so all
/// modes and training seeds share the same folds.
pub fn protocol_split(corpus: &[SequenceSample], k: usize, seed: u64) -> Result<FoldSplit, Error> {
    kfold_split(&corpus_subjects(corpus), k, seed)
}

/// Peak selection without ground truth: each fold's sequences get their peak
/// frames picked by a baseline trained on the other folds, so no sequence is
/// scored by a model that saw its subject.
pub fn select_peaks_cross_fold(
    protocol: &Protocol,
    scoring: ppdn::synth::PeakScore,
    seed: u64,
) -> Result<Vec<usize>, Error> {
    let folds = protocol.split.num_folds();
    let mut picks = vec![0usize; protocol.corpus.len()];
    for fold in 0..folds {
        let (train_seqs, _) = protocol.filtered(&protocol.split.train_subjects(fold));
        let mut params = build_network(&protocol.net, seed)?;
        let images = baseline_images(&train_seqs, protocol.policy);
        train_baseline(
            &mut params,
            &images,
            &protocol.net,
            &protocol.optimizer(OptMode::Sgd),
            mix_seeds(seed, fold),
        )?;
        let held_out = protocol.split.test_subjects(fold);
        let scored: Vec<(usize, &SequenceSample)> = protocol
            .corpus
            .iter()
            .enumerate()
            .filter(|(_, s)| held_out.contains(&s.subject_id))
            .collect();
        let sequences: Vec<SequenceSample> =
            scored.iter().map(|(_, s)| (*s).clone()).collect();
        let selected =
            ppdn::synth::auto_select_peak(&params, &protocol.net, &sequences, scoring)?;
        for ((index, _), pick) in scored.iter().zip(selected) {
            picks[*index] = pick;
        }
    }
    Ok(picks)
}

/// Descent reports over batches sampled from the pair list.
pub struct DescentSummary {
    pub rows: Vec<DescentReport>,
    pub condition_fraction: f64,
    pub total_descent_fraction: f64,
    pub max_identity_residual: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn descent_over_batches(
    params: &NetworkParams,
    net: &NetworkConfig,
    pairs: &[Pair],
    normalization: OmegaNormalization,
    lambda: f64,
    num_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<DescentSummary, Error> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no pairs to sample batches from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let take = batch_size.min(pairs.len());
        let mut selected = Vec::with_capacity(take);
        let mut order = shuffle_indices(pairs.len(), rng.gen());
        order.truncate(take);
        for i in order {
            selected.push(pairs[i].clone());
        }
        let batch = batch_from_pairs(&selected)?;
        rows.push(descent_report(params, net, &batch, lambda, normalization)?);
    }
    let n = rows.len() as f64;
    let condition_fraction = rows.iter().filter(|r| r.condition_a8).count() as f64 / n;
    let total_descent_fraction = rows.iter().filter(|r| r.total_loss_descent).count() as f64 / n;
    let max_identity_residual = rows
        .iter()
        .map(|r| r.identity_residual)
        .fold(0.0, f64::max);
    Ok(DescentSummary {
        rows,
        condition_fraction,
        total_descent_fraction,
        max_identity_residual,
    })
}

/// Max relative finite-difference error of the full objective under one
/// gating mode.
pub fn grad_check_full_loss(
    params: &NetworkParams,
    net: &NetworkConfig,
    batch: &PairBatch,
    lambda: f64,
    normalization: OmegaNormalization,
    gating: BranchGating,
) -> Result<f64, Error> {
    let mut graph = Graph::new();
    let loss = ppdn_loss(&mut graph, params, net, batch, lambda, gating, normalization)?;
    let report = grad_check(&mut graph, &HashMap::new(), loss.nodes.total, 1e-5)?;
    Ok(report.max_rel_error())
}

/// First `n` pairs of the corpus as one batch, for gradient checking.
pub fn small_check_batch(
    corpus: &[SequenceSample],
    policy: FramePolicy,
    n: usize,
) -> Result<PairBatch, Error> {
    let (pairs, _) = make_pairs(corpus, policy);
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("corpus yields no pairs".into()));
    }
    let take = n.min(pairs.len());
    batch_from_pairs(&pairs[..take])
}
