//! Synthetic expression-style sequences.
//!
//! Each sequence ramps a class prototype from intensity 0 to 1 on top of a
//! per-subject offset, with optional per-frame noise. Low-intensity frames of
//! different classes collapse toward the subject offset and become hard to
//! tell apart, which is exactly the hard/easy axis the pair objective needs.
//! Also provides pairing, weak/peak/combined evaluation slices,
//! subject-disjoint k-fold splitting, score-based peak auto-selection, and a
//! line-delimited corpus format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::network::{predict_proba, NetworkConfig, NetworkParams};
use crate::objective::PairBatch;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntensityRamp {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub frames_per_sequence: usize,
    pub noise_sigma: f64,
    pub subject_offset_sigma: f64,
    pub seed: u64,
    pub ramp: IntensityRamp,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_subjects == 0 || self.num_classes == 0 || self.input_dim == 0 {
            return Err(Error::InvalidConfig(
                "subjects, classes, and input_dim must be positive".into(),
            ));
        }
        if self.frames_per_sequence < 10 {
            return Err(Error::InvalidConfig(format!(
                "frames_per_sequence {} < 10; the weak window (frames 7-9) must exist",
                self.frames_per_sequence
            )));
        }
        if self.input_dim < self.num_classes + 1 {
            return Err(Error::InvalidConfig(format!(
                "input_dim {} too small; class prototypes plus a shared direction need input_dim >= num_classes + 1",
                self.input_dim
            )));
        }
        if self.noise_sigma < 0.0 || self.subject_offset_sigma < 0.0 {
            return Err(Error::InvalidConfig("sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// One subject/class sequence: frames of rising intensity, peak last.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub subject_id: usize,
    pub class_label: usize,
    pub frames: Vec<Tensor>,
    pub intensities: Vec<f64>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn peak_index(&self) -> usize {
        self.frames.len() - 1
    }
}

fn ramp_value(ramp: IntensityRamp, t: usize, total: usize) -> f64 {
    let u = t as f64 / (total - 1) as f64;
    match ramp {
        IntensityRamp::Linear => u,
        // Late-centered logistic, rescaled to hit exactly 0 and 1: the early
        // frames stay near neutral and the expression forms late in the
        // sequence.
        IntensityRamp::Sigmoid => {
            let s = |x: f64| 1.0 / (1.0 + (-10.0 * (x - 0.7)).exp());
            (s(u) - s(0.0)) / (s(1.0) - s(0.0))
        }
    }
}

/// Orthonormal vectors from seeded Gaussian draws run through Gram–Schmidt.
fn orthonormal_set(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for p in &basis {
            let proj: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(p) {
                *vi -= proj * pi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // essentially-dependent draw; take a fresh one
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    basis
}

/// Unit class prototypes, deterministic from the seed, at the 60° separation
/// floor: p_c = √½·e_c + √½·u with {e_0..e_{C-1}, u} orthonormal. The shared
/// direction u is the expression-independent part of a face — through it,
/// low-intensity frames of different classes look alike, and the intensity of
/// a frame is readable off one axis.
pub fn class_prototypes(config: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut basis = orthonormal_set(&mut rng, config.num_classes + 1, config.input_dim);
    let shared = basis.pop().expect("basis has num_classes + 1 vectors");
    let w = 0.5f64.sqrt();
    basis
        .into_iter()
        .map(|e| {
            e.iter()
                .zip(&shared)
                .map(|(ei, ui)| w * ei + w * ui)
                .collect()
        })
        .collect()
}

/// One sequence per (subject, class): frame t = intensity(t)·prototype +
/// subject offset + noise. Deterministic given the seed.
pub fn generate_corpus(config: &SynthConfig) -> Result<Vec<SequenceSample>> {
    config.validate()?;
    let prototypes = class_prototypes(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Skip past the prototype draws so offsets/noise get fresh randomness
    // while everything still hangs off the single corpus seed.
    for _ in 0..(config.num_classes + 1) * config.input_dim {
        let _: f64 = rng.sample(StandardNormal);
    }

    let offsets: Vec<Vec<f64>> = (0..config.num_subjects)
        .map(|_| {
            (0..config.input_dim)
                .map(|_| config.subject_offset_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let total = config.frames_per_sequence;
    let mut corpus = Vec::with_capacity(config.num_subjects * config.num_classes);
    for (subject, offset) in offsets.iter().enumerate() {
        for (class, prototype) in prototypes.iter().enumerate() {
            let mut frames = Vec::with_capacity(total);
            let mut intensities = Vec::with_capacity(total);
            for t in 0..total {
                let intensity = ramp_value(config.ramp, t, total);
                let data: Vec<f64> = (0..config.input_dim)
                    .map(|i| {
                        intensity * prototype[i]
                            + offset[i]
                            + config.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                frames.push(Tensor::vector(data));
                intensities.push(intensity);
            }
            corpus.push(SequenceSample {
                subject_id: subject,
                class_label: class,
                frames,
                intensities,
            });
        }
    }
    Ok(corpus)
}

/// Which non-peak frames of each sequence to pair with its peak.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FramePolicy {
    /// Every frame but the peak.
    AllNonpeak,
    /// Frames from the 7th on (1-indexed), i.e. 0-indexed 6 and later.
    FromFrame7,
}

impl FramePolicy {
    fn first_index(self) -> usize {
        match self {
            FramePolicy::AllNonpeak => 0,
            FramePolicy::FromFrame7 => 6,
        }
    }
}

/// One training pair: a non-peak frame and its sequence's peak frame.
#[derive(Clone, Debug)]
pub struct Pair {
    pub subject_id: usize,
    pub label: usize,
    pub x_nonpeak: Vec<f64>,
    pub x_peak: Vec<f64>,
}

/// Pairs every policy-window frame with the sequence's last frame. Returns
/// the pairs and the count of sequences too short for the policy window.
pub fn make_pairs(corpus: &[SequenceSample], policy: FramePolicy) -> (Vec<Pair>, usize) {
    let peaks: Vec<usize> = corpus.iter().map(|s| s.peak_index()).collect();
    make_pairs_with_peaks(corpus, policy, &peaks)
}

/// As `make_pairs`, but with an explicit peak frame per sequence (used when
/// peaks come from auto-selection instead of ground truth).
pub fn make_pairs_with_peaks(
    corpus: &[SequenceSample],
    policy: FramePolicy,
    peaks: &[usize],
) -> (Vec<Pair>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (seq, &peak) in corpus.iter().zip(peaks) {
        let start = policy.first_index();
        let window: Vec<usize> = (start..seq.len()).filter(|&t| t != peak).collect();
        if window.is_empty() || peak >= seq.len() {
            skipped += 1;
            continue;
        }
        let x_peak = seq.frames[peak].data().to_vec();
        for t in window {
            pairs.push(Pair {
                subject_id: seq.subject_id,
                label: seq.class_label,
                x_nonpeak: seq.frames[t].data().to_vec(),
                x_peak: x_peak.clone(),
            });
        }
    }
    (pairs, skipped)
}

/// Stacks pairs into one batch.
pub fn batch_from_pairs(pairs: &[Pair]) -> Result<PairBatch> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("cannot batch zero pairs".into()));
    }
    let dim = pairs[0].x_nonpeak.len();
    let mut nonpeak = Vec::with_capacity(pairs.len() * dim);
    let mut peak = Vec::with_capacity(pairs.len() * dim);
    let mut labels = Vec::with_capacity(pairs.len());
    for p in pairs {
        nonpeak.extend_from_slice(&p.x_nonpeak);
        peak.extend_from_slice(&p.x_peak);
        labels.push(p.label);
    }
    PairBatch::new(
        Tensor::matrix(pairs.len(), dim, nonpeak)?,
        Tensor::matrix(pairs.len(), dim, peak)?,
        labels.clone(),
        labels,
    )
}

/// Evaluation slices as (sequence index, frame index) lists.
#[derive(Clone, Debug)]
pub struct EvalSets {
    /// 1-indexed frames 7–9: the weakest labeled expressions.
    pub weak: Vec<(usize, usize)>,
    /// The final frame only.
    pub peak: Vec<(usize, usize)>,
    /// Frames 7 through the last.
    pub combined: Vec<(usize, usize)>,
}

pub fn make_eval_sets(corpus: &[SequenceSample]) -> Result<EvalSets> {
    let mut sets = EvalSets {
        weak: Vec::new(),
        peak: Vec::new(),
        combined: Vec::new(),
    };
    for (i, seq) in corpus.iter().enumerate() {
        let t = seq.len();
        if t < 10 {
            return Err(Error::InvalidConfig(format!(
                "sequence {i} has {t} frames; evaluation slices need at least 10"
            )));
        }
        // The paper's frame numbers are 1-indexed; frames here are 0-indexed.
        for f in 6..=8 {
            sets.weak.push((i, f));
        }
        sets.peak.push((i, t - 1));
        for f in 6..t {
            sets.combined.push((i, f));
        }
    }
    Ok(sets)
}

/// Subject-disjoint fold assignment.
#[derive(Clone, Debug)]
pub struct FoldSplit {
    assignments: BTreeMap<usize, usize>,
    num_folds: usize,
}

impl FoldSplit {
    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn fold_of(&self, subject: usize) -> Option<usize> {
        self.assignments.get(&subject).copied()
    }

    pub fn test_subjects(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .filter(|&(_, &f)| f == fold)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn train_subjects(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .filter(|&(_, &f)| f != fold)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn assignments(&self) -> &BTreeMap<usize, usize> {
        &self.assignments
    }
}

/// Shuffles subjects deterministically and deals them round-robin, so fold
/// sizes differ by at most one.
pub fn kfold_split(subject_ids: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k = {k} folds; need at least 2")));
    }
    if subject_ids.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} subjects cannot fill {k} folds",
            subject_ids.len()
        )));
    }
    let mut shuffled = subject_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let assignments = shuffled
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, i % k))
        .collect();
    Ok(FoldSplit {
        assignments,
        num_folds: k,
    })
}

/// What counts as "the prediction score" when hunting for the peak frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeakScore {
    /// Softmax probability of the sequence's ground-truth class.
    GroundTruthClass,
    /// Highest softmax probability over all classes.
    MaxOverClasses,
}

/// Picks, per sequence, the frame the scorer likes best; ties go to the
/// latest frame (intensities never decrease).
pub fn select_peaks_by(
    corpus: &[SequenceSample],
    mut score: impl FnMut(&SequenceSample, usize) -> f64,
) -> Vec<usize> {
    corpus
        .iter()
        .map(|seq| {
            let mut best = f64::NEG_INFINITY;
            let mut best_index = 0;
            for t in 0..seq.len() {
                let s = score(seq, t);
                if s >= best {
                    best = s;
                    best_index = t;
                }
            }
            best_index
        })
        .collect()
}

/// Model-driven peak selection: per sequence, the frame with the highest
/// prediction score under the trained model.
pub fn auto_select_peak(
    params: &NetworkParams,
    config: &NetworkConfig,
    corpus: &[SequenceSample],
    scoring: PeakScore,
) -> Result<Vec<usize>> {
    let mut selections = Vec::with_capacity(corpus.len());
    for seq in corpus {
        let mut data = Vec::with_capacity(seq.len() * config.input_dim);
        for frame in &seq.frames {
            data.extend_from_slice(frame.data());
        }
        let x = Tensor::matrix(seq.len(), config.input_dim, data)?;
        let probs = predict_proba(params, config, &x)?;
        let mut best = f64::NEG_INFINITY;
        let mut best_index = 0;
        for t in 0..seq.len() {
            let row = probs.row(t);
            let s = match scoring {
                PeakScore::GroundTruthClass => row[seq.class_label],
                PeakScore::MaxOverClasses => row.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            };
            if s >= best {
                best = s;
                best_index = t;
            }
        }
        selections.push(best_index);
    }
    Ok(selections)
}

/// Sorted unique subject ids present in the corpus.
pub fn corpus_subjects(corpus: &[SequenceSample]) -> Vec<usize> {
    let mut ids: Vec<usize> = corpus.iter().map(|s| s.subject_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Writes one frame per line: `subject_id,class,frame_index,intensity,v0,...`.
/// Floats use the shortest round-trippable form.
pub fn write_corpus(mut out: impl Write, corpus: &[SequenceSample]) -> std::io::Result<()> {
    writeln!(out, "# ppdn-corpus v1")?;
    writeln!(out, "# subject_id,class,frame_index,intensity,v0..v{{d-1}}")?;
    for seq in corpus {
        for (t, (frame, intensity)) in seq.frames.iter().zip(&seq.intensities).enumerate() {
            write!(
                out,
                "{},{},{},{}",
                seq.subject_id, seq.class_label, t, intensity
            )?;
            for v in frame.data() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Reads the format produced by `write_corpus`. A frame_index of 0 starts a
/// new sequence.
pub fn read_corpus(input: impl BufRead) -> Result<Vec<SequenceSample>> {
    let mut corpus: Vec<SequenceSample> = Vec::new();
    for (line_no, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::CorpusParse {
            line: line_no + 1,
            message,
        };
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() < 5 {
            return Err(parse_err(format!("expected >= 5 fields, got {}", fields.len())));
        }
        let subject_id: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(format!("subject_id: {e}")))?;
        let class_label: usize = fields[1]
            .parse()
            .map_err(|e| parse_err(format!("class: {e}")))?;
        let frame_index: usize = fields[2]
            .parse()
            .map_err(|e| parse_err(format!("frame_index: {e}")))?;
        let intensity: f64 = fields[3]
            .parse()
            .map_err(|e| parse_err(format!("intensity: {e}")))?;
        let values: Vec<f64> = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(format!("vector value: {e}")))?;

        if frame_index == 0 {
            corpus.push(SequenceSample {
                subject_id,
                class_label,
                frames: Vec::new(),
                intensities: Vec::new(),
            });
        }
        let current = corpus
            .last_mut()
            .ok_or_else(|| parse_err("first record must have frame_index 0".into()))?;
        if current.subject_id != subject_id
            || current.class_label != class_label
            || current.frames.len() != frame_index
        {
            return Err(parse_err("records out of sequence order".into()));
        }
        current.frames.push(Tensor::vector(values));
        current.intensities.push(intensity);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_config() -> SynthConfig {
        SynthConfig {
            num_subjects: 3,
            num_classes: 4,
            input_dim: 8,
            frames_per_sequence: 10,
            noise_sigma: 0.1,
            subject_offset_sigma: 0.2,
            seed: 99,
            ramp: IntensityRamp::Linear,
        }
    }

    #[test]
    fn prototypes_are_unit_and_sixty_degrees_apart() {
        let config = test_config();
        let protos = class_prototypes(&config);
        for (i, p) in protos.iter().enumerate() {
            let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-10);
            for q in protos.iter().skip(i + 1) {
                let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
                // cos 60° = 0.5, the separation floor.
                assert!((dot - 0.5).abs() < 1e-10, "dot = {dot}");
            }
        }
    }

    #[test]
    fn noiseless_frames_are_scaled_prototypes() {
        let mut config = test_config();
        config.noise_sigma = 0.0;
        config.subject_offset_sigma = 0.0;
        let corpus = generate_corpus(&config).unwrap();
        let protos = class_prototypes(&config);
        for seq in &corpus {
            let last = seq.frames.last().unwrap();
            for (v, p) in last.data().iter().zip(&protos[seq.class_label]) {
                assert!((v - p).abs() < 1e-12);
            }
            assert_eq!(seq.intensities[0], 0.0);
            assert!(seq.frames[0].data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn first_frame_is_class_independent() {
        let mut config = test_config();
        config.noise_sigma = 0.0;
        let corpus = generate_corpus(&config).unwrap();
        // intensity 0 leaves only the subject offset, shared across classes.
        let by_subject: Vec<&SequenceSample> = corpus
            .iter()
            .filter(|s| s.subject_id == 1)
            .collect();
        let first = by_subject[0].frames[0].data();
        for seq in &by_subject {
            assert_eq!(seq.frames[0].data(), first);
        }
    }

    #[test]
    fn same_seed_reproduces_the_corpus() {
        let config = test_config();
        let a = generate_corpus(&config).unwrap();
        let b = generate_corpus(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn intensities_ramp_to_one() {
        for ramp in [IntensityRamp::Linear, IntensityRamp::Sigmoid] {
            let mut config = test_config();
            config.ramp = ramp;
            let corpus = generate_corpus(&config).unwrap();
            for seq in &corpus {
                assert_eq!(seq.intensities.len(), seq.frames.len());
                assert!(seq
                    .intensities
                    .windows(2)
                    .all(|w| w[1] >= w[0]));
                assert_eq!(*seq.intensities.last().unwrap(), 1.0);
                assert_eq!(seq.intensities[0], 0.0);
            }
        }
    }

    #[test]
    fn pair_counts_match_the_policies() {
        let corpus = generate_corpus(&test_config()).unwrap();
        let sequences = corpus.len();
        let (all, skipped) = make_pairs(&corpus, FramePolicy::AllNonpeak);
        assert_eq!(skipped, 0);
        assert_eq!(all.len(), sequences * 9);
        let (weakish, skipped) = make_pairs(&corpus, FramePolicy::FromFrame7);
        assert_eq!(skipped, 0);
        assert_eq!(weakish.len(), sequences * 3);
        assert!(all.iter().all(|p| p.label < test_config().num_classes));
    }

    #[test]
    fn short_sequences_are_skipped_with_a_count() {
        let mut corpus = generate_corpus(&test_config()).unwrap();
        corpus[0].frames.truncate(5);
        corpus[0].intensities.truncate(5);
        let (_, skipped) = make_pairs(&corpus, FramePolicy::FromFrame7);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn eval_set_counts() {
        let mut config = test_config();
        config.frames_per_sequence = 12;
        let corpus = generate_corpus(&config).unwrap();
        let sets = make_eval_sets(&corpus).unwrap();
        let sequences = corpus.len();
        assert_eq!(sets.weak.len(), 3 * sequences);
        assert_eq!(sets.peak.len(), sequences);
        assert_eq!(sets.combined.len(), 6 * sequences);
        // weak and peak are disjoint for 12-frame sequences.
        assert!(sets.weak.iter().all(|e| !sets.peak.contains(e)));
        // combined = weak plus the remaining tail frames.
        for e in &sets.weak {
            assert!(sets.combined.contains(e));
        }
    }

    #[test]
    fn kfold_examples() {
        let subjects: Vec<usize> = (0..10).collect();
        let split = kfold_split(&subjects, 10, 0).unwrap();
        for fold in 0..10 {
            assert_eq!(split.test_subjects(fold).len(), 1);
        }

        let subjects: Vec<usize> = (0..23).collect();
        let split = kfold_split(&subjects, 10, 1).unwrap();
        for fold in 0..10 {
            let size = split.test_subjects(fold).len();
            assert!(size == 2 || size == 3, "fold {fold} has {size}");
        }

        let a = kfold_split(&subjects, 10, 7).unwrap();
        let b = kfold_split(&subjects, 10, 7).unwrap();
        assert_eq!(a.assignments(), b.assignments());

        assert!(kfold_split(&[1, 2, 3], 10, 0).is_err());
    }

    #[test]
    fn folds_are_subject_disjoint() {
        let subjects: Vec<usize> = (0..24).collect();
        let split = kfold_split(&subjects, 10, 3).unwrap();
        for fold in 0..10 {
            let test = split.test_subjects(fold);
            let train = split.train_subjects(fold);
            assert!(test.iter().all(|s| !train.contains(s)));
            assert_eq!(test.len() + train.len(), subjects.len());
        }
    }

    #[test]
    fn peak_selection_follows_the_score() {
        let corpus = generate_corpus(&test_config()).unwrap();
        // Oracle score = true intensity: strictly increasing ramp picks last.
        let by_intensity = select_peaks_by(&corpus, |seq, t| seq.intensities[t]);
        assert!(by_intensity
            .iter()
            .zip(&corpus)
            .all(|(&sel, seq)| sel == seq.peak_index()));
        // Constant score: tie-break selects the latest frame.
        let constant = select_peaks_by(&corpus, |_, _| 0.25);
        assert!(constant
            .iter()
            .zip(&corpus)
            .all(|(&sel, seq)| sel == seq.peak_index()));
        // Adversarial score picks the first frame.
        let negated = select_peaks_by(&corpus, |seq, t| -seq.intensities[t]);
        assert!(negated.iter().all(|&sel| sel == 0));
    }

    #[test]
    fn zero_model_ties_select_the_peak() {
        let config = test_config();
        let corpus = generate_corpus(&config).unwrap();
        let net = NetworkConfig::new(config.input_dim, vec![4], config.num_classes);
        let params = NetworkParams::zeros(&net);
        let picks = auto_select_peak(&params, &net, &corpus, PeakScore::GroundTruthClass).unwrap();
        assert!(picks
            .iter()
            .zip(&corpus)
            .all(|(&sel, seq)| sel == seq.peak_index()));
    }

    #[test]
    fn corpus_round_trips_through_the_line_format() {
        let corpus = generate_corpus(&test_config()).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &corpus).unwrap();
        let parsed = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(parsed, corpus);
    }
}
