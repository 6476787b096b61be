//! The six CLI commands. Each is a pure function of (config, seed) and
//! writes its artifacts under one output directory.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ppdn::network::build_network;
use ppdn::objective::BranchGating;
use ppdn::optimizer::OptMode;
use ppdn::synth::{generate_corpus, make_eval_sets, make_pairs, read_corpus, write_corpus};

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, ModeKey};
use crate::experiment::{
    compare, descent_over_batches, evaluate, grad_check_full_loss, protocol_split,
    small_check_batch, train_pairs, Protocol, RunMode, TrainError, TrainLog, EVAL_SETS,
};
use crate::report::{
    breakdown_cells, hex, per_class_cell, summary_text, write_text, BREAKDOWN_HEADER,
};
use crate::CliError;

fn resolve_out(config: &ExperimentConfig, flag: Option<PathBuf>, command: &str) -> PathBuf {
    flag.or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn train_log_csv(log: &TrainLog) -> String {
    let mut csv = format!("epoch,steps,{BREAKDOWN_HEADER}\n");
    for e in &log.epochs {
        let _ = writeln!(csv, "{},{},{}", e.epoch, e.steps, breakdown_cells(&e.mean));
    }
    csv
}

pub fn cmd_gen_data(
    config: &ExperimentConfig,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let out = resolve_out(config, out, "gen-data");
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    let corpus = generate_corpus(&config.synth_config())?;
    let path = out.join("corpus.csv");
    let mut buf = Vec::new();
    write_corpus(&mut buf, &corpus).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(&path, buf)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    write_text(
        &out.join("summary.txt"),
        &summary_text(&[
            ("command", "gen-data".into()),
            ("config_hash", hex(&config.hash())),
            ("sequences", corpus.len().to_string()),
            ("frames_per_sequence", config.synth.frames_per_sequence.to_string()),
            ("corpus", path.display().to_string()),
        ]),
    )?;
    println!(
        "wrote {} sequences to {}",
        corpus.len(),
        path.display()
    );
    Ok(())
}

pub fn cmd_train(
    config: &ExperimentConfig,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let out = resolve_out(config, out, "train");
    let mode = config.train_mode()?;
    let net = config.network_config();
    let corpus = generate_corpus(&config.synth_config())?;
    let (pairs, skipped) = make_pairs(&corpus, config.frame_policy());
    if skipped > 0 {
        eprintln!("warning: {skipped} sequences too short for the frame policy");
    }
    let mut params = build_network(&net, seed)?;
    let opt = config.optimizer_config(mode, seed);

    let outcome = train_pairs(
        &mut params,
        &pairs,
        &net,
        config.normalization(),
        &opt,
        seed,
    );
    let (log, trained_params, failure) = match outcome {
        Ok(log) => (log, params, None),
        Err(TrainError::Numerical {
            source,
            last_good,
            completed,
        }) => (completed, last_good, Some(source)),
        Err(TrainError::Other(e)) => return Err(e.into()),
    };

    write_text(&out.join("train_log.csv"), &train_log_csv(&log))?;
    let checkpoint = Checkpoint {
        config_hash: config.hash(),
        seed,
        network: net,
        params: trained_params,
    };
    checkpoint.save(&out.join("checkpoint.bin"))?;

    let final_total = log
        .final_breakdown()
        .map(|b| b.total.to_string())
        .unwrap_or_else(|| "-".into());
    write_text(
        &out.join("summary.txt"),
        &summary_text(&[
            ("command", "train".into()),
            ("mode", if mode == OptMode::Pgs { "pgs".into() } else { "sgd".into() }),
            ("seed", seed.to_string()),
            ("config_hash", hex(&config.hash())),
            ("pairs", pairs.len().to_string()),
            ("iterations", opt.iterations.to_string()),
            ("epochs_logged", log.epochs.len().to_string()),
            ("final_total", final_total),
            (
                "aborted_non_finite",
                failure.is_some().to_string(),
            ),
        ]),
    )?;
    if let Some(source) = failure {
        return Err(CliError::Numerical(format!(
            "training aborted ({source}); last good checkpoint written to {}",
            out.join("checkpoint.bin").display()
        )));
    }
    println!(
        "trained {} iterations; checkpoint at {}",
        opt.iterations,
        out.join("checkpoint.bin").display()
    );
    Ok(())
}

pub fn cmd_eval(
    checkpoint_path: &Path,
    corpus_path: &Path,
    set: &str,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if !EVAL_SETS.contains(&set) {
        return Err(CliError::Config(format!(
            "unknown evaluation set {set:?}; expected weak, peak, or combined"
        )));
    }
    let out = out.unwrap_or_else(|| PathBuf::from("runs").join("eval"));
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let file = std::fs::File::open(corpus_path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", corpus_path.display())))?;
    let corpus = read_corpus(BufReader::new(file))?;
    let sets = make_eval_sets(&corpus)?;
    let entries = match set {
        "weak" => &sets.weak,
        "peak" => &sets.peak,
        _ => &sets.combined,
    };
    let accuracy = evaluate(&checkpoint.params, &checkpoint.network, &corpus, entries)?;

    let run_id = format!("eval-{set}-s{}", checkpoint.seed);
    let mut csv = String::from("run_id,seed,fold,test_set,accuracy,correct,total,per_class_accuracy\n");
    let _ = writeln!(
        csv,
        "{run_id},{},-1,{set},{},{},{},{}",
        checkpoint.seed,
        accuracy.accuracy(),
        accuracy.correct,
        accuracy.total,
        per_class_cell(&accuracy)
    );
    write_text(&out.join("metrics.csv"), &csv)?;
    write_text(
        &out.join("summary.txt"),
        &summary_text(&[
            ("command", "eval".into()),
            ("run_id", run_id),
            ("test_set", set.into()),
            ("accuracy", accuracy.accuracy().to_string()),
            ("correct", accuracy.correct.to_string()),
            ("total", accuracy.total.to_string()),
        ]),
    )?;
    println!(
        "{set} accuracy {:.4} ({}/{})",
        accuracy.accuracy(),
        accuracy.correct,
        accuracy.total
    );
    Ok(())
}

fn mode_key_to_run(mode: ModeKey) -> RunMode {
    match mode {
        ModeKey::BaselineNoPairs => RunMode::BaselineNoPairs,
        ModeKey::Sgd => RunMode::Sgd,
        ModeKey::Pgs => RunMode::Pgs,
    }
}

pub fn build_protocol(config: &ExperimentConfig) -> Result<Protocol, CliError> {
    let corpus = generate_corpus(&config.synth_config())?;
    let split = protocol_split(&corpus, config.eval.k_folds, config.synth.seed)?;
    Ok(Protocol {
        corpus,
        split,
        net: config.network_config(),
        normalization: config.normalization(),
        policy: config.frame_policy(),
        lambda: config.objective.lambda,
        learning_rate: config.optimizer.learning_rate,
        iterations: config.optimizer.iterations,
        batch_size: config.optimizer.batch_size,
        peak_override: None,
    })
}

pub fn cmd_compare(config: &ExperimentConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    if config.eval.modes.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two modes in eval.modes".into(),
        ));
    }
    let out = resolve_out(config, out, "compare");
    let protocol = build_protocol(config)?;
    let modes: Vec<RunMode> = config.eval.modes.iter().map(|&m| mode_key_to_run(m)).collect();
    let output = compare(&protocol, &modes, &config.eval.seeds)?;

    let mut csv = format!(
        "run_id,mode,seed,fold,test_set,accuracy,correct,total,per_class_accuracy,{BREAKDOWN_HEADER}\n"
    );
    for row in &output.rows {
        for set in EVAL_SETS {
            let acc = row.set(set);
            let breakdown = row
                .final_breakdown
                .map(|b| breakdown_cells(&b))
                .unwrap_or_else(|| ",,,,".into());
            let _ = writeln!(
                csv,
                "{},{},{},{},{set},{},{},{},{},{breakdown}",
                row.run_id(),
                row.mode.name(),
                row.seed,
                row.fold,
                acc.accuracy(),
                acc.correct,
                acc.total,
                per_class_cell(acc)
            );
        }
    }
    write_text(&out.join("compare.csv"), &csv)?;

    let mut summary_csv = String::from("mode,test_set,mean_accuracy,std_accuracy\n");
    for s in &output.summaries {
        let _ = writeln!(summary_csv, "{},{},{},{}", s.mode.name(), s.set, s.mean, s.std);
    }
    write_text(&out.join("compare_summary.csv"), &summary_csv)?;

    let mut entries = vec![
        ("command", "compare".to_string()),
        ("config_hash", hex(&config.hash())),
        ("seeds", config.eval.seeds.len().to_string()),
        ("folds", protocol.split.num_folds().to_string()),
        ("ordering_ok", output.ordering_ok.to_string()),
    ];
    for (mode, mean) in &output.weak_means {
        entries.push(("weak_mean", format!("{}={}", mode.name(), mean)));
    }
    write_text(&out.join("summary.txt"), &summary_text(&entries))?;

    for s in &output.summaries {
        println!(
            "{:<18} {:<9} {:.4} ± {:.4}",
            s.mode.name(),
            s.set,
            s.mean,
            s.std
        );
    }
    if !output.ordering_ok {
        return Err(CliError::Ordering(format!(
            "weak-set ordering violated: {:?}",
            output
                .weak_means
                .iter()
                .map(|(m, a)| format!("{}={a:.4}", m.name()))
                .collect::<Vec<_>>()
        )));
    }
    println!("weak-set ordering holds (pgs >= sgd >= baseline)");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_descent_report(
    checkpoint_path: &Path,
    corpus_path: &Path,
    num_batches: usize,
    config: &ExperimentConfig,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let out = resolve_out(config, out, "descent-report");
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let file = std::fs::File::open(corpus_path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", corpus_path.display())))?;
    let corpus = read_corpus(BufReader::new(file))?;
    let (pairs, _) = make_pairs(&corpus, config.frame_policy());
    let summary = descent_over_batches(
        &checkpoint.params,
        &checkpoint.network,
        &pairs,
        config.normalization(),
        config.objective.lambda,
        num_batches,
        config.optimizer.batch_size,
        seed,
    )?;

    let mut csv = String::from(
        "batch,norm_a,norm_b,cos_theta,dot_value,condition_a8,identity_residual,total_loss_descent\n",
    );
    for (i, r) in summary.rows.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{},{},{}",
            r.norm_a,
            r.norm_b,
            r.cos_theta,
            r.dot_value,
            r.condition_a8,
            r.identity_residual,
            r.total_loss_descent
        );
    }
    write_text(&out.join("descent.csv"), &csv)?;
    write_text(
        &out.join("summary.txt"),
        &summary_text(&[
            ("command", "descent-report".into()),
            ("batches", summary.rows.len().to_string()),
            ("condition_a8_fraction", summary.condition_fraction.to_string()),
            (
                "total_loss_descent_fraction",
                summary.total_descent_fraction.to_string(),
            ),
            (
                "max_identity_residual",
                summary.max_identity_residual.to_string(),
            ),
        ]),
    )?;
    println!(
        "{} batches: condition fraction {:.3}, total-loss descent fraction {:.3}, max identity residual {:.3e}",
        summary.rows.len(),
        summary.condition_fraction,
        summary.total_descent_fraction,
        summary.max_identity_residual
    );
    Ok(())
}

pub fn cmd_grad_check(
    config: &ExperimentConfig,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let out = resolve_out(config, out, "grad-check");
    let net = config.network_config();
    if net.param_count() > 10_000 {
        return Err(CliError::Config(format!(
            "{} parameters is too many for finite differencing; keep it at or below 10000",
            net.param_count()
        )));
    }
    let corpus = generate_corpus(&config.synth_config())?;
    let batch = small_check_batch(&corpus, config.frame_policy(), 8)?;
    let params = build_network(&net, seed)?;

    let mut entries = vec![
        ("command", "grad-check".to_string()),
        ("seed", seed.to_string()),
        ("parameters", net.param_count().to_string()),
        ("batch_size", batch.len().to_string()),
        ("epsilon", "1e-5".to_string()),
        ("threshold", "1e-4".to_string()),
    ];
    let mut worst = 0.0f64;
    for (name, gating) in [
        ("none", BranchGating::None),
        ("suppress-peak", BranchGating::SuppressPeak),
    ] {
        let err = grad_check_full_loss(
            &params,
            &net,
            &batch,
            config.objective.lambda,
            config.normalization(),
            gating,
        )?;
        println!("gating {name:<13} max relative error {err:.3e}");
        entries.push(("max_rel_error", format!("{name}={err}")));
        worst = worst.max(err);
    }
    let pass = worst < 1e-4;
    entries.push(("pass", pass.to_string()));
    write_text(&out.join("summary.txt"), &summary_text(&entries))?;
    if !pass {
        return Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {worst:.3e} >= 1e-4"
        )));
    }
    println!("gradient check passed (worst {worst:.3e})");
    Ok(())
}
