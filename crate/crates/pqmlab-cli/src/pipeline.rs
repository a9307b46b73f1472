//! The simulate → annotate → train → eval → validate stages.
//!
//! Every stage reads and writes declared files under the output directory
//! and records content digests in its manifest. All randomness flows from
//! per-item sub-seeds of the master seed, and parallel maps collect in
//! index order, so artifacts are byte-identical for a given seed no matter
//! how many worker threads run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use pqmlab::annotate::{annotate_record, annotation_noise_report, AnnotationConfig};
use pqmlab::corpus::{parse_corpus, serialize_corpus, CorpusRecord};
use pqmlab::eval::{
    self, AggregationMode, CandidatePool, WeightMode,
};
use pqmlab::loss::{grad_check, LossFamily, LossSpec, WrongOrder};
use pqmlab::mdp::{
    exact_q_table, sample_candidate, sample_trajectory, validate_assumption,
    validate_theorem_ranking, PolicyParams,
};
use pqmlab::scorer::{load_checkpoint, save_checkpoint, ScorerModel};
use pqmlab::shaping::shaping_equivalence_trial;
use pqmlab::train::{param_grad_check, train};
use pqmlab::trajectory::{ScoredTrajectory, StepLabels, Trajectory};
use pqmlab::{seed, Error};

use crate::config::Experiment;
use crate::manifest::Manifest;
use crate::CliError;

pub const TRAIN_CORPUS: &str = "train_corpus.jsonl";
pub const TEST_CORPUS: &str = "test_corpus.jsonl";
pub const POOLS: &str = "pools.jsonl";
pub const ANNOTATED_CORPUS: &str = "annotated_corpus.jsonl";
pub const ANNOTATE_REPORT: &str = "annotate_report.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRACE: &str = "trace.tsv";
pub const METRICS: &str = "metrics.tsv";
pub const SUMMARY: &str = "summary.json";
pub const STEP_DUMPS: &str = "step_dumps.tsv";
pub const VALIDATION_REPORT: &str = "validation_report.json";

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn say(quiet: bool, message: &str) {
    if !quiet {
        println!("{message}");
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), text)
        .map_err(|e| CliError::Config(format!("cannot write {name}: {e}")))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
    write_text(dir, name, &(text + "\n"))
}

/// Generate train/test corpora and candidate pools from the environment
/// spec, then write the stage manifest.
pub fn cmd_simulate(exp: &Experiment, quiet: bool) -> Result<(), CliError> {
    let env = &exp.env;
    let seed_value = exp.seed;
    let single = |prefix: &str, count: usize| -> Result<Vec<CorpusRecord>, CliError> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let qid = format!("{prefix}{i:06}");
                let params = env.question_params(&qid, seed_value)?;
                let (t, l) = sample_trajectory(&params, &qid, seed_value);
                Ok(CorpusRecord::new(t, l)?)
            })
            .collect()
    };
    let train_records = single("q", env.n_questions)?;
    let test_records = single("v", exp.file.eval.pool_questions)?;

    let pool_size = *exp.file.eval.ladder.last().expect("ladder validated nonempty");
    let pool_records: Vec<Vec<CorpusRecord>> = (0..exp.file.eval.pool_questions)
        .into_par_iter()
        .map(|i| -> Result<Vec<CorpusRecord>, CliError> {
            let qid = format!("p{i:06}");
            let params = env.question_params(&qid, seed_value)?;
            (0..pool_size)
                .map(|c| {
                    let (t, l) = sample_candidate(&params, &qid, c as u64, seed_value);
                    Ok(CorpusRecord::new(t, l)?)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let pool_flat: Vec<CorpusRecord> = pool_records.into_iter().flatten().collect();

    serialize_corpus(&train_records, &exp.out_dir.join(TRAIN_CORPUS))?;
    serialize_corpus(&test_records, &exp.out_dir.join(TEST_CORPUS))?;
    serialize_corpus(&pool_flat, &exp.out_dir.join(POOLS))?;

    let mut manifest = Manifest::new("simulate", seed_value, exp.config_digest.clone());
    for name in [TRAIN_CORPUS, TEST_CORPUS, POOLS] {
        manifest.record_output(&exp.out_dir, name)?;
    }
    manifest.write(&exp.out_dir)?;
    say(
        quiet,
        &format!(
            "simulate: {} train, {} test, {} pools x {} candidates -> {}",
            train_records.len(),
            test_records.len(),
            exp.file.eval.pool_questions,
            pool_size,
            exp.out_dir.display()
        ),
    );
    Ok(())
}

/// Annotate the training corpus with the configured completer and record
/// agreement statistics against ground truth.
pub fn cmd_annotate(exp: &Experiment, quiet: bool) -> Result<(), CliError> {
    let corpus_path = exp.out_dir.join(TRAIN_CORPUS);
    if !corpus_path.exists() {
        return Err(CliError::Config(format!(
            "corpus file {} not found (run simulate first)",
            corpus_path.display()
        )));
    }
    let records = parse_corpus(&corpus_path)?;
    let completer = exp.file.annotation.completer(&exp.env)?;
    let cfg = AnnotationConfig::new(
        completer,
        exp.file.annotation.k_completions,
        seed::derive_labeled(exp.seed, "annotate", &[]),
    )?
    .with_mark_after_first_error(exp.file.annotation.mark_after_first_error);

    let annotated: Vec<CorpusRecord> = records
        .par_iter()
        .map(|r| annotate_record(r, &cfg).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    serialize_corpus(&annotated, &exp.out_dir.join(ANNOTATED_CORPUS))?;

    let has_truth = !records.is_empty()
        && records.iter().all(|r| {
            r.trajectory
                .steps
                .iter()
                .all(|s| s.latent_correct.is_some())
        });
    let report = if has_truth {
        let noise = annotation_noise_report(&records, &cfg)?;
        json!({
            "k": cfg.k_completions,
            "completer": { "alpha": completer.alpha, "beta": completer.beta,
                           "preset": exp.file.annotation.completer_preset },
            "mark_after_first_error": cfg.mark_after_first_error,
            "agreement": noise.agreement,
            "agreement_std_error": noise.agreement_std_error,
            "first_error_accuracy": noise.first_error_accuracy,
            "forced_false_total": noise.forced_false_total,
            "forced_false_contradictions": noise.forced_false_contradictions,
            "overall_precision": noise.overall.precision(),
            "overall_recall": noise.overall.recall(),
        })
    } else {
        json!({
            "k": cfg.k_completions,
            "completer": { "alpha": completer.alpha, "beta": completer.beta,
                           "preset": exp.file.annotation.completer_preset },
            "mark_after_first_error": cfg.mark_after_first_error,
            "agreement": null,
        })
    };
    write_json(&exp.out_dir, ANNOTATE_REPORT, &report)?;

    let mut manifest = Manifest::new("annotate", exp.seed, exp.config_digest.clone());
    manifest.record_input(&exp.out_dir, TRAIN_CORPUS)?;
    manifest.record_output(&exp.out_dir, ANNOTATED_CORPUS)?;
    manifest.record_output(&exp.out_dir, ANNOTATE_REPORT)?;
    manifest.write(&exp.out_dir)?;
    say(
        quiet,
        &format!("annotate: {} records, k={}", annotated.len(), cfg.k_completions),
    );
    Ok(())
}

/// Train the configured scorer on the annotated corpus (the raw corpus when
/// no annotation exists) and write the checkpoint plus metric trace.
pub fn cmd_train(exp: &Experiment, quiet: bool) -> Result<(), CliError> {
    let section = exp
        .file
        .train
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [train] section".into()))?;
    let annotated = exp.out_dir.join(ANNOTATED_CORPUS);
    let raw = exp.out_dir.join(TRAIN_CORPUS);
    let corpus_file = if annotated.exists() {
        ANNOTATED_CORPUS
    } else if raw.exists() {
        TRAIN_CORPUS
    } else {
        return Err(CliError::Config(format!(
            "no corpus found at {} or {} (run simulate / annotate first)",
            annotated.display(),
            raw.display()
        )));
    };
    let records = parse_corpus(&exp.out_dir.join(corpus_file))?;
    let cfg = section.train_config(exp.seed)?;
    let model_seed = seed::derive_labeled(exp.seed, "model", &[]);
    let init = match section.model.as_str() {
        "linear" => ScorerModel::linear(pqmlab::mdp::FEATURE_DIM)?,
        _ => ScorerModel::mlp1(pqmlab::mdp::FEATURE_DIM, section.hidden_width, model_seed)?,
    };
    let (trained, trace) = train(&init, &records, &cfg)?;

    let digest = cfg.digest();
    save_checkpoint(&trained, &exp.out_dir.join(CHECKPOINT), Some(&digest))?;
    let mut tsv = String::from("step\tloss\trank_agreement\n");
    for row in &trace {
        let rank = row
            .rank_agreement
            .map(|r| r.to_string())
            .unwrap_or_default();
        tsv.push_str(&format!("{}\t{}\t{}\n", row.step, row.loss, rank));
    }
    write_text(&exp.out_dir, TRACE, &tsv)?;

    let mut manifest = Manifest::new("train", exp.seed, exp.config_digest.clone());
    manifest.record_input(&exp.out_dir, corpus_file)?;
    manifest.record_output(&exp.out_dir, CHECKPOINT)?;
    manifest.record_output(&exp.out_dir, TRACE)?;
    manifest.write(&exp.out_dir)?;
    let last = trace.last().expect("trace has at least the step-0 row");
    say(
        quiet,
        &format!(
            "train: {} on {} ({} records, {} steps) -> loss {:.6}",
            cfg.loss.family.name(),
            corpus_file,
            records.len(),
            cfg.steps,
            last.loss
        ),
    );
    Ok(())
}

fn group_pools(records: Vec<CorpusRecord>) -> Vec<(String, Vec<CorpusRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<CorpusRecord>> = BTreeMap::new();
    for record in records {
        let qid = record.trajectory.question_id.clone();
        if !groups.contains_key(&qid) {
            order.push(qid.clone());
        }
        groups.entry(qid).or_default().push(record);
    }
    order
        .into_iter()
        .map(|qid| {
            let records = groups.remove(&qid).expect("grouped");
            (qid, records)
        })
        .collect()
}

fn scored_pool(
    records: &[CorpusRecord],
    mode: AggregationMode,
    score_fn: impl Fn(usize, &CorpusRecord) -> Result<Vec<f64>, CliError>,
) -> Result<CandidatePool, CliError> {
    let candidates = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let scores = score_fn(i, r)?;
            let scored = ScoredTrajectory::new(r.trajectory.question_id.clone(), scores, mode)?;
            Ok((r.trajectory.clone(), scored))
        })
        .collect::<Result<Vec<(Trajectory, ScoredTrajectory)>, CliError>>()?;
    Ok(CandidatePool::new(candidates)?)
}

fn oracle_scores(record: &CorpusRecord, params: &PolicyParams) -> Result<Vec<f64>, CliError> {
    let table = exact_q_table(params);
    let labels: Vec<bool> = record
        .trajectory
        .steps
        .iter()
        .map(|s| {
            s.latent_correct.ok_or_else(|| {
                CliError::Config(format!(
                    "pool candidate of {} lacks latent ground truth; the oracle scorer needs it",
                    record.trajectory.question_id
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    StepLabels::new(labels)
        .map(|l| table.raw_scores(&l))
        .map_err(CliError::from)
}

fn random_scores(record: &CorpusRecord, eval_seed: u64, candidate: usize) -> Vec<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed::derive_labeled(
        eval_seed,
        &record.trajectory.question_id,
        &[0x72616e64, candidate as u64],
    ));
    (0..record.trajectory.horizon())
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect()
}

/// Evaluate the checkpointed scorer plus the exact-oracle and random
/// reference scorers over the candidate pools.
pub fn cmd_eval(exp: &Experiment, quiet: bool) -> Result<(), CliError> {
    let pools_path = exp.out_dir.join(POOLS);
    if !pools_path.exists() {
        return Err(CliError::Config(format!(
            "pool file {} not found (run simulate first)",
            pools_path.display()
        )));
    }
    let checkpoint_path = exp.out_dir.join(CHECKPOINT);
    if !checkpoint_path.exists() {
        return Err(CliError::Config(format!(
            "checkpoint {} not found (run train first)",
            checkpoint_path.display()
        )));
    }
    let model = load_checkpoint(&checkpoint_path)?;
    let grouped = group_pools(parse_corpus(&pools_path)?);
    if grouped.is_empty() {
        return Err(CliError::Config("pool file holds no candidates".into()));
    }
    let ladder = &exp.file.eval.ladder;
    let pool_size = grouped[0].1.len();
    if *ladder.last().expect("nonempty") > pool_size {
        return Err(CliError::Config(format!(
            "eval ladder reaches n={} but pools hold {} candidates",
            ladder.last().unwrap(),
            pool_size
        )));
    }
    let eval_seed = seed::derive_labeled(exp.seed, "eval", &[]);

    struct MethodPools {
        name: &'static str,
        pools: Vec<CandidatePool>,
    }
    let model_ref = &model;
    let build = |name: &'static str,
                 mode: AggregationMode,
                 kind: u8|
     -> Result<MethodPools, CliError> {
        let pools = grouped
            .par_iter()
            .map(|(qid, records)| {
                let params = exp.env.question_params(qid, exp.seed)?;
                scored_pool(records, mode, |i, r| match kind {
                    0 => Ok(model_ref.score_steps(&r.trajectory)?),
                    1 => oracle_scores(r, &params),
                    _ => Ok(random_scores(r, eval_seed, i)),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(MethodPools { name, pools })
    };
    let methods = vec![
        build("prm_min", AggregationMode::Min, 0)?,
        build("prm_last", AggregationMode::Last, 0)?,
        build("oracle_min", AggregationMode::Min, 1)?,
        build("random_min", AggregationMode::Min, 2)?,
    ];

    let mut rows: Vec<(String, usize, f64)> = Vec::new();
    for method in &methods {
        let report = eval::bon_report(&method.pools, ladder, eval_seed)?;
        for (&n, &acc) in report.ladder.iter().zip(&report.accuracy) {
            rows.push((method.name.to_string(), n, acc));
        }
    }
    let prm_pools = &methods[0].pools;
    for &n in ladder {
        let mut pass_hits = 0usize;
        let mut sc_hits = 0usize;
        let mut fused_hits = 0usize;
        for pool in prm_pools {
            let s = eval::pool_seed(eval_seed, &pool.question_id);
            pass_hits += usize::from(eval::pass_at_n(pool, n, s)?);
            sc_hits += usize::from(eval::self_consistency(pool, n, s)?.1);
            fused_hits += usize::from(eval::sc_with_prm(pool, n, s, WeightMode::ScoreSum)?.1);
        }
        let total = prm_pools.len() as f64;
        rows.push(("pass_at_n".to_string(), n, pass_hits as f64 / total));
        rows.push(("sc".to_string(), n, sc_hits as f64 / total));
        rows.push(("sc_prm".to_string(), n, fused_hits as f64 / total));
    }

    let mut tsv = String::from("method\tn\taccuracy\n");
    for (method, n, acc) in &rows {
        tsv.push_str(&format!("{method}\t{n}\t{acc}\n"));
    }
    write_text(&exp.out_dir, METRICS, &tsv)?;

    let mut dumps = String::from("question_id\tcandidate\tstep\traw_q\tsigma_q\n");
    for (qid, records) in grouped.iter().take(2) {
        for (c, record) in records.iter().take(2).enumerate() {
            for row in eval::dump_step_scores(&model, &record.trajectory)? {
                dumps.push_str(&format!(
                    "{qid}\t{c}\t{}\t{}\t{}\n",
                    row.step, row.raw_q, row.sigma_q
                ));
            }
        }
    }
    write_text(&exp.out_dir, STEP_DUMPS, &dumps)?;

    let methods_json: BTreeMap<String, BTreeMap<String, f64>> = {
        let mut m: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (method, n, acc) in &rows {
            m.entry(method.clone())
                .or_default()
                .insert(format!("{n}"), *acc);
        }
        m
    };
    let summary = json!({
        "seed": exp.seed,
        "eval_seed": eval_seed,
        "ladder": ladder,
        "pools": grouped.len(),
        "pool_size": pool_size,
        "sc_prm_weight_mode": "score_sum",
        "orm_stand_in": "prm_last scores only the final step",
        "methods": methods_json,
    });
    write_json(&exp.out_dir, SUMMARY, &summary)?;

    let mut manifest = Manifest::new("eval", exp.seed, exp.config_digest.clone());
    manifest.record_input(&exp.out_dir, POOLS)?;
    manifest.record_input(&exp.out_dir, CHECKPOINT)?;
    for name in [METRICS, SUMMARY, STEP_DUMPS] {
        manifest.record_output(&exp.out_dir, name)?;
    }
    manifest.write(&exp.out_dir)?;
    say(
        quiet,
        &format!("eval: {} pools, ladder {:?}", grouped.len(), ladder),
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Run the validation battery: assumption estimates vs the exact oracle,
/// theorem ranking sweeps, shaping equivalence, and the gradient checks.
/// Returns overall pass/fail after writing the report.
pub fn cmd_validate(exp: &Experiment, quiet: bool) -> Result<bool, CliError> {
    use rand::Rng;
    use rand::SeedableRng;
    let v = &exp.file.validate;
    let mut results: Vec<CheckResult> = Vec::new();
    let vseed = seed::derive_labeled(exp.seed, "validate", &[]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(vseed);

    // Oracle equivalence: closed-form recursion vs exhaustive enumeration.
    {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let alpha: f64 = rng.random();
            let beta: f64 = rng.random_range(0.0..=alpha);
            let horizon = rng.random_range(1..=12);
            let params = PolicyParams::new(alpha, beta, horizon, 0.0, 1)?;
            let table = exact_q_table(&params);
            for t in 0..=horizon {
                for correct in [true, false] {
                    if t == 0 && !correct {
                        continue;
                    }
                    let exact = if t == 0 {
                        table.v_root
                    } else {
                        table.q_sigma(t, correct)
                    };
                    let brute = pqmlab::mdp::brute_force_q(&params, t, correct)?;
                    worst = worst.max((exact - brute).abs());
                }
            }
        }
        results.push(check(
            "oracle_equivalence",
            worst < 1e-12,
            format!("max |recursion - enumeration| = {worst:.3e} over 50 regimes"),
        ));
    }

    // Assumption validation on the configured environment.
    let probe = exp.env.question_params("validate-probe", exp.seed)?;
    {
        let report = validate_assumption(&probe, v.assumption_states, v.assumption_rollouts, vseed)?;
        let dev = report.max_sigma_deviation();
        results.push(check(
            "assumption",
            report.within(v.assumption_sigma),
            format!(
                "max deviation {dev:.2} sigma (limit {}), alpha={} beta={}",
                v.assumption_sigma, probe.alpha, probe.beta
            ),
        ));
    }

    // Theorem ranking on the configured environment.
    {
        let mut violations = 0usize;
        let mut refusal: Option<String> = None;
        for _ in 0..v.theorem_patterns {
            let labels: Vec<bool> = (0..probe.horizon).map(|_| rng.random::<bool>()).collect();
            match validate_theorem_ranking(&probe, &StepLabels::new(labels)?) {
                Ok(found) => violations += found.len(),
                Err(e) => {
                    refusal = Some(e.to_string());
                    break;
                }
            }
        }
        match refusal {
            Some(reason) => results.push(check("theorem_env", false, reason)),
            None => results.push(check(
                "theorem_env",
                violations == 0,
                format!(
                    "{violations} violations over {} random label patterns",
                    v.theorem_patterns
                ),
            )),
        }
    }

    // Theorem ranking sweep over random assumption-satisfying regimes.
    {
        let mut violations = 0usize;
        for _ in 0..v.theorem_regimes {
            let alpha = rng.random_range(0.7..0.99);
            let beta = rng.random_range(0.01..0.3);
            let horizon = rng.random_range(2..=8);
            let params = PolicyParams::new(alpha, beta, horizon, 0.0, 1)?;
            for _ in 0..v.theorem_patterns {
                let labels: Vec<bool> = (0..horizon).map(|_| rng.random::<bool>()).collect();
                violations += validate_theorem_ranking(&params, &StepLabels::new(labels)?)?.len();
            }
        }
        results.push(check(
            "theorem_sweep",
            violations == 0,
            format!(
                "{violations} violations over {} regimes x {} patterns",
                v.theorem_regimes, v.theorem_patterns
            ),
        ));
    }

    // Potential shaping leaves optimal action sets unchanged.
    {
        let mut failures = 0usize;
        for i in 0..v.shaping_trials {
            let n_states = rng.random_range(5..=50);
            let n_actions = rng.random_range(2..=5);
            let horizon = rng.random_range(1..=6);
            if !shaping_equivalence_trial(
                n_states,
                n_actions,
                horizon,
                seed::derive(vseed, &[7, i as u64]),
            )? {
                failures += 1;
            }
        }
        results.push(check(
            "shaping_equivalence",
            failures == 0,
            format!("{failures} failures over {} random MDPs", v.shaping_trials),
        ));
    }

    // Loss-level gradient battery over every family.
    {
        let mut worst = 0.0f64;
        let mut worst_family = "";
        for family in LossFamily::ALL {
            let spec = LossSpec::new(family, 2.0)?.with_wrong_order(WrongOrder::AsWritten);
            for _ in 0..v.grad_points {
                let h = rng.random_range(2..=8usize);
                let bits: Vec<bool> = (0..h).map(|_| rng.random()).collect();
                let labels = StepLabels::new(bits)?;
                let point_len = match family {
                    LossFamily::InterPair => h + 1,
                    LossFamily::InterTree => 2 * h,
                    _ => h,
                };
                let point: Vec<f64> = (0..point_len)
                    .map(|_| rng.random_range(-3.0..3.0))
                    .collect();
                let soft: Vec<f64> = (0..h).map(|_| rng.random()).collect();
                let err = grad_check(&spec, &labels, &point, Some(&soft), 1e-5)?;
                if err > worst {
                    worst = err;
                    worst_family = family.name();
                }
            }
        }
        results.push(check(
            "grad_battery",
            worst < v.grad_tolerance,
            format!(
                "max rel error {worst:.3e} ({worst_family}), tolerance {:.1e}",
                v.grad_tolerance
            ),
        ));
    }

    // Gradient through the scorer.
    {
        let mut worst = 0.0f64;
        let families = [
            LossFamily::Bce,
            LossFamily::MseHard,
            LossFamily::MseSoft,
            LossFamily::PlVanilla,
            LossFamily::Theorem,
            LossFamily::Practical,
            LossFamily::Ablate,
        ];
        let env_params = PolicyParams::new(0.8, 0.1, 5, 0.5, 3)?;
        let ann = AnnotationConfig::new(PolicyParams::new(0.9, 0.05, 5, 0.5, 3)?, 8, vseed)?
            .with_mark_after_first_error(false);
        let batch: Vec<CorpusRecord> = (0..4)
            .map(|i| {
                let (t, l) = sample_trajectory(&env_params, &format!("g{i}"), vseed);
                annotate_record(&CorpusRecord::new(t, l)?, &ann).map_err(CliError::from)
            })
            .collect::<Result<_, _>>()?;
        let refs: Vec<&CorpusRecord> = batch.iter().collect();
        for (pi, family) in families.iter().enumerate() {
            let spec = LossSpec::new(*family, 2.0)?;
            for kind in 0..2 {
                let mut model = if kind == 0 {
                    ScorerModel::linear(pqmlab::mdp::FEATURE_DIM)?
                } else {
                    ScorerModel::mlp1(pqmlab::mdp::FEATURE_DIM, 4, vseed ^ pi as u64)?
                };
                for p in model.params.iter_mut() {
                    *p += rng.random_range(-0.5..0.5);
                }
                let err = param_grad_check(&model, &refs, &spec, 1e-6)?;
                worst = worst.max(err);
            }
        }
        results.push(check(
            "param_grad_battery",
            worst < v.param_grad_tolerance,
            format!(
                "max rel error {worst:.3e}, tolerance {:.1e}",
                v.param_grad_tolerance
            ),
        ));
    }

    let all_pass = results.iter().all(|r| r.pass);
    for r in &results {
        say(
            quiet,
            &format!("[{}] {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail),
        );
    }
    let report = json!({
        "seed": exp.seed,
        "pass": all_pass,
        "checks": results,
    });
    write_json(&exp.out_dir, VALIDATION_REPORT, &report)?;
    Ok(all_pass)
}

/// Re-hash every file recorded by the stage manifests in the output
/// directory. Returns true when everything matches.
pub fn cmd_verify_manifest(exp: &Experiment, quiet: bool) -> Result<bool, CliError> {
    let problems = crate::manifest::verify_dir(&exp.out_dir)?;
    if problems.is_empty() {
        say(quiet, "verify-manifest: all digests match");
        Ok(true)
    } else {
        for p in &problems {
            eprintln!("verify-manifest: {p}");
        }
        Ok(false)
    }
}
