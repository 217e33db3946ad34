use std::collections::BTreeMap;
use std::fs;

use serde::Serialize;
use serde_json::{json, Value};

use semgain::belief::{check_axioms, check_propositions, UncertaintyFunctional};
use semgain::cluster::build_partition;
use semgain::experiments::{
    evidence_combination, sensitivity_curve, SensitivityConfig, SensitivityReport, SyntheticAnswerGenerator,
    TwoHopGenerator,
};
use semgain::grpo::GrpoConfig;
use semgain::numeric::{median, ols_slope, spearman};
use semgain::oracle::{EntailmentJudge, NormalizedMatchOracle};
use semgain::records::{read_sensitivity, read_training_log, write_sensitivity, write_training_log, write_trajectories};
use semgain::reward::{compute_ig, composite_reward, estimate_belief, estimate_step_ig_detailed, ContextEstimate, IgConfig};
use semgain::rollout::{run_group, score_trajectory, RolloutConfig, SemanticIgEstimator, Trajectory};
use semgain::sample::ContextTag;
use semgain::seeds;
use semgain::text::exact_match;
use semgain::toy::{toy_train, BeliefIgEstimator, ToyBandit, TrainingRecord};

use crate::args::{
    Cli, ClusterArgs, CombineArgs, Command, GrpoToyArgs, IgArgs, PropsArgs, ReportArgs, RolloutArgs, SensitivityArgs,
    SimulateSuite,
};
use crate::error::CliError;
use crate::oracles::{self, SeededPolicy};
use crate::run::{read_manifest, sha256_hex, Artifact, Outcome};

type Result<T> = std::result::Result<T, CliError>;

const SENSITIVITY_QUESTION: &str = "Which answer?";

pub fn dispatch(command: &Command) -> Result<Outcome> {
    match command {
        Command::Cluster(a) => cluster(a),
        Command::Ig(a) => ig(a),
        Command::Simulate(a) => match &a.suite {
            SimulateSuite::Props(p) => props(p),
        },
        Command::Rollout(a) => rollout(a),
        Command::GrpoToy(a) => grpo_toy(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Combine(a) => combine(a),
        Command::Report(a) => report(a),
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn jsonl(write: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), semgain::records::RecordError>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn cluster(a: &ClusterArgs) -> Result<Outcome> {
    let samples = oracles::load_samples(&a.samples)?;
    let judge = oracles::judge(&a.oracle, &a.endpoint)?;
    let partition = build_partition(&samples, &judge, &a.question, a.tau)?;
    let members: Vec<Vec<&str>> = partition
        .classes
        .iter()
        .map(|c| c.iter().map(|i| samples[*i].text.as_str()).collect())
        .collect();
    let view = json!({
        "num_samples": partition.num_samples(),
        "num_classes": partition.num_classes(),
        "tau": partition.tau,
        "classes": partition.classes,
        "labels": partition.labels(),
        "class_logmass": partition.class_logmass,
        "members": members,
    });
    Ok(Outcome {
        stdout: pretty(&view)?,
        artifacts: vec![Artifact::json("partition.json", &view)?],
        ..Outcome::default()
    })
}

fn context_view(c: &ContextEstimate) -> Value {
    json!({
        "num_samples": c.samples.len(),
        "classes": c.partition.classes,
        "probs": c.distribution.probs,
        "golden_index": c.distribution.golden_index,
        "golden_ambiguous": c.golden_ambiguous,
    })
}

fn ig(a: &IgArgs) -> Result<Outcome> {
    let cfg = a.ig.config();
    cfg.validate()?;
    let judge = oracles::judge(&a.oracle, &a.endpoint)?;
    let mut artifacts = Vec::new();
    let (prior, posterior) = match (&a.samples, &a.generator) {
        (Some(path), _) => {
            let (b, c): (Vec<_>, Vec<_>) = oracles::load_samples(path)?
                .into_iter()
                .partition(|s| s.context == ContextTag::Prior);
            if b.is_empty() || c.is_empty() {
                return Err(CliError::invalid(format!(
                    "{}: need samples for both contexts (B: {}, C: {})",
                    path.display(),
                    b.len(),
                    c.len()
                )));
            }
            let prior = estimate_belief(b, &a.question, &a.golden, &judge, &cfg)?;
            let posterior = estimate_belief(c, &a.question, &a.golden, &judge, &cfg)?;
            (prior, posterior)
        }
        (None, Some(spec)) => {
            let generator = oracles::generator(spec, &a.endpoint)?;
            let seed = a.seed.ok_or_else(|| CliError::invalid("--generator requires --seed"))?;
            let est =
                estimate_step_ig_detailed(&a.question, &a.evidence, &a.golden, generator.as_ref(), &judge, &cfg, seed)?;
            // the drawn samples let the run be replayed offline with fixed:<samples.jsonl>
            let drawn: Vec<_> = est.prior.samples.iter().chain(&est.posterior.samples).cloned().collect();
            artifacts.push(Artifact::new("samples.jsonl", jsonl(|w| semgain::records::write_samples(w, &drawn))?));
            (est.prior, est.posterior)
        }
        (None, None) => return Err(CliError::invalid("one of --samples or --generator is required")),
    };
    let result = compute_ig(&prior.distribution, &posterior.distribution, &cfg);
    artifacts.push(Artifact::new(
        "rewards.jsonl",
        jsonl(|w| semgain::records::write_jsonl(w, std::slice::from_ref(&result)))?,
    ));
    let view = json!({
        "result": result,
        "prior": context_view(&prior),
        "posterior": context_view(&posterior),
    });
    Ok(Outcome {
        stdout: pretty(&view)?,
        artifacts,
        seed: a.seed,
        ..Outcome::default()
    })
}

fn props(a: &PropsArgs) -> Result<Outcome> {
    if a.trials == 0 {
        return Err(CliError::invalid("--trials must be >= 1"));
    }
    let u = UncertaintyFunctional::Shannon;
    let axioms = check_axioms(u, a.trials, seeds::derive(a.seed, 0));
    let propositions = check_propositions(u, a.trials, a.horizon, a.max_dim, seeds::derive(a.seed, 1))?;
    let checks = json!({
        "minimality": axioms.minimality == 0.0,
        "axioms": axioms.passes(a.tol),
        "non_negativity": propositions.non_negativity_holds(a.tol),
        "telescoping": propositions.telescoping_holds(a.tol),
        "monotonicity": propositions.monotonicity_holds(a.tol),
    });
    let all_pass = checks.as_object().is_some_and(|m| m.values().all(|v| v == &Value::Bool(true)));
    let view = json!({
        "tolerance": a.tol,
        "axioms": axioms,
        "propositions": propositions,
        "checks": checks,
        "all_pass": all_pass,
    });
    Ok(Outcome {
        stdout: pretty(&view)?,
        artifacts: vec![Artifact::json("props.json", &view)?],
        seed: Some(a.seed),
        failure: (!all_pass).then(|| "property checks failed".to_owned()),
    })
}

fn rollout(a: &RolloutArgs) -> Result<Outcome> {
    let cfg = RolloutConfig {
        max_turns: a.max_turns,
        top_k: a.top_k,
        max_observation_chars: a.max_observation_chars,
        group_size: a.group_size,
        max_invalid_retries: a.max_invalid_retries,
    };
    cfg.validate()?;
    let ig_cfg = a.ig.config();
    ig_cfg.validate()?;
    let env = oracles::env(&a.env, &a.endpoint)?;
    let source = oracles::policy(&a.policy, &a.endpoint)?;
    let results = run_group(
        |i| SeededPolicy {
            source: source.clone(),
            temperature: a.policy_temperature,
            seed: seeds::derive_path(a.seed, &[0, i as u64]),
        },
        |_| env.clone(),
        &a.question,
        &cfg,
    );
    let mut trajectories = results.into_iter().collect::<std::result::Result<Vec<Trajectory>, _>>()?;

    let mut unscored_steps = 0;
    match (&a.golden, &a.generator) {
        (Some(golden), Some(spec)) => {
            let generator = oracles::generator(spec, &a.endpoint)?;
            let judge = oracles::judge(&a.oracle, &a.endpoint)?;
            for (i, t) in trajectories.iter_mut().enumerate() {
                let estimator = SemanticIgEstimator {
                    sampler: generator.as_ref(),
                    judge: &judge,
                    cfg: ig_cfg.clone(),
                    seed: seeds::derive_path(a.seed, &[1, i as u64]),
                };
                *t = score_trajectory(t, golden, &estimator, ig_cfg.lambda);
                unscored_steps += t.search_steps().filter(|s| s.ig.is_none()).count();
            }
        }
        (Some(golden), None) => {
            for t in &mut trajectories {
                t.em = t.predicted.as_deref().map_or(0, |p| exact_match(p, golden));
                t.composite = composite_reward(t.em, &[], ig_cfg.lambda);
            }
        }
        (None, _) => {}
    }
    if unscored_steps > 0 {
        eprintln!("warning: {unscored_steps} search step(s) could not be scored and were left out of the reward");
    }

    let summary: Vec<Value> = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            json!({
                "index": i,
                "turns": t.len(),
                "searches": t.search_steps().count(),
                "predicted": t.predicted,
                "em": t.em,
                "step_igs": t.step_igs,
                "composite": t.composite,
                "truncated_by_max_turns": t.truncated_by_max_turns,
                "exhausted_invalid_retries": t.exhausted_invalid_retries,
            })
        })
        .collect();
    Ok(Outcome {
        stdout: pretty(&json!({ "trajectories": summary, "unscored_steps": unscored_steps }))?,
        artifacts: vec![Artifact::new(
            "trajectory.jsonl",
            jsonl(|w| write_trajectories(w, &trajectories))?,
        )],
        seed: Some(a.seed),
        ..Outcome::default()
    })
}

#[derive(Debug, Serialize)]
struct SeedRun {
    seed: u64,
    steps_to_threshold: Option<usize>,
    peak_entropy: f64,
    final_entropy: f64,
    final_em: f64,
    final_p_informative: f64,
}

fn seed_run(seed: u64, initial_entropy: f64, records: &[TrainingRecord], threshold: f64) -> SeedRun {
    let last = records.last();
    SeedRun {
        seed,
        steps_to_threshold: records.iter().find(|r| r.p_informative > threshold).map(|r| r.step),
        peak_entropy: records.iter().map(|r| r.entropy).fold(initial_entropy, f64::max),
        final_entropy: last.map_or(initial_entropy, |r| r.entropy),
        final_em: last.map_or(f64::NAN, |r| r.em),
        final_p_informative: last.map_or(f64::NAN, |r| r.p_informative),
    }
}

/// Median number of updates to the threshold; runs that never reach it count
/// as `budget + 1`.
fn median_steps(runs: &[SeedRun], budget: usize) -> f64 {
    let steps: Vec<f64> = runs
        .iter()
        .map(|r| r.steps_to_threshold.unwrap_or(budget + 1) as f64)
        .collect();
    median(&steps)
}

fn grpo_toy(a: &GrpoToyArgs) -> Result<Outcome> {
    let cfg = GrpoConfig {
        clip_eps: a.clip_eps,
        kl_coef: a.kl_coef,
        group_size: a.group_size,
        learning_rate: a.learning_rate,
        steps: a.steps,
        ..GrpoConfig::default()
    };
    cfg.validate()?;
    let mut lambdas = vec![a.lambda];
    if !a.no_baseline && a.baseline_lambda != a.lambda {
        lambdas.push(a.baseline_lambda);
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CliError::invalid(format!("lambda {l} must be finite and >= 0")));
    }
    let seed_list = a.seed_list();
    if seed_list.is_empty() {
        return Err(CliError::invalid("--seeds must be >= 1"));
    }

    let bandit = ToyBandit::standard();
    let estimator = BeliefIgEstimator::new(bandit.clone());
    let mut artifacts = Vec::new();
    let mut per_lambda = Vec::new();
    for &lambda in &lambdas {
        let mut runs = Vec::new();
        for &seed in &seed_list {
            let log = toy_train(&bandit, &estimator, &cfg, lambda, seed)?;
            artifacts.push(Artifact::new(
                format!("training_log_lambda{lambda}_seed{seed}.csv"),
                jsonl(|w| write_training_log(w, &log.records))?,
            ));
            runs.push(seed_run(seed, log.initial_entropy, &log.records, a.threshold));
        }
        per_lambda.push(json!({
            "lambda": lambda,
            "reached": runs.iter().filter(|r| r.steps_to_threshold.is_some()).count(),
            "median_steps_to_threshold": median_steps(&runs, a.steps),
            "runs": runs,
        }));
    }
    let summary = json!({
        "threshold": a.threshold,
        "steps": a.steps,
        "seeds": seed_list,
        "initial_probs": semgain::toy::initial_probs(&bandit),
        "results": per_lambda,
    });
    artifacts.push(Artifact::json("summary.json", &summary)?);
    Ok(Outcome {
        stdout: pretty(&summary)?,
        artifacts,
        seed: seed_list.first().copied(),
        ..Outcome::default()
    })
}

fn curve_stats(ms: &[usize], maes: &[f64]) -> Value {
    let x: Vec<f64> = ms.iter().map(|m| *m as f64).collect();
    let ratio = match (ms.iter().position(|m| *m == 4), ms.iter().position(|m| *m == 12)) {
        (Some(i4), Some(i12)) => Some(maes[i12] / maes[i4]),
        _ => None,
    };
    json!({
        "spearman": spearman(&x, maes),
        "loglog_slope": ols_slope(&x.iter().map(|v| v.ln()).collect::<Vec<_>>(), &maes.iter().map(|v| v.ln()).collect::<Vec<_>>()),
        "mae_ratio_12_over_4": ratio,
    })
}

fn sensitivity_summary(reports: &[SensitivityReport]) -> Value {
    let ms: Vec<usize> = reports[0].rows.iter().map(|r| r.m).collect();
    let per_seed: Vec<Value> = reports
        .iter()
        .map(|r| {
            let maes: Vec<f64> = r.rows.iter().map(|row| row.mae).collect();
            json!({ "seed": r.seed, "stats": curve_stats(&ms, &maes) })
        })
        .collect();
    let mean_mae: Vec<f64> = (0..ms.len())
        .map(|j| reports.iter().map(|r| r.rows[j].mae).sum::<f64>() / reports.len() as f64)
        .collect();
    json!({
        "closed_form": reports[0].closed_form,
        "per_seed": per_seed,
        "mean_curve": { "m": ms, "mae": mean_mae, "stats": curve_stats(&ms, &mean_mae) },
    })
}

fn sensitivity(a: &SensitivityArgs) -> Result<Outcome> {
    if a.seeds == 0 {
        return Err(CliError::invalid("--seeds must be >= 1"));
    }
    let mut generator = SyntheticAnswerGenerator::with_classes(a.prior.clone(), a.posterior.clone())?;
    generator.noise = a.noise;
    generator.validate()?;
    let cfg = SensitivityConfig {
        m_grid: a.m_grid.clone(),
        oracle_n: a.oracle_n,
        bootstrap_reps: a.bootstrap,
        ig: IgConfig {
            variant: a.variant.into(),
            mass_mode: a.mass_mode.into(),
            tau: a.tau,
            ..IgConfig::default()
        },
    };
    let judge = EntailmentJudge::new(std::sync::Arc::new(NormalizedMatchOracle));
    let reports = (0..a.seeds)
        .map(|k| sensitivity_curve(&generator, SENSITIVITY_QUESTION, &judge, &cfg, a.seed + k))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let summary = sensitivity_summary(&reports);
    Ok(Outcome {
        stdout: pretty(&summary)?,
        artifacts: vec![
            Artifact::new("sensitivity.csv", jsonl(|w| write_sensitivity(w, &reports))?),
            Artifact::json("sensitivity_summary.json", &summary)?,
        ],
        seed: Some(a.seed),
        ..Outcome::default()
    })
}

fn combine(a: &CombineArgs) -> Result<Outcome> {
    let generator = TwoHopGenerator::bridge();
    let cfg = IgConfig {
        samples_per_context: a.samples_per_context,
        variant: a.variant.into(),
        mass_mode: a.mass_mode.into(),
        ..IgConfig::default()
    };
    let judge = EntailmentJudge::new(std::sync::Arc::new(NormalizedMatchOracle));
    let r = evidence_combination(
        &a.question,
        &generator.doc_a,
        &generator.doc_b,
        generator.golden(),
        &generator,
        &judge,
        &cfg,
        a.reps,
        a.seed,
    )?;
    let summary = json!({
        "golden": r.golden,
        "reps": r.reps.len(),
        "a_only": r.a_only,
        "b_only": r.b_only,
        "sum": r.sum,
        "combined": r.combined,
        "combined_exceeds_sum": r.combined.median > r.sum.median,
    });
    Ok(Outcome {
        stdout: pretty(&summary)?,
        artifacts: vec![Artifact::json("combination.json", &r)?],
        seed: Some(a.seed),
        ..Outcome::default()
    })
}

fn report(a: &ReportArgs) -> Result<Outcome> {
    let manifest = read_manifest(&a.run)?;
    let mut problems = Vec::new();

    let mut digests = Vec::new();
    let mut contents = BTreeMap::new();
    for entry in &manifest.artifacts {
        let path = a.run.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let ok = sha256_hex(&bytes) == entry.sha256;
        if !ok {
            problems.push(format!("{} does not match its recorded digest", entry.path));
        }
        digests.push(json!({ "path": entry.path, "digest_ok": ok }));
        if !ok {
            continue;
        }

        if entry.path.starts_with("training_log") && entry.path.ends_with(".csv") {
            let records = read_training_log(bytes.as_slice())?;
            // the initial entropy is not logged; the first record stands in
            let initial = records.first().map_or(f64::NAN, |r| r.entropy);
            let run = seed_run(manifest.seed.unwrap_or_default(), initial, &records, a.threshold);
            contents.insert(
                entry.path.clone(),
                json!({
                    "updates": records.len(),
                    "steps_to_threshold": run.steps_to_threshold,
                    "peak_entropy": run.peak_entropy,
                    "final_entropy": run.final_entropy,
                    "final_em": run.final_em,
                    "final_p_informative": run.final_p_informative,
                }),
            );
        } else if entry.path == "sensitivity.csv" {
            let per_seed: Vec<Value> = read_sensitivity(bytes.as_slice())?
                .into_iter()
                .map(|(seed, rows)| {
                    let ms: Vec<usize> = rows.iter().map(|r| r.m).collect();
                    let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
                    json!({ "seed": seed, "stats": curve_stats(&ms, &maes) })
                })
                .collect();
            contents.insert(entry.path.clone(), json!({ "per_seed": per_seed }));
        }
    }

    let rerun = if a.rerun {
        if manifest.command == "report" {
            return Err(CliError::invalid("cannot re-run a report run"));
        }
        let argv = std::iter::once("semgain".to_owned()).chain(manifest.argv.iter().cloned());
        let cli: Cli = clap::Parser::try_parse_from(argv)
            .map_err(|e| CliError::invalid(format!("recorded arguments no longer parse: {e}")))?;
        let config_matches = serde_json::to_value(&cli.command)? == manifest.config;
        let outcome = dispatch(&cli.command)?;
        let fresh: BTreeMap<&str, String> =
            outcome.artifacts.iter().map(|x| (x.name.as_str(), sha256_hex(&x.bytes))).collect();
        let recorded: BTreeMap<&str, String> =
            manifest.artifacts.iter().map(|x| (x.path.as_str(), x.sha256.clone())).collect();
        let identical = fresh == recorded;
        if !config_matches {
            problems.push("recorded config differs from the re-parsed arguments".to_owned());
        }
        if !identical {
            problems.push("re-run produced different artifact digests".to_owned());
        }
        Some(json!({ "config_matches": config_matches, "identical": identical }))
    } else {
        None
    };

    let view = json!({
        "run_id": manifest.run_id,
        "command": manifest.command,
        "created_at": manifest.created_at,
        "seed": manifest.seed,
        "artifacts": digests,
        "contents": contents,
        "rerun": rerun,
        "ok": problems.is_empty(),
    });
    Ok(Outcome {
        stdout: pretty(&view)?,
        artifacts: vec![Artifact::json("report.json", &view)?],
        seed: None,
        failure: (!problems.is_empty()).then(|| problems.join("; ")),
    })
}
