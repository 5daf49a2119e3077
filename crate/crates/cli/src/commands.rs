use std::path::Path;

use chrono::{DateTime, Utc};
use deferral_core::abstention::{binary_collapse_report, coverage_csv, coverage_curve, CoverageResult};
use deferral_core::audit::{
    append_audit, compare_runs, read_audit, seeded_evaluation, stability_check, summarize_run, RunContext, RunSummary,
    StabilityReport,
};
use deferral_core::calibration::{high_conf_error_rate, reliability, CalibrationReport, ErrorRateBase, HighConfidenceErrors};
use deferral_core::io::{read_jsonl, read_predictions, write_jsonl, Strictness};
use deferral_core::metrics::{argmax_report, confusion, error_audit, evaluate_pairs, ClassificationReport, ConfusionMatrix, ErrorCategoryStats};
use deferral_core::policy::read_policy;
use deferral_core::router::{route_batch, route_record, BatchMode, Clock, FixedClock, ModelIdentity, SystemClock};
use deferral_core::sweep::{expected_risk, run_sweep, select_operating_point, SweepRow, ThresholdGrid};
use deferral_core::toydata::{generate, predict_toy, train_toy, DatasetExample, GenConfig, ToyModel, TrainConfig};
use deferral_core::{CostMatrix, DecisionLabel, Error, PolicyRegistry, PredictionRecord, Result, ThresholdPolicy};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::invocation::Invocation;
use crate::{
    AbstainArgs, CalibrateArgs, Cli, Command, CompareArgs, ErrorBase, EvaluateArgs, Failure, GenDataArgs, PredictArgs,
    ReplayArgs, RiskArgs, RouteArgs, StabilityArgs, SweepArgs, TrainToyArgs,
};

pub fn run(cli: &Cli, args: Vec<String>) -> std::result::Result<(), Failure> {
    let mut inv = Invocation::new(cli.command.name(), args);
    let outcome = match &cli.command {
        Command::GenData(a) => gen_data(cli, a, &mut inv),
        Command::TrainToy(a) => train(cli, a, &mut inv),
        Command::Predict(a) => predict(a, &mut inv),
        Command::Route(a) => route(cli, a, &mut inv),
        Command::Evaluate(a) => evaluate(cli, a, &mut inv),
        Command::Calibrate(a) => calibrate(cli, a, &mut inv),
        Command::Abstain(a) => abstain(cli, a, &mut inv),
        Command::Sweep(a) => sweep(cli, a, &mut inv),
        Command::Risk(a) => risk(cli, a, &mut inv),
        Command::Compare(a) => compare(a, &mut inv),
        Command::Replay(a) => replay(a, &mut inv),
        Command::Stability(a) => stability(cli, a, &mut inv),
    };
    // outputs written before a failed check still get their record
    inv.finish(Utc::now())?;
    outcome
}

fn strictness(cli: &Cli) -> Strictness {
    if cli.lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, inv: &mut Invocation) -> Result<T> {
    inv.input(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str, inv: &mut Invocation) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))?;
    inv.output(path);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, inv: &mut Invocation) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))? + "\n";
    write_text(path, &text, inv)
}

fn load_predictions(cli: &Cli, path: &Path, inv: &mut Invocation) -> Result<Vec<PredictionRecord>> {
    inv.input(path)?;
    read_predictions(path, strictness(cli))
}

fn load_policy_file(path: &Path, inv: &mut Invocation) -> Result<ThresholdPolicy> {
    inv.input(path)?;
    read_policy(path)
}

fn load_dataset(path: &Path, inv: &mut Invocation) -> Result<Vec<DatasetExample>> {
    inv.input(path)?;
    let data: Vec<DatasetExample> = read_jsonl(path)?;
    for e in &data {
        e.validate()?;
    }
    Ok(data)
}

type Outcome = std::result::Result<(), Failure>;

fn gen_data(cli: &Cli, a: &GenDataArgs, inv: &mut Invocation) -> Outcome {
    let mut config = match &a.config {
        Some(path) => read_json::<GenConfig>(path, inv)?,
        None => GenConfig::with_total(a.n),
    };
    if let Some(noise) = a.label_noise {
        config.label_noise = noise;
    }
    let data = generate(&config, cli.seed)?;
    write_jsonl(&a.out, &data)?;
    inv.output(&a.out);
    println!("wrote {} examples to {}", data.len(), a.out.display());
    Ok(())
}

fn train(cli: &Cli, a: &TrainToyArgs, inv: &mut Invocation) -> Outcome {
    let data = load_dataset(&a.data, inv)?;
    let config = TrainConfig {
        feature_dim: a.feature_dim,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        smoothing: a.smoothing,
        seed: cli.seed,
    };
    let model = train_toy(&data, &config)?;
    model.save(&a.out)?;
    inv.output(&a.out);
    if let Some(loss) = model.loss_history.last() {
        println!("trained on {} examples, final loss {loss:.4}", data.len());
    }
    Ok(())
}

fn predict(a: &PredictArgs, inv: &mut Invocation) -> Outcome {
    inv.input(&a.model)?;
    let model = ToyModel::load(&a.model)?;
    let data = load_dataset(&a.data, inv)?;
    let preds = predict_toy(&model, &data)?;
    write_jsonl(&a.out, &preds)?;
    inv.output(&a.out);
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

fn route(cli: &Cli, a: &RouteArgs, inv: &mut Invocation) -> Outcome {
    let records = load_predictions(cli, &a.predictions, inv)?;
    let policy = load_policy_file(&a.policy, inv)?;
    let model = ModelIdentity::new(&a.model_id, &a.model_version)?;
    let clock: Box<dyn Clock> = match &a.fixed_time {
        Some(t) => Box::new(FixedClock(
            DateTime::parse_from_rfc3339(t)
                .map_err(|e| Error::Schema(format!("fixed time {t:?}: {e}")))?
                .with_timezone(&Utc),
        )),
        None => Box::new(SystemClock),
    };
    let mode = if cli.lenient { BatchMode::Lenient } else { BatchMode::Strict };
    let out = route_batch(&records, &policy, &model, clock.as_ref(), mode)?;
    for (id, e) in &out.skipped {
        eprintln!("skipped {id}: [{}] {e}", e.code());
    }
    append_audit(&a.out, &out.audit)?;
    inv.output(&a.out);
    if let Some(path) = &a.decisions_out {
        write_jsonl(path, &out.decisions)?;
        inv.output(path);
    }
    let n_tbd = out.decisions.iter().filter(|d| d.routing.routed == DecisionLabel::Tbd).count();
    println!(
        "routed {} records ({} TBD, {} skipped) into {}",
        out.decisions.len(),
        n_tbd,
        out.skipped.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RoutedEvaluation {
    policy_id: String,
    policy_version: String,
    tbd_rate: f64,
    report: ClassificationReport,
    errors: ErrorCategoryStats,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    n: u64,
    confusion: ConfusionMatrix,
    argmax: ClassificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    routed: Option<RoutedEvaluation>,
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, inv: &mut Invocation) -> Outcome {
    let records = load_predictions(cli, &a.predictions, inv)?;
    let matrix = confusion(
        records
            .iter()
            .map(|r| Ok((r.gold_or_err()?, r.dist.argmax())))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let argmax = argmax_report(&records)?;
    let policy = a.policy.as_deref().map(|p| load_policy_file(p, inv)).transpose()?;
    let routed = match &policy {
        Some(policy) => {
            let decisions = records
                .iter()
                .map(|r| route_record(r, policy))
                .collect::<Result<Vec<_>>>()?;
            let pairs = records
                .iter()
                .zip(&decisions)
                .map(|(r, d)| Ok((r.gold_or_err()?, d.routing.routed)))
                .collect::<Result<Vec<_>>>()?;
            let n_tbd = decisions.iter().filter(|d| d.routing.routed == DecisionLabel::Tbd).count();
            Some(RoutedEvaluation {
                policy_id: policy.policy_id.clone(),
                policy_version: policy.version.clone(),
                tbd_rate: n_tbd as f64 / records.len() as f64,
                report: evaluate_pairs(pairs)?,
                errors: error_audit(&records, &decisions)?,
            })
        }
        None => None,
    };

    println!("{matrix}");
    println!("{argmax}");
    if let Some(r) = &routed {
        println!("routed under {}@{} (TBD rate {:.4})", r.policy_id, r.policy_version, r.tbd_rate);
        println!("{}", r.report);
        println!("{}", r.errors);
    }

    if let Some(path) = &a.summary_out {
        let policy = policy.clone().unwrap_or_else(|| ThresholdPolicy::argmax("argmax", "1"));
        let model = ModelIdentity::new(&a.model_id, &a.model_version)?;
        let digest = inv
            .input_digest(&a.predictions)
            .map(str::to_string)
            .unwrap_or_default();
        let summary = summarize_run(
            &records,
            &RunContext {
                run_id: &a.run_id,
                split: &a.split,
                model: &model,
                policy: &policy,
                digest: &digest,
                n_bins: a.bins,
                high_conf_thresholds: &a.high_conf,
            },
        )?;
        write_json(path, &summary, inv)?;
    }
    if let Some(path) = &a.out {
        let report = EvaluationReport {
            n: argmax.n,
            confusion: matrix,
            argmax,
            routed,
        };
        write_json(path, &report, inv)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CalibrationOutput {
    reliability: CalibrationReport,
    high_confidence_errors: Vec<HighConfidenceErrors>,
}

fn calibrate(cli: &Cli, a: &CalibrateArgs, inv: &mut Invocation) -> Outcome {
    let records = load_predictions(cli, &a.predictions, inv)?;
    let base = match a.error_base {
        ErrorBase::HighConfidence => ErrorRateBase::HighConfidence,
        ErrorBase::All => ErrorRateBase::All,
    };
    let reliability = reliability(&records, a.bins)?;
    let high_confidence_errors = a
        .high_conf
        .iter()
        .map(|&t| high_conf_error_rate(&records, t, base))
        .collect::<Result<Vec<_>>>()?;
    println!("ECE ({} bins): {:.4}", reliability.n_bins, reliability.ece);
    for h in &high_confidence_errors {
        println!(
            "high-confidence error rate @ {}: {:.4} ({} of {})",
            h.threshold, h.rate, h.n_errors, h.n_high
        );
    }
    if let Some(path) = &a.bins_csv {
        write_text(path, &reliability.bins_csv(), inv)?;
    }
    write_json(
        &a.out,
        &CalibrationOutput {
            reliability,
            high_confidence_errors,
        },
        inv,
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AbstentionOutput {
    argmax: ClassificationReport,
    binary_collapse: ClassificationReport,
    coverage: Vec<CoverageResult>,
}

fn abstain(cli: &Cli, a: &AbstainArgs, inv: &mut Invocation) -> Outcome {
    let records = load_predictions(cli, &a.predictions, inv)?;
    let argmax = argmax_report(&records)?;
    let binary_collapse = binary_collapse_report(&records)?;
    let coverage = coverage_curve(&records, &a.coverages)?;
    println!("argmax macro F1 {:.4}, binary collapse macro F1 {:.4}", argmax.macro_f1, binary_collapse.macro_f1);
    print!("{}", coverage_csv(&coverage));
    if let Some(path) = &a.csv {
        write_text(path, &coverage_csv(&coverage), inv)?;
    }
    write_json(
        &a.out,
        &AbstentionOutput {
            argmax,
            binary_collapse,
            coverage,
        },
        inv,
    )?;
    Ok(())
}

fn load_grid(path: Option<&Path>, inv: &mut Invocation) -> Result<ThresholdGrid> {
    match path {
        Some(p) => read_json(p, inv),
        None => Ok(ThresholdGrid::default_joint()),
    }
}

fn sweep(cli: &Cli, a: &SweepArgs, inv: &mut Invocation) -> Outcome {
    let records = load_predictions(cli, &a.predictions, inv)?;
    let grid = load_grid(a.grid.as_deref(), inv)?;
    let cost = a.cost.as_deref().map(|p| read_json::<CostMatrix>(p, inv)).transpose()?;
    let digest = inv.input_digest(&a.predictions).unwrap_or_default().to_string();
    let table = run_sweep(&records, &grid, cost.as_ref(), digest)?;
    print!("{}", table.to_csv());
    if let Some(path) = &a.csv {
        write_text(path, &table.to_csv(), inv)?;
    }
    write_json(&a.out, &table, inv)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RiskOutput {
    cost: CostMatrix,
    risk: f64,
    policy: ThresholdPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected: Option<SweepRow>,
}

fn risk(cli: &Cli, a: &RiskArgs, inv: &mut Invocation) -> Outcome {
    let records = load_predictions(cli, &a.predictions, inv)?;
    let cost: CostMatrix = read_json(&a.cost, inv)?;
    let output = match &a.policy {
        Some(path) => {
            let policy = load_policy_file(path, inv)?;
            RiskOutput {
                cost,
                risk: expected_risk(&records, &policy, &cost)?,
                policy,
                selected: None,
            }
        }
        None => {
            let grid = load_grid(a.grid.as_deref(), inv)?;
            let digest = inv.input_digest(&a.predictions).unwrap_or_default().to_string();
            let table = run_sweep(&records, &grid, Some(&cost), digest)?;
            let row = select_operating_point(&table, &cost, &records)?;
            let mut policy = row.point().policy(0)?;
            policy.policy_id = a.policy_id.clone();
            policy.version = a.policy_version.clone();
            policy.validate()?;
            RiskOutput {
                cost,
                risk: expected_risk(&records, &policy, &cost)?,
                policy,
                selected: Some(row.clone()),
            }
        }
    };
    println!(
        "expected risk {:.6} at tau YES={} NO={} TBD={}",
        output.risk, output.policy.tau.yes, output.policy.tau.no, output.policy.tau.tbd
    );
    if let Some(path) = &a.policy_out {
        write_text(path, &(output.policy.to_json() + "\n"), inv)?;
    }
    write_json(&a.out, &output, inv)?;
    Ok(())
}

fn compare(a: &CompareArgs, inv: &mut Invocation) -> Outcome {
    let run_a: RunSummary = read_json(&a.a, inv)?;
    let run_b: RunSummary = read_json(&a.b, inv)?;
    let report = compare_runs(&run_a, &run_b)?;
    print!("{report}");
    if let Some(path) = &a.out {
        write_json(path, &report, inv)?;
    }
    Ok(())
}

fn replay(a: &ReplayArgs, inv: &mut Invocation) -> Outcome {
    inv.input(&a.audit)?;
    let audit = read_audit(&a.audit)?;
    let registry = PolicyRegistry::load_dir(&a.registry)?;
    let report = deferral_core::replay(&audit, &registry)?;
    println!("checked {} records, {} mismatched", report.n_checked, report.n_mismatched);
    for id in &report.mismatched_ids {
        println!("mismatch: {id}");
    }
    if let Some(path) = &a.out {
        write_json(path, &report, inv)?;
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} audit records do not replay", report.n_mismatched)))
    }
}

fn stability(cli: &Cli, a: &StabilityArgs, inv: &mut Invocation) -> Outcome {
    let records = load_predictions(cli, &a.predictions, inv)?;
    let report: StabilityReport = stability_check(&records, &a.seeds, seeded_evaluation)?;
    for (seed, f1) in &report.per_seed {
        println!("seed {seed}: macro F1 {f1}");
    }
    println!("std {}", report.std);
    if let Some(path) = &a.out {
        write_json(path, &report, inv)?;
    }
    Ok(())
}
