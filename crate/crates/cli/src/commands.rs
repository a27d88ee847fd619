use std::fs;
use std::path::{Path, PathBuf};

use cropfusion::datamodel::{
    load_dataset, standardize, synth_generate, write_atomic, write_dataset, MultiViewDataset,
    SynthConfig, SynthView,
};
use cropfusion::fusion::{FusionMethod, FusionModelConfig, GateType, MergeFunction};
use cropfusion::training::{
    comparison_table, member_seed, run_experiment, RunOutcome, RunStatus, TrainConfig,
    TrainRunResult, TrainedModel,
};
use cropfusion::Error;
use serde::Serialize;
use serde_json::json;

use crate::args::{CommonTrainArgs, CompareArgs, ReportArgs, SynthArgs, TrainArgs};
use crate::CliError;

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Configuration problems found while running are data problems (missing
/// views, empty splits); anything else is a runtime failure.
fn run_error(e: Error) -> CliError {
    match e {
        Error::Config(_)
        | Error::Schema(_)
        | Error::Corruption { .. }
        | Error::Range { .. }
        | Error::Partition(_)
        | Error::Io(_) => data(e),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| output_error(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| output_error(path, e))?;
    write_atomic(path, text + "\n").map_err(|e| output_error(path, e))
}

fn write_results(path: &Path, results: &[TrainRunResult]) -> CliResult<()> {
    let mut text = String::new();
    for r in results {
        text.push_str(&serde_json::to_string(r).map_err(|e| output_error(path, e))?);
        text.push('\n');
    }
    write_atomic(path, text).map_err(|e| output_error(path, e))
}

fn parse_view(entry: &str, noise: f64) -> CliResult<SynthView> {
    let parts: Vec<&str> = entry.split(':').collect();
    let bad = || {
        usage(format!(
            "view `{entry}` must be name:channels:informativeness[:static]"
        ))
    };
    if !(3..=4).contains(&parts.len()) || parts[0].is_empty() {
        return Err(bad());
    }
    let channels = parts[1].parse().map_err(|_| bad())?;
    let informativeness = parts[2].parse().map_err(|_| bad())?;
    let is_static = match parts.get(3) {
        None => false,
        Some(&"static") => true,
        Some(_) => return Err(bad()),
    };
    Ok(SynthView::new(
        parts[0],
        channels,
        is_static,
        informativeness,
        noise,
    ))
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut cfg = SynthConfig::cropharvest_like(args.samples, args.seed);
    cfg.name = args.name.clone();
    cfg.timesteps = args.timesteps;
    cfg.positive_fraction = args.positive_fraction;
    cfg.test_fraction = args.test_fraction;
    cfg.val_fraction = args.val_fraction;
    if let Some(spec) = &args.views {
        cfg.views = spec
            .split(',')
            .map(|v| parse_view(v.trim(), args.noise))
            .collect::<CliResult<_>>()?;
    } else {
        for v in &mut cfg.views {
            v.noise_scale = args.noise;
        }
    }
    for pair in &args.view_noise {
        let (name, scale) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("view noise `{pair}` must be name=scale")))?;
        let scale: f64 = scale
            .parse()
            .map_err(|_| usage(format!("view noise `{pair}` has no numeric scale")))?;
        let view = cfg
            .views
            .iter_mut()
            .find(|v| v.name == name)
            .ok_or_else(|| usage(format!("view noise names unknown view {name}")))?;
        view.noise_scale = scale;
    }
    cfg.validate().map_err(usage)?;

    let ds = synth_generate(&cfg).map_err(usage)?;
    create_dir(&args.out)?;
    write_dataset(&ds, &args.out).map_err(|e| output_error(&args.out, e))?;
    write_json(
        &args.out.join("config.json"),
        &json!({
            "command": "synth",
            "version": env!("CARGO_PKG_VERSION"),
            "args": args,
            "synth": cfg,
        }),
    )?;

    let positives = ds.labels.iter().filter(|&&y| y == 1).count();
    println!(
        "wrote {} samples to {} ({} positive, {:.1}%)",
        ds.num_samples,
        args.out.display(),
        positives,
        100.0 * positives as f64 / ds.num_samples as f64
    );
    for v in &ds.views {
        let kind = if v.spec.is_static {
            "static"
        } else {
            "temporal"
        };
        println!(
            "  view {}: {} channels, {kind}",
            v.spec.name, v.spec.channels
        );
    }
    println!(
        "  splits: train {}, val {}, test {}",
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len()
    );
    Ok(())
}

fn train_config(c: &CommonTrainArgs) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        batch_size: c.batch_size,
        max_epochs: c.max_epochs,
        patience: c.patience,
        min_delta: c.min_delta,
        learning_rate: c.lr,
        runs: c.runs,
        base_seed: c.seed,
        val_fraction: c.val_fraction,
        threshold: c.threshold,
        parallel: !c.sequential,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn model_config(
    c: &CommonTrainArgs,
    method: FusionMethod,
    views: &[String],
    merge: Option<MergeFunction>,
    gate: Option<GateType>,
) -> CliResult<FusionModelConfig> {
    let mut cfg = FusionModelConfig::new(method, views.to_vec());
    if merge.is_some() {
        cfg.merge = merge;
    }
    if gate.is_some() {
        cfg.gate = gate;
    }
    cfg.aux_weight = c.aux_weight;
    cfg.encoder.hidden_units = c.hidden_units;
    cfg.encoder.num_layers = c.layers;
    cfg.head.hidden_units = c.hidden_units;
    cfg.regularization.dropout_rate = c.dropout;
    cfg.regularization.batchnorm = !c.no_batchnorm;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Loads the dataset, keeps the flagged views and standardises it.
fn prepare_dataset(c: &CommonTrainArgs) -> CliResult<MultiViewDataset> {
    let mut ds = load_dataset(&c.data).map_err(|e| data(format!("{}: {e}", c.data.display())))?;
    if !c.views.is_empty() {
        let names: Vec<&str> = c.views.iter().map(String::as_str).collect();
        ds = ds.select_views(&names).map_err(data)?;
    }
    if !c.no_standardize {
        ds = standardize(&ds).map_err(data)?.0;
    }
    Ok(ds)
}

fn view_names(ds: &MultiViewDataset) -> Vec<String> {
    ds.views.iter().map(|v| v.spec.name.clone()).collect()
}

fn dataset_summary(c: &CommonTrainArgs, ds: &MultiViewDataset) -> serde_json::Value {
    json!({
        "path": c.data,
        "name": ds.name,
        "num_samples": ds.num_samples,
        "timesteps": ds.timesteps,
        "views": view_names(ds),
        "standardized": !c.no_standardize,
    })
}

fn run_seeds(cfg: &TrainConfig) -> Vec<u64> {
    (0..cfg.runs)
        .map(|r| cfg.base_seed.wrapping_add(r as u64))
        .collect()
}

fn print_result(r: &TrainRunResult) {
    match (&r.metrics, r.status) {
        (Some(m), RunStatus::Ok) => println!(
            "{} run {} (seed {}): AA {:.2} AUC {:.2} F1 {:.2} entropy {:.2}, {} epochs, {:.1}s",
            r.label(),
            r.run,
            r.seed,
            m.aa,
            m.auc,
            m.f1,
            m.entropy,
            r.epochs,
            r.wall_time_s
        ),
        _ => println!(
            "{} run {} (seed {}): failed: {}",
            r.label(),
            r.run,
            r.seed,
            r.error.as_deref().unwrap_or("unknown error")
        ),
    }
}

fn print_summary(results: &[TrainRunResult]) -> CliResult<()> {
    let table = comparison_table(results).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "\n{}",
        table
            .to_markdown()
            .map_err(|e| CliError::Runtime(e.to_string()))?
    );
    Ok(())
}

fn section_dir(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect::<String>()
        .trim_matches('-')
        .to_string()
}

fn save_model(model: &TrainedModel, dir: &Path) -> CliResult<()> {
    model
        .save(dir)
        .map(|_| ())
        .map_err(|e| output_error(dir, e))
}

fn experiment(
    mc: &FusionModelConfig,
    cfg: &TrainConfig,
    ds: &MultiViewDataset,
) -> CliResult<Vec<RunOutcome>> {
    run_experiment(mc, cfg, ds).map_err(run_error)
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let c = &args.common;
    if args.merge.is_some() && args.method != FusionMethod::FeatureS {
        return Err(usage(format!(
            "--merge requires --method feature-s, not {}",
            args.method
        )));
    }
    if args.gate.is_some() && args.method != FusionMethod::FeatureG {
        return Err(usage(format!(
            "--gate requires --method feature-g, not {}",
            args.method
        )));
    }
    let cfg = train_config(c)?;
    let ds = prepare_dataset(c)?;
    let mc = model_config(c, args.method, &view_names(&ds), args.merge, args.gate)?;

    create_dir(&c.out)?;
    write_json(
        &c.out.join("config.json"),
        &json!({
            "command": "train",
            "version": env!("CARGO_PKG_VERSION"),
            "args": args,
            "dataset": dataset_summary(c, &ds),
            "train": cfg,
            "model": mc,
            "run_seeds": run_seeds(&cfg),
        }),
    )?;

    let outcomes = experiment(&mc, &cfg, &ds)?;
    let results: Vec<TrainRunResult> = outcomes.iter().map(|o| o.result.clone()).collect();
    for o in &outcomes {
        print_result(&o.result);
        if let Some(model) = &o.model {
            save_model(
                model,
                &c.out
                    .join("checkpoints")
                    .join(format!("run-{}", o.result.run)),
            )?;
        }
    }
    write_results(&c.out.join("results.jsonl"), &results)?;
    print_summary(&results)
}

/// Single-view rows of one ensemble run: the members' own results, or
/// failed rows when the ensemble run failed.
fn member_rows(outcome: &RunOutcome, views: &[String]) -> Vec<TrainRunResult> {
    if !outcome.members.is_empty() {
        return outcome.members.clone();
    }
    views
        .iter()
        .enumerate()
        .map(|(i, v)| TrainRunResult {
            method: FusionMethod::Input,
            merge: None,
            gate: None,
            views: vec![v.clone()],
            seed: member_seed(outcome.result.seed, i),
            epochs: 0,
            val_loss: None,
            metrics: None,
            status: RunStatus::Failed,
            error: Some(
                outcome
                    .result
                    .error
                    .clone()
                    .unwrap_or_else(|| "ensemble run failed".into()),
            ),
            ..outcome.result.clone()
        })
        .collect()
}

pub fn compare(args: &CompareArgs) -> CliResult<()> {
    let c = &args.common;
    let cfg = train_config(c)?;
    let ds = prepare_dataset(c)?;
    let views = view_names(&ds);
    let methods = [
        FusionMethod::Input,
        FusionMethod::FeatureS,
        FusionMethod::FeatureG,
        FusionMethod::Decision,
        FusionMethod::Multiloss,
        FusionMethod::Ensemble,
    ];
    let configs = methods
        .iter()
        .map(|&m| {
            let merge = (m == FusionMethod::FeatureS)
                .then_some(args.merge)
                .flatten();
            let gate = (m == FusionMethod::FeatureG).then_some(args.gate).flatten();
            model_config(c, m, &views, merge, gate)
        })
        .collect::<CliResult<Vec<_>>>()?;

    create_dir(&c.out)?;
    write_json(
        &c.out.join("config.json"),
        &json!({
            "command": "compare",
            "version": env!("CARGO_PKG_VERSION"),
            "args": args,
            "dataset": dataset_summary(c, &ds),
            "train": cfg,
            "models": configs,
            "run_seeds": run_seeds(&cfg),
            "single_view_seeds": "member_seed(run_seed, view_index) = run_seed + 1000 * view_index",
        }),
    )?;

    let results_path = c.out.join("results.jsonl");
    let checkpoints = c.out.join("checkpoints");

    // The ensemble trains one model per view; those models are the
    // single-view baselines, so train it first.
    let ensemble_cfg = configs.last().expect("six methods");
    let ensemble = experiment(ensemble_cfg, &cfg, &ds)?;
    let mut singles: Vec<TrainRunResult> = Vec::new();
    for (i, view) in views.iter().enumerate() {
        for o in &ensemble {
            let row = member_rows(o, &views).swap_remove(i);
            print_result(&row);
            singles.push(row);
            if let Some(TrainedModel::Ensemble(e)) = &o.model {
                let dir = checkpoints
                    .join(section_dir(&format!("single:{view}")))
                    .join(format!("run-{}", o.result.run));
                e.members[i]
                    .params
                    .save(&dir)
                    .map_err(|e| output_error(&dir, e))?;
            }
        }
    }
    let mut results = singles;
    write_results(&results_path, &results)?;

    for mc in &configs[..configs.len() - 1] {
        for o in experiment(mc, &cfg, &ds)? {
            print_result(&o.result);
            if let Some(model) = &o.model {
                let dir = checkpoints
                    .join(section_dir(&o.result.label()))
                    .join(format!("run-{}", o.result.run));
                save_model(model, &dir)?;
            }
            results.push(o.result);
        }
        write_results(&results_path, &results)?;
    }

    println!(
        "ensemble: reusing the {} single-view models of each run, no retraining",
        views.len()
    );
    for o in &ensemble {
        print_result(&o.result);
        if o.model.is_some() {
            let dir = checkpoints
                .join("ensemble")
                .join(format!("run-{}", o.result.run));
            create_dir(&dir)?;
            let members: Vec<PathBuf> = views
                .iter()
                .map(|v| {
                    Path::new("..")
                        .join("..")
                        .join(section_dir(&format!("single:{v}")))
                        .join(format!("run-{}", o.result.run))
                })
                .collect();
            write_json(&dir.join("members.json"), &json!({ "members": members }))?;
        }
        results.push(o.result.clone());
    }
    write_results(&results_path, &results)?;
    print_summary(&results)
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.results)
        .map_err(|e| data(format!("{}: {e}", args.results.display())))?;
    let results = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<TrainRunResult>(l)
                .map_err(|e| data(format!("{} line {}: {e}", args.results.display(), i + 1)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if results.is_empty() {
        return Err(data(format!("{} holds no results", args.results.display())));
    }
    let table = comparison_table(&results).map_err(data)?;
    let markdown = table.to_markdown().map_err(data)?;

    create_dir(&args.out)?;
    write_json(
        &args.out.join("config.json"),
        &json!({
            "command": "report",
            "version": env!("CARGO_PKG_VERSION"),
            "args": args,
        }),
    )?;
    let md_path = args.out.join("report.md");
    write_atomic(&md_path, format!("# Fusion comparison\n\n{markdown}"))
        .map_err(|e| output_error(&md_path, e))?;
    let csv_path = args.out.join("report.csv");
    write_atomic(&csv_path, table.to_csv()).map_err(|e| output_error(&csv_path, e))?;
    print!("{markdown}");
    Ok(())
}
