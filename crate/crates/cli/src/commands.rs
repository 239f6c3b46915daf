//! Subcommand implementations. Each run directory gets a manifest recording
//! the resolved config, a config-derived run id, and the dataset checksum,
//! plus whatever artifacts the command produces.

use std::fs;

use dirl_core::data::{generate_scenario, ScenarioDatasets};
use dirl_core::eval::{decision_grid, export_embeddings, write_decision_grid, GridBounds};
use dirl_core::nets::{load_checkpoint, save_checkpoint};
use dirl_core::report::FinalMetrics;
use dirl_core::trainer::{evaluate_bundle, init_training_bundle, run_training, ProbeSchedule, TrainMode};
use serde_json::json;

use crate::artifacts::{
    dataset_csv, dataset_checksum, prepare_run_dir, run_id, unix_now, write_loss_trace, write_manifest,
    write_param_csv, write_snapshots_jsonl, write_text,
};
use crate::config::ExperimentConfig;
use crate::{CliError, EvalArgs, RunArgs};

/// Decision-boundary raster size; 101 keeps the grid CSV near 10k rows.
const GRID_RESOLUTION: usize = 101;

fn resolve(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::resolve(
        args.config.as_deref(),
        args.seed,
        args.mode.as_deref(),
        args.out.as_deref(),
    )
}

fn generate(cfg: &ExperimentConfig) -> Result<ScenarioDatasets, CliError> {
    Ok(generate_scenario(&cfg.scenario)?)
}

pub fn gen_data(args: &RunArgs) -> Result<(), CliError> {
    if args.mode.is_some() {
        return Err(CliError::Config("--mode does not apply to gen-data".into()));
    }
    let cfg = resolve(args)?;
    let data = generate(&cfg)?;
    let dir = prepare_run_dir(&cfg, args.force)?;
    for (name, ds) in [
        ("source.csv", &data.source),
        ("target_train.csv", &data.target_train),
        ("target_test.csv", &data.target_test),
    ] {
        write_text(&dir.join(name), &dataset_csv(ds))?;
    }
    let checksum = dataset_checksum(&data);
    write_manifest(
        &dir,
        &json!({
            "command": "gen-data",
            "run_id": run_id(&cfg)?,
            "created_unix": unix_now(),
            "dataset_checksum": checksum,
            "rows": {
                "source": data.source.len(),
                "target_train": data.target_train.len(),
                "target_test": data.target_test.len(),
            },
            "config": cfg,
        }),
    )?;
    println!(
        "wrote {} (source {}, target_train {}, target_test {} rows), checksum {}",
        dir.display(),
        data.source.len(),
        data.target_train.len(),
        data.target_test.len(),
        &checksum[..16],
    );
    Ok(())
}

fn metrics_summary(m: &FinalMetrics) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    format!(
        "target acc {:.3} | source acc {:.3} | silhouette {} | marginal probe {}",
        m.target_accuracy,
        m.source_accuracy,
        opt(m.silhouette),
        opt(m.marginal_probe),
    )
}

fn grid_bounds(data: &ScenarioDatasets) -> GridBounds {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for ds in [&data.source, &data.target_train, &data.target_test] {
        for ex in &ds.examples {
            for (d, v) in ex.features.iter().take(2).enumerate() {
                lo[d] = lo[d].min(*v);
                hi[d] = hi[d].max(*v);
            }
        }
    }
    let pad = |lo: f64, hi: f64| 0.1 * (hi - lo).max(1e-6);
    GridBounds {
        x0_min: lo[0] - pad(lo[0], hi[0]),
        x0_max: hi[0] + pad(lo[0], hi[0]),
        x1_min: lo[1] - pad(lo[1], hi[1]),
        x1_max: hi[1] + pad(lo[1], hi[1]),
    }
}

pub fn train(args: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let data = generate(&cfg)?;
    let checksum = dataset_checksum(&data);
    let id = run_id(&cfg)?;
    let dir = prepare_run_dir(&cfg, args.force)?;
    eprintln!(
        "training {} for {} iterations (seed {}) -> {}",
        cfg.train.mode, cfg.train.iterations, cfg.train.seed, dir.display()
    );

    let outcome = match run_training(&data, &cfg.train) {
        Ok(outcome) => outcome,
        Err(e) => {
            // Keep the failure inspectable: the run directory stays, with the
            // config and the error in place of the usual artifacts.
            write_manifest(
                &dir,
                &json!({
                    "command": "train",
                    "run_id": id,
                    "created_unix": unix_now(),
                    "dataset_checksum": checksum,
                    "config": cfg,
                    "error": e.to_string(),
                }),
            )?;
            return Err(CliError::Runtime(format!(
                "training failed ({}); diagnostics in {}",
                e,
                dir.display()
            )));
        }
    };

    write_loss_trace(&dir.join("loss_trace.csv"), &outcome.report.records)?;
    write_snapshots_jsonl(&dir.join("metrics.jsonl"), &outcome.report.snapshots)?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", ckpt_dir.display())))?;
    for (iteration, params) in &outcome.report.checkpoints {
        write_param_csv(&ckpt_dir.join(format!("iter_{iteration:06}.csv")), params)?;
    }
    save_checkpoint(&outcome.bundle, &dir.join("checkpoint_final.csv"))?;
    export_embeddings(
        &outcome.bundle,
        &[&data.source, &data.target_train, &data.target_test],
        &dir.join("embeddings.csv"),
    )?;
    let grid = decision_grid(&outcome.bundle, &grid_bounds(&data), GRID_RESOLUTION)?;
    write_decision_grid(&grid, &dir.join("grid.csv"))?;
    write_manifest(
        &dir,
        &json!({
            "command": "train",
            "run_id": id,
            "created_unix": unix_now(),
            "dataset_checksum": checksum,
            "config": cfg,
            "completed_iterations": outcome.report.completed_iterations,
            "early_stopped": outcome.report.early_stopped,
            "stop_reason": outcome.report.stop_reason,
            "final_metrics": outcome.report.final_metrics,
        }),
    )?;
    println!("run {id} ({}) -> {}", cfg.train.mode, dir.display());
    println!("{}", metrics_summary(&outcome.report.final_metrics));
    Ok(())
}

pub fn compare(args: &RunArgs) -> Result<(), CliError> {
    if args.mode.is_some() {
        return Err(CliError::Config(
            "compare always runs every mode; --mode does not apply".into(),
        ));
    }
    let cfg = resolve(args)?;
    let data = generate(&cfg)?;
    let checksum = dataset_checksum(&data);
    let dir = prepare_run_dir(&cfg, args.force)?;
    let num_classes = data.source.num_classes;

    let mut table_rows: Vec<(TrainMode, FinalMetrics)> = Vec::new();
    let mut failures: Vec<(TrainMode, String)> = Vec::new();
    for mode in TrainMode::ALL {
        let mut train_cfg = cfg.train.clone();
        train_cfg.mode = mode;
        // The comparison table needs the probe columns regardless of what
        // the config asked for on single runs.
        train_cfg.probes = ProbeSchedule {
            final_probes: true,
            every_eval: train_cfg.probes.every_eval,
        };
        eprintln!("comparing: {mode} ({} iterations)", train_cfg.iterations);
        match run_training(&data, &train_cfg) {
            Ok(outcome) => {
                let sub = dir.join("modes").join(mode.as_str());
                fs::create_dir_all(&sub)
                    .map_err(|e| CliError::Runtime(format!("creating {}: {e}", sub.display())))?;
                write_loss_trace(&sub.join("loss_trace.csv"), &outcome.report.records)?;
                write_snapshots_jsonl(&sub.join("metrics.jsonl"), &outcome.report.snapshots)?;
                save_checkpoint(&outcome.bundle, &sub.join("checkpoint_final.csv"))?;
                table_rows.push((mode, outcome.report.final_metrics));
            }
            Err(e) => {
                log::error!("{mode} failed: {e}");
                failures.push((mode, e.to_string()));
            }
        }
    }

    let opt_cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from("mode,target_accuracy,source_accuracy,silhouette,marginal_probe");
    for k in 0..num_classes {
        csv.push_str(&format!(",cond_probe_{k}"));
    }
    csv.push_str(",dataset_checksum\n");
    for (mode, m) in &table_rows {
        csv.push_str(&format!(
            "{mode},{},{},{},{}",
            m.target_accuracy,
            m.source_accuracy,
            opt_cell(m.silhouette),
            opt_cell(m.marginal_probe),
        ));
        for k in 0..num_classes {
            let probe = m.conditional_probes.get(k).copied().flatten();
            csv.push_str(&format!(",{}", opt_cell(probe)));
        }
        csv.push_str(&format!(",{checksum}\n"));
    }
    write_text(&dir.join("comparison.csv"), &csv)?;
    write_manifest(
        &dir,
        &json!({
            "command": "compare",
            "run_id": run_id(&cfg)?,
            "created_unix": unix_now(),
            "dataset_checksum": checksum,
            "config": cfg,
            "modes": table_rows.iter().map(|(m, fm)| json!({
                "mode": m.to_string(),
                "final_metrics": fm,
            })).collect::<Vec<_>>(),
            "failures": failures.iter().map(|(m, e)| json!({
                "mode": m.to_string(),
                "error": e,
            })).collect::<Vec<_>>(),
        }),
    )?;

    for (mode, m) in &table_rows {
        println!("{mode:>14}: {}", metrics_summary(m));
    }
    println!("comparison table -> {}", dir.join("comparison.csv").display());
    if failures.is_empty() {
        Ok(())
    } else {
        let list = failures
            .iter()
            .map(|(m, e)| format!("{m}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        Err(CliError::Runtime(format!(
            "{} of {} modes failed ({list}); partial table written",
            failures.len(),
            TrainMode::ALL.len(),
        )))
    }
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let manifest_path = args.run.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
    if manifest["command"] != "train" {
        return Err(CliError::Config(format!(
            "{} does not describe a training run (command = {})",
            manifest_path.display(),
            manifest["command"]
        )));
    }
    let cfg: ExperimentConfig = serde_json::from_value(manifest["config"].clone())
        .map_err(|e| CliError::Config(format!("{}: config: {e}", manifest_path.display())))?;
    cfg.validate()?;

    let data = generate(&cfg)?;
    let checksum = dataset_checksum(&data);
    if let Some(recorded) = manifest["dataset_checksum"].as_str() {
        if recorded != checksum {
            return Err(CliError::Runtime(format!(
                "regenerated data does not match the run (checksum {} vs recorded {}); \
                 the toolkit version that produced this run differs",
                &checksum[..16],
                &recorded[..16.min(recorded.len())],
            )));
        }
    }

    let mut bundle = init_training_bundle(&data, &cfg.train)?;
    load_checkpoint(&mut bundle, &args.run.join("checkpoint_final.csv"))?;
    let iteration = manifest["completed_iterations"].as_u64().unwrap_or(0) as usize;
    let metrics = evaluate_bundle(&bundle, &data, &cfg.train, iteration, true)?;

    let report = json!({
        "run_id": manifest["run_id"],
        "evaluated_unix": unix_now(),
        "dataset_checksum": checksum,
        "metrics": metrics,
    });
    let mut pretty = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("serializing eval report: {e}")))?;
    pretty.push('\n');
    write_text(&args.run.join("eval.json"), &pretty)?;
    print!("{pretty}");
    Ok(())
}
