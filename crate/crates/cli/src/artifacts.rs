//! Run-directory plumbing: canonical CSV serializations, content checksums,
//! and the manifest every command writes.
//!
//! Float cells use Rust's shortest round-trip formatting, so parsing a CSV
//! back recovers the exact f64 — checksums over these strings identify the
//! data itself, not a print precision.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dirl_core::autodiff::Mat;
use dirl_core::data::{DomainDataset, ScenarioDatasets};
use dirl_core::report::LossRecord;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        write!(s, "{b:02x}").expect("string write");
        s
    })
}

/// Identifier derived from the resolved config alone (config structs
/// serialize with fixed field order, so this is canonical): reruns of the
/// same experiment agree on their id.
pub fn run_id(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let json = serde_json::to_string(cfg)
        .map_err(|e| CliError::Runtime(format!("serializing config: {e}")))?;
    Ok(hex(&Sha256::digest(json.as_bytes()))[..12].to_string())
}

pub fn dataset_csv(ds: &DomainDataset) -> String {
    let dim = ds.feature_dim();
    let mut out: String = (0..dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push_str(",label,domain\n");
    for ex in &ds.examples {
        for (i, v) in ex.features.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("string write");
        }
        match ex.class_label {
            Some(label) => write!(out, ",{label}").expect("string write"),
            None => out.push(','),
        }
        writeln!(out, ",{}", ex.domain).expect("string write");
    }
    out
}

/// Checksum over the canonical CSVs of all three datasets, in a fixed order.
/// `gen-data`, `train`, and `compare` all report it, so runs are checkably
/// on identical data.
pub fn dataset_checksum(data: &ScenarioDatasets) -> String {
    let mut hasher = Sha256::new();
    for ds in [&data.source, &data.target_train, &data.target_test] {
        hasher.update(dataset_csv(ds).as_bytes());
    }
    hex(&hasher.finalize())
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Creates `<output_dir>/<run_name>/`, refusing to clobber an existing run
/// unless forced (in which case the old directory is removed wholesale so no
/// stale artifact survives).
pub fn prepare_run_dir(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf, CliError> {
    let dir = cfg.run_dir();
    if dir.exists() {
        if !force {
            return Err(CliError::Config(format!(
                "run directory {} already exists; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir)
            .map_err(|e| CliError::Runtime(format!("removing {}: {e}", dir.display())))?;
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Runtime(format!("serializing manifest: {e}")))?;
    text.push('\n');
    write_text(&dir.join("manifest.json"), &text)
}

pub fn write_loss_trace(path: &Path, records: &[LossRecord]) -> Result<(), CliError> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(
        "iteration,ce,marginal_disc,marginal_gen,conditional_disc,conditional_gen,triplet,total,skipped_classes\n",
    );
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            cell(r.ce),
            cell(r.marginal_disc),
            cell(r.marginal_gen),
            cell(r.conditional_disc),
            cell(r.conditional_gen),
            cell(r.triplet),
            r.total,
            r.skipped_classes
        )
        .expect("string write");
    }
    write_text(path, &out)
}

pub fn write_snapshots_jsonl<T: serde::Serialize>(path: &Path, snapshots: &[T]) -> Result<(), CliError> {
    let mut out = String::new();
    for snap in snapshots {
        let line = serde_json::to_string(snap)
            .map_err(|e| CliError::Runtime(format!("serializing snapshot: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Same `param,row,col,value` layout as the final checkpoint, so any
/// intermediate snapshot loads through the same reader.
pub fn write_param_csv(path: &Path, params: &[(String, Mat)]) -> Result<(), CliError> {
    let mut out = String::from("param,row,col,value\n");
    for (name, mat) in params {
        for r in 0..mat.rows() {
            for c in 0..mat.cols() {
                writeln!(out, "{name},{r},{c},{}", mat.get(r, c)).expect("string write");
            }
        }
    }
    write_text(path, &out)
}
