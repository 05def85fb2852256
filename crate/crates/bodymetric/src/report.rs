//! Report serialisation: JSON documents, curve CSVs and the run manifest.
//!
//! Every floating-point value written is first rounded to six significant
//! digits (round half to even on the exact binary value), so reports diff
//! cleanly across platforms.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bodymetric_core::detect::{DetectionReport, GroupMetrics};
use bodymetric_core::identify::Curve;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Rounds to six significant digits. Non-finite values pass through.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// JSON number rounded by [`sig6`]; infinities become the strings `"inf"`
/// and `"-inf"`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(sig6(x))
    } else if x.is_nan() {
        Value::Null
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// CSV cell for a float.
pub fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{}", sig6(x))
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Threshold key as echoed in reports (shortest round-trip form of the
/// configured value).
pub fn threshold_key(t: f64) -> String {
    format!("{t}")
}

fn metrics_json(m: &GroupMetrics) -> Value {
    json!({
        "tp": m.counts.tp,
        "fp": m.counts.fp,
        "fn": m.counts.fn_,
        "precision": num(m.precision),
        "recall": num(m.recall),
        "f1": num(m.f1),
    })
}

/// Detection report: `groups → threshold → metrics`, plus pooled metrics
/// and the macro mean for contrast.
pub fn detection_json(report: &DetectionReport) -> Value {
    let keys: Vec<String> = report.thresholds.iter().map(|&t| threshold_key(t)).collect();
    let groups: BTreeMap<&str, BTreeMap<&str, Value>> = report
        .per_group
        .iter()
        .map(|(tag, ms)| (tag.as_str(), keys.iter().map(String::as_str).zip(ms.iter().map(metrics_json)).collect()))
        .collect();
    let pooled: BTreeMap<&str, Value> =
        keys.iter().map(String::as_str).zip(report.pooled.iter().map(metrics_json)).collect();
    let macro_f1: BTreeMap<&str, Value> =
        keys.iter().enumerate().map(|(i, k)| (k.as_str(), num(report.macro_f1(i)))).collect();
    json!({
        "iou_thresholds": report.thresholds,
        "groups": groups,
        "pooled": pooled,
        "macro_f1": macro_f1,
    })
}

pub fn detection_summary(report: &DetectionReport) -> String {
    let mut s = String::new();
    s.push_str("group");
    for t in &report.thresholds {
        s.push_str(&format!("\tF1@{t}"));
    }
    s.push('\n');
    for (tag, ms) in &report.per_group {
        s.push_str(tag);
        for m in ms {
            s.push_str(&format!("\t{}", cell(m.f1)));
        }
        s.push('\n');
    }
    s.push_str("pooled");
    for m in &report.pooled {
        s.push_str(&format!("\t{}", cell(m.f1)));
    }
    s.push('\n');
    s
}

/// CSV with a two-line header: axis labels, then column names.
pub fn curve_csv(curve: &Curve, columns: [&str; 3]) -> String {
    let mut s = format!("# x: {}; y: {}\n{},{},{}\n", curve.x_label, curve.y_label, columns[0], columns[1], columns[2]);
    for p in &curve.points {
        let t = p.threshold.map(cell).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", cell(p.x), cell(p.y), t));
    }
    s
}

/// CMC rows are `rank,accuracy` only.
pub fn cmc_csv(curve: &Curve) -> String {
    let mut s = format!("# x: {}; y: {}\nrank,accuracy\n", curve.x_label, curve.y_label);
    for p in &curve.points {
        s.push_str(&format!("{},{}\n", p.x as u64, cell(p.y)));
    }
    s
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable value");
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(role: &str, path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest { role: role.into(), path: path.into(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

/// Run record written next to every report. Holds no timestamps, so
/// identical runs produce identical bytes.
pub fn run_manifest(command: &str, config: Value, inputs: &[InputDigest], outputs: &[&str]) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    })
}
