//! Directory-tree aggregation of experiment manifests into one summary.
//!
//! Scans a directory recursively for `manifest.json` files, pairs each with
//! its sibling `result.json`, and writes a canonical `summary.json` listing
//! per-experiment status. Manifests that cannot be read or parsed are
//! reported as skipped with a reason instead of aborting the scan.

use crate::canon;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// One aggregated experiment entry.
struct Entry {
    dir: String,
    kind: Option<String>,
    status: String,
    reason: Option<String>,
}

impl Entry {
    fn to_value(&self) -> Value {
        json!({
            "dir": self.dir,
            "kind": self.kind,
            "status": self.status,
            "reason": self.reason,
        })
    }
}

/// Collects all `manifest.json` paths under `root`, plus the `error.json`
/// diagnostics of runs that failed before producing a manifest, sorted for
/// a stable summary order.
fn find_experiments(root: &Path) -> std::io::Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    let mut stack = vec![root.to_path_buf()];
    let mut manifests = Vec::new();
    let mut diagnostics = Vec::new();
    while let Some(dir) = stack.pop() {
        let mut children: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .collect();
        children.sort();
        for child in children {
            if child.is_dir() {
                stack.push(child);
            } else if child.file_name().is_some_and(|n| n == "manifest.json") {
                manifests.push(child);
            } else if child.file_name().is_some_and(|n| n == "error.json") {
                diagnostics.push(child);
            }
        }
    }
    manifests.sort();
    diagnostics.retain(|d| !manifests.iter().any(|m| m.parent() == d.parent()));
    diagnostics.sort();
    Ok((manifests, diagnostics))
}

/// Turns an orphaned diagnostic (numerical failure before a manifest was
/// written) into a skipped entry carrying the recorded error.
fn read_diagnostic(root: &Path, diag_path: &Path) -> Entry {
    let dir = diag_path
        .parent()
        .and_then(|p| p.strip_prefix(root).ok())
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_default();
    let parsed: Option<Value> = std::fs::read_to_string(diag_path)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    let kind = parsed
        .as_ref()
        .and_then(|v| v.get("kind"))
        .and_then(Value::as_str)
        .map(str::to_owned);
    let error = parsed
        .as_ref()
        .and_then(|v| v.get("error"))
        .and_then(Value::as_str)
        .unwrap_or("unreadable diagnostic")
        .to_owned();
    Entry {
        dir,
        kind,
        status: "skipped".into(),
        reason: Some(format!("no manifest; numerical failure: {error}")),
    }
}

/// Reads one experiment directory into a summary entry. Any unreadable or
/// malformed file degrades to a skipped entry, never an error.
fn read_entry(root: &Path, manifest_path: &Path) -> Entry {
    let dir = manifest_path
        .parent()
        .and_then(|p| p.strip_prefix(root).ok())
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_default();
    let skipped = |kind: Option<String>, reason: String| Entry {
        dir: dir.clone(),
        kind,
        status: "skipped".into(),
        reason: Some(reason),
    };

    let manifest: Value = match std::fs::read_to_string(manifest_path)
        .map_err(|e| e.to_string())
        .and_then(|s| serde_json::from_str(&s).map_err(|e| e.to_string()))
    {
        Ok(v) => v,
        Err(e) => return skipped(None, format!("unreadable manifest: {e}")),
    };
    let kind = manifest
        .get("kind")
        .and_then(Value::as_str)
        .map(str::to_owned);
    if kind.is_none() {
        return skipped(None, "manifest has no kind".into());
    }

    let result_path = manifest_path.with_file_name("result.json");
    let result: Value = match std::fs::read_to_string(&result_path)
        .map_err(|e| e.to_string())
        .and_then(|s| serde_json::from_str(&s).map_err(|e| e.to_string()))
    {
        Ok(v) => v,
        Err(e) => return skipped(kind, format!("unreadable result: {e}")),
    };
    match result.get("status").and_then(Value::as_str) {
        Some(status @ ("pass" | "fail")) => Entry {
            dir,
            kind,
            status: status.to_string(),
            reason: None,
        },
        Some(other) => skipped(kind, format!("unknown result status {other}")),
        None => skipped(kind, "result has no status".into()),
    }
}

/// Aggregates every experiment under `root` and writes `summary.json` into
/// `out`. Returns the number of aggregated experiments. An empty tree
/// produces an empty summary.
pub fn run_report(root: &Path, out: &Path) -> Result<usize, String> {
    let (manifests, diagnostics) =
        find_experiments(root).map_err(|e| format!("cannot scan {}: {e}", root.display()))?;
    let mut entries: Vec<Entry> = manifests
        .iter()
        .map(|m| read_entry(root, m))
        .collect();
    entries.extend(diagnostics.iter().map(|d| read_diagnostic(root, d)));
    entries.sort_by(|a, b| a.dir.cmp(&b.dir));

    let count = |status: &str| entries.iter().filter(|e| e.status == status).count();
    let summary = json!({
        "experiments": entries.iter().map(Entry::to_value).collect::<Vec<_>>(),
        "counts": {
            "pass": count("pass"),
            "fail": count("fail"),
            "skipped": count("skipped"),
            "total": entries.len(),
        },
    });
    canon::write_canonical(&out.join("summary.json"), &summary)
        .map_err(|e| format!("cannot write summary.json: {e}"))?;

    for e in &entries {
        let kind = e.kind.as_deref().unwrap_or("?");
        match &e.reason {
            Some(reason) => println!("{:<12} {:<8} {}  ({reason})", kind, e.status, e.dir),
            None => println!("{:<12} {:<8} {}", kind, e.status, e.dir),
        }
    }
    println!(
        "{} experiments: {} pass, {} fail, {} skipped",
        entries.len(),
        count("pass"),
        count("fail"),
        count("skipped")
    );
    Ok(entries.len())
}
