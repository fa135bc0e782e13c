//! Batch experiment driver for the rank-based market laboratory.
//!
//! `rankfield <kind> --config <path> [--out <dir>] [--workers N] [--seed S]`
//! runs one experiment from a JSON config and writes a manifest, a result
//! document, and CSV data files into the output directory. Identical
//! config and seed produce byte-identical result documents regardless of
//! the worker count.
//!
//! Exit codes: 0 on success, 1 on numerical failure (a diagnostic
//! `error.json` is left in the output directory), 2 on usage errors.

mod canon;
mod jobs;
mod report;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rankfield", version, about = "Rank-based market model laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for manifest, result, and data files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for replica parallelism (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's seed (model.seed when the config has a model,
    /// else the top-level seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory tree containing experiment output directories.
    dir: Option<PathBuf>,
    /// Alternative way to pass the directory, mirroring the other kinds.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write summary.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one rank-based particle path and its observables.
    Simulate(RunArgs),
    /// Solve the hydrodynamic-limit CDF equation on a grid.
    Hydrolimit(RunArgs),
    /// Gaussian fluctuation experiment for an observable at a fixed time.
    Clt(RunArgs),
    /// Rescaled hitting-time fluctuation experiment for a level crossing.
    Hitting(RunArgs),
    /// Functionally generated portfolio ledger on one simulated path.
    Portfolio(RunArgs),
    /// Lower-tail concentration bound check for the excess growth rate.
    Concentration(RunArgs),
    /// Empirical-measure convergence-rate sweep over population sizes.
    Convergence(RunArgs),
    /// Aggregate experiment manifests under a directory into summary.json.
    Report(ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Simulate(args) => run_experiment("simulate", args),
        Command::Hydrolimit(args) => run_experiment("hydrolimit", args),
        Command::Clt(args) => run_experiment("clt", args),
        Command::Hitting(args) => run_experiment("hitting", args),
        Command::Portfolio(args) => run_experiment("portfolio", args),
        Command::Concentration(args) => run_experiment("concentration", args),
        Command::Convergence(args) => run_experiment("convergence", args),
        Command::Report(args) => run_report(args),
    };
    std::process::exit(code);
}

/// Applies a `--seed` override: into `model.seed` when the config carries a
/// model block, else into the top-level `seed` field.
fn override_seed(config: &mut Value, seed: u64) {
    if let Some(model) = config.get_mut("model").and_then(Value::as_object_mut) {
        model.insert("seed".into(), json!(seed));
    } else if let Some(map) = config.as_object_mut() {
        map.insert("seed".into(), json!(seed));
    }
}

/// The seed recorded in the manifest, if the config carries one.
fn manifest_seed(config: &Value) -> Value {
    config
        .get("model")
        .and_then(|m| m.get("seed"))
        .or_else(|| config.get("seed"))
        .cloned()
        .unwrap_or(Value::Null)
}

fn run_experiment(kind: &str, args: &RunArgs) -> i32 {
    if let Some(workers) = args.workers {
        if workers == 0 {
            eprintln!("rankfield: --workers must be at least 1");
            return 2;
        }
        // Ignore the error from a pool that is already initialized.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!(
                "rankfield: cannot read config {}: {e}",
                args.config.display()
            );
            return 2;
        }
    };
    let mut config: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("rankfield: config is not valid JSON: {e}");
            return 2;
        }
    };
    if let Some(seed) = args.seed {
        override_seed(&mut config, seed);
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!(
            "rankfield: cannot create output directory {}: {e}",
            args.out.display()
        );
        return 2;
    }

    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let config_hash = canon::content_hash(&config);

    match jobs::dispatch(kind, &config, &args.out) {
        Ok(output) => {
            let all_passed = output.assertions.iter().all(|a| a.passed);
            let status = if all_passed { "pass" } else { "fail" };
            let result = json!({
                "kind": kind,
                "status": status,
                "assertions": output
                    .assertions
                    .iter()
                    .map(jobs::Assertion::to_value)
                    .collect::<Vec<_>>(),
                "data": output.data,
            });
            if let Err(e) = canon::write_canonical(&args.out.join("result.json"), &result) {
                eprintln!("rankfield: cannot write result.json: {e}");
                return 1;
            }

            let mut artifacts = vec!["result.json".to_string()];
            artifacts.extend(output.artifacts.iter().cloned());
            let manifest = json!({
                "kind": kind,
                "config": config,
                "config_sha256": config_hash,
                "seed": manifest_seed(&config),
                "version": env!("CARGO_PKG_VERSION"),
                "started_at": started_at,
                "artifacts": artifacts,
            });
            if let Err(e) = canon::write_canonical(&args.out.join("manifest.json"), &manifest) {
                eprintln!("rankfield: cannot write manifest.json: {e}");
                return 1;
            }

            for a in &output.assertions {
                let mark = if a.passed { "ok" } else { "FAILED" };
                println!("  {}: {mark} ({})", a.name, a.detail);
            }
            println!("{kind}: {status} ({})", args.out.display());
            if all_passed {
                0
            } else {
                let failed: Vec<&str> = output
                    .assertions
                    .iter()
                    .filter(|a| !a.passed)
                    .map(|a| a.name)
                    .collect();
                let diag = json!({
                    "kind": kind,
                    "error": format!("assertion failures: {}", failed.join(", ")),
                    "config_sha256": config_hash,
                });
                let _ = canon::write_canonical(&args.out.join("error.json"), &diag);
                1
            }
        }
        Err(jobs::Failure::Usage(msg)) => {
            eprintln!("rankfield: {msg}");
            2
        }
        Err(jobs::Failure::Numerical(msg)) => {
            eprintln!("rankfield: numerical failure: {msg}");
            let diag = json!({
                "kind": kind,
                "error": msg,
                "config_sha256": config_hash,
            });
            let _ = canon::write_canonical(&args.out.join("error.json"), &diag);
            1
        }
    }
}

fn run_report(args: &ReportArgs) -> i32 {
    let dir = match (&args.dir, &args.config) {
        (Some(d), _) => d.clone(),
        (None, Some(c)) => c.clone(),
        (None, None) => {
            eprintln!("rankfield: report needs a directory (positional or --config)");
            return 2;
        }
    };
    if !dir.is_dir() {
        eprintln!("rankfield: {} is not a directory", dir.display());
        return 2;
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!(
            "rankfield: cannot create output directory {}: {e}",
            args.out.display()
        );
        return 2;
    }
    match report::run_report(&dir, &args.out) {
        Ok(_) => 0,
        Err(msg) => {
            eprintln!("rankfield: {msg}");
            2
        }
    }
}
