//! `run`, `campaign` and `fit` subcommands. Each returns the process exit
//! code and writes its report to the supplied streams.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use neonfilm_core::analysis::{fit_exponential, fit_lorentzian, fit_poly3, FitResult};
use neonfilm_core::engine::{
    campaign_stats, run_campaign, run_scenario, write_campaign, Campaign, RunOptions, RunStatus,
};
use neonfilm_core::{EngineError, Scenario};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
/// The fit ran but its result is flagged (no convergence or degenerate).
pub const EXIT_FIT_FLAGGED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

fn exit_for(e: &EngineError) -> i32 {
    if e.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_RUNTIME
    }
}

pub fn run(
    path: &Path,
    out_dir: &Path,
    opts: &RunOptions,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_for(&e);
        }
    };
    let started = Instant::now();
    match run_scenario(&scenario, out_dir, opts) {
        Ok(summary) => {
            let _ = writeln!(
                stderr,
                "{}: {} steps in {:.2} s wall, artifacts in {}",
                if summary.name.is_empty() {
                    "run"
                } else {
                    &summary.name
                },
                summary.steps,
                started.elapsed().as_secs_f64(),
                out_dir.display()
            );
            let _ = writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            match summary.status {
                RunStatus::Completed => EXIT_OK,
                RunStatus::Aborted => {
                    let _ = writeln!(
                        stderr,
                        "aborted: {}",
                        summary.message.as_deref().unwrap_or("invariant violated")
                    );
                    EXIT_RUNTIME
                }
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_for(&e)
        }
    }
}

pub fn campaign(
    path: &Path,
    jobs: usize,
    out_dir: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let campaign = match Campaign::load(path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_for(&e);
        }
    };
    let cap = match campaign.model() {
        Ok(m) => m.solidify.d_cap_highpower_m,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_for(&e);
        }
    };
    let started = Instant::now();
    let records = match run_campaign(&campaign, jobs) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_for(&e);
        }
    };
    let stats = campaign_stats(&records, &campaign.statistics, cap);
    if let Err(e) = write_campaign(out_dir, &records, &stats) {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_RUNTIME;
    }
    let _ = writeln!(
        stderr,
        "{} events on {} workers in {:.1} s, {} failed",
        records.len(),
        jobs,
        started.elapsed().as_secs_f64(),
        stats.failed
    );
    let _ = writeln!(
        stdout,
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );
    EXIT_OK
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FitKindArg {
    Lorentzian,
    Poly3,
    Exp,
}

/// Two numeric columns from a CSV file. A non-numeric first row is taken
/// as a header; `#` lines are comments.
pub fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| format!("{}: {e}", path.display()))?;
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        let line = row.position().map_or(i as u64 + 1, |p| p.line());
        let parse = |j: usize| -> Result<f64, String> {
            let field = row
                .get(j)
                .ok_or_else(|| format!("line {line}: expected two columns"))?;
            field
                .parse::<f64>()
                .map_err(|_| format!("line {line}, column {}: '{field}' is not a number", j + 1))
        };
        match (parse(0), parse(1)) {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            (Err(e), _) | (_, Err(e)) => {
                if xs.is_empty() && i == 0 {
                    continue; // header
                }
                return Err(e);
            }
        }
    }
    if xs.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok((xs, ys))
}

#[derive(Serialize)]
struct FitReport<'a> {
    source: String,
    #[serde(flatten)]
    result: &'a FitResult,
}

pub fn fit(kind: FitKindArg, path: &Path, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let (x, y) = match read_xy(path) {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_INVALID;
        }
    };
    let result = match kind {
        FitKindArg::Lorentzian => fit_lorentzian(&x, &y),
        FitKindArg::Poly3 => fit_poly3(&x, &y),
        FitKindArg::Exp => fit_exponential(&x, &y),
    };
    match result {
        Ok(r) => {
            let report = FitReport {
                source: path.display().to_string(),
                result: &r,
            };
            let _ = writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&report).expect("fit serializes")
            );
            if r.converged {
                EXIT_OK
            } else {
                let _ = writeln!(
                    stderr,
                    "fit flagged: {}",
                    r.message.as_deref().unwrap_or("not converged")
                );
                EXIT_FIT_FLAGGED
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INVALID
        }
    }
}
