//! The three subcommands. Exit codes: 0 success, 1 config error, 2
//! divergence, 3 verification failure.

use std::fs;
use std::path::Path;

use anglelab_core::harness::{train, RunConfig, RunLog};
use anglelab_core::verify::{
    verify_all, verify_gradcheck, verify_prop1, verify_prop2, verify_prop3, verify_prop4,
    verify_prop5, VerifyReport,
};

use crate::config::{CliError, CompareConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn runlog_json(log: &RunLog) -> Result<String, CliError> {
    serde_json::to_string_pretty(log).map_err(|e| CliError::Io(e.to_string()))
}

/// Executes one training run and writes `runlog.csv`, `runlog.json`, and
/// `norms_hist.csv` into `out`.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    fs::create_dir_all(out)?;
    let log = train(cfg)?;
    write_atomic(&out.join("runlog.csv"), &log.to_csv())?;
    write_atomic(&out.join("runlog.json"), &runlog_json(&log)?)?;
    write_atomic(&out.join("norms_hist.csv"), &log.norms_hist_csv())?;
    if let Some(iter) = log.diverged_at {
        eprintln!("run diverged at iteration {iter}; partial log written");
        return Ok(EXIT_DIVERGED);
    }
    println!(
        "run complete: {} iterations, outputs in {}",
        log.records.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[clap(rename_all = "lowercase")]
pub enum Selection {
    Prop1,
    Prop2,
    Prop3,
    Prop4,
    Prop5,
    Gradcheck,
    All,
}

pub fn run_selection(selection: Selection, seed: u64) -> anglelab_core::Result<VerifyReport> {
    match selection {
        Selection::Prop1 => verify_prop1(seed),
        Selection::Prop2 => verify_prop2(seed),
        Selection::Prop3 => verify_prop3(seed),
        Selection::Prop4 => verify_prop4(seed),
        Selection::Prop5 => verify_prop5(seed),
        Selection::Gradcheck => verify_gradcheck(seed),
        Selection::All => verify_all(seed),
    }
}

pub fn report_exit_code(report: &VerifyReport) -> i32 {
    if report.all_pass() {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    }
}

/// Runs the selected verification suite and prints its table.
pub fn cmd_verify(selection: Selection, seed: u64) -> Result<i32, CliError> {
    let report = run_selection(selection, seed).map_err(CliError::from)?;
    print!("{}", report.render());
    let failed = report.lines.iter().filter(|l| !l.pass).count();
    println!(
        "{} checks, {} failed (seed {seed})",
        report.lines.len(),
        failed
    );
    Ok(report_exit_code(&report))
}

/// Matched-seed comparison of regularizer variants: one side-by-side CSV of
/// the per-iteration records plus a JSON summary of final metrics.
pub fn cmd_compare(cfg: &CompareConfig, out: &Path) -> Result<i32, CliError> {
    fs::create_dir_all(out)?;
    let mut logs: Vec<(String, RunLog)> = Vec::new();
    let base_log = train(&cfg.base)?;
    logs.push(("base".to_string(), base_log));
    for v in &cfg.variants {
        let mut run = cfg.base.clone();
        run.regularizer = v.regularizer;
        logs.push((v.name.clone(), train(&run)?));
    }
    let diverged = logs.iter().any(|(_, l)| l.diverged_at.is_some());

    // Side-by-side per-iteration CSV: iter + 6 columns per variant.
    let fields = [
        "loss",
        "sec_loss",
        "norm_mean",
        "norm_var",
        "dtheta_mean",
        "dtheta_var",
    ];
    let mut csv = String::from("iter");
    for (name, _) in &logs {
        for f in fields {
            csv.push_str(&format!(",{name}_{f}"));
        }
    }
    csv.push('\n');
    let rows = logs.iter().map(|(_, l)| l.records.len()).min().unwrap_or(0);
    for r in 0..rows {
        csv.push_str(&logs[0].1.records[r].iter.to_string());
        for (_, log) in &logs {
            let rec = &log.records[r];
            csv.push_str(&format!(
                ",{},{},{},{},{},{}",
                rec.loss,
                rec.sec_loss,
                rec.norm_mean,
                rec.norm_var,
                rec.dtheta_mean,
                rec.dtheta_var
            ));
        }
        csv.push('\n');
    }
    write_atomic(&out.join("compare.csv"), &csv)?;

    let summary = summary_json(&logs);
    write_atomic(
        &out.join("compare_summary.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?,
    )?;

    if diverged {
        eprintln!("at least one variant diverged; partial outputs written");
        return Ok(EXIT_DIVERGED);
    }
    println!(
        "compared {} variants against base, outputs in {}",
        logs.len() - 1,
        out.display()
    );
    Ok(EXIT_OK)
}

fn final_metrics(log: &RunLog) -> serde_json::Value {
    let final_norm_var = log.final_norms.as_ref().map(|n| n.variance);
    let final_norm_mean = log.final_norms.as_ref().map(|n| n.mean);
    let last = log.metrics.last();
    serde_json::json!({
        "final_norm_mean": final_norm_mean,
        "final_norm_var": final_norm_var,
        "recall_ks": last.map(|m| m.recall_ks.clone()),
        "recalls": last.map(|m| m.recalls.clone()),
        "nmi": last.map(|m| m.nmi),
        "f1": last.map(|m| m.f1),
        "diverged_at": log.diverged_at,
    })
}

fn summary_json(logs: &[(String, RunLog)]) -> serde_json::Value {
    let base = &logs[0].1;
    let base_last = base.metrics.last();
    let mut variants = Vec::new();
    for (name, log) in &logs[1..] {
        let mut entry = final_metrics(log);
        let deltas = match (log.metrics.last(), base_last) {
            (Some(v), Some(b)) => serde_json::json!({
                "recall_at_first_k": v.recalls.first().zip(b.recalls.first()).map(|(a, c)| a - c),
                "nmi": v.nmi - b.nmi,
                "f1": v.f1 - b.f1,
                "final_norm_var": log
                    .final_norms
                    .as_ref()
                    .zip(base.final_norms.as_ref())
                    .map(|(a, c)| a.variance - c.variance),
            }),
            _ => serde_json::json!(null),
        };
        entry["name"] = serde_json::json!(name);
        entry["delta_vs_base"] = deltas;
        variants.push(entry);
    }
    let mut base_entry = final_metrics(base);
    base_entry["name"] = serde_json::json!("base");
    serde_json::json!({
        "base": base_entry,
        "variants": variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use anglelab_core::verify::VerifyReport;

    #[test]
    fn failing_report_maps_to_exit_three() {
        let ok = run_selection(Selection::Prop2, 3).unwrap();
        assert_eq!(report_exit_code(&ok), EXIT_OK);
        // A fabricated failing line: the mapping must flag it.
        let mut bad = VerifyReport {
            lines: ok.lines.clone(),
        };
        bad.lines[0].pass = false;
        assert_eq!(report_exit_code(&bad), EXIT_VERIFY_FAILED);
        assert_eq!(
            report_exit_code(&VerifyReport::default()),
            EXIT_VERIFY_FAILED
        );
    }
}
