//! CSV and JSON report writers.
//!
//! CSV output uses `.` decimals, `\n` line endings, and a fixed
//! 9-significant-digit scientific float format, so identical runs produce
//! byte-identical files on every platform.

use crate::evaluation::SweepTable;
use crate::grad::GradCheckReport;
use crate::optimizer::OptReport;
use serde_json::json;

/// Fixed 9-significant-digit formatting.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// Rows `(iteration, denoise_step, inner_step, l_attn, l_neg, l_reg,
/// l_total, grad_norm)`.
pub fn opt_report_to_csv(report: &OptReport) -> String {
    let mut out =
        String::from("iteration,denoise_step,inner_step,l_attn,l_neg,l_reg,l_total,grad_norm\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.iteration,
            row.denoise_step,
            row.inner_step,
            fmt_float(row.attn),
            fmt_float(row.neg),
            fmt_float(row.reg),
            fmt_float(row.total),
            fmt_float(row.grad_norm),
        ));
    }
    out
}

/// The run as a single JSON document, trajectories included.
pub fn opt_report_to_json(report: &OptReport, canvas: (u32, u32)) -> String {
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "iteration": r.iteration,
                "denoise_step": r.denoise_step,
                "inner_step": r.inner_step,
                "l_attn": r.attn,
                "l_neg": r.neg,
                "l_reg": r.reg,
                "l_total": r.total,
                "grad_norm": r.grad_norm,
            })
        })
        .collect();
    let doc = json!({
        "denoise_steps": report.denoise_steps,
        "edit_steps": report.edit_steps,
        "inner_steps": report.inner_steps,
        "warnings": report.warnings,
        "canvas": [canvas.0, canvas.1],
        "initial": report.initial.frames.iter().map(|b| b.coords()).collect::<Vec<_>>(),
        "final": report.final_trajectory.frames.iter().map(|b| b.coords()).collect::<Vec<_>>(),
        "rows": rows,
    });
    serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
}

/// Rows `(coordinate, analytic, numeric, rel_err)` plus a trailing
/// pass/fail summary line.
pub fn gradcheck_to_csv(report: &GradCheckReport) -> String {
    let mut out = String::from("coordinate,analytic,numeric,rel_err\n");
    for (i, row) in report.rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i,
            fmt_float(row.analytic),
            fmt_float(row.numeric),
            fmt_float(row.rel_err),
        ));
    }
    out.push_str(&format!(
        "# {} p95={} tolerance={}\n",
        if report.passed { "pass" } else { "fail" },
        fmt_float(report.p95),
        fmt_float(report.tolerance),
    ));
    out
}

/// Header names the swept parameter; one row per ladder value.
pub fn sweep_to_csv(table: &SweepTable) -> String {
    let mut out = format!(
        "{},mean_deviation,mean_inside_mass,mean_total_loss\n",
        table.parameter.name()
    );
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(row.value),
            fmt_float(row.mean_deviation),
            fmt_float(row.mean_inside_mass),
            fmt_float(row.mean_total_loss),
        ));
    }
    out
}
