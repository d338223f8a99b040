//! Emits standalone matplotlib scripts next to a report. Scripts are never run here.

use std::fs;
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

/// `<report>.curve.csv`, the sampled 1-D curve some commands write beside their report.
pub fn curve_path(report: &Path) -> PathBuf {
    sibling(report, "curve.csv")
}

pub fn script_path(report: &Path) -> PathBuf {
    sibling(report, "plot.py")
}

fn sibling(report: &Path, suffix: &str) -> PathBuf {
    let mut name = report.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    report.with_file_name(name)
}

/// Reads the command column of the first row, from CSV or JSON.
fn report_command(text: &str) -> Option<String> {
    if text.trim_start().starts_with('[') {
        let rows: serde_json::Value = serde_json::from_str(text).ok()?;
        return rows.get(0)?.get("command")?.as_str().map(str::to_owned);
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let first = reader.records().next()?.ok()?;
    first.get(0).map(str::to_owned)
}

const LOADER: &str = r#"import csv
import json
import sys

import matplotlib.pyplot as plt


def load(path):
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        return [{k: str(v) if v is not None else "" for k, v in row.items()} for row in json.loads(text)]
    return list(csv.DictReader(text.splitlines()))


def num(row, key):
    v = row.get(key, "")
    return float(v) if v not in ("", "None") else float("nan")

"#;

fn sweep_body(report: &str) -> String {
    format!(
        r#"rows = load({report:?})
fig, ax = plt.subplots()
groups = {{}}
for r in rows:
    groups.setdefault(r["temperature"], []).append(r)
for temp, rs in sorted(groups.items(), key=lambda kv: float(kv[0])):
    rs.sort(key=lambda r: num(r, "P_or_Nx"))
    xs = [num(r, "P_or_Nx") for r in rs]
    ax.loglog(xs, [num(r, "sup_err") for r in rs], "o-", label="sup, R=%.3g" % float(temp))
    ax.loglog(xs, [num(r, "lp_err") for r in rs], "s--", label="L_p, R=%.3g" % float(temp))
ax.set_xlabel("P")
ax.set_ylabel("error")
ax.legend()
"#
    )
}

fn overlay_body(report: &str, curve: &str) -> String {
    format!(
        r#"row = load({report:?})[0]
curve = load({curve:?})
xs = [num(c, "x") for c in curve]
fig, ax = plt.subplots()
ax.plot(xs, [num(c, "f") for c in curve], label="target")
ax.plot(xs, [num(c, "approx") for c in curve], label="attention, R=%.3g" % num(row, "temperature"))
ax.set_xlim(-num(row, "D"), num(row, "D"))
ax.set_xlabel("x")
ax.legend()
"#
    )
}

fn partition_body(report: &str, curve: &str) -> String {
    format!(
        r#"row = load({report:?})[0]
curve = load({curve:?})
xs = [num(c, "x") for c in curve]
cells = [int(float(c["cell"])) for c in curve]
fig, (top, bottom) = plt.subplots(2, 1, sharex=True)
top.plot(xs, [num(c, "envelope") for c in curve], color="k", label="max-affine envelope")
bottom.step(xs, [num(c, "f") for c in curve], where="post", label="target")
bottom.plot(xs, [num(c, "approx") for c in curve], label="attention, R=%.3g" % num(row, "temperature"))
for a, b, x in zip(cells, cells[1:], xs[1:]):
    if a != b:
        top.axvline(x, ls=":", color="grey")
        bottom.axvline(x, ls=":", color="grey")
top.legend()
bottom.legend()
bottom.set_xlabel("x")
"#
    )
}

fn summary_body(report: &str) -> String {
    format!(
        r#"rows = load({report:?})
fig, ax = plt.subplots()
labels = ["%s P=%s R=%.3g" % (r["function"], r["P_or_Nx"], num(r, "temperature")) for r in rows]
ax.bar(range(len(rows)), [num(r, "sup_err") for r in rows])
ax.set_xticks(range(len(rows)))
ax.set_xticklabels(labels, rotation=30, ha="right")
ax.set_yscale("log")
ax.set_ylabel("sup error")
"#
    )
}

/// Writes `<report>.plot.py` and returns its path.
pub fn emit_plot_script(report: &Path) -> CliResult<PathBuf> {
    let text = fs::read_to_string(report).map_err(|e| CliError::io(report, e))?;
    let command = report_command(&text).unwrap_or_default();
    let report_name = report.display().to_string();
    let curve = curve_path(report);
    let curve_name = curve.display().to_string();
    let has_curve = curve.exists();
    let body = match command.as_str() {
        "sweep" => sweep_body(&report_name),
        "indicator-demo" if has_curve => partition_body(&report_name, &curve_name),
        _ if has_curve => overlay_body(&report_name, &curve_name),
        _ => summary_body(&report_name),
    };
    let image = sibling(report, "png").display().to_string();
    let script = format!(
        "#!/usr/bin/env python3\n\"\"\"Plot for {report_name}.\"\"\"\n{LOADER}{body}fig.tight_layout()\n\
         fig.savefig(sys.argv[1] if len(sys.argv) > 1 else {image:?})\n"
    );
    let path = script_path(report);
    fs::write(&path, script).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
