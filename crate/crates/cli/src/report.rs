//! CSV and JSON reports.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::Format;
use crate::{CliError, CliResult};

pub const CSV_HEADER: [&str; 16] = [
    "command",
    "function",
    "d",
    "n",
    "D",
    "P_or_Nx",
    "G",
    "temperature",
    "epsilon_target",
    "p",
    "samples",
    "seed",
    "sup_err",
    "lp_err",
    "out_of_cover",
    "runtime_ms",
];

/// One configuration's result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub command: String,
    pub function: String,
    pub d: usize,
    pub n: usize,
    #[serde(rename = "D")]
    pub half_width: f64,
    /// Grid points per coordinate, or cover centers.
    #[serde(rename = "P_or_Nx")]
    pub p_or_nx: usize,
    /// Number of centers (pairs count once per side).
    #[serde(rename = "G")]
    pub g: usize,
    pub temperature: f64,
    pub epsilon_target: Option<f64>,
    pub p: f64,
    pub samples: usize,
    pub seed: u64,
    pub sup_err: f64,
    pub lp_err: f64,
    pub out_of_cover: usize,
    pub runtime_ms: f64,
}

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl ReportRow {
    fn record(&self) -> [String; 16] {
        [
            self.command.clone(),
            self.function.clone(),
            self.d.to_string(),
            self.n.to_string(),
            fmt_float(self.half_width),
            self.p_or_nx.to_string(),
            self.g.to_string(),
            fmt_float(self.temperature),
            self.epsilon_target.map(fmt_float).unwrap_or_default(),
            fmt_float(self.p),
            self.samples.to_string(),
            self.seed.to_string(),
            fmt_float(self.sup_err),
            fmt_float(self.lp_err),
            self.out_of_cover.to_string(),
            format!("{:.3}", self.runtime_ms),
        ]
    }
}

/// Outcome of one built-in check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub property: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
    /// Wall time; kept out of reports so they stay reproducible.
    #[serde(skip)]
    pub runtime_ms: f64,
}

fn csv_text<R: AsRef<[String]>>(header: &[&str], records: impl IntoIterator<Item = R>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(r.as_ref())?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io("report", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_rows(rows: &[ReportRow], format: Format) -> CliResult<String> {
    match format {
        Format::Csv => csv_text(&CSV_HEADER, rows.iter().map(|r| r.record())),
        Format::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
    }
}

pub fn render_checks(checks: &[CheckOutcome], format: Format) -> CliResult<String> {
    match format {
        Format::Csv => csv_text(
            &["property", "passed", "measured", "tolerance", "detail"],
            checks.iter().map(|c| {
                [
                    c.property.clone(),
                    c.passed.to_string(),
                    fmt_float(c.measured),
                    fmt_float(c.tolerance),
                    c.detail.clone(),
                ]
            }),
        ),
        Format::Json => Ok(serde_json::to_string_pretty(checks)? + "\n"),
    }
}

/// Writes `text` to `out`, or to stdout.
pub fn write_text(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("stdout", e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ReportRow {
        ReportRow {
            command: "approximate".into(),
            function: "const:0.7".into(),
            d: 1,
            n: 1,
            half_width: 1.0,
            p_or_nx: 4,
            g: 4,
            temperature: 50.0,
            epsilon_target: None,
            p: 2.0,
            samples: 10,
            seed: 0,
            sup_err: 0.1,
            lp_err: 0.0,
            out_of_cover: 0,
            runtime_ms: 1.25,
        }
    }

    #[test]
    fn csv_layout() {
        let text = render_rows(&[row()], Format::Csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "approximate,const:0.7,1,1,1.0000000000000000e0,4,4,5.0000000000000000e1,,2.0000000000000000e0,10,0,\
             1.0000000000000001e-1,0.0000000000000000e0,0,1.250"
        );
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, std::f64::consts::PI, 1e-300, 123456.789] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn json_has_named_columns() {
        let text = render_rows(&[row()], Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v[0]["P_or_Nx"], 4);
        assert!(v[0]["epsilon_target"].is_null());
    }
}
