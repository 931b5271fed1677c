//! Rendering of eval records: a human-readable grid table, a flat delimited
//! export for plotting, and a structured JSON document that round-trips.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::eval::EvalRecord;
use crate::taskset::TaskSetName;

/// Format tag of the structured report document.
pub const REPORT_FORMAT: &str = "extrap-report-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    /// Grid table: rows (model, method, temperature), columns
    /// (taskset, alpha), per-(row, taskset) maximum starred.
    TableText,
    /// One comma-separated row per record; plot-ready.
    Delimited,
    /// Versioned JSON with all records and a summary block; loss-free.
    Structured,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::TableText,
        ReportFormat::Delimited,
        ReportFormat::Structured,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReportFormat::TableText => "table-text",
            ReportFormat::Delimited => "delimited",
            ReportFormat::Structured => "structured",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                CoreError::invalid_parameter(
                    "format",
                    format!("unknown format {s:?}; expected table-text, delimited or structured"),
                )
            })
    }
}

/// Mean-PCC summary of one (model, taskset, method, temperature) group
/// across its alpha values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub model: String,
    pub taskset: TaskSetName,
    pub method: String,
    pub temperature: f64,
    /// Alpha with the highest mean PCC (ties go to the smaller alpha).
    pub best_alpha: f64,
    pub best_mean_pcc: f64,
    /// Mean PCC at alpha = 0, when that cell exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_mean_pcc: Option<f64>,
}

/// Baseline-relative aggregate over all groups at one alpha. Groups without
/// an alpha = 0 cell are skipped; percentage increases with a zero baseline
/// are excluded from the median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaAggregate {
    pub alpha: f64,
    /// Mean over groups of (mean_pcc(alpha) - mean_pcc(0)), in percentage
    /// points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_delta_pct_points: Option<f64>,
    /// Median over groups of the relative increase vs alpha = 0, percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_pct_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    pub alpha_aggregates: Vec<AlphaAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub format: String,
    pub tool_version: String,
    pub records: Vec<EvalRecord>,
    pub summary: Summary,
}

type GroupKey = (String, TaskSetName, String, String);

fn float_key(v: f64) -> String {
    // Stable map key for a float; Display round-trips f64 exactly.
    format!("{v}")
}

fn group_records(records: &[EvalRecord]) -> BTreeMap<GroupKey, Vec<&EvalRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&EvalRecord>> = BTreeMap::new();
    for record in records {
        let key = (
            record.model.clone(),
            record.taskset,
            record.method.clone(),
            float_key(record.temperature),
        );
        groups.entry(key).or_default().push(record);
    }
    groups
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

/// Recomputes every summary statistic from the records.
pub fn compute_summary(records: &[EvalRecord]) -> Summary {
    let grouped = group_records(records);

    let mut groups = Vec::with_capacity(grouped.len());
    for ((model, taskset, method, _), cells) in &grouped {
        let best = cells
            .iter()
            .min_by(|a, b| {
                b.mean_pcc
                    .total_cmp(&a.mean_pcc)
                    .then(a.alpha.total_cmp(&b.alpha))
            })
            .expect("groups are non-empty");
        let baseline = cells
            .iter()
            .find(|r| r.alpha == 0.0)
            .map(|r| r.mean_pcc);
        groups.push(GroupSummary {
            model: model.clone(),
            taskset: *taskset,
            method: method.clone(),
            temperature: cells[0].temperature,
            best_alpha: best.alpha,
            best_mean_pcc: best.mean_pcc,
            baseline_mean_pcc: baseline,
        });
    }

    let mut alphas: Vec<f64> = records.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let mut alpha_aggregates = Vec::with_capacity(alphas.len());
    for alpha in alphas {
        let mut deltas = Vec::new();
        let mut increases = Vec::new();
        for cells in grouped.values() {
            let Some(baseline) = cells.iter().find(|r| r.alpha == 0.0) else {
                continue;
            };
            let Some(at_alpha) = cells.iter().find(|r| r.alpha == alpha) else {
                continue;
            };
            deltas.push((at_alpha.mean_pcc - baseline.mean_pcc) * 100.0);
            if baseline.mean_pcc > 0.0 {
                increases.push((at_alpha.mean_pcc / baseline.mean_pcc - 1.0) * 100.0);
            }
        }
        let mean_delta = if deltas.is_empty() {
            None
        } else {
            Some(deltas.iter().sum::<f64>() / deltas.len() as f64)
        };
        alpha_aggregates.push(AlphaAggregate {
            alpha,
            mean_delta_pct_points: mean_delta,
            median_pct_increase: median(increases),
        });
    }

    Summary {
        groups,
        alpha_aggregates,
    }
}

fn emit_table_text(records: &[EvalRecord]) -> String {
    let mut tasksets: Vec<TaskSetName> = records.iter().map(|r| r.taskset).collect();
    tasksets.sort();
    tasksets.dedup();
    let mut alphas: Vec<f64> = records.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    // Row key: (model, method, temperature).
    let mut rows: Vec<(String, String, String, f64)> = records
        .iter()
        .map(|r| {
            (
                r.model.clone(),
                r.method.clone(),
                float_key(r.temperature),
                r.temperature,
            )
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    rows.dedup();

    let model_width = rows
        .iter()
        .map(|r| r.0.len())
        .chain(["model".len()])
        .max()
        .unwrap_or(5);
    let method_width = rows
        .iter()
        .map(|r| r.1.len())
        .chain(["method".len()])
        .max()
        .unwrap_or(6);
    const CELL: usize = 9;

    let mut out = String::new();
    let _ = write!(out, "{:<model_width$}  {:<method_width$}  {:>5}", "model", "method", "T");
    for taskset in &tasksets {
        let group_width = (CELL + 1) * alphas.len() - 1;
        let _ = write!(out, "  | {:<group_width$}", taskset.as_str());
    }
    out.push('\n');
    let _ = write!(out, "{:<model_width$}  {:<method_width$}  {:>5}", "", "", "");
    for _ in &tasksets {
        let _ = write!(out, "  |");
        for alpha in &alphas {
            let _ = write!(out, " {:>CELL$}", format!("a={alpha}"));
        }
    }
    out.push('\n');

    for (model, method, temp_key, temp) in &rows {
        let _ = write!(
            out,
            "{model:<model_width$}  {method:<method_width$}  {:>5}",
            format!("{temp}")
        );
        for taskset in &tasksets {
            let cells: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| {
                    r.model == *model
                        && r.method == *method
                        && float_key(r.temperature) == *temp_key
                        && r.taskset == *taskset
                })
                .collect();
            let best = cells
                .iter()
                .map(|r| r.mean_pcc)
                .fold(f64::NEG_INFINITY, f64::max);
            let _ = write!(out, "  |");
            for alpha in &alphas {
                let cell = match cells.iter().find(|r| r.alpha == *alpha) {
                    Some(r) => {
                        let marker = if r.mean_pcc == best { "*" } else { "" };
                        let flag = if r.incomplete { "!" } else { "" };
                        format!("{:.4}{marker}{flag}", r.mean_pcc)
                    }
                    None => "-".to_owned(),
                };
                let _ = write!(out, " {cell:>CELL$}");
            }
        }
        out.push('\n');
    }
    out
}

/// One row of the delimited export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelimitedRow {
    pub model: String,
    pub taskset: TaskSetName,
    pub method: String,
    pub alpha: f64,
    pub temperature: f64,
    pub mean_pcc: f64,
    pub seed: u64,
    pub incomplete: bool,
}

const DELIMITED_COLUMNS: &str = "model,taskset,method,alpha,temperature,mean_pcc,seed,incomplete";

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn emit_delimited(records: &[EvalRecord]) -> String {
    let mut out = format!(
        "# {REPORT_FORMAT} tool={}\n{DELIMITED_COLUMNS}\n",
        env!("CARGO_PKG_VERSION")
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.model),
            r.taskset,
            csv_field(&r.method),
            r.alpha,
            r.temperature,
            r.mean_pcc,
            r.seed,
            r.incomplete
        );
    }
    out
}

/// Parses the delimited export back into its rows. The export drops
/// per-instance detail by design; this recovers exactly the emitted rows.
pub fn parse_delimited(text: &str) -> Result<Vec<DelimitedRow>> {
    let parse_err =
        |line: usize, message: String| CoreError::Parse { line, message };
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != DELIMITED_COLUMNS {
                return Err(parse_err(line_no, format!("unexpected columns {line:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields = split_csv(line);
        if fields.len() != 8 {
            return Err(parse_err(
                line_no,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let parse_f64 = |s: &str, name: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(line_no, format!("{name}: {e}")))
        };
        rows.push(DelimitedRow {
            model: fields[0].clone(),
            taskset: fields[1]
                .parse()
                .map_err(|e: CoreError| parse_err(line_no, e.to_string()))?,
            method: fields[2].clone(),
            alpha: parse_f64(&fields[3], "alpha")?,
            temperature: parse_f64(&fields[4], "temperature")?,
            mean_pcc: parse_f64(&fields[5], "mean_pcc")?,
            seed: fields[6]
                .parse()
                .map_err(|e| parse_err(line_no, format!("seed: {e}")))?,
            incomplete: fields[7]
                .parse()
                .map_err(|e| parse_err(line_no, format!("incomplete: {e}")))?,
        });
    }
    Ok(rows)
}

fn split_csv(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                chars.next();
                field.push('"');
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut field)),
            _ => field.push(c),
        }
    }
    fields.push(field);
    fields
}

fn emit_structured(records: &[EvalRecord]) -> String {
    let report = StructuredReport {
        format: REPORT_FORMAT.to_owned(),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        records: records.to_vec(),
        summary: compute_summary(records),
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    text
}

pub fn emit_report(records: &[EvalRecord], format: ReportFormat) -> Result<String> {
    if records.is_empty() {
        return Err(CoreError::EmptyInput("records"));
    }
    Ok(match format {
        ReportFormat::TableText => emit_table_text(records),
        ReportFormat::Delimited => emit_delimited(records),
        ReportFormat::Structured => emit_structured(records),
    })
}

/// Parses a structured report document, checking its format tag.
pub fn parse_report(text: &str) -> Result<StructuredReport> {
    let report: StructuredReport =
        serde_json::from_str(text).map_err(|e| CoreError::Parse {
            line: e.line(),
            message: format!("structured report: {e}"),
        })?;
    if report.format != REPORT_FORMAT {
        return Err(CoreError::invalid_parameter(
            "format",
            format!(
                "unsupported report format {:?} (expected {REPORT_FORMAT:?})",
                report.format
            ),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::InstanceScore;

    fn record(taskset: TaskSetName, alpha: f64, temp: f64, mean: f64) -> EvalRecord {
        let scores = vec![
            InstanceScore {
                id: "a".to_owned(),
                score: Some(mean),
                error: None,
            },
            InstanceScore {
                id: "b".to_owned(),
                score: Some(mean),
                error: None,
            },
        ];
        EvalRecord {
            model: "toy".to_owned(),
            taskset,
            method: "strip-task".to_owned(),
            alpha,
            temperature: temp,
            mean_pcc: mean,
            scores,
            seed: 13,
            started_at: "2000-01-01T00:00:00Z".to_owned(),
            finished_at: "2000-01-01T00:00:01Z".to_owned(),
            cache: None,
            incomplete: false,
        }
    }

    fn sample_records() -> Vec<EvalRecord> {
        vec![
            record(TaskSetName::StrongLocalPriors, 0.0, 1.0, 0.05),
            record(TaskSetName::StrongLocalPriors, 1.0, 1.0, 0.60),
            record(TaskSetName::StrongLocalPriors, 2.0, 1.0, 0.95),
        ]
    }

    #[test]
    fn empty_records_are_an_error() {
        for format in ReportFormat::ALL {
            assert!(emit_report(&[], format).is_err());
        }
    }

    #[test]
    fn single_record_renders_a_one_cell_table() {
        let records = vec![record(TaskSetName::Redefine, 2.0, 1.0, 0.5)];
        let table = emit_report(&records, ReportFormat::TableText).unwrap();
        assert!(table.contains("redefine"), "{table}");
        assert!(table.contains("0.5000*"), "{table}");
        assert!(table.contains("a=2"), "{table}");
    }

    #[test]
    fn table_stars_the_per_taskset_maximum() {
        let table = emit_report(&sample_records(), ReportFormat::TableText).unwrap();
        assert!(table.contains("0.9500*"), "{table}");
        assert!(!table.contains("0.0500*"), "{table}");
        assert!(!table.contains("0.6000*"), "{table}");
    }

    #[test]
    fn structured_report_round_trips() {
        let records = sample_records();
        let text = emit_report(&records, ReportFormat::Structured).unwrap();
        let parsed = parse_report(&text).unwrap();
        assert_eq!(parsed.records, records);
        assert_eq!(parsed.format, REPORT_FORMAT);
        assert_eq!(parsed.summary, compute_summary(&records));
    }

    #[test]
    fn delimited_rows_round_trip() {
        let records = sample_records();
        let text = emit_report(&records, ReportFormat::Delimited).unwrap();
        assert!(text.starts_with(&format!("# {REPORT_FORMAT}")));
        let rows = parse_delimited(&text).unwrap();
        assert_eq!(rows.len(), records.len());
        for (row, record) in rows.iter().zip(&records) {
            assert_eq!(row.model, record.model);
            assert_eq!(row.taskset, record.taskset);
            assert_eq!(row.alpha, record.alpha);
            assert_eq!(row.mean_pcc, record.mean_pcc);
        }
    }

    #[test]
    fn csv_quoting_round_trips() {
        let mut records = sample_records();
        records[0].model = "odd,model \"name\"".to_owned();
        let text = emit_report(&records, ReportFormat::Delimited).unwrap();
        let rows = parse_delimited(&text).unwrap();
        assert_eq!(rows[0].model, records[0].model);
    }

    #[test]
    fn summary_tracks_best_alpha_and_baseline() {
        let summary = compute_summary(&sample_records());
        assert_eq!(summary.groups.len(), 1);
        let group = &summary.groups[0];
        assert_eq!(group.best_alpha, 2.0);
        assert_eq!(group.best_mean_pcc, 0.95);
        assert_eq!(group.baseline_mean_pcc, Some(0.05));

        let at_2 = summary
            .alpha_aggregates
            .iter()
            .find(|a| a.alpha == 2.0)
            .unwrap();
        assert!((at_2.mean_delta_pct_points.unwrap() - 90.0).abs() < 1e-9);
        assert!((at_2.median_pct_increase.unwrap() - 1800.0).abs() < 1e-9);
    }

    #[test]
    fn best_alpha_tie_goes_to_the_smaller_alpha() {
        let records = vec![
            record(TaskSetName::Redefine, 0.0, 1.0, 0.5),
            record(TaskSetName::Redefine, 1.0, 1.0, 0.5),
        ];
        let summary = compute_summary(&records);
        assert_eq!(summary.groups[0].best_alpha, 0.0);
    }

    #[test]
    fn format_names_round_trip() {
        for format in ReportFormat::ALL {
            assert_eq!(format.as_str().parse::<ReportFormat>().unwrap(), format);
        }
        assert!("html".parse::<ReportFormat>().is_err());
    }
}
