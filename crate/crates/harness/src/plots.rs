//! Plot-data export: tidy long-format learning curves and the
//! uncertainty/TD-target scatter. No rendering.

use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::format::{sig9, write_csv};

pub const CURVES_HEADER: [&str; 5] = ["iteration", "metric", "value", "seed", "variant"];
pub const SCATTER_HEADER: [&str; 2] = ["uncertainty", "td_target"];

/// Columns of an iteration CSV that are identifiers, not metrics.
const ID_COLUMNS: [&str; 3] = ["iteration", "variant", "seed"];

struct Table {
    header: Vec<String>,
    /// `(line, fields)` with 1-based file line numbers.
    rows: Vec<(u64, Vec<String>)>,
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> HarnessError {
    HarnessError::MalformedCsv { path: path.display().to_string(), line, message: message.into() }
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record.iter().map(String::from).collect()));
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
        return HarnessError::io(path, io);
    }
    let line = e.position().map_or(0, |p| p.line());
    malformed(path, line, e.to_string())
}

fn column(table: &Table, path: &Path, name: &str) -> Result<usize> {
    table.header.iter().position(|h| h == name).ok_or_else(|| malformed(path, 1, format!("missing column `{name}`")))
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| malformed(path, line, format!("`{field}` is not a number")))
}

/// Metric columns of an iteration CSV.
pub fn available_metrics(path: &Path) -> Result<Vec<String>> {
    let table = read_table(path)?;
    Ok(table.header.into_iter().filter(|h| !ID_COLUMNS.contains(&h.as_str())).collect())
}

/// Long-format curves from iteration CSVs. Empty cells and non-numeric
/// flags (`true`/`false`) are skipped. Returns the number of rows written.
pub fn export_curves(inputs: &[impl AsRef<Path>], metrics: &[String], out: &Path) -> Result<usize> {
    if inputs.is_empty() {
        return Err(HarnessError::Usage("no iteration CSVs given".into()));
    }
    let mut rows = Vec::new();
    for input in inputs {
        let path = input.as_ref();
        let table = read_table(path)?;
        let available: Vec<&String> = table.header.iter().filter(|h| !ID_COLUMNS.contains(&h.as_str())).collect();
        if metrics.is_empty() {
            return Err(HarnessError::Usage(format!(
                "empty metric selection; available metrics: {}",
                available.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        let iteration = column(&table, path, "iteration")?;
        let seed = column(&table, path, "seed")?;
        let variant = column(&table, path, "variant")?;
        let selected = metrics
            .iter()
            .map(|m| {
                available.iter().position(|a| *a == m).map(|_| column(&table, path, m)).unwrap_or_else(|| {
                    Err(HarnessError::Usage(format!(
                        "unknown metric `{m}`; available metrics: {}",
                        available.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                    )))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        for (line, fields) in &table.rows {
            if fields.len() != table.header.len() {
                return Err(malformed(
                    path,
                    *line,
                    format!("expected {} fields, found {}", table.header.len(), fields.len()),
                ));
            }
            let it = fields[iteration].parse::<u64>().map_err(|_| malformed(path, *line, "bad iteration index"))?;
            for (&col, name) in selected.iter().zip(metrics) {
                let cell = fields[col].trim();
                if cell.is_empty() || cell == "true" || cell == "false" {
                    continue;
                }
                let value = parse_f64(path, *line, cell)?;
                rows.push(vec![
                    it.to_string(),
                    name.clone(),
                    sig9(value),
                    fields[seed].clone(),
                    fields[variant].clone(),
                ]);
            }
        }
    }
    write_csv(out, &CURVES_HEADER, &rows)?;
    Ok(rows.len())
}

/// Copies `(uncertainty, td_target)` pairs into the scatter file,
/// validating every value. Returns the number of pairs.
pub fn export_scatter(input: &Path, out: &Path) -> Result<usize> {
    let table = read_table(input)?;
    let u = column(&table, input, "uncertainty")?;
    let y = column(&table, input, "td_target")?;
    let rows = table
        .rows
        .iter()
        .map(|(line, fields)| {
            let get = |i: usize| {
                fields
                    .get(i)
                    .ok_or_else(|| malformed(input, *line, "missing field"))
                    .and_then(|f| parse_f64(input, *line, f))
            };
            Ok(vec![sig9(get(u)?), sig9(get(y)?)])
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(out, &SCATTER_HEADER, &rows)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn curves_are_long_format_and_skip_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let a =
            write(dir.path(), "a.csv", "iteration,variant,seed,kl_max,true_return\n0,full,0,0.01,\n1,full,0,0.02,5\n");
        let b = write(dir.path(), "b.csv", "iteration,variant,seed,kl_max,true_return\n0,full,1,0.03,7\n");
        let out = dir.path().join("curves.csv");
        let n = export_curves(&[a, b], &["kl_max".into(), "true_return".into()], &out).unwrap();
        assert_eq!(n, 5);
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.starts_with("iteration,metric,value,seed,variant\n"));
        assert!(text.contains("1,true_return,5,0,full\n"));
    }

    #[test]
    fn empty_or_unknown_metric_selection_lists_available_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "iteration,variant,seed,kl_max\n0,full,0,0.01\n");
        let out = dir.path().join("c.csv");
        let err = export_curves(&[&a], &[], &out).unwrap_err().to_string();
        assert!(err.contains("available metrics: kl_max"), "{err}");
        let err = export_curves(&[&a], &["nope".into()], &out).unwrap_err().to_string();
        assert!(err.contains("kl_max"), "{err}");
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "iteration,variant,seed,kl_max\n0,full,0,0.01\n1,full,0,abc\n");
        let err = export_curves(&[&a], &["kl_max".into()], &dir.path().join("c.csv")).unwrap_err();
        assert!(matches!(err, HarnessError::MalformedCsv { line: 3, .. }), "{err}");
        let b = write(dir.path(), "b.csv", "uncertainty,td_target\n0.1,2\n0.2\n");
        let err = export_scatter(&b, &dir.path().join("s.csv")).unwrap_err();
        assert!(matches!(err, HarnessError::MalformedCsv { line: 3, .. }), "{err}");
    }

    #[test]
    fn scatter_keeps_every_pair() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "d.csv", "uncertainty,td_target\n-3,1.5\n-2,0.25\n-1,4\n");
        assert_eq!(export_scatter(&a, &dir.path().join("s.csv")).unwrap(), 3);
    }
}
