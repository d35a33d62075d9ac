//! Artifact persistence: atomic writes and versioned CSV schemas.
//!
//! Every CSV starts with a `# schema: hawkes-mf/<name> v<version>` comment
//! line followed by a header. Numbers use Rust's shortest round-trip
//! formatting, so identical values always produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::grid::TimeGrid;
use crate::report::{ExperimentReport, Table};
use crate::simulator::SpikeTrains;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::param("path", format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// CSV under construction.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        let mut text = format!("# schema: hawkes-mf/{schema} v{SCHEMA_VERSION}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Csv { text }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for f in fields {
            if !first {
                self.text.push(',');
            }
            self.text.push_str(f.as_ref());
            first = false;
        }
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// `vertex,time`, one row per event, vertices in order.
pub fn events_csv(trains: &SpikeTrains) -> String {
    let mut csv = Csv::new("events", &["vertex", "time"]);
    for (i, train) in trains.trains().iter().enumerate() {
        for &t in train {
            csv.row([i.to_string(), num(t)]);
        }
    }
    csv.finish()
}

/// Wide grid table: `t` followed by one column per path.
pub fn paths_csv(schema: &str, grid: &TimeGrid, names: &[String], paths: &[&[f64]]) -> String {
    let mut header = vec!["t"];
    header.extend(names.iter().map(String::as_str));
    let mut csv = Csv::new(schema, &header);
    for m in 0..grid.len() {
        let mut row = vec![num(grid.time(m))];
        row.extend(paths.iter().map(|p| num(p[m])));
        csv.row(row);
    }
    csv.finish()
}

/// Long-format table: `row,column,value,se,n`.
pub fn table_csv(table: &Table) -> String {
    let mut csv = Csv::new(&format!("table/{}", table.name), &["row", "column", "value", "se", "n"]);
    for row in &table.rows {
        for (column, cell) in table.columns.iter().zip(&row.cells) {
            csv.row([
                row.label.clone(),
                column.clone(),
                num(cell.value),
                num(cell.se),
                cell.n.to_string(),
            ]);
        }
    }
    csv.finish()
}

/// Tidy plot data `series,t,value,replicate`; aggregates leave `replicate`
/// empty. A report without series yields the header only.
pub fn plot_data_csv(report: &ExperimentReport) -> String {
    let mut csv = Csv::new("plot", &["series", "t", "value", "replicate"]);
    for s in &report.series {
        let rep = s.replicate.map(|r| r.to_string()).unwrap_or_default();
        for (t, v) in s.t.iter().zip(&s.values) {
            csv.row([s.name.clone(), num(*t), num(*v), rep.clone()]);
        }
    }
    csv.finish()
}

/// Verdict lines `PASS id: detail`.
pub fn verdict_lines(report: &ExperimentReport) -> String {
    let mut out = String::new();
    for v in &report.verdicts {
        let tag = match v.status {
            crate::report::Status::Pass => "PASS",
            crate::report::Status::Fail => "FAIL",
            crate::report::Status::Insufficient => "INSUFFICIENT",
            crate::report::Status::Missing => "MISSING",
        };
        let _ = writeln!(out, "{tag} {}/{}: {}", report.experiment, v.id, v.detail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{Cell, SeedManifest, Series};

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        let leftovers = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn csv_carries_schema_header() {
        let trains = SpikeTrains::new(vec![vec![0.5], vec![0.25, 1.0]]).unwrap();
        let text = events_csv(&trains);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# schema: hawkes-mf/events v1");
        assert_eq!(lines[1], "vertex,time");
        assert_eq!(&lines[2..], ["0,0.5", "1,0.25", "1,1"]);
    }

    #[test]
    fn empty_report_gives_header_only_plot_data() {
        let report = ExperimentReport::new("x", serde_json::json!({}), SeedManifest::default());
        assert_eq!(plot_data_csv(&report).lines().count(), 2);
    }

    #[test]
    fn plot_data_is_long_format() {
        let mut report = ExperimentReport::new("x", serde_json::json!({}), SeedManifest::default());
        report.series.push(Series {
            name: "s".into(),
            replicate: Some(3),
            t: vec![0.0, 1.0],
            values: vec![2.0, 4.0],
        });
        report.series.push(Series { name: "m".into(), replicate: None, t: vec![0.0], values: vec![1.0] });
        let text = plot_data_csv(&report);
        assert!(text.ends_with("s,0,2,3\ns,1,4,3\nm,0,1,\n"), "{text}");
    }

    #[test]
    fn table_rows_are_long_format() {
        let mut t = Table::new("demo", &["a"]);
        t.push("r", vec![Cell { value: 1.5, se: 0.25, n: 20 }]);
        assert!(table_csv(&t).ends_with("row,column,value,se,n\nr,a,1.5,0.25,20\n"));
    }
}
