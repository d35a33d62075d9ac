//! Experiment reports: tables of estimates, declared criteria, and verdicts
//! recomputed from those tables alone.

use serde::{Deserialize, Serialize};

use crate::stats::{pooled_se, Estimate};

/// Verdicts are withheld when a statistical entry rests on fewer replicates.
pub const MIN_REPLICATES: usize = 20;

/// One table entry. `n == 0` marks a deterministic quantity (no SE).
///
/// Equality is bitwise except that all NaNs are equal, so reports survive a
/// JSON round trip unchanged.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Cell {
    #[serde(with = "non_finite")]
    pub value: f64,
    #[serde(with = "non_finite")]
    pub se: f64,
    pub n: usize,
}

/// JSON has no NaN; non-finite numbers travel as `null`.
mod non_finite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        fn same(a: f64, b: f64) -> bool {
            a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
        }
        same(self.value, other.value) && same(self.se, other.se) && self.n == other.n
    }
}

impl Cell {
    pub fn exact(value: f64) -> Self {
        Cell { value, se: 0.0, n: 0 }
    }

    pub fn is_statistical(&self) -> bool {
        self.n > 0
    }
}

impl From<Estimate> for Cell {
    fn from(e: Estimate) -> Self {
        Cell {
            value: e.value,
            se: e.se,
            n: e.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(Row {
            label: label.into(),
            cells,
        });
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<Cell> {
        let c = self.columns.iter().position(|x| x == column)?;
        let r = self.rows.iter().find(|r| r.label == row)?;
        r.cells.get(c).copied()
    }
}

/// Address of a table entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRef {
    pub table: String,
    pub row: String,
    pub column: String,
}

impl CellRef {
    pub fn new(table: &str, row: impl Into<String>, column: &str) -> Self {
        CellRef {
            table: table.into(),
            row: row.into(),
            column: column.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Cell(CellRef),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Check {
    /// `|a − b| ≤ k · sqrt(se_a² + se_b²)`.
    WithinSe { a: CellRef, b: Operand, k: f64 },
    /// `a > k · se_a`.
    PositiveBySe { a: CellRef, k: f64 },
    /// Values strictly decreasing in the listed order.
    StrictlyDecreasing { cells: Vec<CellRef> },
    /// `lo ≤ num / den ≤ hi`.
    RatioInRange { num: CellRef, den: CellRef, lo: f64, hi: f64 },
    /// `|a − b| ≤ rel · |b|`.
    RelativeWithin { a: CellRef, b: CellRef, rel: f64 },
    /// `a < bound`.
    Below { a: CellRef, bound: f64 },
    /// `a > bound`.
    Above { a: CellRef, bound: f64 },
    /// `a < b` (values only).
    Less { a: CellRef, b: CellRef },
    /// `a == b` bit for bit.
    Exact { a: CellRef, b: Operand },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub description: String,
    pub check: Check,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// A referenced estimate rests on fewer than the minimum replicates.
    Insufficient,
    /// A referenced entry does not exist.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub status: Status,
    pub detail: String,
}

/// Time series for plotting; `replicate == None` marks an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub replicate: Option<usize>,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateSeeds {
    pub label: String,
    pub replicate: usize,
    pub network: u64,
    pub simulation: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub master: u64,
    pub replicates: Vec<ReplicateSeeds>,
    /// Master seed of limit-law Monte Carlo samples, if any.
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub parameters: serde_json::Value,
    pub min_replicates: usize,
    pub tables: Vec<Table>,
    pub criteria: Vec<Criterion>,
    pub verdicts: Vec<Verdict>,
    pub series: Vec<Series>,
    pub seeds: SeedManifest,
}

impl ExperimentReport {
    pub fn new(experiment: &str, parameters: serde_json::Value, seeds: SeedManifest) -> Self {
        ExperimentReport {
            experiment: experiment.into(),
            parameters,
            min_replicates: MIN_REPLICATES,
            tables: Vec::new(),
            criteria: Vec::new(),
            verdicts: Vec::new(),
            series: Vec::new(),
            seeds,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn cell(&self, r: &CellRef) -> Option<Cell> {
        self.table(&r.table)?.cell(&r.row, &r.column)
    }

    pub fn criterion(&mut self, id: &str, description: &str, check: Check) {
        self.criteria.push(Criterion {
            id: id.into(),
            description: description.into(),
            check,
        });
    }

    /// Replaces the numeric tolerance of criterion `id`: the SE multiple,
    /// relative tolerance or bound, depending on the check.
    pub fn set_tolerance(&mut self, id: &str, value: f64) -> crate::Result<()> {
        let criterion = self
            .criteria
            .iter_mut()
            .find(|c| c.id == id)
            .ok_or_else(|| crate::Error::Config {
                path: format!("tolerances.{id}"),
                message: format!("experiment {} has no criterion {id:?}", self.experiment),
            })?;
        match &mut criterion.check {
            Check::WithinSe { k, .. } | Check::PositiveBySe { k, .. } => *k = value,
            Check::RelativeWithin { rel, .. } => *rel = value,
            Check::Below { bound, .. } | Check::Above { bound, .. } => *bound = value,
            _ => {
                return Err(crate::Error::Config {
                    path: format!("tolerances.{id}"),
                    message: "criterion has no numeric tolerance".into(),
                })
            }
        }
        Ok(())
    }

    /// Recomputes every verdict from the tables and declared criteria.
    pub fn evaluate(&self) -> Vec<Verdict> {
        self.criteria
            .iter()
            .map(|c| {
                let (status, detail) = self.judge(&c.check);
                Verdict {
                    id: c.id.clone(),
                    status,
                    detail,
                }
            })
            .collect()
    }

    /// Stores freshly computed verdicts.
    pub fn finalize(mut self) -> Self {
        self.verdicts = self.evaluate();
        self
    }

    pub fn verdict(&self, id: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.id == id)
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.status == Status::Pass)
    }

    /// Whether the stored verdicts agree with a fresh evaluation.
    pub fn is_consistent(&self) -> bool {
        self.verdicts == self.evaluate()
    }

    fn judge(&self, check: &Check) -> (Status, String) {
        let mut refs: Vec<&CellRef> = Vec::new();
        match check {
            Check::WithinSe { a, b, .. } | Check::Exact { a, b } => {
                refs.push(a);
                if let Operand::Cell(b) = b {
                    refs.push(b);
                }
            }
            Check::PositiveBySe { a, .. } | Check::Below { a, .. } | Check::Above { a, .. } => {
                refs.push(a)
            }
            Check::StrictlyDecreasing { cells } => refs.extend(cells),
            Check::RatioInRange { num, den, .. } => refs.extend([num, den]),
            Check::RelativeWithin { a, b, .. } | Check::Less { a, b } => refs.extend([a, b]),
        }
        let mut cells = Vec::with_capacity(refs.len());
        for r in &refs {
            match self.cell(r) {
                Some(c) => cells.push(c),
                None => {
                    return (
                        Status::Missing,
                        format!("no entry {}/{}/{}", r.table, r.row, r.column),
                    )
                }
            }
        }
        if let Some(c) = cells
            .iter()
            .find(|c| c.is_statistical() && c.n < self.min_replicates)
        {
            return (
                Status::Insufficient,
                format!("{} replicates < {}", c.n, self.min_replicates),
            );
        }
        let operand = |b: &Operand, idx: usize| match b {
            Operand::Cell(_) => cells[idx],
            Operand::Const(v) => Cell::exact(*v),
        };
        let (ok, detail) = match check {
            Check::WithinSe { b, k, .. } => {
                let (a, b) = (cells[0], operand(b, 1));
                let tol = k * pooled_se(&[a.se, b.se]);
                let diff = (a.value - b.value).abs();
                (diff <= tol, format!("|{} - {}| = {diff:.4e} vs {k}·SE = {tol:.4e}", a.value, b.value))
            }
            Check::PositiveBySe { k, .. } => {
                let a = cells[0];
                (a.value > k * a.se, format!("{} vs {k}·SE = {:.4e}", a.value, k * a.se))
            }
            Check::StrictlyDecreasing { .. } => {
                let values: Vec<f64> = cells.iter().map(|c| c.value).collect();
                (values.windows(2).all(|w| w[1] < w[0]), format!("{values:?}"))
            }
            Check::RatioInRange { lo, hi, .. } => {
                let r = cells[0].value / cells[1].value;
                ((*lo..=*hi).contains(&r), format!("ratio {r:.4} in [{lo}, {hi}]"))
            }
            Check::RelativeWithin { rel, .. } => {
                let (a, b) = (cells[0].value, cells[1].value);
                let dev = (a - b).abs() / b.abs();
                (dev <= *rel, format!("{a} vs {b}: relative deviation {dev:.4} (limit {rel})"))
            }
            Check::Below { bound, .. } => {
                (cells[0].value < *bound, format!("{} < {bound}", cells[0].value))
            }
            Check::Above { bound, .. } => {
                (cells[0].value > *bound, format!("{} > {bound}", cells[0].value))
            }
            Check::Less { .. } => (
                cells[0].value < cells[1].value,
                format!("{} < {}", cells[0].value, cells[1].value),
            ),
            Check::Exact { b, .. } => {
                let (a, b) = (cells[0].value, operand(b, 1).value);
                (a.to_bits() == b.to_bits() || a == b, format!("{a} == {b}"))
            }
        };
        (if ok { Status::Pass } else { Status::Fail }, detail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ExperimentReport {
        let mut r = ExperimentReport::new("demo", serde_json::json!({}), SeedManifest::default());
        let mut t = Table::new("t", &["x", "y"]);
        t.push("a", vec![Cell { value: 1.0, se: 0.1, n: 30 }, Cell::exact(1.2)]);
        t.push("b", vec![Cell { value: 0.5, se: 0.1, n: 10 }, Cell::exact(0.0)]);
        r.tables.push(t);
        r
    }

    #[test]
    fn within_se_uses_pooled_error() {
        let mut r = report();
        r.criterion(
            "close",
            "",
            Check::WithinSe {
                a: CellRef::new("t", "a", "x"),
                b: Operand::Cell(CellRef::new("t", "a", "y")),
                k: 3.0,
            },
        );
        r.criterion(
            "far",
            "",
            Check::WithinSe {
                a: CellRef::new("t", "a", "x"),
                b: Operand::Const(2.0),
                k: 3.0,
            },
        );
        let r = r.finalize();
        assert_eq!(r.verdict("close").unwrap().status, Status::Pass);
        assert_eq!(r.verdict("far").unwrap().status, Status::Fail);
        assert!(r.is_consistent());
    }

    #[test]
    fn few_replicates_withhold_the_verdict() {
        let mut r = report();
        r.criterion("few", "", Check::Below { a: CellRef::new("t", "b", "x"), bound: 1.0 });
        r.criterion("gone", "", Check::Below { a: CellRef::new("t", "c", "x"), bound: 1.0 });
        let r = r.finalize();
        assert_eq!(r.verdict("few").unwrap().status, Status::Insufficient);
        assert_eq!(r.verdict("gone").unwrap().status, Status::Missing);
        assert!(!r.all_pass());
    }

    #[test]
    fn verdicts_follow_edited_tables() {
        let mut r = report();
        r.criterion("dec", "", Check::StrictlyDecreasing {
            cells: vec![CellRef::new("t", "a", "y"), CellRef::new("t", "b", "y")],
        });
        let mut r = r.finalize();
        assert!(r.all_pass());
        r.tables[0].rows[1].cells[1].value = 5.0;
        assert!(!r.is_consistent());
        assert_eq!(r.evaluate()[0].status, Status::Fail);
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut r = report();
        r.criterion("ratio", "", Check::RatioInRange {
            num: CellRef::new("t", "a", "x"),
            den: CellRef::new("t", "a", "y"),
            lo: 0.5,
            hi: 1.0,
        });
        let r = r.finalize();
        let back: ExperimentReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
