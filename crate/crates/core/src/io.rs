//! CSV ingestion and export.
//!
//! Files are comma separated UTF-8 with a header row and `.` as the decimal
//! mark. An empty cell or `NA` counts as missing; rows with a missing value in
//! any used column are dropped. Any other cell that does not parse is an error
//! reported with its line number and column name.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::nuisance::Dataset;
use crate::{Error, Result};

/// Monotone transform applied to income before ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum IncomeTransform {
    None,
    /// `(i + offset)^p`.
    Power { p: f64, offset: f64 },
}

impl Default for IncomeTransform {
    fn default() -> Self {
        IncomeTransform::Power { p: 0.2, offset: 1.0 }
    }
}

impl IncomeTransform {
    pub fn apply(self, v: f64) -> Option<f64> {
        match self {
            IncomeTransform::None => Some(v),
            IncomeTransform::Power { p, offset } => {
                let base = v + offset;
                (base >= 0.0).then(|| base.powf(p))
            }
        }
    }
}

impl FromStr for IncomeTransform {
    type Err = String;

    /// `none`, `power` (the default exponent and offset), `power:P` or
    /// `power:P,OFFSET`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(IncomeTransform::None);
        }
        let rest = s.strip_prefix("power").ok_or_else(|| format!("unknown income transform '{s}'"))?;
        if rest.is_empty() {
            return Ok(IncomeTransform::default());
        }
        let args = rest.strip_prefix(':').ok_or_else(|| format!("expected 'power:P[,OFFSET]', got '{s}'"))?;
        let mut parts = args.split(',').map(|a| a.trim().parse::<f64>());
        let p = parts.next().and_then(|r| r.ok()).ok_or_else(|| format!("bad exponent in '{s}'"))?;
        let offset = match parts.next() {
            None => 1.0,
            Some(r) => r.map_err(|_| format!("bad offset in '{s}'"))?,
        };
        if parts.next().is_some() {
            return Err(format!("too many arguments in '{s}'"));
        }
        if !(p > 0.0) || !p.is_finite() || !offset.is_finite() {
            return Err(format!("power transform needs a positive exponent and a finite offset, got '{s}'"));
        }
        Ok(IncomeTransform::Power { p, offset })
    }
}

impl fmt::Display for IncomeTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IncomeTransform::None => write!(f, "none"),
            IncomeTransform::Power { p, offset } => write!(f, "power:{p},{offset}"),
        }
    }
}

/// Which columns of a file hold what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub outcome: String,
    pub income: String,
    pub exposure: String,
    pub covariates: Vec<String>,
}

/// The used columns of a file, untransformed, after dropping incomplete rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: ColumnSpec,
    pub y: Vec<f64>,
    pub income: Vec<f64>,
    /// Raw exposure label of every row.
    pub exposure: Vec<String>,
    /// One row per observation, in `columns.covariates` order.
    pub covariates: Vec<Vec<f64>>,
    /// Rows removed because a used column was missing.
    pub dropped: usize,
}

/// A dataset ready for estimation, with the labels of its exposure levels.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Dataset,
    /// `levels[e]` is the raw label coded as level `e`.
    pub levels: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn input_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Input { path: path.display().to_string(), message: message.into() }
}

/// Reads the columns named in `columns` from a headed CSV file.
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnSpec) -> Result<Table> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_error(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| input_error(path, e.to_string()))?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| input_error(path, format!("column '{name}' not found")))
    };
    let iy = find(&columns.outcome)?;
    let ii = find(&columns.income)?;
    let ie = find(&columns.exposure)?;
    let ix: Vec<usize> = columns.covariates.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut table = Table {
        columns: columns.clone(),
        y: Vec::new(),
        income: Vec::new(),
        exposure: Vec::new(),
        covariates: Vec::new(),
        dropped: 0,
    };
    for (r, record) in reader.records().enumerate() {
        // the header is line 1
        let line = r + 2;
        let record = record.map_err(|e| input_error(path, format!("line {line}: {e}")))?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let used = std::iter::once(iy).chain([ii, ie]).chain(ix.iter().copied());
        if used.clone().any(|idx| is_missing(cell(idx))) {
            table.dropped += 1;
            continue;
        }
        let number = |idx: usize| -> Result<f64> {
            let raw = cell(idx);
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                input_error(path, format!("line {line}, column '{}': cannot parse '{raw}' as a number", &header[idx]))
            })
        };
        table.y.push(number(iy)?);
        table.income.push(number(ii)?);
        table.exposure.push(cell(ie).to_string());
        table.covariates.push(ix.iter().map(|&idx| number(idx)).collect::<Result<_>>()?);
    }
    if table.dropped > 0 {
        log::warn!("{}: dropped {} rows with missing values", path.display(), table.dropped);
    }
    if table.y.is_empty() {
        return Err(input_error(path, "no complete rows"));
    }
    Ok(table)
}

/// Writes the used columns back out; `load_csv` of the result reproduces
/// every value exactly.
pub fn save_csv(path: impl AsRef<Path>, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let c = &table.columns;
    let mut header = vec![c.outcome.as_str(), c.income.as_str(), c.exposure.as_str()];
    header.extend(c.covariates.iter().map(String::as_str));
    w.write_record(&header)?;
    for i in 0..table.y.len() {
        let mut row = vec![table.y[i].to_string(), table.income[i].to_string(), table.exposure[i].clone()];
        row.extend(table.covariates[i].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn label_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

impl Table {
    /// Table of a dataset with generic column names `y, income, exposure,
    /// x1, x2, ...`; exposure labels are the level numbers.
    pub fn from_dataset(data: &Dataset) -> Self {
        let p = data.covariates().ncols();
        Self {
            columns: ColumnSpec {
                outcome: "y".into(),
                income: "income".into(),
                exposure: "exposure".into(),
                covariates: (1..=p).map(|j| format!("x{j}")).collect(),
            },
            y: data.y().to_vec(),
            income: data.income().to_vec(),
            exposure: data.exposure().iter().map(|e| e.to_string()).collect(),
            covariates: (0..data.len()).map(|i| data.covariates().row(i).iter().copied().collect()).collect(),
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Distinct exposure labels in ascending order (numeric when every label
    /// is a number), with `baseline` moved to the front when given.
    pub fn levels(&self, baseline: Option<&str>) -> Result<Vec<String>> {
        let mut labels: Vec<String> = self.exposure.clone();
        labels.sort_by(|a, b| label_order(a, b));
        labels.dedup();
        if let Some(b) = baseline {
            let pos = labels
                .iter()
                .position(|l| l == b)
                .ok_or_else(|| Error::InvalidConfig(format!("baseline '{b}' is not an exposure label")))?;
            let label = labels.remove(pos);
            labels.insert(0, label);
        }
        Ok(labels)
    }

    /// Applies the income transform and codes the exposure labels.
    pub fn prepare(&self, transform: IncomeTransform, baseline: Option<&str>) -> Result<Prepared> {
        let levels = self.levels(baseline)?;
        let exposure = self.exposure.iter().map(|l| levels.iter().position(|x| x == l).expect("label listed")).collect();
        let income = self
            .income
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                transform.apply(v).ok_or_else(|| {
                    Error::InvalidData(format!("income {v} in complete row {} is outside the domain of {transform}", i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p = self.columns.covariates.len();
        let x = DMatrix::from_fn(self.len(), p, |i, j| self.covariates[i][j]);
        let data = Dataset::new(self.y.clone(), income, exposure, x, levels.len())?;
        Ok(Prepared { data, levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn spec() -> ColumnSpec {
        ColumnSpec { outcome: "y".into(), income: "inc".into(), exposure: "grp".into(), covariates: vec!["a".into()] }
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_a_small_file() {
        let f = write("y,inc,grp,a,unused\n1.5,10,b,0.1,x\n2,20,a,0.2,\n3,30,b,0.3,z\n");
        let t = load_csv(f.path(), &spec()).unwrap();
        assert_eq!(t.len(), 3);
        let p = t.prepare(IncomeTransform::None, None).unwrap();
        assert_eq!(p.levels, vec!["a", "b"]);
        assert_eq!(p.data.exposure(), &[1, 0, 1]);
    }

    #[test]
    fn blank_income_drops_the_row() {
        let f = write("y,inc,grp,a\n1,10,0,0.1\n2,,1,0.2\n3,30,1,0.3\n");
        let t = load_csv(f.path(), &spec()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dropped, 1);
    }

    #[test]
    fn bad_cell_reports_line_and_column() {
        let f = write("y,inc,grp,a\n1,10,0,0.1\n2,abc,1,0.2\n");
        let msg = load_csv(f.path(), &spec()).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("'inc'"), "{msg}");
    }

    #[test]
    fn missing_column_is_an_error() {
        let f = write("y,income,grp,a\n1,10,0,0.1\n");
        assert!(load_csv(f.path(), &spec()).unwrap_err().to_string().contains("'inc'"));
    }

    #[test]
    fn numeric_labels_sort_numerically_and_baseline_moves_first() {
        let f = write("y,inc,grp,a\n1,1,10,0\n1,2,9,0\n1,3,2,0\n");
        let t = load_csv(f.path(), &spec()).unwrap();
        assert_eq!(t.levels(None).unwrap(), vec!["2", "9", "10"]);
        assert_eq!(t.levels(Some("9")).unwrap(), vec!["9", "2", "10"]);
        assert!(t.levels(Some("4")).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let f = write("y,inc,grp,a\n0.1,3.3333333333333335,1,-2e-7\n2,1e10,0,0.30000000000000004\n");
        let t = load_csv(f.path(), &spec()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_csv(out.path(), &t).unwrap();
        assert_eq!(load_csv(out.path(), &spec()).unwrap(), t);
    }

    #[test]
    fn default_transform_is_fifth_root_of_income_plus_one() {
        let t = IncomeTransform::default();
        assert!((t.apply(31.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(t.apply(-2.0), None);
        assert_eq!("power:0.5,0".parse::<IncomeTransform>().unwrap(), IncomeTransform::Power { p: 0.5, offset: 0.0 });
        assert_eq!("power".parse::<IncomeTransform>().unwrap(), t);
        assert!("power:-1".parse::<IncomeTransform>().is_err());
        assert_eq!(t.to_string().parse::<IncomeTransform>().unwrap(), t);
    }
}
