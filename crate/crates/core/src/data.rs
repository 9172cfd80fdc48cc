//! Right-censored survival records and the risk-set index built from them.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{FiduxError, Result};

/// One subject: covariates, observed time and failure indicator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectRecord {
    pub x: Vec<f64>,
    pub time: f64,
    pub failed: bool,
}

impl SubjectRecord {
    pub fn new(x: Vec<f64>, time: f64, failed: bool) -> Self {
        Self { x, time, failed }
    }
}

/// A validated collection of subject records sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    records: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
}

impl SurvivalDataset {
    /// Validates records; covariate names default to `x1..xp`.
    pub fn new(records: Vec<SubjectRecord>, covariate_names: Option<Vec<String>>) -> Result<Self> {
        let first = records.first().ok_or(FiduxError::NoRecords)?;
        let p = first.x.len();
        for (index, r) in records.iter().enumerate() {
            if r.x.len() != p {
                return Err(FiduxError::InvalidRecord {
                    index,
                    message: format!("covariate dimension {} differs from {p}", r.x.len()),
                });
            }
            if !(r.time.is_finite() && r.time > 0.0) {
                return Err(FiduxError::InvalidRecord {
                    index,
                    message: "time must be positive and finite".into(),
                });
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(FiduxError::InvalidRecord {
                    index,
                    message: "non-finite covariate".into(),
                });
            }
        }
        let covariate_names =
            covariate_names.unwrap_or_else(|| (1..=p).map(|j| format!("x{j}")).collect());
        if covariate_names.len() != p {
            return Err(FiduxError::DimensionMismatch { expected: p, found: covariate_names.len() });
        }
        Ok(Self { records, covariate_names })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    /// Number of observed failures.
    pub fn m(&self) -> usize {
        self.records.iter().filter(|r| r.failed).count()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
}

/// Column mapping for delimited input.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub time: String,
    pub status: String,
    /// `None` takes every column other than time and status, in header order.
    pub covariates: Option<Vec<String>>,
    pub delimiter: u8,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { time: "time".into(), status: "status".into(), covariates: None, delimiter: b',' }
    }
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| FiduxError::MalformedRow {
        row,
        message: format!("cannot parse `{field}` in column `{column}`"),
    })
}

/// Reads a delimited table. Rows are numbered from 1, excluding the header.
pub fn load_dataset<R: Read>(source: R, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| FiduxError::MissingColumn(name.to_string()))
    };
    let time_col = find(&schema.time)?;
    let status_col = find(&schema.status)?;
    let covariate_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&c| c != time_col && c != status_col).collect(),
    };
    let names: Vec<String> = covariate_cols.iter().map(|&c| header[c].clone()).collect();

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| FiduxError::MalformedRow { row: row_no, message: e.to_string() })?;
        if row.len() != header.len() {
            return Err(FiduxError::ColumnCount { row: row_no, expected: header.len(), found: row.len() });
        }
        let time = parse_number(&row[time_col], row_no, &schema.time)?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(FiduxError::NonPositiveTime { row: row_no });
        }
        let status = parse_number(&row[status_col], row_no, &schema.status)?;
        let failed = if status == 1.0 {
            true
        } else if status == 0.0 {
            false
        } else {
            return Err(FiduxError::InvalidStatus { row: row_no });
        };
        let mut x = Vec::with_capacity(covariate_cols.len());
        for (&c, name) in covariate_cols.iter().zip(&names) {
            let v = parse_number(&row[c], row_no, name)?;
            if !v.is_finite() {
                return Err(FiduxError::MalformedRow {
                    row: row_no,
                    message: format!("non-finite value in column `{name}`"),
                });
            }
            x.push(v);
        }
        records.push(SubjectRecord { x, time, failed });
    }
    if records.is_empty() {
        return Err(FiduxError::NoRecords);
    }
    SurvivalDataset::new(records, Some(names))
}

pub fn load_dataset_path(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path)?;
    load_dataset(std::io::BufReader::new(file), schema)
}

/// Writes `time,status,<covariates>` with a header row.
pub fn write_dataset<W: Write>(data: &SurvivalDataset, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    writer.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.time.to_string(), if r.failed { "1" } else { "0" }.to_string()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Ordered failure times, tie groups and nested at-risk sets.
///
/// Subjects are indexed by their position in the source dataset. Risk sets are
/// suffixes of the time-sorted order, which is what lets every risk-set sum be
/// computed in one backward pass (see [`crate::moments`]).
#[derive(Debug, Clone)]
pub struct RiskStructure {
    p: usize,
    covariates: Vec<f64>,
    times: Vec<f64>,
    failed: Vec<bool>,
    failure_times: Vec<f64>,
    tie_groups: Vec<Vec<usize>>,
    failing_order: Vec<usize>,
    constraint_group: Vec<usize>,
    sorted: Vec<usize>,
    risk_start: Vec<usize>,
}

/// Builds the risk structure; fails when there are no failures.
pub fn build_risk_structure(data: &SurvivalDataset) -> Result<RiskStructure> {
    let n = data.n();
    let p = data.p();
    let mut covariates = Vec::with_capacity(n * p);
    for r in data.records() {
        covariates.extend_from_slice(&r.x);
    }
    let times: Vec<f64> = data.records().iter().map(|r| r.time).collect();
    let failed: Vec<bool> = data.records().iter().map(|r| r.failed).collect();
    RiskStructure::from_parts(p, covariates, times, failed)
}

impl RiskStructure {
    fn from_parts(p: usize, covariates: Vec<f64>, times: Vec<f64>, failed: Vec<bool>) -> Result<Self> {
        let n = times.len();
        let mut sorted: Vec<usize> = (0..n).collect();
        sorted.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));

        let mut failure_times: Vec<f64> = Vec::new();
        let mut tie_groups: Vec<Vec<usize>> = Vec::new();
        for &i in &sorted {
            if !failed[i] {
                continue;
            }
            // exact equality defines a tie
            if failure_times.last() == Some(&times[i]) {
                tie_groups.last_mut().expect("group exists").push(i);
            } else {
                failure_times.push(times[i]);
                tie_groups.push(vec![i]);
            }
        }
        if failure_times.is_empty() {
            return Err(FiduxError::NoFailures);
        }
        let risk_start: Vec<usize> = failure_times
            .iter()
            .map(|&t| sorted.partition_point(|&j| times[j] < t))
            .collect();
        let mut failing_order = Vec::new();
        let mut constraint_group = Vec::new();
        for (k, group) in tie_groups.iter().enumerate() {
            for &i in group {
                failing_order.push(i);
                constraint_group.push(k);
            }
        }
        Ok(Self {
            p,
            covariates,
            times,
            failed,
            failure_times,
            tie_groups,
            failing_order,
            constraint_group,
            sorted,
            risk_start,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of failures (one fiducial constraint each).
    pub fn m(&self) -> usize {
        self.failing_order.len()
    }

    /// Number of distinct failure times.
    pub fn n_groups(&self) -> usize {
        self.failure_times.len()
    }

    pub fn covariate(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn failed(&self, i: usize) -> bool {
        self.failed[i]
    }

    pub fn failure_times(&self) -> &[f64] {
        &self.failure_times
    }

    pub fn tie_groups(&self) -> &[Vec<usize>] {
        &self.tie_groups
    }

    /// Failing subjects in time order, ties by subject index.
    pub fn failing_order(&self) -> &[usize] {
        &self.failing_order
    }

    /// Tie group of the h-th failure in [`Self::failing_order`].
    pub fn group_of(&self, h: usize) -> usize {
        self.constraint_group[h]
    }

    /// Subjects sorted by observed time.
    pub fn sorted_subjects(&self) -> &[usize] {
        &self.sorted
    }

    /// Position in [`Self::sorted_subjects`] where the k-th risk set begins.
    pub fn risk_start(&self, k: usize) -> usize {
        self.risk_start[k]
    }

    /// Members of the risk set of tie group `k`: `{j : Y_j >= t_k}`.
    pub fn risk_set(&self, k: usize) -> &[usize] {
        &self.sorted[self.risk_start[k]..]
    }

    /// Materialized risk sets, one per distinct failure time.
    pub fn risk_sets(&self) -> Vec<Vec<usize>> {
        (0..self.n_groups()).map(|k| self.risk_set(k).to_vec()).collect()
    }

    /// Column means and sample standard deviations (1 for constant columns).
    pub fn standardization(&self) -> Standardization {
        let n = self.n();
        let mut center = vec![0.0; self.p];
        let mut scale = vec![1.0; self.p];
        for j in 0..self.p {
            let mean = (0..n).map(|i| self.covariate(i)[j]).sum::<f64>() / n as f64;
            center[j] = mean;
            if n > 1 {
                let var = (0..n).map(|i| (self.covariate(i)[j] - mean).powi(2)).sum::<f64>()
                    / (n - 1) as f64;
                let sd = var.sqrt();
                if sd > 1e-12 * (1.0 + mean.abs()) {
                    scale[j] = sd;
                }
            }
        }
        Standardization { center, scale }
    }

    /// Copy with covariates mapped through `z = (x - center) / scale`.
    pub fn standardized(&self, s: &Standardization) -> RiskStructure {
        let mut out = self.clone();
        for i in 0..self.n() {
            for j in 0..self.p {
                let v = &mut out.covariates[i * self.p + j];
                *v = (*v - s.center[j]) / s.scale[j];
            }
        }
        out
    }

    /// Copy with subject `i` relabelled as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<RiskStructure> {
        let n = self.n();
        if perm.len() != n {
            return Err(FiduxError::DimensionMismatch { expected: n, found: perm.len() });
        }
        let mut covariates = vec![0.0; n * self.p];
        let mut times = vec![0.0; n];
        let mut failed = vec![false; n];
        for i in 0..n {
            let to = perm[i];
            covariates[to * self.p..(to + 1) * self.p].copy_from_slice(self.covariate(i));
            times[to] = self.times[i];
            failed[to] = self.failed[i];
        }
        RiskStructure::from_parts(self.p, covariates, times, failed)
    }
}

/// Affine covariate map used internally by the optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Self { center: vec![0.0; p], scale: vec![1.0; p] }
    }

    /// Coefficients on the standardized scale to the original covariate scale.
    pub fn to_original(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect()
    }

    pub fn to_standardized(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter().zip(&self.scale).map(|(b, s)| b * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: &[(f64, bool, f64)]) -> SurvivalDataset {
        let recs = rows.iter().map(|&(y, d, x)| SubjectRecord::new(vec![x], y, d)).collect();
        SurvivalDataset::new(recs, None).unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let src = "time,status,x1\n1,1,0.5\n2,0,1.0\n3,1,-1.0\n";
        let d = load_dataset(src.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!((d.n(), d.p(), d.m()), (3, 1, 2));
        assert_eq!(d.records()[1], SubjectRecord::new(vec![1.0], 2.0, false));
    }

    #[test]
    fn rejects_negative_time() {
        let src = "time,status,x1\n1,1,0.5\n-1,0,1.0\n";
        let err = load_dataset(src.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert_eq!(err.to_string(), "non-positive time at row 2");
    }

    #[test]
    fn rejects_empty_and_bad_rows() {
        let err = load_dataset("time,status,x1\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert_eq!(err.to_string(), "no records");
        let err = load_dataset("time,status,x1\n1,2,0\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, FiduxError::InvalidStatus { row: 1 }));
        let err = load_dataset("time,status,x1\n1,1\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, FiduxError::ColumnCount { row: 1, .. }));
        let err = load_dataset("time,status,x1\n1,1,abc\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, FiduxError::MalformedRow { row: 1, .. }));
        let err = load_dataset("time,x1\n1,1\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert_eq!(err.to_string(), "missing column `status`");
    }

    #[test]
    fn custom_schema_and_delimiter() {
        let src = "a;T;D;b\n9;1.5;1;2\n8;2.5;0;3\n";
        let schema = CsvSchema {
            time: "T".into(),
            status: "D".into(),
            covariates: Some(vec!["b".into()]),
            delimiter: b';',
        };
        let d = load_dataset(src.as_bytes(), &schema).unwrap();
        assert_eq!(d.covariate_names(), &["b".to_string()]);
        assert_eq!(d.records()[0].x, vec![2.0]);
    }

    #[test]
    fn write_then_load_round_trips() {
        let d = dataset(&[(1.25, true, 0.5), (2.0, false, -3.0)]);
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = load_dataset(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn risk_sets_without_ties() {
        let r = build_risk_structure(&dataset(&[(1.0, true, 0.0), (2.0, false, 0.0), (3.0, true, 0.0)])).unwrap();
        assert_eq!(r.failure_times(), &[1.0, 3.0]);
        assert_eq!(r.risk_sets(), vec![vec![0, 1, 2], vec![2]]);
        assert_eq!(r.failing_order(), &[0, 2]);
    }

    #[test]
    fn ties_share_a_risk_set() {
        let r = build_risk_structure(&dataset(&[(2.0, true, 0.0), (2.0, true, 1.0), (5.0, true, 0.0)])).unwrap();
        assert_eq!(r.tie_groups(), &[vec![0, 1], vec![2]]);
        assert_eq!(r.risk_sets(), vec![vec![0, 1, 2], vec![2]]);
        assert_eq!(r.group_of(0), 0);
        assert_eq!(r.group_of(1), 0);
        assert_eq!(r.group_of(2), 1);
    }

    #[test]
    fn censored_at_failure_time_stays_at_risk() {
        let r = build_risk_structure(&dataset(&[(2.0, false, 0.0), (2.0, true, 1.0)])).unwrap();
        assert_eq!(r.risk_sets(), vec![vec![0, 1]]);
    }

    #[test]
    fn no_failures_is_an_error() {
        let err = build_risk_structure(&dataset(&[(1.0, false, 0.0), (1.0, false, 1.0)])).unwrap_err();
        assert!(matches!(err, FiduxError::NoFailures));
    }

    #[test]
    fn permutation_relabels_subjects() {
        let r = build_risk_structure(&dataset(&[(1.0, true, 0.1), (2.0, false, 0.2), (3.0, true, 0.3)])).unwrap();
        let q = r.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(q.failing_order(), &[2, 1]);
        assert_eq!(q.covariate(2), &[0.1]);
    }

    #[test]
    fn standardization_round_trip() {
        let r = build_risk_structure(&dataset(&[(1.0, true, 1.0), (2.0, true, 3.0)])).unwrap();
        let s = r.standardization();
        assert_eq!(s.center, vec![2.0]);
        assert!((s.scale[0] - 2f64.sqrt()).abs() < 1e-12);
        let b = vec![0.7];
        let back = s.to_original(&s.to_standardized(&b));
        assert!((back[0] - 0.7).abs() < 1e-15);
    }
}
