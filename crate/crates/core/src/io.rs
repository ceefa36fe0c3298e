//! CSV and JSON readers and writers for onsets, confounds, time series,
//! candidate lists and basis sets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{BasisSet, ChangePointSet, OnsetSeries};
use crate::error::{invalid_data, Result};
use crate::fit::TimeSeriesRecord;
use crate::select::CandidateSet;

#[derive(Debug, Serialize, Deserialize)]
struct OnsetRow {
    condition_id: String,
    scan_index: usize,
}

/// Reads onsets from CSV with columns `condition_id, scan_index` (1-based).
/// Conditions come back in label order.
pub fn read_onsets<R: Read>(reader: R, n_scans: usize) -> Result<Vec<OnsetSeries>> {
    let mut by_cond: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: OnsetRow = row?;
        by_cond.entry(row.condition_id).or_default().push(row.scan_index);
    }
    if by_cond.is_empty() {
        return Err(invalid_data("onset file lists no onsets"));
    }
    by_cond
        .into_iter()
        .map(|(c, mut s)| {
            s.sort_unstable();
            s.dedup();
            OnsetSeries::from_onsets(c, n_scans, &s)
        })
        .collect()
}

pub fn load_onsets(path: impl AsRef<Path>, n_scans: usize) -> Result<Vec<OnsetSeries>> {
    read_onsets(File::open(path)?, n_scans)
}

pub fn write_onsets<W: Write>(writer: W, onsets: &[OnsetSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for u in onsets {
        for s in u.onsets() {
            w.serialize(OnsetRow { condition_id: u.condition().to_string(), scan_index: s })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `T × m` numeric confound matrix with a header row of names.
pub fn read_confounds<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in csv::Reader::from_reader(reader).records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| invalid_data(format!("confound entry {f:?} is not numeric"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid_data("confound file has no rows"));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) || rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid_data("confound rows must be complete and finite"));
    }
    Ok(DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
}

pub fn load_confounds(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_confounds(File::open(path)?)
}

/// Sidecar metadata of a time-series CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesMeta {
    pub subject: String,
    pub roi: String,
    pub tr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValueRow {
    scan_index: usize,
    value: f64,
}

/// Reads a CSV with columns `scan_index, value`; scan indices must run
/// `1..=T` in order.
pub fn read_time_series<R: Read>(reader: R, meta: &TimeSeriesMeta) -> Result<TimeSeriesRecord> {
    let mut values = Vec::new();
    for (i, row) in csv::Reader::from_reader(reader).deserialize().enumerate() {
        let row: ValueRow = row?;
        if row.scan_index != i + 1 {
            return Err(invalid_data(format!("expected scan_index {} but found {}", i + 1, row.scan_index)));
        }
        values.push(row.value);
    }
    if values.is_empty() {
        return Err(invalid_data("time series has no scans"));
    }
    TimeSeriesRecord::new(meta.subject.clone(), meta.roi.clone(), meta.tr, values)
}

pub fn load_time_series(csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<TimeSeriesRecord> {
    let meta: TimeSeriesMeta = serde_json::from_reader(File::open(meta_path)?)?;
    read_time_series(File::open(csv_path)?, &meta)
}

pub fn write_time_series<W: Write>(writer: W, record: &TimeSeriesRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, &value) in record.values.iter().enumerate() {
        w.serialize(ValueRow { scan_index: i + 1, value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn time_series_meta(record: &TimeSeriesRecord) -> TimeSeriesMeta {
    TimeSeriesMeta { subject: record.subject.clone(), roi: record.roi.clone(), tr: record.tr }
}

/// Reads a JSON array of candidate configurations, each mapping a
/// condition to its change points (1-based scan indices of onsets).
pub fn read_candidates<R: Read>(reader: R) -> Result<CandidateSet> {
    let raw: Vec<BTreeMap<String, Vec<usize>>> = serde_json::from_reader(reader)?;
    let configs = raw
        .into_iter()
        .map(|m| m.into_iter().try_fold(ChangePointSet::new(), |acc, (c, p)| acc.with(c, p)))
        .collect::<Result<Vec<_>>>()?;
    CandidateSet::new(configs)
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<CandidateSet> {
    read_candidates(File::open(path)?)
}

pub fn write_candidates<W: Write>(writer: W, candidates: &CandidateSet) -> Result<()> {
    let raw: Vec<&BTreeMap<String, Vec<usize>>> = candidates.configs().iter().map(ChangePointSet::as_map).collect();
    serde_json::to_writer_pretty(writer, &raw)?;
    Ok(())
}

/// Writes the basis matrix as headerless CSV, one row per sample.
pub fn write_basis<W: Write>(writer: W, basis: &BasisSet) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let m = basis.matrix();
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{canonical_hrf, read_basis};

    #[test]
    fn onsets_round_trip() {
        let csv = "condition_id,scan_index\nb,7\na,3\na,9\nb,2\n";
        let u = read_onsets(csv.as_bytes(), 12).unwrap();
        assert_eq!(u[0].condition(), "a");
        assert_eq!(u[0].onsets(), vec![3, 9]);
        assert_eq!(u[1].onsets(), vec![2, 7]);
        let mut out = Vec::new();
        write_onsets(&mut out, &u).unwrap();
        assert_eq!(read_onsets(out.as_slice(), 12).unwrap(), u);
        assert!(read_onsets("condition_id,scan_index\na,13\n".as_bytes(), 12).is_err());
    }

    #[test]
    fn time_series_round_trip() {
        let meta = TimeSeriesMeta { subject: "s1".into(), roi: "r".into(), tr: 2.0 };
        let rec = TimeSeriesRecord::new("s1", "r", 2.0, vec![0.5, -1.25, 3.0]).unwrap();
        let mut out = Vec::new();
        write_time_series(&mut out, &rec).unwrap();
        assert_eq!(read_time_series(out.as_slice(), &meta).unwrap(), rec);
        assert!(read_time_series("scan_index,value\n2,1.0\n".as_bytes(), &meta).is_err());
    }

    #[test]
    fn candidates_round_trip() {
        let json = r#"[{"a":[20]},{"a":[40],"b":[]}]"#;
        let c = read_candidates(json.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        let mut out = Vec::new();
        write_candidates(&mut out, &c).unwrap();
        assert_eq!(read_candidates(out.as_slice()).unwrap(), c);
        assert!(read_candidates("[]".as_bytes()).is_err());
    }

    #[test]
    fn confounds_and_basis() {
        let m = read_confounds("x,y\n1,2\n3,4\n5,6\n".as_bytes()).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 2));
        assert_eq!(m[(2, 1)], 6.0);
        assert!(read_confounds("x\nfoo\n".as_bytes()).is_err());
        let b = canonical_hrf(0.5, 30.0).unwrap();
        let mut out = Vec::new();
        write_basis(&mut out, &b).unwrap();
        let back = read_basis(out.as_slice(), 0.5).unwrap();
        assert!((back.matrix() - b.matrix()).abs().max() < 1e-12);
    }
}
