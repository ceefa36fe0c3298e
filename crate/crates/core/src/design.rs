//! Hemodynamic response bases, onset series and regression designs.
//!
//! Scan indices exposed by this module are 1-based, as in onset files;
//! segment indices are 0-based positions within a condition.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid_arg, invalid_data, Error, Result};
use crate::linalg::ensure_full_column_rank;

/// Minimum span of a basis, in seconds.
pub const MIN_BASIS_SECONDS: f64 = 20.0;

/// Binary stimulus-onset indicator for one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnsetSeries {
    condition: String,
    indicator: Vec<bool>,
}

impl OnsetSeries {
    pub fn from_indicator(condition: impl Into<String>, indicator: &[u8]) -> Result<Self> {
        if indicator.is_empty() {
            return Err(invalid_arg("onset series must cover at least one scan"));
        }
        let mut bits = Vec::with_capacity(indicator.len());
        for (i, &v) in indicator.iter().enumerate() {
            match v {
                0 => bits.push(false),
                1 => bits.push(true),
                other => return Err(invalid_data(format!("onset indicator at scan {} is {other}", i + 1))),
            }
        }
        Ok(Self { condition: condition.into(), indicator: bits })
    }

    /// Builds a series of `scans` scans from 1-based onset scan indices.
    pub fn from_onsets(condition: impl Into<String>, scans: usize, onsets: &[usize]) -> Result<Self> {
        if scans == 0 {
            return Err(invalid_arg("onset series must cover at least one scan"));
        }
        let mut indicator = vec![false; scans];
        for &s in onsets {
            if s == 0 || s > scans {
                return Err(invalid_data(format!("onset scan {s} outside 1..={scans}")));
            }
            indicator[s - 1] = true;
        }
        Ok(Self { condition: condition.into(), indicator })
    }

    pub fn condition(&self) -> &str {
        &self.condition
    }

    pub fn len(&self) -> usize {
        self.indicator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicator.is_empty()
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    /// 1-based scan indices of the onsets, ascending.
    pub fn onsets(&self) -> Vec<usize> {
        self.indicator
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i + 1))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }

    /// Keeps only onsets at scans `>= start` (1-based).
    pub fn suffix(&self, start: usize) -> Self {
        let indicator = self
            .indicator
            .iter()
            .enumerate()
            .map(|(i, &b)| b && i + 1 >= start)
            .collect();
        Self { condition: self.condition.clone(), indicator }
    }
}

/// Provenance of a basis matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Canonical,
    FileLoaded,
    Generated,
}

/// `T' x G` matrix of basis functions sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    matrix: DMatrix<f64>,
    dt: f64,
    kind: BasisKind,
}

impl BasisSet {
    pub fn new(matrix: DMatrix<f64>, dt: f64, kind: BasisKind) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid_arg(format!("basis resolution dt must be positive, got {dt}")));
        }
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(invalid_data("basis needs at least one column and one row"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid_data("basis contains non-finite values"));
        }
        let span = matrix.nrows() as f64 * dt;
        if span < MIN_BASIS_SECONDS - 1e-9 {
            return Err(invalid_data(format!(
                "basis spans {span} s; at least {MIN_BASIS_SECONDS} s required"
            )));
        }
        Ok(Self { matrix, dt, kind })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n_basis(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 * self.dt
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        self.matrix.column(g).iter().copied().collect()
    }

    /// The response curve `B * beta`, sampled at the basis resolution.
    pub fn curve(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.n_basis() {
            return Err(Error::DimensionMismatch { expected: self.n_basis(), found: beta.len() });
        }
        let mut out = vec![0.0; self.n_samples()];
        self.curve_into(beta, &mut out);
        Ok(out)
    }

    /// Writes `B * beta` into `out` without allocating. Lengths are not checked.
    pub fn curve_into(&self, beta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (g, &b) in beta.iter().enumerate() {
            let col = self.matrix.column(g);
            for (o, &c) in out.iter_mut().zip(col.iter()) {
                *o += b * c;
            }
        }
    }
}

/// SPM-style double-gamma response. Delays and dispersions in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleGamma {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    /// Peak-to-undershoot amplitude ratio.
    pub ratio: f64,
}

impl Default for DoubleGamma {
    fn default() -> Self {
        Self { peak_delay: 6.0, undershoot_delay: 16.0, peak_dispersion: 1.0, undershoot_dispersion: 1.0, ratio: 6.0 }
    }
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let x = t / scale;
    ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp() / scale
}

impl DoubleGamma {
    pub fn eval(&self, t: f64) -> f64 {
        let peak = gamma_pdf(t, self.peak_delay / self.peak_dispersion, self.peak_dispersion);
        let under = gamma_pdf(t, self.undershoot_delay / self.undershoot_dispersion, self.undershoot_dispersion);
        peak - under / self.ratio
    }

    /// Samples `t = 0, dt, 2dt, ...` over `duration` seconds, scaled to a
    /// maximum of one.
    pub fn sample_normalized(&self, dt: f64, duration: f64) -> Vec<f64> {
        let n = (duration / dt).round() as usize;
        let mut v: Vec<f64> = (0..n).map(|i| self.eval(i as f64 * dt)).collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > 0.0 {
            v.iter_mut().for_each(|x| *x /= max);
        }
        v
    }
}

/// Canonical double-gamma HRF as a single-column basis with peak value one.
pub fn canonical_hrf(dt: f64, duration: f64) -> Result<BasisSet> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid_arg(format!("dt must be positive, got {dt}")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(invalid_arg(format!("duration must be positive, got {duration}")));
    }
    if duration < MIN_BASIS_SECONDS {
        return Err(invalid_arg(format!("duration must be at least {MIN_BASIS_SECONDS} s, got {duration}")));
    }
    let col = DoubleGamma::default().sample_normalized(dt, duration);
    BasisSet::new(DMatrix::from_column_slice(col.len(), 1, &col), dt, BasisKind::Canonical)
}

/// Reads a headerless numeric CSV (`T'` rows, `G` columns) as a basis set.
pub fn load_basis(path: impl AsRef<Path>, dt: f64) -> Result<BasisSet> {
    let file = std::fs::File::open(path)?;
    read_basis(file, dt)
}

pub fn read_basis<R: std::io::Read>(reader: R, dt: f64) -> Result<BasisSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for cell in rec.iter() {
            let v: f64 = cell
                .parse()
                .map_err(|_| invalid_data(format!("basis row {}: non-numeric cell {cell:?}", i + 1)))?;
            if !v.is_finite() {
                return Err(invalid_data(format!("basis row {}: non-finite value", i + 1)));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(invalid_data(format!(
                    "basis row {} has {} columns, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid_data("basis file is empty"));
    }
    let g = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), g, |i, j| rows[i][j]);
    BasisSet::new(m, dt, BasisKind::FileLoaded)
}

/// Per-condition change points, as sorted 1-based scan indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChangePointSet {
    points: BTreeMap<String, Vec<usize>>,
}

impl ChangePointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, condition: impl Into<String>, points: Vec<usize>) -> Result<Self> {
        self.insert(condition, points)?;
        Ok(self)
    }

    pub fn insert(&mut self, condition: impl Into<String>, points: Vec<usize>) -> Result<()> {
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid_data("change points must be strictly increasing"));
        }
        self.points.insert(condition.into(), points);
        Ok(())
    }

    /// Change points of `condition`; empty when none were registered.
    pub fn get(&self, condition: &str) -> &[usize] {
        self.points.get(condition).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn count(&self, condition: &str) -> usize {
        self.get(condition).len()
    }

    pub fn conditions(&self) -> impl Iterator<Item = &str> {
        self.points.keys().map(String::as_str)
    }

    pub fn as_map(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.points
    }

    /// Checks that every change point is an onset of its condition.
    pub fn validate_against(&self, onsets: &[OnsetSeries]) -> Result<()> {
        for (cond, pts) in &self.points {
            let series = onsets
                .iter()
                .find(|u| u.condition() == cond)
                .ok_or_else(|| invalid_data(format!("change points given for unknown condition {cond:?}")))?;
            for &p in pts {
                if p == 0 || p > series.len() || !series.indicator()[p - 1] {
                    return Err(invalid_data(format!(
                        "change point {p} of condition {cond:?} is not an onset of that condition"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Splits `u` into `C + 1` stationary segments at the change points `cps`.
///
/// Segment `c` keeps the onsets at scans `cps[c-1] ..= cps[c] - 1`, with the
/// sentinels `cps[-1] = 1` and `cps[C] = T + 1`.
pub fn split_onsets(u: &OnsetSeries, cps: &[usize]) -> Result<Vec<OnsetSeries>> {
    let t = u.len();
    if let Some(&bad) = cps.iter().find(|&&p| p == 0 || p > t) {
        return Err(invalid_data(format!("change point {bad} outside 1..={t}")));
    }
    if cps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_data("change points must be strictly increasing"));
    }
    let mut bounds = Vec::with_capacity(cps.len() + 2);
    bounds.push(1);
    bounds.extend_from_slice(cps);
    bounds.push(t + 1);
    Ok(bounds
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let indicator = u
                .indicator()
                .iter()
                .enumerate()
                .map(|(i, &b)| b && i + 1 >= lo && i + 1 < hi)
                .collect();
            OnsetSeries { condition: u.condition.clone(), indicator }
        })
        .collect())
}

/// Convolves an onset series with one basis column and samples the result
/// on the scan grid.
///
/// The convolution runs at the basis resolution `dt`: an onset at scan `s`
/// sits at fine index `round((s-1) * tr / dt)` and scan `t` reads fine index
/// `round((t-1) * tr / dt)`.
pub fn convolve_onsets(u: &OnsetSeries, column: &[f64], dt: f64, tr: f64) -> Vec<f64> {
    let t_len = u.len();
    let ratio = tr / dt;
    let fine: Vec<i64> = (0..t_len).map(|t| (t as f64 * ratio).round() as i64).collect();
    let mut out = vec![0.0; t_len];
    for (s, &on) in u.indicator().iter().enumerate() {
        if !on {
            continue;
        }
        for t in s..t_len {
            let offset = (fine[t] - fine[s]) as usize;
            if offset >= column.len() {
                break;
            }
            out[t] += column[offset];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// One block per condition.
    Stationary,
    /// One block per (condition, stationary segment).
    Segmented,
    /// Baseline response plus one change-magnitude column per change point;
    /// requires a single-function basis.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ColumnTag {
    Response { condition: String, segment: usize, basis: usize },
    Intercept,
    Confound { index: usize },
}

/// Settings shared by every design built for one scan series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub tr: f64,
    pub kind: ModelKind,
    pub intercept: bool,
}

impl DesignSpec {
    pub fn new(tr: f64, kind: ModelKind) -> Self {
        Self { tr, kind, intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    columns: Vec<ColumnTag>,
    kind: ModelKind,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn columns(&self) -> &[ColumnTag] {
        &self.columns
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_scans(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column indices of a (condition, segment) block, in basis order.
    pub fn block(&self, condition: &str, segment: usize) -> Result<Vec<usize>> {
        let idx: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter_map(|(i, tag)| match tag {
                ColumnTag::Response { condition: c, segment: s, .. } if c == condition && *s == segment => Some(i),
                _ => None,
            })
            .collect();
        if idx.is_empty() {
            return Err(Error::UnknownBlock { condition: condition.to_string(), segment });
        }
        Ok(idx)
    }
}

/// Assembles the regression design for one scan series.
///
/// Response columns come first (conditions in the given order, then
/// segments, then basis functions), followed by the intercept and any
/// confound columns.
pub fn build_design(
    onsets: &[OnsetSeries],
    basis: &BasisSet,
    cps: &ChangePointSet,
    confounds: Option<&DMatrix<f64>>,
    spec: &DesignSpec,
) -> Result<DesignMatrix> {
    let first = onsets.first().ok_or_else(|| invalid_arg("at least one condition is required"))?;
    let t = first.len();
    if !(spec.tr > 0.0) {
        return Err(invalid_arg(format!("TR must be positive, got {}", spec.tr)));
    }
    for u in onsets {
        if u.len() != t {
            return Err(Error::DimensionMismatch { expected: t, found: u.len() });
        }
    }
    for (i, u) in onsets.iter().enumerate() {
        if onsets[..i].iter().any(|v| v.condition() == u.condition()) {
            return Err(invalid_data(format!("duplicate condition {:?}", u.condition())));
        }
    }
    if spec.kind == ModelKind::Cumulative && basis.n_basis() != 1 {
        return Err(invalid_arg(format!(
            "cumulative designs need a single basis function, got {}",
            basis.n_basis()
        )));
    }
    if spec.kind != ModelKind::Stationary {
        cps.validate_against(onsets)?;
    }

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut tags = Vec::new();
    let basis_cols: Vec<Vec<f64>> = (0..basis.n_basis()).map(|g| basis.column(g)).collect();
    for u in onsets {
        let series: Vec<OnsetSeries> = match spec.kind {
            ModelKind::Stationary => vec![u.clone()],
            ModelKind::Segmented => split_onsets(u, cps.get(u.condition()))?,
            ModelKind::Cumulative => {
                let mut v = vec![u.clone()];
                v.extend(cps.get(u.condition()).iter().map(|&p| u.suffix(p)));
                v
            }
        };
        for (segment, s) in series.iter().enumerate() {
            for (g, bc) in basis_cols.iter().enumerate() {
                cols.push(convolve_onsets(s, bc, basis.dt(), spec.tr));
                tags.push(ColumnTag::Response { condition: u.condition().to_string(), segment, basis: g });
            }
        }
    }
    if spec.intercept {
        cols.push(vec![1.0; t]);
        tags.push(ColumnTag::Intercept);
    }
    if let Some(c) = confounds {
        if c.nrows() != t {
            return Err(Error::DimensionMismatch { expected: t, found: c.nrows() });
        }
        for j in 0..c.ncols() {
            cols.push(c.column(j).iter().copied().collect());
            tags.push(ColumnTag::Confound { index: j });
        }
    }
    let matrix = DMatrix::from_fn(t, cols.len(), |i, j| cols[j][i]);
    ensure_full_column_rank(&matrix)?;
    Ok(DesignMatrix { matrix, columns: tags, kind: spec.kind })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onsets(t: usize, at: &[usize]) -> OnsetSeries {
        OnsetSeries::from_onsets("a", t, at).unwrap()
    }

    #[test]
    fn canonical_hrf_shape_contract() {
        let b = canonical_hrf(0.1, 32.0).unwrap();
        assert_eq!(b.n_samples(), 320);
        assert_eq!(b.n_basis(), 1);
        let col = b.column(0);
        assert_eq!(col[0], 0.0);
        let (imax, max) = col.iter().enumerate().fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!(max, 1.0);
        assert!((imax as f64 * 0.1 - 5.0).abs() <= 0.5);
    }

    #[test]
    fn canonical_hrf_rejects_bad_arguments() {
        assert!(canonical_hrf(0.0, 32.0).is_err());
        assert!(canonical_hrf(-0.1, 32.0).is_err());
        assert!(canonical_hrf(0.1, -1.0).is_err());
        assert!(canonical_hrf(0.1, 10.0).is_err());
    }

    #[test]
    fn basis_csv_parsing() {
        let mut text = String::new();
        for i in 0..200 {
            text.push_str(&format!("{},{},{}\n", i as f64 * 0.01, 1.0, -0.5));
        }
        let b = read_basis(text.as_bytes(), 0.1).unwrap();
        assert_eq!((b.n_samples(), b.n_basis()), (200, 3));
        assert_eq!(b.kind(), BasisKind::FileLoaded);

        let single: String = (0..300).map(|i| format!("{}\n", i)).collect();
        assert_eq!(read_basis(single.as_bytes(), 0.1).unwrap().n_basis(), 1);

        let mut with_nan = text.clone();
        with_nan.push_str("1.0,NaN,2.0\n");
        assert!(read_basis(with_nan.as_bytes(), 0.1).is_err());

        let mut ragged = text.clone();
        ragged.push_str("1.0,2.0\n");
        assert!(read_basis(ragged.as_bytes(), 0.1).is_err());

        assert!(read_basis("".as_bytes(), 0.1).is_err());
        assert!(read_basis("1,a\n".as_bytes(), 0.1).is_err());
    }

    #[test]
    fn split_onsets_boundary_rule() {
        let u = onsets(20, &[5, 10, 15]);
        let parts = split_onsets(&u, &[10]).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].onsets(), vec![5]);
        assert_eq!(parts[1].onsets(), vec![10, 15]);

        let whole = split_onsets(&u, &[]).unwrap();
        assert_eq!(whole, vec![u.clone()]);

        let empty = onsets(20, &[]);
        let parts = split_onsets(&empty, &[10]).unwrap();
        assert!(parts.iter().all(|p| p.count() == 0));

        assert!(split_onsets(&u, &[0]).is_err());
        assert!(split_onsets(&u, &[21]).is_err());
        assert!(split_onsets(&u, &[12, 8]).is_err());
    }

    #[test]
    fn split_onsets_partitions_the_series() {
        let u = onsets(40, &[2, 7, 11, 19, 23, 30, 38]);
        let parts = split_onsets(&u, &[7, 23, 31]).unwrap();
        for t in 0..40 {
            let s: usize = parts.iter().map(|p| p.indicator()[t] as usize).sum();
            assert_eq!(s, u.indicator()[t] as usize);
        }
    }

    #[test]
    fn impulse_convolution_shifts_the_basis() {
        let basis = canonical_hrf(0.5, 24.0).unwrap();
        let u = onsets(30, &[4]);
        let spec = DesignSpec { tr: 2.0, kind: ModelKind::Stationary, intercept: false };
        let d = build_design(&[u], &basis, &ChangePointSet::new(), None, &spec).unwrap();
        let col = basis.column(0);
        for t in 0..30 {
            let expected = if t + 1 >= 4 && (t + 1 - 4) * 4 < col.len() { col[(t + 1 - 4) * 4] } else { 0.0 };
            assert_eq!(d.matrix()[(t, 0)], expected);
        }
    }

    #[test]
    fn cumulative_requires_single_basis() {
        let m = DMatrix::from_fn(60, 2, |i, j| ((i + 1) * (j + 2)) as f64 % 7.0);
        let basis = BasisSet::new(m, 0.5, BasisKind::Generated).unwrap();
        let u = onsets(50, &[3, 12, 20, 33]);
        let cps = ChangePointSet::new().with("a", vec![20]).unwrap();
        let spec = DesignSpec::new(2.0, ModelKind::Cumulative);
        assert!(build_design(&[u], &basis, &cps, None, &spec).is_err());
    }

    #[test]
    fn change_points_must_be_onsets() {
        let basis = canonical_hrf(0.5, 24.0).unwrap();
        let u = onsets(50, &[3, 12, 20, 33]);
        let cps = ChangePointSet::new().with("a", vec![21]).unwrap();
        let spec = DesignSpec::new(2.0, ModelKind::Segmented);
        assert!(build_design(&[u], &basis, &cps, None, &spec).is_err());
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let basis = canonical_hrf(0.5, 24.0).unwrap();
        let u = onsets(50, &[3, 12, 20, 33]);
        let conf = DMatrix::from_element(50, 1, 2.0);
        let spec = DesignSpec::new(2.0, ModelKind::Stationary);
        assert!(matches!(
            build_design(&[u], &basis, &ChangePointSet::new(), Some(&conf), &spec),
            Err(Error::RankDeficient { .. })
        ));
    }
}
