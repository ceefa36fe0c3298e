//! Subject-level GLS fits and hemodynamic response reconstruction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{BasisSet, DesignMatrix};
use crate::error::{invalid_data, Error, Result};
use crate::noise::{estimate_ar, ArOrder, ArProcess, NoiseSpec, Whitener};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One subject/ROI signal with its sampling metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub subject: String,
    pub roi: String,
    /// Repetition time in seconds.
    pub tr: f64,
    pub values: Vec<f64>,
}

impl TimeSeriesRecord {
    pub fn new(subject: impl Into<String>, roi: impl Into<String>, tr: f64, values: Vec<f64>) -> Result<Self> {
        if !(tr > 0.0) {
            return Err(invalid_data(format!("TR must be positive, got {tr}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid_data("time series contains non-finite values"));
        }
        Ok(Self { subject: subject.into(), roi: roi.into(), tr, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How the noise covariance enters a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Use the given specification. With `known = true` its variance is
    /// plugged in; otherwise only the correlation is used.
    Given(NoiseSpec),
    /// OLS, Yule-Walker on the residuals, then one GLS refit.
    Estimate(ArOrder),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectGlmFit {
    pub beta: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Residual variance used for `cov`.
    pub sigma2: f64,
    pub noise: NoiseSpec,
    pub loglik: f64,
    /// Whitened residual sum of squares.
    pub rss: f64,
    pub dof: usize,
}

/// Whitened least-squares pieces shared by fitting and likelihood code.
struct WhitenedLs {
    beta: DVector<f64>,
    xtx_inv: DMatrix<f64>,
    rss: f64,
    residuals: DVector<f64>,
}

fn whitened_ls(xw: &DMatrix<f64>, yw: &DVector<f64>) -> Result<WhitenedLs> {
    let xtx = xw.transpose() * xw;
    let chol = xtx
        .cholesky()
        .ok_or(Error::RankDeficient { rank: crate::linalg::numeric_rank(xw), columns: xw.ncols() })?;
    let beta = chol.solve(&(xw.transpose() * yw));
    let residuals = yw - xw * &beta;
    let rss = residuals.norm_squared();
    Ok(WhitenedLs { beta, xtx_inv: chol.inverse(), rss, residuals })
}

/// Gaussian log-likelihood of whitened residuals with RSS `rss`.
///
/// With `sigma2 = Some(s)` the variance is plugged in; with `None` it is
/// profiled out at `rss / t`.
pub fn gaussian_loglik(rss: f64, t: usize, log_det_v: f64, sigma2: Option<f64>) -> f64 {
    let tf = t as f64;
    match sigma2 {
        Some(s) => -0.5 * (tf * LN_2PI + tf * s.ln() + log_det_v + rss / s),
        None => -0.5 * (tf * LN_2PI + tf * (rss / tf).ln() + log_det_v + tf),
    }
}

/// Generalized least squares fit of `y` on `design`.
///
/// The coefficient covariance is `sigma2 * (Xᵀ V⁻¹ X)⁻¹`, where `sigma2` is
/// the known variance when the noise is flagged known and the whitened RSS
/// over `T - p` otherwise.
pub fn fit_gls(y: &[f64], design: &DesignMatrix, noise: NoiseModel) -> Result<SubjectGlmFit> {
    fit_gls_matrix(y, design.matrix(), noise)
}

pub fn fit_gls_matrix(y: &[f64], x: &DMatrix<f64>, noise: NoiseModel) -> Result<SubjectGlmFit> {
    let t = x.nrows();
    let p = x.ncols();
    if y.len() != t {
        return Err(Error::DimensionMismatch { expected: t, found: y.len() });
    }
    if t <= p {
        return Err(Error::TooFewObservations { observations: t, parameters: p });
    }
    crate::linalg::ensure_full_column_rank(x)?;
    let yv = DVector::from_column_slice(y);
    let spec = match noise {
        NoiseModel::Given(spec) => {
            spec.process.validate()?;
            if spec.known {
                spec.validate()?;
            }
            spec
        }
        NoiseModel::Estimate(order) => {
            let ols = whitened_ls(x, &yv)?;
            let est = estimate_ar(ols.residuals.as_slice(), order)?;
            NoiseSpec { process: est.process, sigma2: est.sigma2, known: false }
        }
    };
    let w = Whitener::new(spec.process)?;
    let xw = w.whiten_matrix(x);
    let yw = w.whiten_vector(&yv);
    let ls = whitened_ls(&xw, &yw)?;
    let dof = t - p;
    let sigma2 = if spec.known { spec.sigma2 } else { ls.rss / dof as f64 };
    let log_det = w.log_det(t);
    let loglik = gaussian_loglik(ls.rss, t, log_det, spec.known.then_some(spec.sigma2));
    let noise = NoiseSpec { process: spec.process, sigma2, known: spec.known };
    Ok(SubjectGlmFit { beta: ls.beta, cov: ls.xtx_inv * sigma2, sigma2, noise, loglik, rss: ls.rss, dof })
}

/// Coefficients and covariance of one design block together with the
/// implied response curve.
#[derive(Debug, Clone, PartialEq)]
pub struct HrEstimate {
    pub beta: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub curve: Vec<f64>,
    pub dt: f64,
}

/// Reconstructs the response `B * beta_block` of one (condition, segment).
pub fn estimate_hr(
    fit: &SubjectGlmFit,
    design: &DesignMatrix,
    basis: &BasisSet,
    condition: &str,
    segment: usize,
) -> Result<HrEstimate> {
    let idx = design.block(condition, segment)?;
    if idx.len() != basis.n_basis() {
        return Err(Error::DimensionMismatch { expected: basis.n_basis(), found: idx.len() });
    }
    let beta: Vec<f64> = idx.iter().map(|&i| fit.beta[i]).collect();
    let cov = DMatrix::from_fn(idx.len(), idx.len(), |a, b| fit.cov[(idx[a], idx[b])]);
    let curve = basis.curve(&beta)?;
    Ok(HrEstimate { beta, cov, curve, dt: basis.dt() })
}

impl SubjectGlmFit {
    pub fn is_white(&self) -> bool {
        matches!(self.noise.process, ArProcess::White)
    }
}
