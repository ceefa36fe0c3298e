//! AR(1)/AR(2) noise structure, whitening and AR estimation.
//!
//! Correlation matrices here have unit diagonal; the marginal variance is
//! carried separately as `sigma2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

/// Bound applied to estimated AR coefficients.
pub const RHO_CLAMP: f64 = 0.99;

/// Minimum residual length accepted by [`estimate_ar`].
pub const MIN_AR_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "order", rename_all = "kebab-case")]
pub enum ArProcess {
    White,
    Ar1 { rho: f64 },
    Ar2 { phi1: f64, phi2: f64 },
}

impl ArProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArProcess::White => Ok(()),
            ArProcess::Ar1 { rho } => check_rho(rho),
            ArProcess::Ar2 { phi1, phi2 } => {
                let ok = phi1.is_finite()
                    && phi2.is_finite()
                    && phi2.abs() < 1.0
                    && phi1 + phi2 < 1.0
                    && phi2 - phi1 < 1.0;
                if ok {
                    Ok(())
                } else {
                    Err(Error::NonStationary(phi1.abs().max(phi2.abs())))
                }
            }
        }
    }

    /// Lag-one coefficient, zero for white noise.
    pub fn rho(&self) -> f64 {
        match *self {
            ArProcess::White => 0.0,
            ArProcess::Ar1 { rho } => rho,
            ArProcess::Ar2 { phi1, phi2 } => phi1 / (1.0 - phi2),
        }
    }

    /// Autocorrelations at lags `0..n`.
    pub fn autocorrelation(&self, n: usize) -> Vec<f64> {
        let mut r = vec![0.0; n];
        if n == 0 {
            return r;
        }
        r[0] = 1.0;
        match *self {
            ArProcess::White => {}
            ArProcess::Ar1 { rho } => {
                for k in 1..n {
                    r[k] = r[k - 1] * rho;
                }
            }
            ArProcess::Ar2 { phi1, phi2 } => {
                if n > 1 {
                    r[1] = phi1 / (1.0 - phi2);
                }
                for k in 2..n {
                    r[k] = phi1 * r[k - 1] + phi2 * r[k - 2];
                }
            }
        }
        r
    }
}

/// Noise model `sigma2 * V` with `V` the correlation matrix of `process`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub process: ArProcess,
    pub sigma2: f64,
    /// Whether `sigma2 * V` is treated as known a priori.
    pub known: bool,
}

impl NoiseSpec {
    pub fn white(sigma2: f64, known: bool) -> Self {
        Self { process: ArProcess::White, sigma2, known }
    }

    pub fn ar1(rho: f64, sigma2: f64, known: bool) -> Self {
        Self { process: ArProcess::Ar1 { rho }, sigma2, known }
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(invalid_arg(format!("noise variance must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    pub fn whitener(&self) -> Result<Whitener> {
        Whitener::new(self.process)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::NonStationary(rho));
    }
    Ok(())
}

/// Correlation matrix `V[s,t] = rho^|s-t|`.
pub fn ar1_covariance(rho: f64, t: usize) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    if t == 0 {
        return Err(invalid_arg("series length must be at least 1"));
    }
    Ok(DMatrix::from_fn(t, t, |i, j| rho.powi((i as i32 - j as i32).abs())))
}

/// Closed-form tridiagonal inverse of [`ar1_covariance`].
pub fn ar1_precision(rho: f64, t: usize) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    if t < 2 {
        return Err(invalid_arg("precision needs a series length of at least 2"));
    }
    let s = 1.0 / (1.0 - rho * rho);
    let mut p = DMatrix::zeros(t, t);
    for i in 0..t {
        let edge = i == 0 || i == t - 1;
        p[(i, i)] = if edge { s } else { (1.0 + rho * rho) * s };
        if i + 1 < t {
            p[(i, i + 1)] = -rho * s;
            p[(i + 1, i)] = -rho * s;
        }
    }
    Ok(p)
}

/// `log det V` for the AR(1) correlation matrix.
pub fn ar1_log_det(rho: f64, t: usize) -> Result<f64> {
    check_rho(rho)?;
    if t == 0 {
        return Err(invalid_arg("series length must be at least 1"));
    }
    Ok((t as f64 - 1.0) * (1.0 - rho * rho).ln())
}

/// Dense correlation matrix of an AR process.
pub fn ar_correlation(process: ArProcess, t: usize) -> Result<DMatrix<f64>> {
    process.validate()?;
    let r = process.autocorrelation(t);
    Ok(DMatrix::from_fn(t, t, |i, j| r[(i as isize - j as isize).unsigned_abs()]))
}

/// Lower-triangular banded `W` with `W V Wᵀ = I`.
///
/// This is the inverse Cholesky factor of the correlation matrix: the first
/// `p` rows standardize the initial values, later rows take the scaled
/// one-step prediction errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Whitener {
    process: ArProcess,
}

impl Whitener {
    pub fn new(process: ArProcess) -> Result<Self> {
        process.validate()?;
        Ok(Self { process })
    }

    pub fn process(&self) -> ArProcess {
        self.process
    }

    pub fn whiten_slice(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut out = vec![0.0; n];
        match self.process {
            ArProcess::White => out.copy_from_slice(y),
            ArProcess::Ar1 { rho } => {
                if n > 0 {
                    out[0] = y[0];
                }
                let s = 1.0 / (1.0 - rho * rho).sqrt();
                for t in 1..n {
                    out[t] = (y[t] - rho * y[t - 1]) * s;
                }
            }
            ArProcess::Ar2 { phi1, phi2 } => {
                let r = self.process.autocorrelation(3);
                if n > 0 {
                    out[0] = y[0];
                }
                if n > 1 {
                    out[1] = (y[1] - r[1] * y[0]) / (1.0 - r[1] * r[1]).sqrt();
                }
                let innov = (1.0 - phi1 * r[1] - phi2 * r[2]).sqrt();
                for t in 2..n {
                    out[t] = (y[t] - phi1 * y[t - 1] - phi2 * y[t - 2]) / innov;
                }
            }
        }
        out
    }

    pub fn whiten_vector(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.whiten_slice(y.as_slice()))
    }

    pub fn whiten_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            out.set_column(j, &DVector::from_vec(self.whiten_slice(&col)));
        }
        out
    }

    /// The whitening matrix itself, mainly for checks.
    pub fn matrix(&self, t: usize) -> DMatrix<f64> {
        self.whiten_matrix(&DMatrix::identity(t, t))
    }

    /// `log det V` of the correlation matrix of length `t`.
    pub fn log_det(&self, t: usize) -> f64 {
        match self.process {
            ArProcess::White => 0.0,
            ArProcess::Ar1 { rho } => (t.saturating_sub(1)) as f64 * (1.0 - rho * rho).ln(),
            ArProcess::Ar2 { phi1, phi2 } => {
                let r = self.process.autocorrelation(3);
                let mut ld = 0.0;
                if t > 1 {
                    ld += (1.0 - r[1] * r[1]).ln();
                }
                if t > 2 {
                    ld += (t - 2) as f64 * (1.0 - phi1 * r[1] - phi2 * r[2]).ln();
                }
                ld
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArOrder {
    One,
    Two,
}

/// Yule-Walker estimate of an AR process from residuals.
///
/// Coefficients are clamped to `[-0.99, 0.99]` (partial autocorrelations for
/// AR(2)); `sigma2` is the marginal residual variance.
pub fn estimate_ar(residuals: &[f64], order: ArOrder) -> Result<NoiseSpec> {
    let n = residuals.len();
    if n < MIN_AR_SAMPLES {
        return Err(Error::TooFewObservations { observations: n, parameters: MIN_AR_SAMPLES });
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = residuals.iter().map(|v| v - mean).collect();
    let acov = |k: usize| c[k..].iter().zip(&c[..n - k]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let r0 = acov(0);
    let scale = residuals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(r0 > f64::EPSILON * f64::EPSILON * scale * scale) || !r0.is_finite() {
        return Err(Error::Degenerate("residuals are constant; AR coefficient undefined".into()));
    }
    let r1 = (acov(1) / r0).clamp(-RHO_CLAMP, RHO_CLAMP);
    let process = match order {
        ArOrder::One => ArProcess::Ar1 { rho: r1 },
        ArOrder::Two => {
            let r2 = acov(2) / r0;
            let pacf2 = ((r2 - r1 * r1) / (1.0 - r1 * r1)).clamp(-RHO_CLAMP, RHO_CLAMP);
            let phi1 = r1 * (1.0 - pacf2);
            ArProcess::Ar2 { phi1, phi2: pacf2 }
        }
    };
    Ok(NoiseSpec { process, sigma2: r0, known: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn covariance_entries() {
        assert_eq!(ar1_covariance(0.0, 4).unwrap(), DMatrix::identity(4, 4));
        assert_eq!(ar1_covariance(0.5, 3).unwrap()[(0, 2)], 0.25);
        assert!(ar1_covariance(1.0, 3).is_err());
        assert!(ar1_precision(-1.2, 3).is_err());
    }

    #[test]
    fn precision_matches_dense_inverse() {
        let v = ar1_covariance(0.3, 6).unwrap();
        let inv = v.clone().try_inverse().unwrap();
        let p = ar1_precision(0.3, 6).unwrap();
        assert!((&p - &inv).abs().max() <= 1e-10);
        for i in 0..6 {
            for j in 0..6 {
                if (i as i32 - j as i32).abs() > 1 {
                    assert_eq!(p[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(ar1_precision(0.0, 5).unwrap(), DMatrix::identity(5, 5));
    }

    #[test]
    fn whitening_decorrelates() {
        for process in [ArProcess::Ar1 { rho: 0.4 }, ArProcess::Ar2 { phi1: 0.5, phi2: -0.3 }] {
            let w = Whitener::new(process).unwrap();
            let v = ar_correlation(process, 20).unwrap();
            let wm = w.matrix(20);
            let prod = &wm * &v * wm.transpose();
            assert!((prod - DMatrix::<f64>::identity(20, 20)).abs().max() < 1e-10);
            let ld = v.clone().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
            assert!((ld - w.log_det(20)).abs() < 1e-9);
        }
        let w = Whitener::new(ArProcess::Ar1 { rho: 0.0 }).unwrap();
        assert_eq!(w.whiten_slice(&[1.0, -2.0, 3.5]), vec![1.0, -2.0, 3.5]);
    }

    fn ar1_series(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut prev: f64 = StandardNormal.sample(&mut rng);
        out.push(prev);
        let s = (1.0 - rho * rho).sqrt();
        for _ in 1..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = rho * prev + s * e;
            out.push(prev);
        }
        out
    }

    #[test]
    fn yule_walker_recovers_rho() {
        let white = ar1_series(0.0, 5000, 11);
        let est = estimate_ar(&white, ArOrder::One).unwrap();
        assert!(est.process.rho().abs() <= 0.05);
        let ar = ar1_series(0.2, 5000, 12);
        let est = estimate_ar(&ar, ArOrder::One).unwrap();
        assert!((0.15..=0.25).contains(&est.process.rho()));
        assert!((est.sigma2 - 1.0).abs() < 0.1);
    }

    #[test]
    fn yule_walker_rejects_degenerate_input() {
        assert!(estimate_ar(&[0.1, 0.2, 0.3], ArOrder::One).is_err());
        assert!(matches!(estimate_ar(&[2.0; 20], ArOrder::One), Err(Error::Degenerate(_))));
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let est = estimate_ar(&x, ArOrder::Two).unwrap();
        est.process.validate().unwrap();
    }
}
