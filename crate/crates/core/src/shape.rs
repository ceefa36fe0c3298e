//! Scalar shape descriptors of a sampled response curve and their
//! Monte-Carlo within-subject variances.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::BasisSet;
use crate::error::{invalid_arg, Error, Result};
use crate::linalg::psd_sqrt_factor;

/// Relative tolerance for clipping negative eigenvalues of a coefficient
/// covariance block.
pub const PSD_TOL: f64 = 1e-10;

/// Smallest Monte-Carlo iteration count accepted by [`mc_shape_variance`].
pub const MIN_MC_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ShapeParam {
    Pm,
    Na,
    Ttp,
    Tpn,
    Fwhm,
    Fwhn,
    Auc,
}

impl ShapeParam {
    pub const ALL: [ShapeParam; 7] = [
        ShapeParam::Pm,
        ShapeParam::Na,
        ShapeParam::Ttp,
        ShapeParam::Tpn,
        ShapeParam::Fwhm,
        ShapeParam::Fwhn,
        ShapeParam::Auc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ShapeParam::Pm => "PM",
            ShapeParam::Na => "NA",
            ShapeParam::Ttp => "TTP",
            ShapeParam::Tpn => "TPN",
            ShapeParam::Fwhm => "FWHM",
            ShapeParam::Fwhn => "FWHN",
            ShapeParam::Auc => "AUC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for ShapeParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Point values of the seven descriptors with per-parameter validity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub values: [f64; 7],
    pub valid: [bool; 7],
}

impl ShapeParams {
    pub fn get(&self, p: ShapeParam) -> Option<f64> {
        self.valid[p.index()].then_some(self.values[p.index()])
    }

    fn invalid() -> Self {
        Self { values: [f64::NAN; 7], valid: [false; 7] }
    }
}

/// Time of the crossing of `level` between samples `i` and `j`.
fn crossing(curve: &[f64], i: usize, j: usize, level: f64) -> f64 {
    let (a, b) = (curve[i], curve[j]);
    i as f64 + (j as f64 - i as f64) * (level - a) / (b - a)
}

/// Width of the excursion around `centre` where `above(curve[k])` holds,
/// measured between linearly interpolated crossings of `level`. `lo` bounds
/// the left search (inclusive).
fn excursion_width(curve: &[f64], centre: usize, lo: usize, level: f64, inside: impl Fn(f64) -> bool) -> Option<f64> {
    let left = (lo..centre).rev().find(|&k| !inside(curve[k]))?;
    let right = (centre + 1..curve.len()).find(|&k| !inside(curve[k]))?;
    let l = crossing(curve, left, left + 1, level);
    let r = crossing(curve, right - 1, right, level);
    Some(r - l)
}

/// Computes the seven shape descriptors of `curve` sampled every `dt`
/// seconds, starting at time zero.
pub fn shape_params(curve: &[f64], dt: f64) -> Result<ShapeParams> {
    if curve.len() < 3 {
        return Err(invalid_arg(format!("shape parameters need at least 3 samples, got {}", curve.len())));
    }
    if !(dt > 0.0) {
        return Err(invalid_arg(format!("dt must be positive, got {dt}")));
    }
    Ok(shape_params_unchecked(curve, dt))
}

pub(crate) fn shape_params_unchecked(curve: &[f64], dt: f64) -> ShapeParams {
    let mut ipk = 0;
    let mut imin = 0;
    for (i, &v) in curve.iter().enumerate() {
        if v > curve[ipk] {
            ipk = i;
        }
        if v < curve[imin] {
            imin = i;
        }
    }
    let pm = curve[ipk];
    if !(pm > curve[imin]) {
        return ShapeParams::invalid();
    }
    let mut out = ShapeParams::invalid();
    let mut set = |p: ShapeParam, v: Option<f64>| {
        if let Some(v) = v {
            out.values[p.index()] = v;
            out.valid[p.index()] = true;
        }
    };
    set(ShapeParam::Pm, Some(pm));
    set(ShapeParam::Ttp, Some(ipk as f64 * dt));
    let auc = curve.windows(2).map(|w| w[0] + w[1]).sum::<f64>() * 0.5 * dt;
    set(ShapeParam::Auc, Some(auc));
    if pm > 0.0 {
        let half = pm / 2.0;
        set(ShapeParam::Fwhm, excursion_width(curve, ipk, 0, half, |v| v >= half).map(|w| w * dt));
    }
    let nadir = (ipk + 1..curve.len()).fold(None, |best: Option<usize>, k| match best {
        Some(b) if curve[b] <= curve[k] => Some(b),
        _ => Some(k),
    });
    if let Some(ina) = nadir {
        let na = curve[ina];
        if na < 0.0 {
            set(ShapeParam::Na, Some(na));
            set(ShapeParam::Tpn, Some((ina - ipk) as f64 * dt));
            let half = na / 2.0;
            set(ShapeParam::Fwhn, excursion_width(curve, ina, ipk, half, |v| v <= half).map(|w| w * dt));
        }
    }
    out
}

/// Weights `b` with `auc(B * beta) = bᵀ beta`.
pub fn auc_weights(basis: &BasisSet) -> Vec<f64> {
    (0..basis.n_basis())
        .map(|g| {
            let c = basis.column(g);
            c.windows(2).map(|w| w[0] + w[1]).sum::<f64>() * 0.5 * basis.dt()
        })
        .collect()
}

/// Monte-Carlo variances of the shape descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeVariance {
    /// Empirical variance per parameter over the valid draws; NaN when
    /// fewer than two draws were valid.
    pub variances: [f64; 7],
    /// Draws excluded per parameter because the descriptor was invalid.
    pub excluded: [usize; 7],
    pub iters: usize,
}

impl ShapeVariance {
    pub fn get(&self, p: ShapeParam) -> f64 {
        self.variances[p.index()]
    }
}

/// Draws `beta* ~ N(beta, cov)` `iters` times, recomputes the descriptors of
/// `B beta*`, and returns their empirical variances.
pub fn mc_shape_variance<R: Rng + ?Sized>(
    beta: &[f64],
    cov: &DMatrix<f64>,
    basis: &BasisSet,
    iters: usize,
    rng: &mut R,
) -> Result<ShapeVariance> {
    if iters < MIN_MC_ITERS {
        return Err(invalid_arg(format!("at least {MIN_MC_ITERS} Monte-Carlo iterations required, got {iters}")));
    }
    let g = basis.n_basis();
    if beta.len() != g {
        return Err(Error::DimensionMismatch { expected: g, found: beta.len() });
    }
    if cov.nrows() != g || cov.ncols() != g {
        return Err(Error::DimensionMismatch { expected: g, found: cov.nrows() });
    }
    let l = psd_sqrt_factor(cov, PSD_TOL)?;
    let mut sum = [0.0; 7];
    let mut sumsq = [0.0; 7];
    let mut count = [0usize; 7];
    let mut z = vec![0.0; g];
    let mut b = vec![0.0; g];
    let mut curve = vec![0.0; basis.n_samples()];
    // Shift by the point estimate so the running sums stay well conditioned.
    let centre = shape_params_unchecked(&basis.curve(beta)?, basis.dt());
    for _ in 0..iters {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..g {
            b[i] = beta[i] + (0..g).map(|j| l[(i, j)] * z[j]).sum::<f64>();
        }
        basis.curve_into(&b, &mut curve);
        let sp = shape_params_unchecked(&curve, basis.dt());
        for k in 0..7 {
            if sp.valid[k] {
                let c = if centre.valid[k] { centre.values[k] } else { 0.0 };
                let d = sp.values[k] - c;
                sum[k] += d;
                sumsq[k] += d * d;
                count[k] += 1;
            }
        }
    }
    let mut variances = [f64::NAN; 7];
    let mut excluded = [0usize; 7];
    for k in 0..7 {
        excluded[k] = iters - count[k];
        if count[k] >= 2 {
            let n = count[k] as f64;
            variances[k] = ((sumsq[k] - sum[k] * sum[k] / n) / (n - 1.0)).max(0.0);
        }
    }
    Ok(ShapeVariance { variances, excluded, iters })
}
