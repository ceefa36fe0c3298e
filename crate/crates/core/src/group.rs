//! Group-level random-effects model for per-subject estimates with known
//! within-subject variances, with Knapp-Hartung and Wald tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid_arg, invalid_data, Result};

/// Upper bound of the between-subject variance search, in units of the
/// sample variance of the estimates.
pub const SIGMA_B_UPPER: f64 = 1e3;

/// Per-subject estimates `gamma` with sampling variances `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub gamma: Vec<f64>,
    pub v: Vec<f64>,
}

impl GroupSample {
    pub fn new(gamma: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if gamma.len() != v.len() {
            return Err(invalid_data(format!(
                "{} estimates but {} variances",
                gamma.len(),
                v.len()
            )));
        }
        if gamma.len() < 2 {
            return Err(invalid_data("a group test needs at least two subjects"));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(invalid_data("non-finite subject estimate"));
        }
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(invalid_data("subject variances must be finite and positive"));
        }
        Ok(Self { gamma, v })
    }

    /// Differences `second - first` with summed variances.
    pub fn paired(first: &GroupSample, second: &GroupSample) -> Result<Self> {
        if first.len() != second.len() {
            return Err(invalid_data("paired samples differ in size"));
        }
        Self::new(
            second.gamma.iter().zip(&first.gamma).map(|(b, a)| b - a).collect(),
            second.v.iter().zip(&first.v).map(|(b, a)| a + b).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupStatistic {
    KnappHartung,
    Wald,
}

impl GroupStatistic {
    pub const ALL: [GroupStatistic; 2] = [GroupStatistic::KnappHartung, GroupStatistic::Wald];

    pub fn label(self) -> &'static str {
        match self {
            GroupStatistic::KnappHartung => "KH",
            GroupStatistic::Wald => "Wald",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemlFit {
    pub sigma_b2: f64,
    pub eta: f64,
    pub var_eta: f64,
    /// Weighted residual dispersion `Σ w (γ - η̂)² / (n - 1)`.
    pub sr: f64,
}

fn weighted(sample: &GroupSample, s2: f64) -> (f64, f64, f64) {
    let mut sw = 0.0;
    let mut swg = 0.0;
    for (g, v) in sample.gamma.iter().zip(&sample.v) {
        let w = 1.0 / (s2 + v);
        sw += w;
        swg += w * g;
    }
    let eta = swg / sw;
    let q: f64 = sample.gamma.iter().zip(&sample.v).map(|(g, v)| (g - eta).powi(2) / (s2 + v)).sum();
    (eta, sw, q)
}

/// Negative restricted log-likelihood up to a constant.
pub fn reml_objective(sample: &GroupSample, s2: f64) -> f64 {
    let (_, sw, q) = weighted(sample, s2);
    let logdet: f64 = sample.v.iter().map(|v| (s2 + v).ln()).sum();
    0.5 * (logdet + sw.ln() + q)
}

/// Brent minimization on `[a, b]`.
fn brent_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    x
}

/// REML estimate of the between-subject variance and the implied weighted
/// mean.
pub fn reml_fit(sample: &GroupSample) -> Result<RemlFit> {
    let n = sample.len();
    if n < 2 {
        return Err(invalid_arg("REML needs at least two subjects"));
    }
    let mean = sample.gamma.iter().sum::<f64>() / n as f64;
    let var = sample.gamma.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let upper = SIGMA_B_UPPER * var;
    let obj = |s: f64| reml_objective(sample, s);
    let mut s2 = 0.0;
    if upper > 0.0 {
        let cand = brent_min(obj, 0.0, upper, 1e-10);
        if obj(cand) < obj(0.0) {
            s2 = cand;
        }
    }
    let (eta, sw, q) = weighted(sample, s2);
    Ok(RemlFit { sigma_b2: s2, eta, var_eta: 1.0 / sw, sr: q / (n as f64 - 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupTestResult {
    pub n: usize,
    pub eta: f64,
    pub var_eta: f64,
    pub sigma_b2: f64,
    pub sr: f64,
    pub t_kh: f64,
    pub t_wald: f64,
    /// Two-sided p-values on `n - 1` degrees of freedom.
    pub p_kh: f64,
    pub p_wald: f64,
}

impl GroupTestResult {
    pub fn p_value(&self, stat: GroupStatistic) -> f64 {
        match stat {
            GroupStatistic::KnappHartung => self.p_kh,
            GroupStatistic::Wald => self.p_wald,
        }
    }
}

fn two_sided_t(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Tests `η = 0` with both statistics.
pub fn group_test(sample: &GroupSample) -> Result<GroupTestResult> {
    let fit = reml_fit(sample)?;
    let n = sample.len();
    let df = n as f64 - 1.0;
    let t_wald = fit.eta / fit.var_eta.sqrt();
    let t_kh = if fit.sr > 0.0 {
        fit.eta / (fit.sr * fit.var_eta).sqrt()
    } else if fit.eta == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(fit.eta)
    };
    Ok(GroupTestResult {
        n,
        eta: fit.eta,
        var_eta: fit.var_eta,
        sigma_b2: fit.sigma_b2,
        sr: fit.sr,
        t_kh,
        t_wald,
        p_kh: two_sided_t(t_kh, df),
        p_wald: two_sided_t(t_wald, df),
    })
}

/// Tests a zero mean difference `second - first`.
pub fn paired_group_test(first: &GroupSample, second: &GroupSample) -> Result<GroupTestResult> {
    group_test(&GroupSample::paired(first, second)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_sample_has_zero_between_variance() {
        let s = GroupSample::new(vec![1.0, 1.0, 1.0, 1.0], vec![0.5, 1.0, 2.0, 1.0]).unwrap();
        let f = reml_fit(&s).unwrap();
        assert_eq!(f.sigma_b2, 0.0);
        assert!((f.eta - 1.0).abs() < 1e-15);
        assert!((f.var_eta - 1.0 / (2.0 + 1.0 + 0.5 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn equal_variances_match_closed_form() {
        // With equal v the REML estimate is max(0, s² - v).
        let g = vec![0.3, -1.2, 2.5, 0.8, 1.9, -0.4];
        let v = 0.2;
        let s = GroupSample::new(g.clone(), vec![v; 6]).unwrap();
        let f = reml_fit(&s).unwrap();
        let m = g.iter().sum::<f64>() / 6.0;
        let s2 = g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
        assert!((f.sigma_b2 - (s2 - v)).abs() < 1e-7);
        assert!((f.eta - m).abs() < 1e-12);
        // KH reduces to the one-sample t statistic.
        let t = group_test(&s).unwrap();
        let t_one = m / (s2 / 6.0).sqrt();
        assert!((t.t_kh - t_one).abs() < 1e-5);
    }

    #[test]
    fn paired_and_validation() {
        let a = GroupSample::new(vec![1.0, 2.0], vec![0.1, 0.2]).unwrap();
        let b = GroupSample::new(vec![2.0, 4.0], vec![0.3, 0.4]).unwrap();
        let d = GroupSample::paired(&a, &b).unwrap();
        assert_eq!(d.gamma, vec![1.0, 2.0]);
        assert!((d.v[0] - 0.4).abs() < 1e-15 && (d.v[1] - 0.6).abs() < 1e-15);
        assert!(GroupSample::new(vec![1.0], vec![1.0]).is_err());
        assert!(GroupSample::new(vec![1.0, 2.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let x = brent_min(|x| (x - 1.7).powi(2), 0.0, 10.0, 1e-10);
        assert!((x - 1.7).abs() < 1e-7);
    }
}
