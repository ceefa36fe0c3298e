//! Post-selection confidence distributions and variances for one focus
//! coefficient of a selected AR(1) Gaussian linear model.
//!
//! Conditioning on the nuisance sufficient statistics leaves a single free
//! coordinate `u` of the data. Its law is `N(m(θ), s²)` with `m` affine in
//! the focus coefficient θ, the focus statistic is affine and increasing in
//! `u`, and the selection event is an intersection of quadratic
//! inequalities in `u` (each non-selected model must lose the likelihood
//! comparison). The sampler draws `u`, checks the inequalities, and reports
//! the accepted focus statistics; [`PosiProblem::draw_full`] rebuilds full
//! length series for auditing.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid_arg, Error, Result};
use crate::fit::{fit_gls_matrix, NoiseModel};
use crate::linalg::{orthonormal_basis, spd_inverse};
use crate::noise::{ArProcess, NoiseSpec, Whitener};
use crate::select::{rss_orthonormal, CandidateDesigns};
use crate::seed::SeedStream;

/// Default number of accepted draws per grid point.
pub const DEFAULT_D: usize = 500;

/// Attempts allowed per requested draw before a grid point is declared
/// infeasible.
pub const ATTEMPTS_PER_DRAW: usize = 50;

/// Largest pre-cleanup monotonicity violation tolerated by [`posi_variance`].
pub const MONOTONE_TOL: f64 = 0.05;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Natural-parameter form of the AR(1) Gaussian linear model density.
///
/// `lambda` and `w` are laid out as six blocks: the coefficient block, the
/// lag-coupled block, the boundary-corrected block (each of length `p`),
/// then the three scalar quadratic terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalParamView {
    pub lambda: Vec<f64>,
    pub w: Vec<f64>,
    pub kappa: f64,
}

impl NaturalParamView {
    pub fn log_density(&self) -> f64 {
        self.lambda.iter().zip(&self.w).map(|(l, w)| l * w).sum::<f64>() - self.kappa
    }
}

/// Natural parameters, sufficient statistics and log-partition of
/// `y ~ N(X ζ, σ² V)` with `V[s,t] = ρ^|s-t|`.
pub fn natural_params(
    x: &DMatrix<f64>,
    zeta: &[f64],
    sigma2: f64,
    rho: f64,
    y: &[f64],
) -> Result<NaturalParamView> {
    let t = x.nrows();
    let p = x.ncols();
    if zeta.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: zeta.len() });
    }
    if y.len() != t {
        return Err(Error::DimensionMismatch { expected: t, found: y.len() });
    }
    if t < 2 {
        return Err(invalid_arg("natural parametrization needs at least two scans"));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid_arg(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::NonStationary(rho));
    }
    let r2m1 = rho * rho - 1.0;
    let mut lambda = Vec::with_capacity(3 * p + 3);
    lambda.extend(zeta.iter().map(|z| z / sigma2));
    lambda.extend(zeta.iter().map(|z| rho / r2m1 * z / sigma2));
    lambda.extend(zeta.iter().map(|z| -rho * rho / r2m1 * z / sigma2));
    lambda.push(-0.5 / sigma2);
    lambda.push(-rho / r2m1 / sigma2);
    lambda.push(0.5 * rho * rho / r2m1 / sigma2);

    let mut w = Vec::with_capacity(3 * p + 3);
    let xty: Vec<f64> = (0..p).map(|j| (0..t).map(|i| x[(i, j)] * y[i]).sum()).collect();
    w.extend(xty.iter().copied());
    for j in 0..p {
        // (G̃X)ᵀ G y + (G X)ᵀ G̃ y
        w.push((0..t - 1).map(|i| x[(i, j)] * y[i + 1] + x[(i + 1, j)] * y[i]).sum());
    }
    for j in 0..p {
        w.push(2.0 * xty[j] - x[(0, j)] * y[0] - x[(t - 1, j)] * y[t - 1]);
    }
    let yty: f64 = y.iter().map(|v| v * v).sum();
    w.push(yty);
    w.push((0..t - 1).map(|i| y[i] * y[i + 1]).sum());
    w.push(2.0 * yty - y[0] * y[0] - y[t - 1] * y[t - 1]);

    let mu: Vec<f64> = (0..t).map(|i| (0..p).map(|j| x[(i, j)] * zeta[j]).sum()).collect();
    let s = 1.0 / (1.0 - rho * rho);
    let mut quad = 0.0;
    for i in 0..t {
        let edge = i == 0 || i == t - 1;
        quad += mu[i] * mu[i] * if edge { s } else { (1.0 + rho * rho) * s };
        if i + 1 < t {
            quad -= 2.0 * rho * s * mu[i] * mu[i + 1];
        }
    }
    let log_det = t as f64 * sigma2.ln() + (t as f64 - 1.0) * (1.0 - rho * rho).ln();
    let kappa = quad / (2.0 * sigma2) + 0.5 * log_det + 0.5 * t as f64 * LN_2PI;
    Ok(NaturalParamView { lambda, w, kappa })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// `σ² V` known before selection.
    Known,
    /// `σ²` and `V` unknown; the selected model's residual vector is
    /// conditioned on and plug-in values are used for the remaining law.
    Unknown,
}

/// `c0 + c1 u + c2 u²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Quadratic {
    c0: f64,
    c1: f64,
    c2: f64,
}

impl Quadratic {
    fn eval(&self, u: f64) -> f64 {
        self.c0 + u * (self.c1 + u * self.c2)
    }

    fn roots(&self) -> Vec<f64> {
        let Quadratic { c0, c1, c2 } = *self;
        let scale = c0.abs().max(c1.abs()).max(c2.abs());
        if scale == 0.0 {
            return Vec::new();
        }
        if c2.abs() <= 1e-14 * scale {
            if c1.abs() <= 1e-14 * scale {
                return Vec::new();
            }
            return vec![-c0 / c1];
        }
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return Vec::new();
        }
        let sign = if c1 >= 0.0 { 1.0 } else { -1.0 };
        let q = -0.5 * (c1 + sign * disc.sqrt());
        let mut r = Vec::with_capacity(2);
        if q != 0.0 {
            r.push(q / c2);
            r.push(c0 / q);
        } else {
            r.push(0.0);
        }
        r
    }
}

/// Quadratic `‖P (b + e u)‖²` for the projector onto the columns of the
/// orthonormal `q`.
fn projected_quadratic(q: &DMatrix<f64>, b: &DVector<f64>, e: &DVector<f64>) -> Quadratic {
    let qb = q.transpose() * b;
    let qe = q.transpose() * e;
    Quadratic { c0: qb.norm_squared(), c1: 2.0 * qb.dot(&qe), c2: qe.norm_squared() }
}

#[derive(Debug, Clone)]
struct Audit {
    /// Candidate designs in the space where likelihoods are compared.
    designs: Vec<DMatrix<f64>>,
    /// Whitening applied to a raw draw before comparing likelihoods
    /// (`None` when draws already live in the whitened space).
    whitener: Option<Whitener>,
    /// Linear statistics that must stay fixed: `stats = Aᵀ y`.
    constraint: DMatrix<f64>,
    stats_obs: DVector<f64>,
    /// Data-space draw: `y(u) = base + dir * u` plus `noise_proj * ε`.
    base: DVector<f64>,
    dir: DVector<f64>,
    /// Projector applied to full-length noise (known variance only).
    noise_proj: Option<DMatrix<f64>>,
    focus: DVector<f64>,
}

/// A selected model, its focus coefficient and the reduced conditional law.
#[derive(Debug, Clone)]
pub struct PosiProblem {
    pub mode: VarianceMode,
    pub selected: usize,
    pub focus_column: usize,
    pub n_candidates: usize,
    pub w_obs: f64,
    pub u_obs: f64,
    /// Focus statistic as `w = w0 + w_scale * u`.
    pub w0: f64,
    pub w_scale: f64,
    /// Law of `u`: mean `mean_offset + mean_slope * θ`, sd `scale`.
    pub mean_offset: f64,
    pub mean_slope: f64,
    pub scale: f64,
    /// GLS estimate and standard error of the focus coefficient in the
    /// selected model (no selection adjustment).
    pub theta_ols: f64,
    pub se_ols: f64,
    margins: Vec<Quadratic>,
    audit: Audit,
}

impl PosiProblem {
    /// Builds the conditional problem for `focus_column` of candidate
    /// `selected`. `noise.known` picks the variance mode.
    pub fn new(
        y: &[f64],
        designs: &CandidateDesigns,
        selected: usize,
        focus_column: usize,
        noise: &NoiseSpec,
    ) -> Result<Self> {
        let l = designs.designs.len();
        if selected >= l {
            return Err(invalid_arg(format!("selected index {selected} out of range for {l} candidates")));
        }
        let x_sel = designs.designs[selected].matrix();
        let t = x_sel.nrows();
        if y.len() != t {
            return Err(Error::DimensionMismatch { expected: t, found: y.len() });
        }
        if focus_column >= x_sel.ncols() {
            return Err(invalid_arg(format!("focus column {focus_column} out of range")));
        }
        let rho = match noise.process {
            ArProcess::White => 0.0,
            ArProcess::Ar1 { rho } => rho,
            ArProcess::Ar2 { .. } => return Err(invalid_arg("post-selection inference supports AR(1) noise only")),
        };
        let whitener = Whitener::new(ArProcess::Ar1 { rho })?;
        let designs_w: Vec<DMatrix<f64>> = designs.designs.iter().map(|d| whitener.whiten_matrix(d.matrix())).collect();
        let naive = fit_gls_matrix(y, x_sel, NoiseModel::Given(*noise))?;
        let theta_ols = naive.beta[focus_column];
        let se_ols = naive.cov[(focus_column, focus_column)].sqrt();
        let yv = DVector::from_column_slice(y);
        let yw = whitener.whiten_vector(&yv);
        let qs: Vec<DMatrix<f64>> = designs_w.iter().map(orthonormal_basis).collect();

        if noise.known {
            noise.validate()?;
            let sigma = noise.sigma2.sqrt();
            let xf = designs_w[selected].column(focus_column).into_owned();
            let mut cols: Vec<DVector<f64>> = Vec::new();
            for (li, d) in designs_w.iter().enumerate() {
                for j in 0..d.ncols() {
                    if li == selected && j == focus_column {
                        continue;
                    }
                    let c = d.column(j).into_owned();
                    if !cols.contains(&c) {
                        cols.push(c);
                    }
                }
            }
            let a = if cols.is_empty() { DMatrix::zeros(t, 0) } else { DMatrix::from_columns(&cols) };
            let q = orthonormal_basis(&a);
            let r = &xf - &q * (q.transpose() * &xf);
            let rn = r.norm();
            if !(rn > 1e-8 * xf.norm()) {
                return Err(Error::Degenerate(
                    "focus column lies in the span of the conditioning statistics".into(),
                ));
            }
            let e = r / rn;
            let u_obs = e.dot(&yw);
            let base = &yw - &e * u_obs;
            let margins = margins_from_scores(&qs, selected, &base, &e, true);
            let noise_proj = DMatrix::identity(t, t) - &q * q.transpose();
            let w0 = xf.dot(&base);
            let stats_obs = a.transpose() * &yw;
            let problem = Self {
                mode: VarianceMode::Known,
                selected,
                focus_column,
                n_candidates: l,
                w_obs: xf.dot(&yw),
                u_obs,
                w0,
                w_scale: rn,
                mean_offset: 0.0,
                mean_slope: rn,
                scale: sigma,
                theta_ols,
                se_ols,
                margins,
                audit: Audit {
                    designs: designs_w,
                    whitener: None,
                    constraint: a,
                    stats_obs,
                    base: &q * (q.transpose() * &yw),
                    dir: xf.clone(),
                    noise_proj: Some(noise_proj),
                    focus: xf,
                },
            };
            problem.check_observed()?;
            Ok(problem)
        } else {
            let p = x_sel.ncols();
            let xtx_inv = spd_inverse(&(x_sel.transpose() * x_sel))?;
            let g = x_sel * xtx_inv.column(focus_column);
            let xf_raw = x_sel.column(focus_column).into_owned();
            let w_obs = xf_raw.dot(&yv);
            let gw = whitener.whiten_vector(&g);
            let xfw = designs_w[selected].column(focus_column).into_owned();
            let gg = gw.norm_squared();
            let slope = gw.dot(&xfw) / gg;
            let sigma_hat = naive.sigma2.sqrt();
            // y(u) = y_obs + g (u - w_obs), compared in the whitened space.
            let base_w = &yw - &gw * w_obs;
            let margins = margins_from_scores(&qs, selected, &base_w, &gw, false);
            let others: Vec<usize> = (0..p).filter(|&j| j != focus_column).collect();
            let hat = x_sel * &xtx_inv * x_sel.transpose();
            let resid_proj = DMatrix::identity(t, t) - hat;
            let mut constraint = DMatrix::zeros(t, others.len() + t);
            for (k, &j) in others.iter().enumerate() {
                constraint.set_column(k, &x_sel.column(j));
            }
            for i in 0..t {
                constraint.set_column(others.len() + i, &resid_proj.row(i).transpose());
            }
            let stats_obs = constraint.transpose() * &yv;
            let problem = Self {
                mode: VarianceMode::Unknown,
                selected,
                focus_column,
                n_candidates: l,
                w_obs,
                u_obs: w_obs,
                w0: 0.0,
                w_scale: 1.0,
                mean_offset: w_obs - theta_ols * slope,
                mean_slope: slope,
                scale: sigma_hat / gg.sqrt(),
                theta_ols,
                se_ols,
                margins,
                audit: Audit {
                    designs: designs_w,
                    whitener: Some(whitener),
                    constraint,
                    stats_obs,
                    base: &yv - &g * w_obs,
                    dir: g,
                    noise_proj: None,
                    focus: xf_raw,
                },
            };
            problem.check_observed()?;
            Ok(problem)
        }
    }

    fn check_observed(&self) -> Result<()> {
        if !self.accepts(self.u_obs) {
            return Err(invalid_arg("observed data do not lie in the selection region of the selected model"));
        }
        Ok(())
    }

    /// Whether the reduced coordinate `u` lies in the selection region.
    pub fn accepts(&self, u: f64) -> bool {
        self.margins.iter().all(|m| m.eval(u) > 0.0)
    }

    pub fn mean_u(&self, theta: f64) -> f64 {
        self.mean_offset + self.mean_slope * theta
    }

    pub fn focus_stat(&self, u: f64) -> f64 {
        self.w0 + self.w_scale * u
    }

    /// The selection region in `u` as sorted disjoint open intervals.
    pub fn selection_intervals(&self) -> Vec<(f64, f64)> {
        let mut roots: Vec<f64> = self.margins.iter().flat_map(|m| m.roots()).filter(|r| r.is_finite()).collect();
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend(roots);
        edges.push(f64::INFINITY);
        let mut out: Vec<(f64, f64)> = Vec::new();
        for w in edges.windows(2) {
            let mid = match (w[0].is_finite(), w[1].is_finite()) {
                (true, true) => 0.5 * (w[0] + w[1]),
                (false, true) => w[1] - 1.0 - w[1].abs(),
                (true, false) => w[0] + 1.0 + w[0].abs(),
                (false, false) => 0.0,
            };
            if self.accepts(mid) {
                match out.last_mut() {
                    Some(last) if last.1 == w[0] => last.1 = w[1],
                    _ => out.push((w[0], w[1])),
                }
            }
        }
        out
    }

    /// Exact conditional confidence distribution `P(w > w_obs | ...)` from
    /// the truncated normal law. NaN when the selection region carries no
    /// numerically representable mass at θ.
    pub fn exact_cd(&self, theta: f64) -> f64 {
        let m = self.mean_u(theta);
        let s = self.scale;
        let intervals = self.selection_intervals();
        let mass = |lo: f64, hi: f64| normal_mass((lo - m) / s, (hi - m) / s);
        let total: f64 = intervals.iter().map(|&(a, b)| mass(a, b)).sum();
        let upper: f64 = intervals
            .iter()
            .filter(|&&(_, b)| b > self.u_obs)
            .map(|&(a, b)| mass(a.max(self.u_obs), b))
            .sum();
        if total > 0.0 {
            (upper / total).clamp(0.0, 1.0)
        } else {
            f64::NAN
        }
    }

    /// One full-length conditional draw at `theta`, for auditing. Returns
    /// the draw, its focus statistic, and whether the selected model wins
    /// the direct likelihood comparison.
    pub fn draw_full<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> FullDraw {
        let a = &self.audit;
        let t = a.base.len();
        let y = match &a.noise_proj {
            Some(proj) => {
                let eps = DVector::from_fn(t, |_, _| self.scale * rng.sample::<f64, _>(StandardNormal));
                &a.base + proj * (&a.dir * theta + eps)
            }
            None => {
                let u = self.mean_u(theta) + self.scale * rng.sample::<f64, _>(StandardNormal);
                &a.base + &a.dir * u
            }
        };
        let w = a.focus.dot(&y);
        let yc = match &a.whitener {
            Some(wh) => wh.whiten_vector(&y),
            None => y.clone(),
        };
        let rss: Vec<f64> = a
            .designs
            .iter()
            .map(|x| rss_orthonormal(&orthonormal_basis(x), &yc))
            .collect();
        let selected = (0..rss.len()).all(|l| l == self.selected || rss[self.selected] < rss[l]);
        let stats = a.constraint.transpose() * &y;
        let mut max_rel = 0.0_f64;
        for (s, o) in stats.iter().zip(a.stats_obs.iter()) {
            let denom = o.abs().max(1.0);
            max_rel = max_rel.max((s - o).abs() / denom);
        }
        FullDraw { y: y.as_slice().to_vec(), w, selected, max_constraint_deviation: max_rel }
    }
}

fn margins_from_scores(
    qs: &[DMatrix<f64>],
    selected: usize,
    base: &DVector<f64>,
    dir: &DVector<f64>,
    explained: bool,
) -> Vec<Quadratic> {
    // Known variance: compare explained sums of squares ‖P b‖², larger wins.
    // Unknown variance: compare residual sums of squares, smaller wins.
    let total = Quadratic { c0: base.norm_squared(), c1: 2.0 * base.dot(dir), c2: dir.norm_squared() };
    let score = |q: &DMatrix<f64>| {
        let p = projected_quadratic(q, base, dir);
        if explained {
            p
        } else {
            Quadratic { c0: -(total.c0 - p.c0), c1: -(total.c1 - p.c1), c2: -(total.c2 - p.c2) }
        }
    };
    let sel = score(&qs[selected]);
    qs.iter()
        .enumerate()
        .filter(|(l, _)| *l != selected)
        .map(|(_, q)| {
            let o = score(q);
            Quadratic { c0: sel.c0 - o.c0, c1: sel.c1 - o.c1, c2: sel.c2 - o.c2 }
        })
        .collect()
}

fn normal_mass(lo: f64, hi: f64) -> f64 {
    let n = Normal::standard();
    if lo >= 0.0 {
        (n.sf(lo) - n.sf(hi)).max(0.0)
    } else {
        (n.cdf(hi) - n.cdf(lo)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullDraw {
    pub y: Vec<f64>,
    pub w: f64,
    pub selected: bool,
    pub max_constraint_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerOutput {
    pub theta: f64,
    /// Focus statistics of the accepted draws.
    pub accepted_w: Vec<f64>,
    pub attempts: usize,
    pub acceptance_rate: f64,
}

impl SamplerOutput {
    /// Share of accepted draws whose focus statistic exceeds `w_obs`.
    pub fn cd(&self, w_obs: f64) -> f64 {
        self.accepted_w.iter().filter(|&&w| w > w_obs).count() as f64 / self.accepted_w.len() as f64
    }
}

/// Draws from the conditional law at `theta` until `d` draws fall in the
/// selection region or `50 d` attempts are spent.
pub fn conditional_sampler(problem: &PosiProblem, theta: f64, d: usize, seed: SeedStream) -> Result<SamplerOutput> {
    if !theta.is_finite() {
        return Err(invalid_arg("focus value must be finite"));
    }
    if d == 0 {
        return Err(invalid_arg("at least one draw is required"));
    }
    let mut rng = seed.rng();
    let m = problem.mean_u(theta);
    let budget = ATTEMPTS_PER_DRAW * d;
    let mut accepted_w = Vec::with_capacity(d);
    let mut attempts = 0;
    while attempts < budget && accepted_w.len() < d {
        attempts += 1;
        let u = m + problem.scale * rng.sample::<f64, _>(StandardNormal);
        if problem.accepts(u) {
            accepted_w.push(problem.focus_stat(u));
        }
    }
    if accepted_w.is_empty() {
        return Err(Error::Infeasible { theta, attempts });
    }
    let acceptance_rate = accepted_w.len() as f64 / attempts as f64;
    Ok(SamplerOutput { theta, accepted_w, attempts, acceptance_rate })
}

fn count_accepted(problem: &PosiProblem, theta: f64, attempts: usize, seed: SeedStream) -> usize {
    let mut rng = seed.rng();
    let m = problem.mean_u(theta);
    (0..attempts)
        .filter(|_| problem.accepts(m + problem.scale * rng.sample::<f64, _>(StandardNormal)))
        .count()
}

/// Stop rule for the bracket search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once the bracket spans this many naive standard errors.
    pub width_se: f64,
    pub max_rounds: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { width_se: 20.0, max_rounds: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub rounds: usize,
    pub tested: usize,
}

/// Searches for a bracket of feasible focus values around `theta_start`,
/// testing points `theta_start + k a` with `d_e` attempts each and widening
/// each side by `a` while its extreme point stays feasible. Returns
/// `Ok(None)` when every point of the initial bracket is infeasible.
pub fn bounds_search(
    problem: &PosiProblem,
    theta_start: f64,
    a: f64,
    d_e: usize,
    stop: StopRule,
    seed: SeedStream,
) -> Result<Option<Bracket>> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(invalid_arg(format!("step a must be positive, got {a}")));
    }
    if d_e == 0 {
        return Err(invalid_arg("D_E must be at least 1"));
    }
    if !theta_start.is_finite() {
        return Err(invalid_arg("starting value must be finite"));
    }
    let mut status: std::collections::BTreeMap<i64, bool> = Default::default();
    let (mut lo, mut hi) = (-1_i64, 1_i64);
    let mut prev: Option<Vec<i64>> = None;
    let mut rounds = 0;
    let width_limit = stop.width_se * problem.se_ols;
    loop {
        rounds += 1;
        for k in lo..=hi {
            status
                .entry(k)
                .or_insert_with(|| count_accepted(problem, theta_start + k as f64 * a, d_e, seed) > 0);
        }
        let current: Vec<i64> = (lo..=hi).filter(|k| status[k]).collect();
        if current.is_empty() {
            return Ok(None);
        }
        if prev.as_ref() == Some(&current) {
            break;
        }
        let (cmin, cmax) = (current[0], *current.last().expect("non-empty"));
        let mut nlo = cmin;
        let mut nhi = cmax;
        if cmin == lo {
            nlo -= 1;
        }
        if cmax == hi {
            nhi += 1;
        }
        let unchanged = nlo == lo && nhi == hi;
        prev = Some(current);
        lo = nlo;
        hi = nhi;
        if unchanged
            || rounds >= stop.max_rounds
            || (cmax - cmin) as f64 * a >= width_limit
        {
            break;
        }
    }
    let feasible: Vec<i64> = status.iter().filter(|(_, &f)| f).map(|(&k, _)| k).collect();
    let (kmin, kmax) = (feasible[0], *feasible.last().expect("non-empty"));
    Ok(Some(Bracket {
        lower: theta_start + kmin as f64 * a,
        upper: theta_start + kmax as f64 * a,
        rounds,
        tested: status.len(),
    }))
}

/// Pool-adjacent-violators fit of a non-decreasing sequence.
pub fn pava(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            let (m2, c2) = blocks[n - 1];
            let (m1, c1) = blocks[n - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(n - 2);
            blocks.push(((m1 * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(m, c)| std::iter::repeat_n(m, c)).collect()
}

/// Largest drop `c[i] - c[j]` over `i < j`.
pub fn max_monotone_violation(c: &[f64]) -> f64 {
    let mut run_max = f64::NEG_INFINITY;
    let mut worst = 0.0_f64;
    for &v in c {
        run_max = run_max.max(v);
        worst = worst.max(run_max - v);
    }
    worst
}

/// Tabulated post-selection confidence distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceDistributionEstimate {
    /// Feasible grid points, ascending.
    pub grid: Vec<f64>,
    pub c_raw: Vec<f64>,
    /// Isotonic cleanup of `c_raw`.
    pub c: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub infeasible: Vec<f64>,
    pub d: usize,
    pub max_violation: f64,
    pub variance: f64,
    pub mean: f64,
    pub median: f64,
    pub ols: f64,
    pub failure: Option<String>,
}

/// Step-function moments `(Σ θ ΔC, Σ θ² ΔC)` with `C(θ_[0]) = 0`.
fn step_moments(grid: &[f64], c: &[f64]) -> (f64, f64) {
    let mut prev = 0.0;
    let (mut m1, mut m2) = (0.0, 0.0);
    for (&t, &v) in grid.iter().zip(c) {
        let dc = v - prev;
        m1 += t * dc;
        m2 += t * t * dc;
        prev = v;
    }
    (m1, m2)
}

fn median_crossing(grid: &[f64], c: &[f64]) -> f64 {
    match c.iter().position(|&v| v >= 0.5) {
        None => *grid.last().unwrap_or(&f64::NAN),
        Some(0) => grid[0],
        Some(i) => {
            let (c0, c1) = (c[i - 1], c[i]);
            if c1 == c0 {
                grid[i]
            } else {
                grid[i - 1] + (grid[i] - grid[i - 1]) * (0.5 - c0) / (c1 - c0)
            }
        }
    }
}

/// Estimates the confidence distribution on `grid` with `d` accepted
/// draws per point. All points share one random stream.
pub fn approx_cd(problem: &PosiProblem, grid: &[f64], d: usize, seed: SeedStream) -> Result<ConfidenceDistributionEstimate> {
    if grid.is_empty() {
        return Err(invalid_arg("grid must contain at least one point"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_arg("grid must be strictly increasing"));
    }
    if d == 0 {
        return Err(invalid_arg("D must be at least 1"));
    }
    let results: Vec<Result<SamplerOutput>> =
        grid.par_iter().map(|&th| conditional_sampler(problem, th, d, seed)).collect();
    let mut feasible_grid = Vec::new();
    let mut c_raw = Vec::new();
    let mut acceptance = Vec::new();
    let mut infeasible = Vec::new();
    for (th, r) in grid.iter().zip(results) {
        match r {
            Ok(out) => {
                feasible_grid.push(*th);
                c_raw.push(out.cd(problem.w_obs));
                acceptance.push(out.acceptance_rate);
            }
            Err(Error::Infeasible { .. }) => infeasible.push(*th),
            Err(e) => return Err(e),
        }
    }
    if feasible_grid.is_empty() {
        return Ok(ConfidenceDistributionEstimate {
            grid: feasible_grid,
            c_raw,
            c: Vec::new(),
            acceptance,
            infeasible,
            d,
            max_violation: 0.0,
            variance: f64::NAN,
            mean: f64::NAN,
            median: f64::NAN,
            ols: problem.theta_ols,
            failure: Some("every grid point is infeasible".into()),
        });
    }
    let c = pava(&c_raw);
    let max_violation = max_monotone_violation(&c_raw);
    let (m1, m2) = step_moments(&feasible_grid, &c);
    Ok(ConfidenceDistributionEstimate {
        median: median_crossing(&feasible_grid, &c),
        grid: feasible_grid,
        c_raw,
        c,
        acceptance,
        infeasible,
        d,
        max_violation,
        variance: m2 - m1 * m1,
        mean: m1,
        ols: problem.theta_ols,
        failure: None,
    })
}

/// Post-selection variance from a tabulated confidence distribution.
pub fn posi_variance(cd: &ConfidenceDistributionEstimate) -> Result<f64> {
    if let Some(f) = &cd.failure {
        return Err(Error::ConfidenceDistribution(f.clone()));
    }
    if cd.grid.len() < 2 {
        return Err(Error::ConfidenceDistribution("at least two grid points are required".into()));
    }
    if cd.max_violation > MONOTONE_TOL {
        return Err(Error::ConfidenceDistribution(format!(
            "monotonicity violation {:.3} exceeds {MONOTONE_TOL}",
            cd.max_violation
        )));
    }
    if cd.c.iter().all(|&v| v == 0.0) || cd.c.iter().all(|&v| v == cd.c[0]) && cd.c[0] == 0.0 {
        return Err(Error::ConfidenceDistribution("confidence distribution puts no mass on the grid".into()));
    }
    let (m1, m2) = step_moments(&cd.grid, &cd.c);
    Ok((m2 - m1 * m1).max(0.0))
}

/// Settings for [`posi_analysis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosiConfig {
    /// Accepted draws per grid point.
    pub d: usize,
    /// Attempts per point during the bracket search.
    pub d_e: usize,
    /// Bracket step; defaults to the naive standard error.
    pub a: Option<f64>,
    /// Grid points per bracket step.
    pub grid_per_step: usize,
    pub stop: StopRule,
}

impl Default for PosiConfig {
    fn default() -> Self {
        Self { d: DEFAULT_D, d_e: 100, a: None, grid_per_step: 5, stop: StopRule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosiOutcome {
    pub selected: usize,
    pub focus_column: usize,
    pub mode: VarianceMode,
    pub theta_ols: f64,
    pub se_ols: f64,
    pub start: f64,
    pub fallback_used: bool,
    pub bracket: Option<Bracket>,
    pub cd: Option<ConfidenceDistributionEstimate>,
    pub variance: Option<f64>,
    pub failure: Option<String>,
}

impl PosiOutcome {
    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }
}

/// Bracket search from the naive estimate (with a coarse fallback start),
/// CD tabulation on the bracket, and the post-selection variance.
pub fn posi_analysis(problem: &PosiProblem, config: &PosiConfig, seed: SeedStream) -> Result<PosiOutcome> {
    if config.grid_per_step == 0 {
        return Err(invalid_arg("grid_per_step must be at least 1"));
    }
    let a = config.a.unwrap_or(problem.se_ols);
    let mut outcome = PosiOutcome {
        selected: problem.selected,
        focus_column: problem.focus_column,
        mode: problem.mode,
        theta_ols: problem.theta_ols,
        se_ols: problem.se_ols,
        start: problem.theta_ols,
        fallback_used: false,
        bracket: None,
        cd: None,
        variance: None,
        failure: None,
    };
    let search_seed = seed.named("bounds");
    let bracket = bounds_search(problem, problem.theta_ols, a, config.d_e, config.stop, search_seed)?;
    if let Some(br) = bracket {
        let cd = tabulate(problem, br, a, config, seed)?;
        if covers_median(&cd) {
            return Ok(finish(outcome, br, cd));
        }
    }
    outcome.fallback_used = true;
    let coarse: Vec<f64> = (-10..=10).map(|j| problem.theta_ols + j as f64 * problem.se_ols).collect();
    let mut pts = Vec::new();
    let mut cs = Vec::new();
    for &th in &coarse {
        if let Ok(out) = conditional_sampler(problem, th, config.d_e, seed.named("coarse")) {
            pts.push(th);
            cs.push(out.cd(problem.w_obs));
        }
    }
    if pts.is_empty() {
        outcome.failure = Some("no feasible bracket for the focus parameter".into());
        return Ok(outcome);
    }
    let start = median_crossing(&pts, &pava(&cs));
    outcome.start = start;
    let Some(br) = bounds_search(problem, start, a, config.d_e, config.stop, search_seed)? else {
        outcome.failure = Some("no feasible bracket for the focus parameter".into());
        return Ok(outcome);
    };
    let cd = tabulate(problem, br, a, config, seed)?;
    let covered = covers_median(&cd);
    let mut outcome = finish(outcome, br, cd);
    if !covered && outcome.failure.is_none() {
        outcome.failure = Some("confidence distribution does not cross 0.5 within the bracket".into());
    }
    Ok(outcome)
}

fn tabulate(problem: &PosiProblem, br: Bracket, a: f64, config: &PosiConfig, seed: SeedStream) -> Result<ConfidenceDistributionEstimate> {
    let step = a / config.grid_per_step as f64;
    let n = ((br.upper - br.lower) / step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| br.lower + i as f64 * step).collect();
    approx_cd(problem, &grid, config.d, seed.named("cd"))
}

/// Whether the cleaned CD passes through 0.5 on the grid, i.e. the bracket
/// holds the centre of the distribution.
fn covers_median(cd: &ConfidenceDistributionEstimate) -> bool {
    cd.failure.is_none() && cd.c.first().is_some_and(|&v| v < 0.5) && cd.c.last().is_some_and(|&v| v >= 0.5)
}

fn finish(mut outcome: PosiOutcome, br: Bracket, cd: ConfidenceDistributionEstimate) -> PosiOutcome {
    outcome.bracket = Some(br);
    match posi_variance(&cd) {
        Ok(v) => outcome.variance = Some(v),
        Err(e) => outcome.failure = Some(e.to_string()),
    }
    outcome.cd = Some(cd);
    outcome
}
