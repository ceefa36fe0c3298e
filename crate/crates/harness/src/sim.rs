//! Simulated subjects for the known and unknown change-point studies.

use hrshift_core::design::{build_design, BasisSet, ChangePointSet, DesignSpec, ModelKind, OnsetSeries};
use hrshift_core::seed::SeedStream;
use hrshift_core::select::CandidateSet;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{KnownCpConfig, UnknownCpConfig};
use crate::error::{HarnessError, Result};

const MAX_LAYOUT_TRIES: usize = 10_000;

/// Onset scans (1-based) with consecutive gaps drawn from `iti`.
pub fn sample_onsets<R: Rng + ?Sized>(rng: &mut R, n_scans: usize, n_onsets: usize, iti: &[usize]) -> Result<Vec<usize>> {
    if n_onsets == 0 || iti.is_empty() {
        return Err(HarnessError::Data("need at least one onset and one iti value".into()));
    }
    let min_span = (n_onsets - 1) * iti.iter().min().copied().unwrap_or(1);
    if min_span >= n_scans {
        return Err(HarnessError::Data(format!("{n_onsets} onsets with itis {iti:?} do not fit in {n_scans} scans")));
    }
    for _ in 0..MAX_LAYOUT_TRIES {
        let gaps: Vec<usize> = (1..n_onsets).map(|_| iti[rng.random_range(0..iti.len())]).collect();
        let span: usize = gaps.iter().sum();
        if span >= n_scans {
            continue;
        }
        let mut s = rng.random_range(1..=n_scans - span);
        let mut out = Vec::with_capacity(n_onsets);
        out.push(s);
        for g in gaps {
            s += g;
            out.push(s);
        }
        return Ok(out);
    }
    Err(HarnessError::Data(format!("could not place {n_onsets} onsets in {n_scans} scans")))
}

/// Stationary AR(1) noise with marginal variance `sigma2`.
pub fn ar1_noise<R: Rng + ?Sized>(rng: &mut R, t: usize, rho: f64, sigma2: f64) -> Vec<f64> {
    let s = sigma2.sqrt();
    let innov = s * (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(t);
    let mut prev = 0.0;
    for i in 0..t {
        let z: f64 = rng.sample(StandardNormal);
        prev = if i == 0 { s * z } else { rho * prev + innov * z };
        out.push(prev);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownCpSubject {
    pub y: Vec<f64>,
    pub onsets: Vec<OnsetSeries>,
    pub true_cps: ChangePointSet,
    pub misspecified_cps: ChangePointSet,
    /// Subject effect `e_i` per condition.
    pub effects: Vec<f64>,
    pub sigma2: f64,
}

impl KnownCpSubject {
    pub fn reported(&self, misspecified: bool) -> &ChangePointSet {
        if misspecified {
            &self.misspecified_cps
        } else {
            &self.true_cps
        }
    }
}

/// One subject of the known change-point study. Substreams are keyed so
/// that the same seed gives the same onsets, change points and standardised
/// noise for every effect size and SNR.
pub fn simulate_known_subject(
    cfg: &KnownCpConfig,
    basis: &BasisSet,
    effects_mean: &[f64],
    snr: f64,
    seed: SeedStream,
) -> Result<KnownCpSubject> {
    let k = cfg.conditions.len();
    let m = cfg.stimuli_per_condition;
    let scans = sample_onsets(&mut seed.named("onsets").rng(), cfg.n_scans, k * m, &cfg.iti)?;
    let mut labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, m)).collect();
    labels.shuffle(&mut seed.named("labels").rng());
    let mut onsets = Vec::with_capacity(k);
    let mut true_cps = ChangePointSet::new();
    let mut miss = ChangePointSet::new();
    let mut cp_rng = seed.named("change-points").rng();
    let mut miss_rng = seed.named("misspecification").rng();
    for (ci, cond) in cfg.conditions.iter().enumerate() {
        let own: Vec<usize> = scans.iter().zip(&labels).filter(|(_, &l)| l == ci).map(|(&s, _)| s).collect();
        let ord = cp_rng.random_range(cfg.min_segment_onsets..=m - cfg.min_segment_onsets);
        let b = cfg.misspecification_bound;
        let off = if b > 0.0 { miss_rng.random_range(-b..=b).round() as i64 } else { 0 };
        let mord = (ord as i64 + off).clamp(1, m as i64 - 1) as usize;
        true_cps.insert(cond.clone(), vec![own[ord]])?;
        miss.insert(cond.clone(), vec![own[mord]])?;
        onsets.push(OnsetSeries::from_onsets(cond.clone(), cfg.n_scans, &own)?);
    }
    let spec = DesignSpec { tr: cfg.tr, kind: ModelKind::Segmented, intercept: false };
    let x = build_design(&onsets, basis, &true_cps, None, &spec)?;
    let mut eff_rng = seed.named("effects").rng();
    let effects: Vec<f64> = effects_mean
        .iter()
        .map(|&mu| mu + cfg.effect_sd * eff_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let b0 = cfg.beta_bc[0];
    let mut coef = Vec::with_capacity(x.n_columns());
    for &e in &effects {
        coef.extend(cfg.beta_bc.iter().copied());
        coef.extend(cfg.beta_bc.iter().map(|b| b * (b0 + e) / b0));
    }
    let clean = x.matrix() * DVector::from_vec(coef);
    let mean = clean.mean();
    if !(mean.abs() > 0.0) {
        return Err(HarnessError::Data("clean signal has zero mean; SNR undefined".into()));
    }
    let sigma2 = mean.abs() / snr;
    let noise = ar1_noise(&mut seed.named("noise").rng(), cfg.n_scans, 0.0, 1.0);
    let y = clean.iter().zip(&noise).map(|(c, z)| c + sigma2.sqrt() * z).collect();
    Ok(KnownCpSubject { y, onsets, true_cps, misspecified_cps: miss, effects, sigma2 })
}

pub fn simulate_known_cp(
    cfg: &KnownCpConfig,
    basis: &BasisSet,
    effects_mean: &[f64],
    snr: f64,
    seed: SeedStream,
) -> Result<Vec<KnownCpSubject>> {
    (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| simulate_known_subject(cfg, basis, effects_mean, snr, seed.index(i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownCpSubject {
    pub y: Vec<f64>,
    /// True change point (1-based scan of an onset).
    pub true_cp: usize,
    pub candidates: CandidateSet,
    pub effect: f64,
    pub baseline: f64,
    pub sigma2: f64,
}

/// Shared onset layout of the unknown change-point study.
pub fn unknown_cp_layout(cfg: &UnknownCpConfig, seed: SeedStream) -> Result<OnsetSeries> {
    let scans = sample_onsets(&mut seed.named("layout").rng(), cfg.n_scans, cfg.stimuli, &cfg.iti)?;
    Ok(OnsetSeries::from_onsets("c1", cfg.n_scans, &scans)?)
}

/// One subject of the unknown change-point study: change magnitude
/// `e ~ N(eta, effect_variance)` on top of a unit response, baseline
/// `N(baseline_mean, baseline_sd²)`, AR(1) noise with variance
/// `mean(clean) / snr`, and `n_candidates` candidate change points that
/// include the truth and lie at least `min_spacing` onsets apart.
pub fn simulate_unknown_subject(
    cfg: &UnknownCpConfig,
    basis: &BasisSet,
    onsets: &OnsetSeries,
    eta: f64,
    seed: SeedStream,
) -> Result<UnknownCpSubject> {
    let scans = onsets.onsets();
    let n = scans.len();
    if n <= 2 * cfg.margin {
        return Err(HarnessError::Data("margin leaves no eligible change point".into()));
    }
    let eligible: Vec<usize> = (cfg.margin..n - cfg.margin).collect();
    let mut rng = seed.named("candidates").rng();
    let truth = eligible[rng.random_range(0..eligible.len())];
    let mut chosen = vec![truth];
    let mut pool = eligible.clone();
    pool.shuffle(&mut rng);
    for o in pool {
        if chosen.len() == cfg.n_candidates {
            break;
        }
        if chosen.iter().all(|&c| c.abs_diff(o) >= cfg.min_spacing) {
            chosen.push(o);
        }
    }
    if chosen.len() < cfg.n_candidates {
        return Err(HarnessError::Data(format!(
            "cannot place {} candidates {} onsets apart",
            cfg.n_candidates, cfg.min_spacing
        )));
    }
    chosen.sort_unstable();
    let configs = chosen
        .iter()
        .map(|&o| ChangePointSet::new().with(onsets.condition(), vec![scans[o]]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let candidates = CandidateSet::new(configs)?;

    let true_cp = scans[truth];
    let cps = ChangePointSet::new().with(onsets.condition(), vec![true_cp])?;
    let spec = DesignSpec::new(cfg.tr, ModelKind::Cumulative);
    let x = build_design(std::slice::from_ref(onsets), basis, &cps, None, &spec)?;
    let mut prm = seed.named("parameters").rng();
    let effect = eta + cfg.effect_variance.sqrt() * prm.sample::<f64, _>(StandardNormal);
    let baseline = cfg.baseline_mean + cfg.baseline_sd * prm.sample::<f64, _>(StandardNormal);
    let clean = x.matrix() * DVector::from_vec(vec![1.0, effect, baseline]);
    let mean = clean.mean();
    if !(mean > 0.0) {
        return Err(HarnessError::Data("clean signal mean must be positive to set the SNR".into()));
    }
    let sigma2 = mean / cfg.snr;
    let noise = ar1_noise(&mut seed.named("noise").rng(), cfg.n_scans, cfg.rho, sigma2);
    let y = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    Ok(UnknownCpSubject { y, true_cp, candidates, effect, baseline, sigma2 })
}

/// `count` subjects, each from its own indexed substream.
pub fn simulate_unknown_cp(
    cfg: &UnknownCpConfig,
    basis: &BasisSet,
    onsets: &OnsetSeries,
    eta: f64,
    count: usize,
    seed: SeedStream,
) -> Result<Vec<UnknownCpSubject>> {
    (0..count)
        .into_par_iter()
        .map(|i| simulate_unknown_subject(cfg, basis, onsets, eta, seed.index(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;

    #[test]
    fn onset_gaps_respect_iti() {
        let mut rng = SeedStream::new(3).rng();
        for _ in 0..20 {
            let s = sample_onsets(&mut rng, 500, 120, &[3, 4, 5]).unwrap();
            assert_eq!(s.len(), 120);
            assert!(s.windows(2).all(|w| (3..=5).contains(&(w[1] - w[0]))));
            assert!(s[0] >= 1 && *s.last().unwrap() <= 500);
        }
        assert!(sample_onsets(&mut rng, 100, 60, &[3]).is_err());
    }

    #[test]
    fn known_subject_noise_scales_with_snr() {
        let cfg = KnownCpConfig::default();
        let basis = build_basis(&cfg.basis, &cfg.beta_bc).unwrap();
        let a = simulate_known_subject(&cfg, &basis, &[0.0, 0.5], 1.0, SeedStream::new(1)).unwrap();
        let b = simulate_known_subject(&cfg, &basis, &[0.0, 0.5], 2.0, SeedStream::new(1)).unwrap();
        assert_eq!(a.true_cps, b.true_cps);
        assert!((a.sigma2 / b.sigma2 - 2.0).abs() < 1e-12);
        for u in &a.onsets {
            let c = a.true_cps.get(u.condition())[0];
            let before = u.onsets().iter().filter(|&&s| s < c).count();
            assert!((15..=45).contains(&before));
        }
        for (cond, m) in a.misspecified_cps.as_map() {
            let u = a.onsets.iter().find(|u| u.condition() == cond).unwrap().onsets();
            let i = u.iter().position(|s| *s == m[0]).unwrap() as i64;
            let j = u.iter().position(|s| *s == a.true_cps.get(cond)[0]).unwrap() as i64;
            assert!((i - j).abs() <= 5);
        }
    }

    #[test]
    fn unknown_subject_construction() {
        let cfg = UnknownCpConfig::default();
        let basis = build_basis(&cfg.basis, &[1.0]).unwrap();
        let layout = unknown_cp_layout(&cfg, SeedStream::new(5)).unwrap();
        let subs = simulate_unknown_cp(&cfg, &basis, &layout, 0.5, 10, SeedStream::new(6)).unwrap();
        let scans = layout.onsets();
        for s in &subs {
            assert_eq!(s.candidates.len(), 4);
            let ords: Vec<usize> = s
                .candidates
                .configs()
                .iter()
                .map(|c| scans.iter().position(|&x| x == c.get("c1")[0]).unwrap())
                .collect();
            assert!(ords.iter().all(|&o| (10..50).contains(&o)));
            for i in 0..4 {
                for j in 0..i {
                    assert!(ords[i].abs_diff(ords[j]) >= 5);
                }
            }
            assert!(s.candidates.configs().iter().any(|c| c.get("c1")[0] == s.true_cp));
        }
    }
}
