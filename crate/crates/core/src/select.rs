//! Candidate change-point configurations and maximum-likelihood selection.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, BasisSet, ChangePointSet, DesignMatrix, DesignSpec, OnsetSeries};
use crate::error::{invalid_arg, invalid_data, Error, Result};
use crate::fit::{fit_gls, NoiseModel, SubjectGlmFit};
use crate::noise::NoiseSpec;

/// Default cap on enumerated configurations.
pub const DEFAULT_CANDIDATE_CAP: usize = 10_000;

/// Restrictions applied when enumerating change points of one condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateConstraints {
    /// Onsets excluded at each end of the onset sequence.
    pub margin: usize,
    /// Minimum distance, in onsets, between change points of one
    /// configuration.
    pub min_spacing: usize,
    pub cap: usize,
}

impl Default for CandidateConstraints {
    fn default() -> Self {
        Self { margin: 10, min_spacing: 5, cap: DEFAULT_CANDIDATE_CAP }
    }
}

/// Distinct change-point configurations considered for one series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    configs: Vec<ChangePointSet>,
}

impl CandidateSet {
    pub fn new(configs: Vec<ChangePointSet>) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::NoCandidates("candidate list is empty".into()));
        }
        for (i, c) in configs.iter().enumerate() {
            if let Some(j) = configs[..i].iter().position(|d| d == c) {
                return Err(invalid_data(format!("candidates {j} and {i} are identical")));
            }
        }
        Ok(Self { configs })
    }

    pub fn configs(&self) -> &[ChangePointSet] {
        &self.configs
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// Checks that every candidate change point is an onset of its condition.
    pub fn validate_against(&self, onsets: &[OnsetSeries]) -> Result<()> {
        self.configs.iter().try_for_each(|c| c.validate_against(onsets))
    }
}

fn choose_spaced(eligible: &[usize], c: usize, spacing: usize, cap: usize, out: &mut Vec<Vec<usize>>) -> Result<()> {
    fn rec(
        eligible: &[usize],
        start: usize,
        c: usize,
        spacing: usize,
        cap: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        if cur.len() == c {
            if out.len() >= cap {
                return Err(Error::TooManyCandidates { count: out.len() + 1, cap });
            }
            out.push(cur.iter().map(|&i| eligible[i]).collect());
            return Ok(());
        }
        for i in start..eligible.len() {
            cur.push(i);
            rec(eligible, i + spacing.max(1), c, spacing, cap, cur, out)?;
            cur.pop();
        }
        Ok(())
    }
    rec(eligible, 0, c, spacing, cap, &mut Vec::with_capacity(c), out)
}

/// All admissible configurations with `counts[k]` change points per
/// condition.
///
/// Change points are restricted to onsets with ordinal in
/// `(margin, n - margin]`, pairwise at least `min_spacing` onsets apart.
/// Conditions absent from `counts` get no change points.
pub fn enumerate_candidates(
    onsets: &[OnsetSeries],
    counts: &BTreeMap<String, usize>,
    constraints: &CandidateConstraints,
) -> Result<CandidateSet> {
    for cond in counts.keys() {
        if !onsets.iter().any(|u| u.condition() == cond) {
            return Err(invalid_arg(format!("change-point count given for unknown condition {cond:?}")));
        }
    }
    let mut per_condition: Vec<(String, Vec<Vec<usize>>)> = Vec::new();
    for u in onsets {
        let c = counts.get(u.condition()).copied().unwrap_or(0);
        let all = u.onsets();
        let n = all.len();
        let eligible: Vec<usize> = if n > 2 * constraints.margin {
            all[constraints.margin..n - constraints.margin].to_vec()
        } else {
            Vec::new()
        };
        let mut lists = Vec::new();
        choose_spaced(&eligible, c, constraints.min_spacing, constraints.cap, &mut lists)?;
        if lists.is_empty() {
            return Err(Error::NoCandidates(format!(
                "condition {:?}: {c} change point(s) do not fit {n} onsets with margin {} and spacing {}",
                u.condition(),
                constraints.margin,
                constraints.min_spacing
            )));
        }
        per_condition.push((u.condition().to_string(), lists));
    }
    let total = per_condition.iter().try_fold(1usize, |acc, (_, l)| acc.checked_mul(l.len()));
    match total {
        Some(t) if t <= constraints.cap => {}
        Some(t) => return Err(Error::TooManyCandidates { count: t, cap: constraints.cap }),
        None => return Err(Error::TooManyCandidates { count: usize::MAX, cap: constraints.cap }),
    }
    let mut configs = vec![ChangePointSet::new()];
    for (cond, lists) in &per_condition {
        let mut next = Vec::with_capacity(configs.len() * lists.len());
        for base in &configs {
            for pts in lists {
                let mut c = base.clone();
                if !pts.is_empty() {
                    c.insert(cond.clone(), pts.clone())?;
                }
                next.push(c);
            }
        }
        configs = next;
    }
    CandidateSet::new(configs)
}

/// Design matrices of every candidate, built once and reused for
/// selection and post-selection inference.
#[derive(Debug, Clone)]
pub struct CandidateDesigns {
    pub candidates: CandidateSet,
    pub designs: Vec<DesignMatrix>,
}

impl CandidateDesigns {
    pub fn build(
        onsets: &[OnsetSeries],
        candidates: &CandidateSet,
        basis: &BasisSet,
        confounds: Option<&DMatrix<f64>>,
        spec: &DesignSpec,
    ) -> Result<Self> {
        candidates.validate_against(onsets)?;
        let designs = candidates
            .configs()
            .iter()
            .map(|c| build_design(onsets, basis, c, confounds, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { candidates: candidates.clone(), designs })
    }
}

fn noise_model_for(noise: &NoiseSpec) -> Result<NoiseModel> {
    noise.process.validate()?;
    if noise.known {
        noise.validate()?;
    }
    Ok(NoiseModel::Given(*noise))
}

/// Gaussian log-likelihood of `y` under one candidate design.
///
/// A known noise specification is plugged in; otherwise the variance is
/// profiled out with the correlation structure held fixed.
pub fn model_loglik(y: &[f64], design: &DesignMatrix, noise: &NoiseSpec) -> Result<f64> {
    Ok(fit_gls(y, design, noise_model_for(noise)?)?.loglik)
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub selected: usize,
    pub logliks: Vec<f64>,
    pub selected_set: ChangePointSet,
    pub fit: SubjectGlmFit,
}

/// Picks the candidate with the strictly largest log-likelihood.
pub fn select_model(y: &[f64], designs: &CandidateDesigns, noise: &NoiseSpec) -> Result<SelectionResult> {
    let model = noise_model_for(noise)?;
    let fits: Vec<SubjectGlmFit> = designs
        .designs
        .par_iter()
        .map(|d| fit_gls(y, d, model))
        .collect::<Result<Vec<_>>>()?;
    let logliks: Vec<f64> = fits.iter().map(|f| f.loglik).collect();
    let mut best = 0;
    for i in 1..logliks.len() {
        if logliks[i] > logliks[best] {
            best = i;
        }
    }
    if let Some(j) = (0..logliks.len()).find(|&j| j != best && logliks[j] == logliks[best]) {
        return Err(Error::LikelihoodTie { first: best.min(j), second: best.max(j) });
    }
    let fit = fits.into_iter().nth(best).expect("index in range");
    Ok(SelectionResult {
        selected: best,
        logliks,
        selected_set: designs.candidates.configs()[best].clone(),
        fit,
    })
}

/// Residual sum of squares of `y` projected off the columns of `q`
/// (orthonormal).
pub(crate) fn rss_orthonormal(q: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let c = q.transpose() * y;
    (y.norm_squared() - c.norm_squared()).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{canonical_hrf, ModelKind};

    fn regular_onsets(n: usize, gap: usize, t: usize) -> OnsetSeries {
        OnsetSeries::from_onsets("a", t, &(0..n).map(|k| 2 + gap * k).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        let u = regular_onsets(60, 4, 250);
        let one = BTreeMap::from([("a".to_string(), 1)]);
        let c = enumerate_candidates(&[u.clone()], &one, &CandidateConstraints::default()).unwrap();
        assert_eq!(c.len(), 40);
        let zero = BTreeMap::from([("a".to_string(), 0)]);
        let c = enumerate_candidates(&[u.clone()], &zero, &CandidateConstraints::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.configs()[0].count("a"), 0);
        let wide = CandidateConstraints { margin: 30, ..Default::default() };
        assert!(matches!(enumerate_candidates(&[u.clone()], &one, &wide), Err(Error::NoCandidates(_))));
        let two = BTreeMap::from([("a".to_string(), 2)]);
        let tight = CandidateConstraints { margin: 0, min_spacing: 1, cap: 100 };
        assert!(matches!(enumerate_candidates(&[u], &two, &tight), Err(Error::TooManyCandidates { .. })));
    }

    #[test]
    fn spacing_is_respected() {
        let u = regular_onsets(30, 4, 150);
        let two = BTreeMap::from([("a".to_string(), 2)]);
        let cons = CandidateConstraints { margin: 5, min_spacing: 5, cap: 10_000 };
        let c = enumerate_candidates(&[u.clone()], &two, &cons).unwrap();
        let ords = u.onsets();
        for cfg in c.configs() {
            let p = cfg.get("a");
            let i = ords.iter().position(|&o| o == p[0]).unwrap();
            let j = ords.iter().position(|&o| o == p[1]).unwrap();
            assert!(j - i >= 5);
        }
        // 20 eligible ordinals, pairs at distance >= 5: sum_{i} (20 - i - 5) over valid i
        let expected: usize = (0..20).map(|i: usize| 20usize.saturating_sub(i + 5)).sum();
        assert_eq!(c.len(), expected);
    }

    #[test]
    fn selection_order_invariance_and_ties() {
        let u = regular_onsets(60, 4, 250);
        let basis = canonical_hrf(0.1, 32.0).unwrap();
        let ords = u.onsets();
        let truth = ords[30];
        let mut y: Vec<f64> = vec![10.0; 250];
        let truth_set = ChangePointSet::new().with("a", vec![truth]).unwrap();
        let spec = DesignSpec::new(2.0, ModelKind::Cumulative);
        let d = build_design(&[u.clone()], &basis, &truth_set, None, &spec).unwrap();
        for t in 0..250 {
            y[t] += d.matrix()[(t, 0)] + 1.5 * d.matrix()[(t, 1)] + 0.05 * ((t * 7919) % 13) as f64;
        }
        let sets: Vec<ChangePointSet> = [ords[15], truth, ords[40], ords[45]]
            .iter()
            .map(|&p| ChangePointSet::new().with("a", vec![p]).unwrap())
            .collect();
        let noise = NoiseSpec::ar1(0.2, 0.1, true);
        let fwd = CandidateDesigns::build(&[u.clone()], &CandidateSet::new(sets.clone()).unwrap(), &basis, None, &spec).unwrap();
        let mut rev_sets = sets.clone();
        rev_sets.reverse();
        let rev = CandidateDesigns::build(&[u.clone()], &CandidateSet::new(rev_sets).unwrap(), &basis, None, &spec).unwrap();
        let a = select_model(&y, &fwd, &noise).unwrap();
        let b = select_model(&y, &rev, &noise).unwrap();
        assert_eq!(a.selected_set, b.selected_set);
        assert_eq!(a.selected_set, truth_set);

        let dup = CandidateDesigns { candidates: fwd.candidates.clone(), designs: vec![fwd.designs[1].clone(), fwd.designs[1].clone()] };
        assert!(matches!(select_model(&y, &dup, &noise), Err(Error::LikelihoodTie { .. })));
        assert!(CandidateSet::new(vec![sets[0].clone(), sets[0].clone()]).is_err());
    }

    #[test]
    fn intercept_absorbs_constant_shift() {
        let u = regular_onsets(60, 4, 250);
        let basis = canonical_hrf(0.1, 32.0).unwrap();
        let spec = DesignSpec::new(2.0, ModelKind::Cumulative);
        let set = ChangePointSet::new().with("a", vec![u.onsets()[20]]).unwrap();
        let d = build_design(&[u], &basis, &set, None, &spec).unwrap();
        let y: Vec<f64> = (0..250).map(|t| ((t * 31) % 17) as f64 * 0.1).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 7.0).collect();
        let noise = NoiseSpec::ar1(0.3, 1.0, true);
        let a = model_loglik(&y, &d, &noise).unwrap();
        let b = model_loglik(&shifted, &d, &noise).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
    }
}
