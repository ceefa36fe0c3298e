//! Shape-parameter changes at pre-specified change points.

use std::collections::BTreeMap;

use hrshift_core::design::{build_design, BasisSet, ChangePointSet, DesignSpec, ModelKind, OnsetSeries};
use hrshift_core::fit::{estimate_hr, fit_gls, NoiseModel};
use hrshift_core::group::{paired_group_test, GroupSample, GroupStatistic, GroupTestResult};
use hrshift_core::mt::{inheritance_reject, tree_selective_fdr, HypothesisTree};
use hrshift_core::noise::{ArOrder, NoiseSpec};
use hrshift_core::seed::SeedStream;
use hrshift_core::shape::{mc_shape_variance, shape_params, ShapeParam, ShapeParams, ShapeVariance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisNoise, MtProcedure};
use crate::error::{HarnessError, Result, WithContext};

/// One subject's scan series in one ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub subject: String,
    pub y: Vec<f64>,
    pub onsets: Vec<OnsetSeries>,
    pub cps: ChangePointSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiData {
    pub label: String,
    pub subjects: Vec<SubjectSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Procedure1Settings {
    pub tr: f64,
    pub noise: AnalysisNoise,
    pub mc_iters: usize,
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentShape {
    pub condition: String,
    pub segment: usize,
    pub params: ShapeParams,
    pub variance: ShapeVariance,
}

impl SegmentShape {
    /// Estimate and within-subject variance, if both are usable. Time to
    /// peak and time peak-to-nadir live on the sampling grid, so their
    /// variance is floored at the grid quantisation variance `dt²/12`.
    pub fn estimate(&self, p: ShapeParam, dt: f64) -> Option<(f64, f64)> {
        let g = self.params.get(p)?;
        let mut v = self.variance.get(p);
        if !v.is_finite() {
            return None;
        }
        if matches!(p, ShapeParam::Ttp | ShapeParam::Tpn) {
            v = v.max(dt * dt / 12.0);
        }
        Some((g, v))
    }
}

pub fn noise_model(noise: AnalysisNoise) -> NoiseModel {
    match noise {
        AnalysisNoise::White => NoiseModel::Given(NoiseSpec::white(1.0, false)),
        AnalysisNoise::Ar1Estimated => NoiseModel::Estimate(ArOrder::One),
    }
}

/// Fits the segmented model and returns shape parameters with Monte-Carlo
/// variances for every (condition, segment) block.
pub fn subject_shapes(
    series: &SubjectSeries,
    basis: &BasisSet,
    settings: &Procedure1Settings,
    seed: SeedStream,
) -> Result<Vec<SegmentShape>> {
    let spec = DesignSpec { tr: settings.tr, kind: ModelKind::Segmented, intercept: settings.intercept };
    let x = build_design(&series.onsets, basis, &series.cps, None, &spec)
        .context(|| format!("subject {}: design", series.subject))?;
    let fit = fit_gls(&series.y, &x, noise_model(settings.noise)).context(|| format!("subject {}: fit", series.subject))?;
    let mut out = Vec::new();
    for u in &series.onsets {
        let cond = u.condition();
        for segment in 0..=series.cps.count(cond) {
            let hr = estimate_hr(&fit, &x, basis, cond, segment)?;
            let params = shape_params(&hr.curve, hr.dt)?;
            let mut rng = seed.named(cond).index(segment as u64).rng();
            let variance = mc_shape_variance(&hr.beta, &hr.cov, basis, settings.mc_iters, &mut rng)
                .context(|| format!("subject {}, condition {cond}, segment {segment}", series.subject))?;
            out.push(SegmentShape { condition: cond.to_string(), segment, params, variance });
        }
    }
    Ok(out)
}

/// Group test of one (ROI, condition, change point, shape parameter) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub roi: String,
    pub condition: String,
    /// 1-based change point within the condition.
    pub change_point: usize,
    pub param: ShapeParam,
    pub n_used: usize,
    pub excluded: usize,
    /// `None` when fewer than two subjects had usable estimates.
    pub test: Option<GroupTestResult>,
}

impl CellResult {
    /// p-value under `stat`; untestable cells count as `1`.
    pub fn p_value(&self, stat: GroupStatistic) -> f64 {
        self.test.as_ref().map_or(1.0, |t| t.p_value(stat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Procedure1Result {
    pub cells: Vec<CellResult>,
}

fn change_point_counts(roi: &RoiData) -> Result<Vec<(String, usize)>> {
    let first = roi
        .subjects
        .first()
        .ok_or_else(|| HarnessError::Data(format!("ROI {} has no subjects", roi.label)))?;
    let counts: Vec<(String, usize)> =
        first.onsets.iter().map(|u| (u.condition().to_string(), first.cps.count(u.condition()))).collect();
    for s in &roi.subjects {
        let here: Vec<(String, usize)> =
            s.onsets.iter().map(|u| (u.condition().to_string(), s.cps.count(u.condition()))).collect();
        if here != counts {
            return Err(HarnessError::Data(format!(
                "ROI {}: subject {} has conditions or change-point counts {here:?}, expected {counts:?}",
                roi.label, s.subject
            )));
        }
    }
    Ok(counts)
}

/// Runs the subject and group levels over every ROI.
pub fn run_procedure1(
    rois: &[RoiData],
    basis: &BasisSet,
    settings: &Procedure1Settings,
    seed: SeedStream,
) -> Result<Procedure1Result> {
    let dt = basis.dt();
    let mut cells = Vec::new();
    for roi in rois {
        let counts = change_point_counts(roi)?;
        if roi.subjects.len() < 2 {
            return Err(HarnessError::Config(format!("ROI {}: the group level needs at least two subjects", roi.label)));
        }
        let shapes: Vec<Vec<SegmentShape>> = roi
            .subjects
            .par_iter()
            .enumerate()
            .map(|(i, s)| subject_shapes(s, basis, settings, seed.named(&roi.label).index(i as u64)))
            .collect::<Result<_>>()?;
        let lookup: Vec<BTreeMap<(String, usize), &SegmentShape>> = shapes
            .iter()
            .map(|v| v.iter().map(|s| ((s.condition.clone(), s.segment), s)).collect())
            .collect();
        for (cond, c) in &counts {
            for cp in 1..=*c {
                for p in ShapeParam::ALL {
                    let (mut g1, mut v1, mut g2, mut v2) = (vec![], vec![], vec![], vec![]);
                    for subj in &lookup {
                        let before = subj[&(cond.clone(), cp - 1)].estimate(p, dt);
                        let after = subj[&(cond.clone(), cp)].estimate(p, dt);
                        if let (Some(a), Some(b)) = (before, after) {
                            g1.push(a.0);
                            v1.push(a.1);
                            g2.push(b.0);
                            v2.push(b.1);
                        }
                    }
                    let n_used = g1.len();
                    let test = if n_used >= 2 {
                        let a = GroupSample::new(g1, v1)?;
                        let b = GroupSample::new(g2, v2)?;
                        Some(paired_group_test(&a, &b)?)
                    } else {
                        None
                    };
                    cells.push(CellResult {
                        roi: roi.label.clone(),
                        condition: cond.clone(),
                        change_point: cp,
                        param: p,
                        n_used,
                        excluded: roi.subjects.len() - n_used,
                        test,
                    });
                }
            }
        }
    }
    Ok(Procedure1Result { cells })
}

impl Procedure1Result {
    /// Hypothesis tree with leaf p-values under `stat`. A level is only
    /// present when it branches: ROIs when there are several, conditions
    /// when there are several, change points when a condition has several.
    /// Leaf ids follow the order of `cells`.
    pub fn tree(&self, stat: GroupStatistic) -> (HypothesisTree, Vec<usize>) {
        let mut t = HypothesisTree::new();
        let mut ids = Vec::with_capacity(self.cells.len());
        let mut rois: Vec<&str> = Vec::new();
        let mut conds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut cps: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for c in &self.cells {
            if !rois.contains(&c.roi.as_str()) {
                rois.push(&c.roi);
            }
            let v = conds.entry(&c.roi).or_default();
            if !v.contains(&c.condition.as_str()) {
                v.push(&c.condition);
            }
            let m = cps.entry((&c.roi, &c.condition)).or_default();
            *m = (*m).max(c.change_point);
        }
        let mut nodes: BTreeMap<String, usize> = BTreeMap::new();
        let mut node = |t: &mut HypothesisTree, parent: Option<usize>, key: String, label: String| -> usize {
            *nodes.entry(key).or_insert_with(|| match parent {
                None => t.add_root(label, None),
                Some(p) => t.add_child(p, label, None).expect("parent exists"),
            })
        };
        for c in &self.cells {
            let mut parent = None;
            let mut key = String::new();
            if rois.len() > 1 {
                key = c.roi.clone();
                parent = Some(node(&mut t, parent, key.clone(), c.roi.clone()));
            }
            if conds[c.roi.as_str()].len() > 1 {
                key = format!("{key}/{}", c.condition);
                parent = Some(node(&mut t, parent, key.clone(), c.condition.clone()));
            }
            if cps[&(c.roi.as_str(), c.condition.as_str())] > 1 {
                key = format!("{key}/cp{}", c.change_point);
                parent = Some(node(&mut t, parent, key.clone(), format!("cp{}", c.change_point)));
            }
            let p = Some(c.p_value(stat));
            let label = c.param.label();
            let id = match parent {
                None => t.add_root(label, p),
                Some(par) => t.add_child(par, label, p).expect("parent exists"),
            };
            ids.push(id);
        }
        (t, ids)
    }

    /// Applies the multiple-testing procedure; returns the annotated tree and
    /// the rejection flag of every cell.
    pub fn adjust(&self, stat: GroupStatistic, mt: MtProcedure, alpha: f64) -> Result<(HypothesisTree, Vec<bool>)> {
        let (t, ids) = self.tree(stat);
        let out = match mt {
            MtProcedure::SelectiveFdr => tree_selective_fdr(&t, alpha)?,
            MtProcedure::Inheritance { scheme } => inheritance_reject(&t, alpha, scheme)?,
        };
        let flags = ids.iter().map(|&i| out.node(i).rejected).collect();
        Ok((out, flags))
    }
}

/// False discovery proportion `V / (R ∨ 1)`.
pub fn fdp(rejected: &[bool], true_null: &[bool]) -> f64 {
    let r = rejected.iter().filter(|&&x| x).count();
    let v = rejected.iter().zip(true_null).filter(|(&x, &n)| x && n).count();
    v as f64 / r.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use hrshift_core::mt::WeightScheme;

    fn cell(cond: &str, cp: usize, p: ShapeParam) -> CellResult {
        CellResult { roi: "r".into(), condition: cond.into(), change_point: cp, param: p, n_used: 0, excluded: 0, test: None }
    }

    #[test]
    fn tree_skips_non_branching_levels() {
        let mut cells = Vec::new();
        for c in ["a", "b"] {
            for p in ShapeParam::ALL {
                cells.push(cell(c, 1, p));
            }
        }
        let r = Procedure1Result { cells };
        let (t, ids) = r.tree(GroupStatistic::Wald);
        assert_eq!(t.roots().len(), 2);
        assert_eq!(t.path(ids[8]), "b/NA");
        let (_, flags) = r.adjust(GroupStatistic::Wald, MtProcedure::Inheritance { scheme: WeightScheme::LeafCount }, 0.05).unwrap();
        assert!(flags.iter().all(|f| !f));
    }

    #[test]
    fn fdp_counts_false_rejections() {
        assert_eq!(fdp(&[true, true, false], &[true, false, true]), 0.5);
        assert_eq!(fdp(&[false, false], &[true, true]), 0.0);
    }
}
