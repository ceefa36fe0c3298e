//! Change magnitudes at selected change points with post-selection
//! variances.

use hrshift_core::design::{BasisSet, ColumnTag, DesignSpec, ModelKind, OnsetSeries};
use hrshift_core::group::{group_test, GroupSample, GroupStatistic, GroupTestResult};
use hrshift_core::noise::NoiseSpec;
use hrshift_core::posi::{posi_analysis, PosiConfig, PosiOutcome, PosiProblem};
use hrshift_core::seed::SeedStream;
use hrshift_core::select::{select_model, CandidateDesigns, CandidateSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result, WithContext};

/// Subject-level estimate fed to the group test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Naive estimate and naive variance.
    Naive,
    /// Median of the post-selection CD with the post-selection variance.
    Posi05,
    /// Mean of the post-selection CD with the post-selection variance.
    PosiE,
    /// Naive estimate with the post-selection variance.
    PosiOls,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::Naive, Approach::Posi05, Approach::PosiE, Approach::PosiOls];

    pub fn label(self) -> &'static str {
        match self {
            Approach::Naive => "naive",
            Approach::Posi05 => "posi_05",
            Approach::PosiE => "posi_E",
            Approach::PosiOls => "posi_OLS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectInput {
    pub subject: String,
    pub y: Vec<f64>,
    pub onsets: Vec<OnsetSeries>,
    pub candidates: CandidateSet,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Focus<'a> {
    pub condition: &'a str,
    /// 1-based change point within the condition.
    pub change_point: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPosi {
    pub subject: String,
    pub selected: usize,
    /// Selected change-point scans of the focus condition.
    pub selected_points: Vec<usize>,
    pub outcome: PosiOutcome,
}

impl SubjectPosi {
    /// `(estimate, variance)` under `approach`, `None` after a failure.
    pub fn estimate(&self, approach: Approach) -> Option<(f64, f64)> {
        let o = &self.outcome;
        if approach == Approach::Naive {
            return Some((o.theta_ols, o.se_ols * o.se_ols));
        }
        let v = o.variance.filter(|_| !o.is_failure())?;
        let cd = o.cd.as_ref()?;
        let g = match approach {
            Approach::Posi05 => cd.median,
            Approach::PosiE => cd.mean,
            _ => o.theta_ols,
        };
        Some((g, v))
    }
}

pub fn focus_column(designs: &CandidateDesigns, selected: usize, focus: Focus) -> Result<usize> {
    designs.designs[selected]
        .columns()
        .iter()
        .position(|c| {
            matches!(c, ColumnTag::Response { condition, segment, .. }
                if condition == focus.condition && *segment == focus.change_point)
        })
        .ok_or_else(|| {
            HarnessError::Config(format!(
                "condition {:?} has no change point {} in the selected model",
                focus.condition, focus.change_point
            ))
        })
}

/// Selection and post-selection analysis of one subject.
pub fn analyse_subject(
    input: &SubjectInput,
    basis: &BasisSet,
    tr: f64,
    focus: Focus,
    posi: &PosiConfig,
    seed: SeedStream,
) -> Result<SubjectPosi> {
    let ctx = || format!("subject {}", input.subject);
    let spec = DesignSpec::new(tr, ModelKind::Cumulative);
    let designs = CandidateDesigns::build(&input.onsets, &input.candidates, basis, None, &spec).context(ctx)?;
    let sel = select_model(&input.y, &designs, &input.noise).context(ctx)?;
    let col = focus_column(&designs, sel.selected, focus)?;
    let problem = PosiProblem::new(&input.y, &designs, sel.selected, col, &input.noise).context(ctx)?;
    let outcome = posi_analysis(&problem, posi, seed).context(ctx)?;
    Ok(SubjectPosi {
        subject: input.subject.clone(),
        selected: sel.selected,
        selected_points: sel.selected_set.get(focus.condition).to_vec(),
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachTest {
    pub approach: Approach,
    pub result: GroupTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Procedure2Result {
    pub subjects: Vec<SubjectPosi>,
    /// Subjects whose post-selection analysis failed; they are left out of
    /// every approach so the approaches share one sample.
    pub failures: usize,
    pub tests: Vec<ApproachTest>,
}

impl Procedure2Result {
    pub fn test(&self, approach: Approach) -> Option<&GroupTestResult> {
        self.tests.iter().find(|t| t.approach == approach).map(|t| &t.result)
    }

    pub fn rejects(&self, approach: Approach, stat: GroupStatistic, alpha: f64) -> bool {
        self.test(approach).is_some_and(|t| t.p_value(stat) <= alpha)
    }
}

/// Group tests of `η = 0` under every approach from analysed subjects.
pub fn group_tests(subjects: &[&SubjectPosi]) -> Result<Vec<ApproachTest>> {
    let ok: Vec<&&SubjectPosi> = subjects.iter().filter(|s| !s.outcome.is_failure()).collect();
    if ok.is_empty() {
        return Err(HarnessError::AllPosiFailure(format!("{} subject(s) analysed", subjects.len())));
    }
    Approach::ALL
        .iter()
        .map(|&a| {
            let (g, v): (Vec<f64>, Vec<f64>) = ok.iter().filter_map(|s| s.estimate(a)).unzip();
            Ok(ApproachTest { approach: a, result: group_test(&GroupSample::new(g, v)?)? })
        })
        .collect()
}

pub fn run_procedure2(
    inputs: &[SubjectInput],
    basis: &BasisSet,
    tr: f64,
    focus: Focus,
    posi: &PosiConfig,
    seed: SeedStream,
) -> Result<Procedure2Result> {
    if inputs.len() < 2 {
        return Err(HarnessError::Config("the group level needs at least two subjects".into()));
    }
    let subjects: Vec<SubjectPosi> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, s)| analyse_subject(s, basis, tr, focus, posi, seed.index(i as u64)))
        .collect::<Result<_>>()?;
    let refs: Vec<&SubjectPosi> = subjects.iter().collect();
    let tests = group_tests(&refs)?;
    let failures = subjects.iter().filter(|s| s.outcome.is_failure()).count();
    Ok(Procedure2Result { subjects, failures, tests })
}
