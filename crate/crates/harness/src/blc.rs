//! Learning criterion and backward learning curves for trial sequences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const RUN_LENGTH: usize = 12;
pub const MIN_TARGETS: usize = 3;
pub const MIN_PRIOR_POSITIVES: usize = 9;

/// One subject's trials: whether the answer named the target, and whether
/// the feedback was positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSequence {
    pub subject: String,
    pub target: Vec<bool>,
    pub positive: Vec<bool>,
}

/// First 0-based trial `t` such that trials `t..t+12` all received positive
/// feedback, at least three of them were target answers, and at least nine
/// positive trials precede `t`.
pub fn learning_criterion(target: &[bool], positive: &[bool]) -> Result<Option<usize>> {
    if target.len() != positive.len() {
        return Err(HarnessError::Data(format!(
            "answer and feedback sequences differ in length ({} vs {})",
            target.len(),
            positive.len()
        )));
    }
    let n = positive.len();
    let mut prior = 0;
    for t in 0..n.saturating_sub(RUN_LENGTH - 1) {
        if prior >= MIN_PRIOR_POSITIVES {
            let run = t..t + RUN_LENGTH;
            let all_pos = positive[run.clone()].iter().all(|&p| p);
            let targets = run.filter(|&i| positive[i] && target[i]).count();
            if all_pos && targets >= MIN_TARGETS {
                return Ok(Some(t));
            }
        }
        if positive[t] {
            prior += 1;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Block index relative to the block holding the criterion trial.
    pub block: i64,
    pub mean: f64,
    pub subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    /// Criterion trial (0-based) per subject, `None` if never reached.
    pub criteria: Vec<(String, Option<usize>)>,
}

/// Splits every sequence into blocks of `block_size` trials, aligns the
/// block holding the criterion trial at zero, and averages the proportion
/// of positive feedback per aligned block. Subjects that never meet the
/// criterion are left out of the curve.
pub fn backward_learning_curve(seqs: &[TrialSequence], block_size: usize) -> Result<LearningCurve> {
    if block_size == 0 {
        return Err(HarnessError::Config("block size must be positive".into()));
    }
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    let mut criteria = Vec::with_capacity(seqs.len());
    for s in seqs {
        let crit = learning_criterion(&s.target, &s.positive)?;
        criteria.push((s.subject.clone(), crit));
        let Some(c) = crit else { continue };
        let zero = (c / block_size) as i64;
        for (j, block) in s.positive.chunks(block_size).enumerate() {
            let prop = block.iter().filter(|&&p| p).count() as f64 / block.len() as f64;
            let e = acc.entry(j as i64 - zero).or_insert((0.0, 0));
            e.0 += prop;
            e.1 += 1;
        }
    }
    let points = acc.into_iter().map(|(block, (sum, k))| CurvePoint { block, mean: sum / k as f64, subjects: k }).collect();
    Ok(LearningCurve { points, criteria })
}

/// Groups `(subject, trial, target, positive)` rows into sequences ordered
/// by trial. Trials must run 1..=n without gaps per subject.
pub fn sequences_from_rows(rows: &[(String, usize, bool, bool)]) -> Result<Vec<TrialSequence>> {
    let mut by: BTreeMap<&str, Vec<(usize, bool, bool)>> = BTreeMap::new();
    for (s, t, a, f) in rows {
        by.entry(s).or_default().push((*t, *a, *f));
    }
    by.into_iter()
        .map(|(s, mut v)| {
            v.sort_by_key(|r| r.0);
            if v.iter().enumerate().any(|(i, r)| r.0 != i + 1) {
                return Err(HarnessError::Data(format!("subject {s}: trials must be numbered 1..n without gaps")));
            }
            Ok(TrialSequence {
                subject: s.to_string(),
                target: v.iter().map(|r| r.1).collect(),
                positive: v.iter().map(|r| r.2).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hrshift_core::seed::SeedStream;
    use rand::Rng;

    #[test]
    fn all_positive_meets_criterion_at_tenth_trial() {
        let n = 40;
        let target: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        assert_eq!(learning_criterion(&target, &vec![true; n]).unwrap(), Some(9));
    }

    #[test]
    fn no_positive_run_gives_none() {
        let positive: Vec<bool> = (0..60).map(|i| i % 11 != 10).collect();
        assert_eq!(learning_criterion(&vec![true; 60], &positive).unwrap(), None);
        assert!(learning_criterion(&[true], &[true, false]).is_err());
    }

    #[test]
    fn targets_must_appear_in_the_run() {
        let mut target = vec![false; 30];
        target[25] = true;
        target[26] = true;
        // Only two targets in any 12-run up to t = 15; a third at 27 makes
        // the run starting at 16 qualify.
        assert_eq!(learning_criterion(&target, &vec![true; 30]).unwrap(), None);
        target[27] = true;
        assert_eq!(learning_criterion(&target, &vec![true; 30]).unwrap(), Some(16));
    }

    #[test]
    fn curve_jumps_at_block_zero() {
        // Accuracy 0.5 until a subject-specific switch trial, 0.95 after.
        let mut rng = SeedStream::new(4).rng();
        let seqs: Vec<TrialSequence> = (0..40)
            .map(|i| {
                let switch = rng.random_range(20..60);
                let positive: Vec<bool> =
                    (0..120).map(|t| rng.random_bool(if t < switch { 0.5 } else { 0.95 })).collect();
                let target = (0..120).map(|_| rng.random_bool(0.5)).collect();
                TrialSequence { subject: format!("s{i}"), target, positive }
            })
            .collect();
        let curve = backward_learning_curve(&seqs, 5).unwrap();
        let at = |b: i64| curve.points.iter().find(|p| p.block == b).unwrap().mean;
        assert!(at(-3) < 0.7, "{}", at(-3));
        assert!(at(1) > 0.9, "{}", at(1));
        assert!(at(0) > at(-3) + 0.2);
    }
}
