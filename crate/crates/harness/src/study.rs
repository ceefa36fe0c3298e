//! Repeated simulation studies for both change-point settings.

use hrshift_core::design::BasisSet;
use hrshift_core::group::GroupStatistic;
use hrshift_core::mt::NodeRecord;
use hrshift_core::noise::NoiseSpec;
use hrshift_core::posi::PosiConfig;
use hrshift_core::seed::SeedStream;
use hrshift_core::shape::ShapeParam;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::build_basis;
use crate::config::{KnownCpConfig, MtProcedure, UnknownCpConfig};
use crate::error::{HarnessError, Result};
use crate::procedure1::{fdp, run_procedure1, Procedure1Result, Procedure1Settings, RoiData, SubjectSeries};
use crate::procedure2::{analyse_subject, group_tests, Approach, Focus, SubjectInput, SubjectPosi};
use crate::sim::{simulate_known_cp, simulate_unknown_subject, unknown_cp_layout, KnownCpSubject, UnknownCpSubject};
use crate::table::{num, ResultTable};

/// Retries allowed per pool slot before the unknown-change-point study
/// gives up on a subject.
pub const MAX_REGENERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpMode {
    Correct,
    Misspecified,
}

impl CpMode {
    pub const ALL: [CpMode; 2] = [CpMode::Correct, CpMode::Misspecified];

    pub fn label(self) -> &'static str {
        match self {
            CpMode::Correct => "correct",
            CpMode::Misspecified => "misspecified",
        }
    }
}

const AFFECTED: [ShapeParam; 3] = [ShapeParam::Pm, ShapeParam::Na, ShapeParam::Auc];

/// Truth label of every cell: a change exists iff the condition's group
/// effect is non-zero and the parameter scales with the response.
pub fn true_nulls(cfg: &KnownCpConfig, effects: &[f64], result: &Procedure1Result) -> Vec<bool> {
    result
        .cells
        .iter()
        .map(|c| {
            let k = cfg.conditions.iter().position(|x| *x == c.condition).expect("known condition");
            effects[k] == 0.0 || !AFFECTED.contains(&c.param)
        })
        .collect()
}

fn settings(cfg: &KnownCpConfig) -> Procedure1Settings {
    Procedure1Settings { tr: cfg.tr, noise: cfg.noise, mc_iters: cfg.mc_iters, intercept: true }
}

fn roi(subjects: &[KnownCpSubject], mode: CpMode) -> RoiData {
    let subjects = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| SubjectSeries {
            subject: format!("s{i}"),
            y: s.y.clone(),
            onsets: s.onsets.clone(),
            cps: s.reported(mode == CpMode::Misspecified).clone(),
        })
        .collect();
    RoiData { label: "roi".into(), subjects }
}

/// Group-level cell results of one repetition for each requested mode.
/// Simulation and Monte-Carlo streams depend on the repetition only, so
/// rows share common random numbers.
pub fn known_repetition(
    cfg: &KnownCpConfig,
    basis: &BasisSet,
    effects: &[f64],
    snr: f64,
    modes: &[CpMode],
    seed: SeedStream,
    rep: usize,
) -> Result<Vec<(CpMode, Procedure1Result)>> {
    let subjects = simulate_known_cp(cfg, basis, effects, snr, seed.named("simulate").index(rep as u64))?;
    let mc = seed.named("mc").index(rep as u64);
    modes
        .iter()
        .map(|&m| Ok((m, run_procedure1(&[roi(&subjects, m)], basis, &settings(cfg), mc)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRate {
    pub condition: String,
    pub param: ShapeParam,
    pub true_null: bool,
    pub rejection_rate: f64,
    pub mean_excluded: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownRowSummary {
    pub snr: f64,
    pub effects: Vec<f64>,
    pub mode: CpMode,
    pub statistic: GroupStatistic,
    pub repetitions: usize,
    pub avg_fdp: f64,
    pub cells: Vec<CellRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub snr: f64,
    pub effects: Vec<f64>,
    pub mode: CpMode,
    pub statistic: GroupStatistic,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownStudyOutput {
    pub rows: Vec<KnownRowSummary>,
    /// Adjusted trees of the first repetition.
    pub trees: Vec<TreeSnapshot>,
}

/// One (effect sizes, SNR) row over all repetitions, for the given modes.
pub fn run_known_row(
    cfg: &KnownCpConfig,
    basis: &BasisSet,
    effects: &[f64],
    snr: f64,
    modes: &[CpMode],
    mt: MtProcedure,
    seed: SeedStream,
) -> Result<(Vec<KnownRowSummary>, Vec<TreeSnapshot>)> {
    let reps: Vec<Vec<(CpMode, Procedure1Result)>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|b| known_repetition(cfg, basis, effects, snr, modes, seed, b))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut trees = Vec::new();
    for (mi, &mode) in modes.iter().enumerate() {
        for &stat in &cfg.statistics {
            let mut fdp_sum = 0.0;
            let first = &reps[0][mi].1;
            let nulls = true_nulls(cfg, effects, first);
            let mut rej = vec![0usize; first.cells.len()];
            let mut excl = vec![0usize; first.cells.len()];
            for (b, rep) in reps.iter().enumerate() {
                let res = &rep[mi].1;
                let (tree, flags) = res.adjust(stat, mt, cfg.alpha)?;
                if b == 0 {
                    trees.push(TreeSnapshot { snr, effects: effects.to_vec(), mode, statistic: stat, nodes: tree.records() });
                }
                fdp_sum += fdp(&flags, &nulls);
                for (i, f) in flags.iter().enumerate() {
                    rej[i] += usize::from(*f);
                    excl[i] += res.cells[i].excluded;
                }
            }
            let b = reps.len() as f64;
            let cells = first
                .cells
                .iter()
                .enumerate()
                .map(|(i, c)| CellRate {
                    condition: c.condition.clone(),
                    param: c.param,
                    true_null: nulls[i],
                    rejection_rate: rej[i] as f64 / b,
                    mean_excluded: excl[i] as f64 / b,
                })
                .collect();
            rows.push(KnownRowSummary {
                snr,
                effects: effects.to_vec(),
                mode,
                statistic: stat,
                repetitions: reps.len(),
                avg_fdp: fdp_sum / b,
                cells,
            });
        }
    }
    Ok((rows, trees))
}

pub fn run_known_study(cfg: &KnownCpConfig, seed: SeedStream) -> Result<KnownStudyOutput> {
    cfg.validate()?;
    let basis = build_basis(&cfg.basis, &cfg.beta_bc)?;
    let seed = seed.named("known-cp");
    let mut out = KnownStudyOutput { rows: Vec::new(), trees: Vec::new() };
    for &snr in &cfg.snr {
        for effects in &cfg.effect_sizes {
            let (rows, trees) = run_known_row(cfg, &basis, effects, snr, &CpMode::ALL, cfg.mt, seed)?;
            out.rows.extend(rows);
            out.trees.extend(trees);
        }
    }
    Ok(out)
}

impl KnownStudyOutput {
    pub fn row(&self, snr: f64, effects: &[f64], mode: CpMode, stat: GroupStatistic) -> Option<&KnownRowSummary> {
        self.rows.iter().find(|r| r.snr == snr && r.effects == effects && r.mode == mode && r.statistic == stat)
    }

    /// Average FDP per row, one effect column per condition.
    pub fn fdp_table(&self, conditions: &[String]) -> ResultTable {
        let mut header = vec!["snr".to_string()];
        header.extend(conditions.iter().map(|c| format!("effect_{c}")));
        header.extend(["change_points", "statistic", "repetitions", "avg_fdp"].map(String::from));
        let mut t = ResultTable::new(header);
        for r in &self.rows {
            let mut row = vec![num(r.snr)];
            row.extend(r.effects.iter().map(|&e| num(e)));
            row.extend([r.mode.label().into(), r.statistic.label().into(), r.repetitions.to_string(), num(r.avg_fdp)]);
            t.push(row).expect("row width matches header");
        }
        t
    }

    /// Rejection rate per hypothesis in long format.
    pub fn rejection_table(&self, conditions: &[String]) -> ResultTable {
        let mut header = vec!["snr".to_string()];
        header.extend(conditions.iter().map(|c| format!("effect_{c}")));
        header.extend(
            ["change_points", "statistic", "condition", "param", "true_null", "rejection_rate", "mean_excluded"]
                .map(String::from),
        );
        let mut t = ResultTable::new(header);
        for r in &self.rows {
            for c in &r.cells {
                let mut row = vec![num(r.snr)];
                row.extend(r.effects.iter().map(|&e| num(e)));
                row.extend([
                    r.mode.label().into(),
                    r.statistic.label().into(),
                    c.condition.clone(),
                    c.param.label().into(),
                    c.true_null.to_string(),
                    num(c.rejection_rate),
                    num(c.mean_excluded),
                ]);
                t.push(row).expect("row width matches header");
            }
        }
        t
    }
}

/// Pool subject together with its (successful) post-selection analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSubject {
    pub data: UnknownCpSubject,
    pub posi: SubjectPosi,
    /// Failed analyses replaced before this one succeeded.
    pub regenerated: usize,
}

impl PoolSubject {
    pub fn truth_selected(&self) -> bool {
        self.posi.selected_points == [self.data.true_cp]
    }
}

fn posi_config(cfg: &UnknownCpConfig) -> PosiConfig {
    PosiConfig { d: cfg.d, d_e: cfg.d_e, a: None, grid_per_step: cfg.grid_per_step, stop: cfg.stop }
}

fn noise_for(cfg: &UnknownCpConfig, s: &UnknownCpSubject) -> NoiseSpec {
    if cfg.known_variance {
        NoiseSpec::ar1(cfg.rho, s.sigma2, true)
    } else {
        NoiseSpec::ar1(cfg.rho, 1.0, false)
    }
}

/// Simulates and analyses pool slot `slot`, regenerating the subject from a
/// fresh substream whenever the post-selection analysis fails.
pub fn pool_subject(
    cfg: &UnknownCpConfig,
    basis: &BasisSet,
    layout: &hrshift_core::design::OnsetSeries,
    eta: f64,
    seed: SeedStream,
    slot: usize,
) -> Result<PoolSubject> {
    let posi = posi_config(cfg);
    for attempt in 0..=MAX_REGENERATIONS {
        let s = seed.index(slot as u64).index(attempt as u64);
        let data = simulate_unknown_subject(cfg, basis, layout, eta, s.named("data"))?;
        let input = SubjectInput {
            subject: format!("p{slot}"),
            y: data.y.clone(),
            onsets: vec![layout.clone()],
            candidates: data.candidates.clone(),
            noise: noise_for(cfg, &data),
        };
        let focus = Focus { condition: layout.condition(), change_point: 1 };
        let out = analyse_subject(&input, basis, cfg.tr, focus, &posi, s.named("posi"))?;
        if !out.outcome.is_failure() {
            return Ok(PoolSubject { data, posi: out, regenerated: attempt });
        }
    }
    Err(HarnessError::AllPosiFailure(format!(
        "pool slot {slot}: {} consecutive failed analyses",
        MAX_REGENERATIONS + 1
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachRate {
    pub approach: Approach,
    pub statistic: GroupStatistic,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownEtaSummary {
    pub eta: f64,
    pub pool_size: usize,
    pub repetitions: usize,
    pub failures: usize,
    /// `failures / (failures + pool_size)`.
    pub failure_rate: f64,
    pub truth_selected_rate: f64,
    pub mean_naive_variance: f64,
    pub mean_posi_variance: f64,
    pub rates: Vec<ApproachRate>,
}

impl UnknownEtaSummary {
    pub fn rate(&self, approach: Approach, stat: GroupStatistic) -> f64 {
        self.rates
            .iter()
            .find(|r| r.approach == approach && r.statistic == stat)
            .map_or(f64::NAN, |r| r.rejection_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownStudyOutput {
    pub summaries: Vec<UnknownEtaSummary>,
}

/// Pool of analysed subjects for one effect size.
pub fn unknown_pool(cfg: &UnknownCpConfig, basis: &BasisSet, eta_index: usize, seed: SeedStream) -> Result<Vec<PoolSubject>> {
    let layout = unknown_cp_layout(cfg, seed)?;
    let eta = cfg.eta[eta_index];
    let pool_seed = seed.named("pool").index(eta_index as u64);
    (0..cfg.pool_size).into_par_iter().map(|i| pool_subject(cfg, basis, &layout, eta, pool_seed, i)).collect()
}

/// Resampling stage for one pool: `repetitions` draws of `n_subjects`
/// without replacement, each tested under every approach and statistic.
pub fn summarise_pool(cfg: &UnknownCpConfig, eta: f64, pool: &[PoolSubject], seed: SeedStream) -> Result<UnknownEtaSummary> {
    let mut counts = vec![[0usize; 2]; Approach::ALL.len()];
    for b in 0..cfg.repetitions {
        let mut rng = seed.index(b as u64).rng();
        let idx = sample(&mut rng, pool.len(), cfg.n_subjects);
        let chosen: Vec<&SubjectPosi> = idx.iter().map(|i| &pool[i].posi).collect();
        let tests = group_tests(&chosen)?;
        for t in &tests {
            let a = Approach::ALL.iter().position(|x| *x == t.approach).expect("known approach");
            for (k, stat) in GroupStatistic::ALL.iter().enumerate() {
                counts[a][k] += usize::from(t.result.p_value(*stat) <= cfg.alpha);
            }
        }
    }
    let reps = cfg.repetitions as f64;
    let rates = Approach::ALL
        .iter()
        .enumerate()
        .flat_map(|(a, &approach)| {
            GroupStatistic::ALL.iter().enumerate().map(move |(k, &statistic)| (a, approach, k, statistic))
        })
        .map(|(a, approach, k, statistic)| ApproachRate { approach, statistic, rejection_rate: counts[a][k] as f64 / reps })
        .collect();
    let failures: usize = pool.iter().map(|p| p.regenerated).sum();
    let n = pool.len() as f64;
    let mean = |a: Approach| pool.iter().map(|p| p.posi.estimate(a).map_or(f64::NAN, |e| e.1)).sum::<f64>() / n;
    Ok(UnknownEtaSummary {
        eta,
        pool_size: pool.len(),
        repetitions: cfg.repetitions,
        failures,
        failure_rate: failures as f64 / (failures + pool.len()) as f64,
        truth_selected_rate: pool.iter().filter(|p| p.truth_selected()).count() as f64 / n,
        mean_naive_variance: mean(Approach::Naive),
        mean_posi_variance: mean(Approach::PosiOls),
        rates,
    })
}

pub fn run_unknown_study(cfg: &UnknownCpConfig, seed: SeedStream) -> Result<UnknownStudyOutput> {
    cfg.validate()?;
    let basis = build_basis(&cfg.basis, &[1.0])?;
    let seed = seed.named("unknown-cp");
    let summaries = (0..cfg.eta.len())
        .map(|e| {
            let pool = unknown_pool(cfg, &basis, e, seed)?;
            summarise_pool(cfg, cfg.eta[e], &pool, seed.named("resample").index(e as u64))
        })
        .collect::<Result<_>>()?;
    Ok(UnknownStudyOutput { summaries })
}

impl UnknownStudyOutput {
    pub fn rejection_table(&self) -> ResultTable {
        let mut t = ResultTable::new(["eta", "approach", "statistic", "repetitions", "rejection_rate"]);
        for s in &self.summaries {
            for r in &s.rates {
                t.push(vec![
                    num(s.eta),
                    r.approach.label().into(),
                    r.statistic.label().into(),
                    s.repetitions.to_string(),
                    num(r.rejection_rate),
                ])
                .expect("row width matches header");
            }
        }
        t
    }

    pub fn summary_table(&self) -> ResultTable {
        let mut t = ResultTable::new([
            "eta",
            "pool_size",
            "failures",
            "failure_rate",
            "truth_selected_rate",
            "mean_naive_variance",
            "mean_posi_variance",
        ]);
        for s in &self.summaries {
            t.push(vec![
                num(s.eta),
                s.pool_size.to_string(),
                s.failures.to_string(),
                num(s.failure_rate),
                num(s.truth_selected_rate),
                num(s.mean_naive_variance),
                num(s.mean_posi_variance),
            ])
            .expect("row width matches header");
        }
        t
    }
}
