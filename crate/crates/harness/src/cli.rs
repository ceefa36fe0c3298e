//! `hrshift` subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hrshift_core::design::{build_design, canonical_hrf, load_basis, BasisSet, ChangePointSet, DesignSpec, ModelKind};
use hrshift_core::fit::{fit_gls, TimeSeriesRecord};
use hrshift_core::group::{group_test, paired_group_test, GroupSample};
use hrshift_core::io::{
    load_candidates, load_onsets, load_time_series, write_basis, write_candidates, write_onsets, write_time_series,
};
use hrshift_core::mt::{inheritance_reject, tree_selective_fdr, HypothesisTree, WeightScheme};
use hrshift_core::noise::NoiseSpec;
use hrshift_core::posi::{posi_analysis, PosiConfig, PosiProblem, StopRule};
use hrshift_core::seed::SeedStream;
use hrshift_core::select::{select_model, CandidateDesigns};
use hrshift_core::shape::{ShapeParams, ShapeVariance};
use serde::{Deserialize, Serialize};

use crate::basis::build_basis;
use crate::blc::{backward_learning_curve, sequences_from_rows};
use crate::config::{AnalysisNoise, StudyConfig};
use crate::error::{HarnessError, Result, WithContext};
use crate::procedure1::{subject_shapes, Procedure1Settings, SubjectSeries};
use crate::sim::{simulate_known_cp, simulate_unknown_subject, unknown_cp_layout};
use crate::study::{run_known_study, run_unknown_study};
use crate::table::{num, ResultTable};

/// Repetition count used with `--full-scale`.
pub const FULL_SCALE_REPETITIONS: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "hrshift", version, about = "Change points in hemodynamic responses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated subjects of one study repetition to a directory.
    Simulate(SimulateArgs),
    /// Fit one subject and report shape parameters with MC variances.
    FitSubject(FitArgs),
    /// Select the maximum-likelihood change-point candidate.
    SelectCp(SelectArgs),
    /// Post-selection confidence distribution and variance.
    Posi(PosiArgs),
    /// Random-effects test of a mean (or of paired differences).
    GroupTest(GroupArgs),
    /// Hierarchical multiple-testing adjustment of leaf p-values.
    MtAdjust(MtArgs),
    /// Known change-point study.
    PipelineKnown(PipelineArgs),
    /// Unknown change-point study.
    PipelineUnknown(PipelineArgs),
    /// Learning criterion and backward learning curve.
    Blc(BlcArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scenario {
    Known,
    Unknown,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long)]
    pub out: PathBuf,
    /// Repetition index (known) or first pool slot (unknown).
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
    /// Index into `effect_sizes` (known) or `eta` (unknown).
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    /// Index into `snr` (known only).
    #[arg(long, default_value_t = 0)]
    pub snr_index: usize,
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// Time series CSV (`scan_index,value`).
    #[arg(long)]
    pub series: PathBuf,
    /// Sidecar JSON with subject, roi and tr.
    #[arg(long)]
    pub meta: PathBuf,
    /// Onset CSV (`condition_id,scan_index`).
    #[arg(long)]
    pub onsets: PathBuf,
    /// Basis CSV, or `canonical`.
    #[arg(long, default_value = "canonical")]
    pub basis: String,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Duration of the canonical response in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FitKind {
    Stationary,
    Segmented,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub io: SeriesArgs,
    /// JSON object mapping condition to change-point scans.
    #[arg(long)]
    pub cps: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "segmented")]
    pub kind: FitKind,
    #[arg(long, value_enum, default_value = "white")]
    pub noise: NoiseArg,
    #[arg(long, default_value_t = 1000)]
    pub mc_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    White,
    Ar1,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Candidate JSON.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Known noise variance; omit to treat it as unknown.
    #[arg(long)]
    pub sigma2: Option<f64>,
}

impl ModelArgs {
    fn noise(&self) -> NoiseSpec {
        match self.sigma2 {
            Some(s) => NoiseSpec::ar1(self.rho, s, true),
            None => NoiseSpec::ar1(self.rho, 1.0, false),
        }
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub io: SeriesArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PosiArgs {
    #[command(flatten)]
    pub io: SeriesArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub condition: String,
    /// 1-based change point of `condition` whose magnitude is the focus.
    #[arg(long, default_value_t = 1)]
    pub change_point: usize,
    #[arg(long, default_value_t = hrshift_core::posi::DEFAULT_D)]
    pub d: usize,
    #[arg(long, default_value_t = 100)]
    pub d_e: usize,
    #[arg(long, default_value_t = 5)]
    pub grid_per_step: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    /// CSV with columns `gamma,v`.
    #[arg(long)]
    pub input: PathBuf,
    /// Second CSV for a paired test of `second - first`.
    #[arg(long)]
    pub paired: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MtArg {
    Sfdr,
    Inheritance,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    LeafCount,
    Equal,
}

#[derive(Debug, Args)]
pub struct MtArgs {
    /// JSON array of `{"path": "a/b/c", "p": 0.01}`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "sfdr")]
    pub procedure: MtArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "leaf-count")]
    pub scheme: SchemeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use 1000 repetitions.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Args)]
pub struct BlcArgs {
    /// CSV with columns `subject,trial,answer,feedback` (0/1 or true/false;
    /// `answer` marks target answers, `feedback` positive feedback).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub block_size: usize,
    /// Curve CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional JSON with the criterion trial (1-based) per subject.
    #[arg(long)]
    pub criteria: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn data_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(e.to_string())
}

fn read_series(io: &SeriesArgs) -> Result<(TimeSeriesRecord, Vec<hrshift_core::design::OnsetSeries>, BasisSet)> {
    let rec = load_time_series(&io.series, &io.meta).context(|| format!("reading {}", io.series.display()))?;
    let onsets = load_onsets(&io.onsets, rec.len()).context(|| format!("reading {}", io.onsets.display()))?;
    let basis = if io.basis == "canonical" {
        canonical_hrf(io.dt, io.duration)?
    } else {
        load_basis(&io.basis, io.dt).context(|| format!("reading {}", io.basis))?
    };
    Ok((rec, onsets, basis))
}

fn read_cps(path: &Path) -> Result<ChangePointSet> {
    let raw: BTreeMap<String, Vec<usize>> = serde_json::from_reader(File::open(path)?).map_err(data_err)?;
    Ok(raw.into_iter().try_fold(ChangePointSet::new(), |acc, (c, p)| acc.with(c, p))?)
}

fn write_cps(path: &Path, cps: &ChangePointSet) -> Result<()> {
    write_json(Some(path), cps.as_map())
}

fn load_config(path: &Path, full_scale: bool) -> Result<StudyConfig> {
    let mut cfg = StudyConfig::load(path)?;
    if full_scale {
        if let Some(k) = cfg.known_cp.as_mut() {
            k.repetitions = FULL_SCALE_REPETITIONS;
        }
        if let Some(u) = cfg.unknown_cp.as_mut() {
            u.repetitions = FULL_SCALE_REPETITIONS;
        }
    }
    Ok(cfg)
}

fn write_record(dir: &Path, stem: &str, rec: &TimeSeriesRecord) -> Result<()> {
    write_time_series(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?), rec)?;
    write_json(Some(&dir.join(format!("{stem}.json"))), &hrshift_core::io::time_series_meta(rec))
}

#[derive(Serialize)]
struct KnownManifest<'a> {
    scenario: &'static str,
    repetition: usize,
    effects: &'a [f64],
    snr: f64,
    tr: f64,
    basis_dt: f64,
    subjects: Vec<KnownManifestSubject>,
}

#[derive(Serialize)]
struct KnownManifestSubject {
    subject: String,
    effects: Vec<f64>,
    sigma2: f64,
}

#[derive(Serialize)]
struct UnknownManifest {
    scenario: &'static str,
    eta: f64,
    tr: f64,
    rho: f64,
    subjects: Vec<UnknownManifestSubject>,
}

#[derive(Serialize)]
struct UnknownManifestSubject {
    subject: String,
    true_cp: usize,
    effect: f64,
    baseline: f64,
    sigma2: f64,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = load_config(&a.config, false)?;
    fs::create_dir_all(&a.out)?;
    let root = SeedStream::new(cfg.seed);
    match a.scenario {
        Scenario::Known => {
            let k = cfg.known()?;
            let effects = k.effect_sizes.get(a.row).ok_or_else(|| HarnessError::Config("--row out of range".into()))?;
            let snr = *k.snr.get(a.snr_index).ok_or_else(|| HarnessError::Config("--snr-index out of range".into()))?;
            let basis = build_basis(&k.basis, &k.beta_bc)?;
            let seed = root.named("known-cp").named("simulate").index(a.rep as u64);
            let subjects = simulate_known_cp(k, &basis, effects, snr, seed)?;
            write_basis(BufWriter::new(File::create(a.out.join("basis.csv"))?), &basis)?;
            let mut manifest = KnownManifest {
                scenario: "known",
                repetition: a.rep,
                effects,
                snr,
                tr: k.tr,
                basis_dt: basis.dt(),
                subjects: Vec::new(),
            };
            for (i, s) in subjects.iter().enumerate() {
                let stem = format!("subject{i:03}");
                let rec = TimeSeriesRecord::new(&stem, "roi", k.tr, s.y.clone())?;
                write_record(&a.out, &stem, &rec)?;
                write_onsets(BufWriter::new(File::create(a.out.join(format!("{stem}_onsets.csv")))?), &s.onsets)?;
                write_cps(&a.out.join(format!("{stem}_cps.json")), &s.true_cps)?;
                write_cps(&a.out.join(format!("{stem}_cps_misspecified.json")), &s.misspecified_cps)?;
                manifest.subjects.push(KnownManifestSubject { subject: stem, effects: s.effects.clone(), sigma2: s.sigma2 });
            }
            write_json(Some(&a.out.join("manifest.json")), &manifest)
        }
        Scenario::Unknown => {
            let u = cfg.unknown()?;
            let eta = *u.eta.get(a.row).ok_or_else(|| HarnessError::Config("--row out of range".into()))?;
            let basis = build_basis(&u.basis, &[1.0])?;
            let seed = root.named("unknown-cp");
            let layout = unknown_cp_layout(u, seed)?;
            let pool = seed.named("pool").index(a.row as u64);
            write_onsets(BufWriter::new(File::create(a.out.join("onsets.csv"))?), std::slice::from_ref(&layout))?;
            let mut manifest = UnknownManifest { scenario: "unknown", eta, tr: u.tr, rho: u.rho, subjects: Vec::new() };
            for i in 0..u.n_subjects {
                let slot = a.rep + i;
                let s = simulate_unknown_subject(u, &basis, &layout, eta, pool.index(slot as u64).index(0).named("data"))?;
                let stem = format!("subject{slot:03}");
                let rec = TimeSeriesRecord::new(&stem, "roi", u.tr, s.y.clone())?;
                write_record(&a.out, &stem, &rec)?;
                write_candidates(BufWriter::new(File::create(a.out.join(format!("{stem}_candidates.json")))?), &s.candidates)?;
                manifest.subjects.push(UnknownManifestSubject {
                    subject: stem,
                    true_cp: s.true_cp,
                    effect: s.effect,
                    baseline: s.baseline,
                    sigma2: s.sigma2,
                });
            }
            write_json(Some(&a.out.join("manifest.json")), &manifest)
        }
    }
}

#[derive(Serialize)]
struct FitBlock {
    condition: String,
    segment: usize,
    params: ShapeParams,
    variance: ShapeVariance,
}

#[derive(Serialize)]
struct FitReport {
    subject: String,
    beta: Vec<f64>,
    sigma2: f64,
    loglik: f64,
    noise: NoiseSpec,
    blocks: Vec<FitBlock>,
}

fn fit_subject(a: &FitArgs) -> Result<()> {
    let (rec, onsets, basis) = read_series(&a.io)?;
    let cps = match (&a.cps, a.kind) {
        (_, FitKind::Stationary) | (None, _) => ChangePointSet::new(),
        (Some(p), FitKind::Segmented) => read_cps(p)?,
    };
    let noise = match a.noise {
        NoiseArg::White => AnalysisNoise::White,
        NoiseArg::Ar1 => AnalysisNoise::Ar1Estimated,
    };
    let settings = Procedure1Settings { tr: rec.tr, noise, mc_iters: a.mc_iters, intercept: true };
    let spec = DesignSpec { tr: rec.tr, kind: ModelKind::Segmented, intercept: true };
    let x = build_design(&onsets, &basis, &cps, None, &spec)?;
    let fit = fit_gls(&rec.values, &x, crate::procedure1::noise_model(noise))?;
    let series = SubjectSeries { subject: rec.subject.clone(), y: rec.values.clone(), onsets, cps };
    let shapes = subject_shapes(&series, &basis, &settings, SeedStream::new(a.seed))?;
    let report = FitReport {
        subject: rec.subject,
        beta: fit.beta.iter().copied().collect(),
        sigma2: fit.sigma2,
        loglik: fit.loglik,
        noise: fit.noise,
        blocks: shapes
            .into_iter()
            .map(|s| FitBlock { condition: s.condition, segment: s.segment, params: s.params, variance: s.variance })
            .collect(),
    };
    write_json(a.io.out.as_deref(), &report)
}

fn candidate_designs(io: &SeriesArgs, model: &ModelArgs) -> Result<(TimeSeriesRecord, CandidateDesigns)> {
    let (rec, onsets, basis) = read_series(io)?;
    let cands = load_candidates(&model.candidates).context(|| format!("reading {}", model.candidates.display()))?;
    let spec = DesignSpec::new(rec.tr, ModelKind::Cumulative);
    let designs = CandidateDesigns::build(&onsets, &cands, &basis, None, &spec)?;
    Ok((rec, designs))
}

#[derive(Serialize)]
struct SelectReport<'a> {
    selected: usize,
    logliks: Vec<f64>,
    selected_set: &'a BTreeMap<String, Vec<usize>>,
}

fn select_cp(a: &SelectArgs) -> Result<()> {
    let (rec, designs) = candidate_designs(&a.io, &a.model)?;
    let sel = select_model(&rec.values, &designs, &a.model.noise())?;
    write_json(
        a.io.out.as_deref(),
        &SelectReport { selected: sel.selected, logliks: sel.logliks.clone(), selected_set: sel.selected_set.as_map() },
    )
}

fn posi(a: &PosiArgs) -> Result<()> {
    let (rec, designs) = candidate_designs(&a.io, &a.model)?;
    let noise = a.model.noise();
    let sel = select_model(&rec.values, &designs, &noise)?;
    let focus = crate::procedure2::Focus { condition: &a.condition, change_point: a.change_point };
    let col = crate::procedure2::focus_column(&designs, sel.selected, focus)?;
    let problem = PosiProblem::new(&rec.values, &designs, sel.selected, col, &noise)?;
    let cfg = PosiConfig { d: a.d, d_e: a.d_e, a: None, grid_per_step: a.grid_per_step, stop: StopRule::default() };
    let outcome = posi_analysis(&problem, &cfg, SeedStream::new(a.seed))?;
    write_json(a.io.out.as_deref(), &outcome)?;
    match &outcome.failure {
        Some(f) => Err(HarnessError::AllPosiFailure(f.clone())),
        None => Ok(()),
    }
}

#[derive(Deserialize)]
struct GroupRow {
    gamma: f64,
    v: f64,
}

fn read_group(path: &Path) -> Result<GroupSample> {
    let mut g = Vec::new();
    let mut v = Vec::new();
    for row in csv::Reader::from_reader(File::open(path)?).deserialize() {
        let r: GroupRow = row.map_err(data_err)?;
        g.push(r.gamma);
        v.push(r.v);
    }
    GroupSample::new(g, v).map_err(data_err)
}

fn group(a: &GroupArgs) -> Result<()> {
    let first = read_group(&a.input)?;
    let result = match &a.paired {
        Some(p) => paired_group_test(&first, &read_group(p)?).map_err(data_err)?,
        None => group_test(&first)?,
    };
    write_json(a.out.as_deref(), &result)
}

#[derive(Debug, Deserialize)]
struct PathP {
    path: String,
    p: Option<f64>,
}

/// Builds a tree from `/`-separated paths; missing ancestors are created
/// without p-values, which are then filled by the Simes combination.
pub fn tree_from_paths(records: &[(String, Option<f64>)]) -> Result<HypothesisTree> {
    let mut sorted: Vec<&(String, Option<f64>)> = records.iter().collect();
    sorted.sort_by_key(|(p, _)| p.matches('/').count());
    let mut t = HypothesisTree::new();
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    for (path, p) in sorted {
        if ids.contains_key(path) {
            return Err(HarnessError::Data(format!("duplicate path {path:?}")));
        }
        let parts: Vec<&str> = path.split('/').collect();
        if parts.iter().any(|s| s.is_empty()) {
            return Err(HarnessError::Data(format!("malformed path {path:?}")));
        }
        let mut parent: Option<usize> = None;
        for depth in 0..parts.len() {
            let key = parts[..=depth].join("/");
            let last = depth + 1 == parts.len();
            let id = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    let pv = if last { *p } else { None };
                    let id = match parent {
                        None => t.add_root(parts[depth], pv),
                        Some(par) => t.add_child(par, parts[depth], pv)?,
                    };
                    ids.insert(key, id);
                    id
                }
            };
            parent = Some(id);
        }
    }
    Ok(t)
}

fn mt_adjust(a: &MtArgs) -> Result<()> {
    let raw: Vec<PathP> = serde_json::from_reader(File::open(&a.input)?).map_err(data_err)?;
    let recs: Vec<(String, Option<f64>)> = raw.into_iter().map(|r| (r.path, r.p)).collect();
    let tree = tree_from_paths(&recs)?;
    let out = match a.procedure {
        MtArg::Sfdr => tree_selective_fdr(&tree, a.alpha)?,
        MtArg::Inheritance => {
            let scheme = match a.scheme {
                SchemeArg::LeafCount => WeightScheme::LeafCount,
                SchemeArg::Equal => WeightScheme::Equal,
            };
            inheritance_reject(&tree, a.alpha, scheme)?
        }
    };
    write_json(a.out.as_deref(), &out.records())
}

fn pipeline_known(a: &PipelineArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.full_scale)?;
    let k = cfg.known()?;
    let out = run_known_study(k, SeedStream::new(cfg.seed))?;
    fs::create_dir_all(&a.out)?;
    out.fdp_table(&k.conditions).save_csv(a.out.join("known_fdp.csv"))?;
    out.rejection_table(&k.conditions).save_csv(a.out.join("rejection_rates.csv"))?;
    write_json(Some(&a.out.join("trees.json")), &out.trees)
}

fn pipeline_unknown(a: &PipelineArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.full_scale)?;
    let u = cfg.unknown()?;
    let out = run_unknown_study(u, SeedStream::new(cfg.seed))?;
    fs::create_dir_all(&a.out)?;
    out.rejection_table().save_csv(a.out.join("rejection_rates.csv"))?;
    out.summary_table().save_csv(a.out.join("summary.csv"))?;
    write_json(Some(&a.out.join("summary.json")), &out.summaries)
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(HarnessError::Data(format!("expected 0/1 or true/false, got {other:?}"))),
    }
}

#[derive(Deserialize)]
struct TrialRow {
    subject: String,
    trial: usize,
    answer: String,
    feedback: String,
}

fn blc(a: &BlcArgs) -> Result<()> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(File::open(&a.input)?).deserialize() {
        let r: TrialRow = row.map_err(data_err)?;
        rows.push((r.subject, r.trial, parse_flag(&r.answer)?, parse_flag(&r.feedback)?));
    }
    let seqs = sequences_from_rows(&rows)?;
    let curve = backward_learning_curve(&seqs, a.block_size)?;
    let mut t = ResultTable::new(["block", "mean_positive", "subjects"]);
    for p in &curve.points {
        t.push(vec![p.block.to_string(), num(p.mean), p.subjects.to_string()])?;
    }
    t.write_csv(output(a.out.as_deref())?)?;
    if let Some(path) = &a.criteria {
        let crit: BTreeMap<&str, Option<usize>> =
            curve.criteria.iter().map(|(s, c)| (s.as_str(), c.map(|t| t + 1))).collect();
        write_json(Some(path), &crit)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::FitSubject(a) => fit_subject(a),
        Command::SelectCp(a) => select_cp(a),
        Command::Posi(a) => posi(a),
        Command::GroupTest(a) => group(a),
        Command::MtAdjust(a) => mt_adjust(a),
        Command::PipelineKnown(a) => pipeline_known(a),
        Command::PipelineUnknown(a) => pipeline_unknown(a),
        Command::Blc(a) => blc(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_build_nested_tree() {
        let recs = vec![("a/x".to_string(), Some(0.01)), ("a/y".to_string(), Some(0.5)), ("b".to_string(), Some(0.2))];
        let t = tree_from_paths(&recs).unwrap();
        assert_eq!(t.roots().len(), 2);
        assert_eq!(t.leaves().len(), 3);
        assert!(t.find("a/y").is_some());
        assert!(tree_from_paths(&[("a//b".to_string(), Some(0.1))]).is_err());
    }
}
