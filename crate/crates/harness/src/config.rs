//! Study configuration (`hrshift-config/1`).

use std::path::Path;

use hrshift_core::group::GroupStatistic;
use hrshift_core::mt::WeightScheme;
use hrshift_core::posi::StopRule;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SCHEMA: &str = "hrshift-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub schema: String,
    /// Master seed; every random quantity derives from it.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_cp: Option<KnownCpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown_cp: Option<UnknownCpConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisChoice {
    Canonical,
    FlobsLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub kind: BasisChoice,
    pub dt: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisNoise {
    /// White noise with estimated variance.
    White,
    /// AR(1) estimated from OLS residuals, then prewhitened.
    Ar1Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MtProcedure {
    SelectiveFdr,
    Inheritance { scheme: WeightScheme },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnownCpConfig {
    pub n_subjects: usize,
    pub n_scans: usize,
    pub tr: f64,
    pub conditions: Vec<String>,
    pub stimuli_per_condition: usize,
    pub iti: Vec<usize>,
    pub min_segment_onsets: usize,
    pub basis: BasisConfig,
    pub beta_bc: Vec<f64>,
    /// Group effect sizes, one per condition, per study row.
    pub effect_sizes: Vec<Vec<f64>>,
    pub effect_sd: f64,
    pub snr: Vec<f64>,
    pub repetitions: usize,
    /// Largest misspecification offset in onsets.
    pub misspecification_bound: f64,
    pub alpha: f64,
    pub mt: MtProcedure,
    pub statistics: Vec<GroupStatistic>,
    pub mc_iters: usize,
    pub noise: AnalysisNoise,
}

impl Default for KnownCpConfig {
    fn default() -> Self {
        Self {
            n_subjects: 30,
            n_scans: 500,
            tr: 2.0,
            conditions: vec!["c1".into(), "c2".into()],
            stimuli_per_condition: 60,
            iti: vec![3, 4, 5],
            min_segment_onsets: 15,
            basis: BasisConfig { kind: BasisChoice::FlobsLike, dt: 0.1, duration: 30.0 },
            beta_bc: vec![3.2, -6.4, 3.2],
            effect_sizes: vec![
                vec![-1.0, -0.5],
                vec![0.0, 0.5],
                vec![1.0, 1.5],
                vec![2.0, 2.5],
            ],
            effect_sd: 1.0,
            snr: vec![1.0, 2.0],
            repetitions: 200,
            misspecification_bound: 5.0,
            alpha: 0.05,
            mt: MtProcedure::SelectiveFdr,
            statistics: GroupStatistic::ALL.to_vec(),
            mc_iters: 1000,
            noise: AnalysisNoise::White,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnknownCpConfig {
    /// Size of the simulated subject pool.
    pub pool_size: usize,
    /// Subjects drawn without replacement per repetition.
    pub n_subjects: usize,
    pub n_scans: usize,
    pub tr: f64,
    pub stimuli: usize,
    pub iti: Vec<usize>,
    pub basis: BasisConfig,
    pub margin: usize,
    pub min_spacing: usize,
    pub n_candidates: usize,
    pub eta: Vec<f64>,
    pub effect_variance: f64,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub rho: f64,
    pub snr: f64,
    pub repetitions: usize,
    pub alpha: f64,
    pub d: usize,
    pub d_e: usize,
    pub grid_per_step: usize,
    pub stop: StopRule,
    /// Treat `σ² V` as known (otherwise the unknown-variance law is used).
    pub known_variance: bool,
}

impl Default for UnknownCpConfig {
    fn default() -> Self {
        Self {
            pool_size: 500,
            n_subjects: 30,
            n_scans: 250,
            tr: 2.0,
            stimuli: 60,
            iti: vec![3, 4, 5],
            basis: BasisConfig { kind: BasisChoice::Canonical, dt: 0.1, duration: 30.0 },
            margin: 10,
            min_spacing: 5,
            n_candidates: 4,
            eta: vec![0.0, 0.5, 1.0],
            effect_variance: 0.1,
            baseline_mean: 10.0,
            baseline_sd: 1.0,
            rho: 0.2,
            snr: 2.0,
            repetitions: 200,
            alpha: 0.05,
            d: 500,
            d_e: 100,
            grid_per_step: 5,
            stop: StopRule::default(),
            known_variance: true,
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(config_err(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(config_err(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

fn check_iti(iti: &[usize]) -> Result<()> {
    if iti.is_empty() || iti.contains(&0) {
        return Err(config_err("iti values must be a non-empty list of positive integers"));
    }
    Ok(())
}

fn check_basis(b: &BasisConfig) -> Result<()> {
    if !(b.dt > 0.0) || !(b.duration > 0.0) {
        return Err(config_err("basis dt and duration must be positive"));
    }
    Ok(())
}

impl KnownCpConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("n_subjects", self.n_subjects)?;
        check_positive("n_scans", self.n_scans)?;
        check_positive("stimuli_per_condition", self.stimuli_per_condition)?;
        check_positive("repetitions", self.repetitions)?;
        check_iti(&self.iti)?;
        check_basis(&self.basis)?;
        check_level("alpha", self.alpha)?;
        if self.conditions.is_empty() {
            return Err(config_err("at least one condition is required"));
        }
        if self.n_subjects < 2 {
            return Err(config_err("the group test needs at least two subjects"));
        }
        if !(self.tr > 0.0) {
            return Err(config_err("tr must be positive"));
        }
        if self.effect_sizes.iter().any(|r| r.len() != self.conditions.len()) {
            return Err(config_err("every effect-size row needs one value per condition"));
        }
        if self.effect_sizes.is_empty() || self.snr.is_empty() || self.snr.iter().any(|s| !(*s > 0.0)) {
            return Err(config_err("effect_sizes and snr must be non-empty with positive SNR"));
        }
        if self.beta_bc.is_empty() || self.beta_bc[0] == 0.0 {
            return Err(config_err("beta_bc must be non-empty with a non-zero first entry"));
        }
        if self.basis.kind == BasisChoice::Canonical && self.beta_bc.len() != 1 {
            return Err(config_err("a canonical basis takes a single coefficient"));
        }
        if self.basis.kind == BasisChoice::FlobsLike && self.beta_bc.len() < 2 {
            return Err(config_err("the FLOBS-like basis needs at least two coefficients"));
        }
        if 2 * self.min_segment_onsets > self.stimuli_per_condition {
            return Err(config_err("min_segment_onsets leaves no admissible change point"));
        }
        if self.mc_iters < hrshift_core::shape::MIN_MC_ITERS {
            return Err(config_err(format!("mc_iters must be at least {}", hrshift_core::shape::MIN_MC_ITERS)));
        }
        if self.statistics.is_empty() {
            return Err(config_err("at least one test statistic is required"));
        }
        if !(self.effect_sd >= 0.0) || !(self.misspecification_bound >= 0.0) {
            return Err(config_err("effect_sd and misspecification_bound must be non-negative"));
        }
        Ok(())
    }
}

impl UnknownCpConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("pool_size", self.pool_size)?;
        check_positive("n_scans", self.n_scans)?;
        check_positive("stimuli", self.stimuli)?;
        check_positive("repetitions", self.repetitions)?;
        check_positive("n_candidates", self.n_candidates)?;
        check_positive("d", self.d)?;
        check_positive("d_e", self.d_e)?;
        check_positive("grid_per_step", self.grid_per_step)?;
        check_iti(&self.iti)?;
        check_basis(&self.basis)?;
        check_level("alpha", self.alpha)?;
        if self.n_subjects < 2 || self.n_subjects > self.pool_size {
            return Err(config_err("n_subjects must lie in 2..=pool_size"));
        }
        if self.basis.kind != BasisChoice::Canonical {
            return Err(config_err("the change-magnitude model needs the canonical basis"));
        }
        if !(self.rho.abs() < 1.0) || !(self.snr > 0.0) || !(self.tr > 0.0) {
            return Err(config_err("rho must lie in (-1, 1); snr and tr must be positive"));
        }
        if !(self.effect_variance >= 0.0) || !(self.baseline_sd >= 0.0) {
            return Err(config_err("variances must be non-negative"));
        }
        if self.eta.is_empty() {
            return Err(config_err("eta must list at least one effect size"));
        }
        Ok(())
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(config_err(format!("schema must be {SCHEMA:?}, got {:?}", self.schema)));
        }
        if let Some(k) = &self.known_cp {
            k.validate()?;
        }
        if let Some(u) = &self.unknown_cp {
            u.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn known(&self) -> Result<&KnownCpConfig> {
        self.known_cp.as_ref().ok_or_else(|| config_err("config has no known_cp section"))
    }

    pub fn unknown(&self) -> Result<&UnknownCpConfig> {
        self.unknown_cp.as_ref().ok_or_else(|| config_err("config has no unknown_cp section"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = StudyConfig::from_json(r#"{"schema":"hrshift-config/1","seed":7,"known_cp":{}}"#).unwrap();
        assert_eq!(c.known().unwrap().n_scans, 500);
        assert!(c.unknown().is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(StudyConfig::from_json(r#"{"schema":"other","seed":7}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"schema":"hrshift-config/1","seed":7,"bogus":1}"#).is_err());
        let e = StudyConfig::from_json(r#"{"schema":"hrshift-config/1","seed":7,"known_cp":{"n_subjects":1}}"#)
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(StudyConfig::from_json(r#"{"schema":"hrshift-config/1","seed":7,"unknown_cp":{"iti":[0]}}"#).is_err());
    }
}
