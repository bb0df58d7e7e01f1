//! Run configuration, read from a TOML file.
//!
//! ```toml
//! schema_version = 1
//! seed = 0
//! jobs = 0
//! solver = "pwcf"            # pwcf | pgd | both
//! model = "model.json"       # optional checkpoint, relative to this file
//! out_dir = "runs/desk"      # optional
//!
//! [desk]                     # dataset, architecture, training, suite size
//! suite_size = 50
//!
//! [penalty_sqp]              # optional; tight desk tolerances when absent
//! tau_violation = 1e-8
//!
//! [adv_train]                # optional; makes `train` adversarial
//! inner = "pgd"
//! metric = "linf"
//! eps = 0.2
//!
//! [[attack]]
//! metric = "l2"
//! loss = "margin"            # margin | ce | margin_raw | ce_raw
//! eps_factor = 1.0           # or `eps = 0.1`
//!
//! [[radius]]
//! metric = "linf"
//! ```

use std::path::{Path, PathBuf};

use pwcf::attacks::{
    AttackSpec, FoldMode, HarnessConfig, Metric, PgdConfig, PgdInner, PwcfInner, SolverChoice, TwoStageConfig,
};
use pwcf::desk::{desk_solver_config, DeskConfig};
use pwcf::folding::{Aggregator, ClippedLoss, LossKind};
use pwcf::penalty_sqp::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Global seed for per-sample attack seeds and the verification suites.
    pub seed: u64,
    pub jobs: usize,
    pub solver: SolverChoice,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub desk: DeskConfig,
    pub penalty_sqp: Option<SolverConfig>,
    pub two_stage: Option<TwoStageConfig>,
    pub pgd: PgdConfig,
    pub adv_train: Option<AdvTrainSection>,
    pub attack: Vec<AttackEntry>,
    pub radius: Vec<RadiusEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            jobs: 0,
            solver: SolverChoice::Pwcf,
            model: None,
            out_dir: None,
            desk: DeskConfig::default(),
            penalty_sqp: None,
            two_stage: None,
            pgd: PgdConfig::default(),
            adv_train: None,
            attack: Vec::new(),
            radius: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerKind {
    Pgd,
    Pwcf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvTrainSection {
    pub inner: InnerKind,
    pub metric: String,
    pub eps: f64,
    #[serde(default = "default_inner_loss")]
    pub loss: String,
    /// PGD steps or solver iterations; 10 when absent.
    pub steps: Option<usize>,
}

fn default_inner_loss() -> String {
    "ce_raw".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    pub metric: String,
    #[serde(default = "default_attack_loss")]
    pub loss: String,
    pub eps: Option<f64>,
    /// Budget as a multiple of the median PWCF min-radius on the suite.
    pub eps_factor: Option<f64>,
    pub fold: Option<String>,
}

fn default_attack_loss() -> String {
    "margin".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusEntry {
    pub metric: String,
    pub fold: Option<String>,
    /// Defaults to on for ℓ∞.
    pub rescale: Option<bool>,
}

/// Budget of an attack entry before calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Fixed(f64),
    Factor(f64),
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn parse_metric(s: &str) -> Result<Metric, CliError> {
    s.parse().map_err(|e| config_error(format!("metric {s:?}: {e}")))
}

pub fn parse_loss(s: &str, num_classes: usize) -> Result<ClippedLoss, CliError> {
    match s {
        "margin" => Ok(ClippedLoss::margin()),
        "ce" => Ok(ClippedLoss::cross_entropy(num_classes)),
        "margin_raw" => Ok(ClippedLoss::unclipped(LossKind::Margin)),
        "ce_raw" => Ok(ClippedLoss::unclipped(LossKind::CrossEntropy)),
        _ => Err(config_error(format!(
            "loss {s:?}: expected margin, ce, margin_raw or ce_raw"
        ))),
    }
}

pub fn parse_fold(s: Option<&str>) -> Result<FoldMode, CliError> {
    let aggregator = match s {
        None | Some("l2") => Aggregator::L2,
        Some("l1") => Aggregator::L1,
        Some("max") => Aggregator::Max,
        Some("unfolded") => return Ok(FoldMode::Unfolded),
        Some(other) => {
            return Err(config_error(format!(
                "fold {other:?}: expected l2, l1, max or unfolded"
            )))
        }
    };
    Ok(FoldMode::Folded { aggregator })
}

impl RunConfig {
    /// Reads and validates a config file. Returns the config and the raw
    /// bytes for hashing.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| config_error(format!("reading {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| config_error("config is not UTF-8"))?;
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        if let (Some(m), Some(dir)) = (&cfg.model, path.parent()) {
            if m.is_relative() {
                cfg.model = Some(dir.join(m));
            }
        }
        cfg.validate()?;
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.solver_config()
            .validate()
            .map_err(|e| config_error(e.to_string()))?;
        if let Some(ts) = &self.two_stage {
            ts.validate().map_err(|e| config_error(e.to_string()))?;
        }
        if let Some(at) = &self.adv_train {
            parse_metric(&at.metric)?;
            parse_loss(&at.loss, 2)?;
            if !(at.eps >= 0.0 && at.eps.is_finite()) {
                return Err(config_error("adv_train.eps must be finite and ≥ 0"));
            }
        }
        for a in &self.attack {
            parse_metric(&a.metric)?;
            parse_loss(&a.loss, 2)?;
            parse_fold(a.fold.as_deref())?;
            Self::budget(a)?;
        }
        for r in &self.radius {
            let metric = parse_metric(&r.metric)?;
            parse_fold(r.fold.as_deref())?;
            if r.rescale == Some(true) && metric != Metric::Linf {
                return Err(config_error("rescale is only defined for linf"));
            }
        }
        Ok(())
    }

    pub fn budget(a: &AttackEntry) -> Result<Budget, CliError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match (a.eps, a.eps_factor) {
            (Some(e), None) if positive(e) => Ok(Budget::Fixed(e)),
            (None, Some(f)) if positive(f) => Ok(Budget::Factor(f)),
            (Some(_), Some(_)) => Err(config_error("attack entry sets both eps and eps_factor")),
            (None, None) => Err(config_error("attack entry needs eps or eps_factor")),
            _ => Err(config_error("eps and eps_factor must be positive and finite")),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.penalty_sqp.clone().unwrap_or_else(desk_solver_config)
    }

    pub fn harness(&self) -> HarnessConfig {
        HarnessConfig {
            global_seed: self.seed,
            jobs: self.jobs,
            solver: self.solver_config(),
            two_stage: self.two_stage,
            pgd: self.pgd,
        }
    }

    /// Max-loss spec for an attack entry at a resolved budget.
    pub fn attack_spec(a: &AttackEntry, eps: f64, num_classes: usize) -> Result<AttackSpec, CliError> {
        let spec = AttackSpec::max_loss(parse_metric(&a.metric)?, eps, parse_loss(&a.loss, num_classes)?)
            .with_fold(parse_fold(a.fold.as_deref())?);
        spec.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(spec)
    }

    pub fn radius_spec(r: &RadiusEntry) -> Result<AttackSpec, CliError> {
        let mut spec = AttackSpec::min_radius(parse_metric(&r.metric)?).with_fold(parse_fold(r.fold.as_deref())?);
        if let Some(rescale) = r.rescale {
            spec.rescale = rescale;
        }
        Ok(spec)
    }
}

/// Inner maximizer of an adversarial-training section.
pub enum Inner {
    Pgd(PgdInner),
    Pwcf(PwcfInner),
}

impl AdvTrainSection {
    pub fn inner(&self, num_classes: usize) -> Result<Inner, CliError> {
        let spec = AttackSpec::max_loss(
            parse_metric(&self.metric)?,
            self.eps,
            parse_loss(&self.loss, num_classes)?,
        );
        let steps = self.steps.unwrap_or(10);
        Ok(match self.inner {
            InnerKind::Pgd => Inner::Pgd(PgdInner::new(spec).with_steps(steps)),
            InnerKind::Pwcf => {
                let mut inner = PwcfInner::new(spec);
                inner.solver.max_iter = steps;
                Inner::Pwcf(inner)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn attack_entries_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            solver = "both"
            [[attack]]
            metric = "linf"
            loss = "ce"
            eps = 0.1
            fold = "max"
            [[radius]]
            metric = "l2"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.solver, SolverChoice::Both);
        let spec = RunConfig::attack_spec(&cfg.attack[0], 0.1, 3).unwrap();
        assert_eq!(spec.metric, Metric::Linf);
        assert_eq!(spec.loss, ClippedLoss::cross_entropy(3));
        assert_eq!(
            spec.fold,
            FoldMode::Folded {
                aggregator: Aggregator::Max
            }
        );
        assert!(!RunConfig::radius_spec(&cfg.radius[0]).unwrap().rescale);
    }

    #[test]
    fn bad_entries_are_config_errors() {
        for text in [
            "schema_version = 2",
            "[[attack]]\nmetric = \"l2\"",
            "[[attack]]\nmetric = \"l2\"\neps = 0.1\neps_factor = 1.0",
            "[[attack]]\nmetric = \"q3\"\neps = 0.1",
            "[[attack]]\nmetric = \"l2\"\neps = 0.1\nloss = \"hinge\"",
            "[[radius]]\nmetric = \"l2\"\nrescale = true",
            "[penalty_sqp]\nc_v = 2.0",
        ] {
            let cfg: RunConfig = toml::from_str(text).unwrap();
            assert!(matches!(cfg.validate(), Err(CliError::Config(_))), "{text}");
        }
        assert!(toml::from_str::<RunConfig>("unknown_key = 1").is_err());
    }
}
