//! Goal-specific utility reports: ten utility dimensions evaluated through
//! the observable-goal or latent-goal hierarchy, with primary gates,
//! secondary trade-off utilities, and tertiary supporting utilities.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten utility dimensions, in fixed report order.
pub const UTILITIES: [&str; 10] = [
    "causal_consistency",
    "parameter_recoverability",
    "predictive_performance",
    "fairness",
    "structural_faithfulness",
    "parsimony",
    "interpretability",
    "convergence",
    "estimation_speed",
    "robustness",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Flag,
    NotApplicable,
    Manual,
    NotRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Observable,
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Primary,
    Secondary,
    Tertiary,
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilityEntry {
    pub utility: String,
    pub level: Level,
    pub status: Status,
    pub metrics: serde_json::Value,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    /// Filled at emit time; the single field excluded from byte-level
    /// reproducibility.
    pub timestamp: String,
}

/// Full report: every one of the ten utilities appears exactly once.
#[derive(Debug, Clone, Serialize)]
pub struct UtilityReport {
    pub goal: Goal,
    pub overall: Status,
    /// Failing primary gates, in gate order.
    pub gate_failures: Vec<String>,
    pub entries: Vec<UtilityEntry>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

/// Computed suite outcomes keyed by utility name; utilities without results
/// are reported as not run.
#[derive(Debug, Clone, Default)]
pub struct TreeInputs {
    results: BTreeMap<String, (Status, serde_json::Value, Vec<String>)>,
}

impl TreeInputs {
    pub fn set(
        &mut self,
        utility: &str,
        status: Status,
        metrics: serde_json::Value,
        notes: Vec<String>,
    ) {
        assert!(
            UTILITIES.contains(&utility),
            "unknown utility `{utility}`"
        );
        self.results
            .insert(utility.to_string(), (status, metrics, notes));
    }

    pub fn status(&self, utility: &str) -> Status {
        self.results
            .get(utility)
            .map(|(s, _, _)| *s)
            .unwrap_or(Status::NotRun)
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    fn entry(&self, utility: &str, level: Level) -> UtilityEntry {
        let (status, metrics, notes) = self
            .results
            .get(utility)
            .cloned()
            .unwrap_or((Status::NotRun, serde_json::Value::Null, Vec::new()));
        UtilityEntry {
            utility: utility.to_string(),
            level,
            status,
            metrics,
            notes,
        }
    }
}

fn require(inputs: &TreeInputs, utility: &str) -> Result<()> {
    match inputs.status(utility) {
        Status::NotRun => Err(Error::invalid(format!(
            "required suite `{utility}` was not run"
        ))),
        _ => Ok(()),
    }
}

fn assemble(
    goal: Goal,
    inputs: &TreeInputs,
    primaries: &[&str],
    secondaries: &[&str],
    provenance: Provenance,
) -> UtilityReport {
    let mut gate_failures = Vec::new();
    for p in primaries {
        if inputs.status(p) == Status::Fail {
            gate_failures.push(p.to_string());
        }
    }
    let overall = if !gate_failures.is_empty() {
        Status::Fail
    } else if inputs.is_empty() {
        Status::NotRun
    } else {
        Status::Pass
    };
    let entries = UTILITIES
        .iter()
        .map(|u| {
            let level = if primaries.contains(u) {
                Level::Primary
            } else if secondaries.contains(u) {
                Level::Secondary
            } else {
                Level::Tertiary
            };
            inputs.entry(u, level)
        })
        .collect();
    let warnings = if inputs.is_empty() {
        vec!["no analyses requested; every utility is marked not_run".to_string()]
    } else {
        Vec::new()
    };
    UtilityReport {
        goal,
        overall,
        gate_failures,
        entries,
        warnings,
        provenance,
    }
}

/// Observable-goal (prediction) hierarchy: fairness is the only gate;
/// predictive performance, estimation speed, interpretability, and
/// robustness trade off at the secondary level; everything else supports
/// without gating.
pub fn evaluate_observable_tree(
    inputs: &TreeInputs,
    provenance: Provenance,
) -> Result<UtilityReport> {
    if !inputs.is_empty() {
        require(inputs, "predictive_performance")?;
        require(inputs, "fairness")?;
    }
    Ok(assemble(
        Goal::Observable,
        inputs,
        &["fairness"],
        &[
            "predictive_performance",
            "estimation_speed",
            "interpretability",
            "robustness",
        ],
        provenance,
    ))
}

/// Latent-goal (parameter estimation) hierarchy: fairness, causal
/// consistency, and convergence gate in that order; parameter recoverability
/// is the central secondary utility; predictive performance supports as a
/// proxy only.
pub fn evaluate_latent_tree(inputs: &TreeInputs, provenance: Provenance) -> Result<UtilityReport> {
    if !inputs.is_empty() {
        require(inputs, "fairness")?;
        require(inputs, "causal_consistency")?;
        require(inputs, "convergence")?;
        require(inputs, "parameter_recoverability")?;
    }
    Ok(assemble(
        Goal::Latent,
        inputs,
        &["fairness", "causal_consistency", "convergence"],
        &[
            "parameter_recoverability",
            "estimation_speed",
            "interpretability",
            "robustness",
        ],
        provenance,
    ))
}

impl UtilityReport {
    /// Process exit code: 0 pass (or vacuous), 1 gate fail.
    pub fn exit_code(&self) -> i32 {
        match self.overall {
            Status::Fail => 1,
            _ => 0,
        }
    }
}

/// Serialize with stable key order and write `report.json`.
pub fn emit(report: &UtilityReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::numerical(format!("report serialization failed: {e}")))?;
    fs::write(out_dir.join("report.json"), json + "\n")?;
    Ok(())
}

/// FNV-1a over the canonical config text, hex encoded.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

pub fn timestamp_now() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs}")
}
