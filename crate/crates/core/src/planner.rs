//! Enumeration and ordering of language-subset sequences.
//!
//! A fit runs one erasure step per language subset, so the plan — which
//! subsets, in which order — fully determines the composed projection.
//! Plans are value types: deterministic to build, hashable, and JSON-stable.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Subset enumeration is exponential in the source count; above this the
/// caller must supply an explicit custom subset list.
pub const MAX_SOURCE_LANGUAGES: usize = 20;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("source language set is empty")]
    EmptySource,
    #[error("{n} source languages would enumerate 2^{n} subsets (cap {MAX_SOURCE_LANGUAGES}); use a custom plan")]
    SubsetExplosion { n: usize },
    #[error("rank-removal parameter k must be at least 1")]
    InvalidRank,
    #[error("invalid plan for mode {mode:?}: {reason}")]
    InvalidModeArguments { mode: PlanMode, reason: String },
    #[error("plan validation failed: {0}")]
    Invalid(String),
    #[error("plan file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Monolingual,
    CrossLingual,
    SubsetsWithoutTarget,
    SubsetsWithTarget,
    FullyJoint,
    Custom,
}

/// Inter-subset ordering policy. `GlobalThenLocal` runs larger subsets first
/// (ties broken lexicographically over sorted language ids);
/// `LocalThenGlobal` is the exact reverse of that sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetOrder {
    GlobalThenLocal,
    LocalThenGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasurePlan {
    pub mode: PlanMode,
    pub order: SubsetOrder,
    pub k: usize,
    #[serde(rename = "source")]
    pub source_languages: BTreeSet<String>,
    #[serde(rename = "target")]
    pub target_languages: BTreeSet<String>,
    /// Ordered subset sequence; each inner set serializes sorted.
    pub subsets: Vec<BTreeSet<String>>,
    /// Subtract the pooled embedding mean before accumulating covariances.
    #[serde(default = "default_center")]
    pub center: bool,
}

fn default_center() -> bool {
    true
}

impl ErasurePlan {
    /// Number of erasure steps (m).
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    /// Explicit subset list, in caller order. Validation still applies.
    pub fn custom<S: AsRef<str>>(
        subsets: &[Vec<S>],
        source: &[S],
        target: &[S],
        k: usize,
        center: bool,
    ) -> Result<Self, PlanError> {
        let plan = ErasurePlan {
            mode: PlanMode::Custom,
            order: SubsetOrder::GlobalThenLocal,
            k,
            source_languages: normalize(source),
            target_languages: normalize(target),
            subsets: subsets.iter().map(|s| normalize(s)).collect(),
            center,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.source_languages.is_empty() {
            return Err(PlanError::EmptySource);
        }
        if self.k == 0 {
            return Err(PlanError::InvalidRank);
        }
        if self.subsets.is_empty() {
            return Err(PlanError::Invalid("plan has no subsets".into()));
        }
        for s in &self.subsets {
            if s.is_empty() {
                return Err(PlanError::Invalid("plan contains an empty subset".into()));
            }
            if !s.is_subset(&self.source_languages) {
                return Err(PlanError::Invalid(format!(
                    "subset {:?} is not contained in the source languages",
                    s
                )));
            }
        }
        match self.mode {
            PlanMode::SubsetsWithoutTarget => {
                for s in &self.subsets {
                    if s.intersection(&self.target_languages).next().is_some() {
                        return Err(PlanError::Invalid(
                            "subsets_without_target plan contains a target language".into(),
                        ));
                    }
                }
            }
            PlanMode::FullyJoint => {
                if self.subsets.len() != 1 || self.subsets[0] != self.source_languages {
                    return Err(PlanError::Invalid(
                        "fully_joint plan must be the single full source set".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), PlanError> {
        let text = serde_json::to_string_pretty(self)?;
        crate::dataio::write_atomic(path, text.as_bytes()).map_err(PlanError::Io)?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, PlanError> {
        let text = fs::read_to_string(path)?;
        let plan: ErasurePlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }
}

fn normalize<S: AsRef<str>>(langs: &[S]) -> BTreeSet<String> {
    langs
        .iter()
        .map(|s| s.as_ref().trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Builds the subset sequence for one of the standard settings.
///
/// `Monolingual` erases with the target language's own data (m = 1);
/// `CrossLingual` erases with a single, possibly different, source language;
/// `SubsetsWithoutTarget` enumerates every nonempty subset of
/// source-minus-target; `SubsetsWithTarget` every nonempty subset of the
/// source set; `FullyJoint` pools everything into one step.
pub fn build_plan<S: AsRef<str>>(
    source: &[S],
    target: &[S],
    mode: PlanMode,
    order: SubsetOrder,
    k: usize,
) -> Result<ErasurePlan, PlanError> {
    let source_languages = normalize(source);
    let target_languages = normalize(target);
    if source_languages.is_empty() {
        return Err(PlanError::EmptySource);
    }
    if source_languages.len() > MAX_SOURCE_LANGUAGES {
        return Err(PlanError::SubsetExplosion {
            n: source_languages.len(),
        });
    }
    if k == 0 {
        return Err(PlanError::InvalidRank);
    }

    let mut subsets: Vec<BTreeSet<String>> = match mode {
        PlanMode::Monolingual => {
            if target_languages.len() != 1 {
                return Err(PlanError::InvalidModeArguments {
                    mode,
                    reason: "monolingual requires exactly one target language".into(),
                });
            }
            if !target_languages.is_subset(&source_languages) {
                return Err(PlanError::InvalidModeArguments {
                    mode,
                    reason: "monolingual target must be among the source languages".into(),
                });
            }
            vec![target_languages.clone()]
        }
        PlanMode::CrossLingual => {
            if target_languages.len() != 1 {
                return Err(PlanError::InvalidModeArguments {
                    mode,
                    reason: "cross_lingual requires exactly one target language".into(),
                });
            }
            if source_languages.len() != 1 {
                return Err(PlanError::InvalidModeArguments {
                    mode,
                    reason: "cross_lingual requires exactly one source language".into(),
                });
            }
            vec![source_languages.clone()]
        }
        PlanMode::SubsetsWithoutTarget => {
            let effective: BTreeSet<String> = source_languages
                .difference(&target_languages)
                .cloned()
                .collect();
            if effective.is_empty() {
                return Err(PlanError::EmptySource);
            }
            nonempty_subsets(&effective)
        }
        PlanMode::SubsetsWithTarget => nonempty_subsets(&source_languages),
        PlanMode::FullyJoint => vec![source_languages.clone()],
        PlanMode::Custom => {
            return Err(PlanError::InvalidModeArguments {
                mode,
                reason: "custom plans take an explicit subset list; use ErasurePlan::custom".into(),
            })
        }
    };

    sort_global_then_local(&mut subsets);
    if order == SubsetOrder::LocalThenGlobal {
        subsets.reverse();
    }

    let plan = ErasurePlan {
        mode,
        order,
        k,
        source_languages,
        target_languages,
        subsets,
        center: true,
    };
    plan.validate()?;
    Ok(plan)
}

fn nonempty_subsets(langs: &BTreeSet<String>) -> Vec<BTreeSet<String>> {
    let items: Vec<&String> = langs.iter().collect();
    let n = items.len();
    let mut out = Vec::with_capacity((1usize << n) - 1);
    for mask in 1..(1usize << n) {
        let mut s = BTreeSet::new();
        for (bit, lang) in items.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                s.insert((*lang).clone());
            }
        }
        out.push(s);
    }
    out
}

/// Decreasing cardinality, ties broken lexicographically over sorted ids.
fn sort_global_then_local(subsets: &mut [BTreeSet<String>]) {
    subsets.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| a.iter().cmp(b.iter()))
    });
}

/// Stable content hash of a plan; any field change changes the hash.
pub fn plan_fingerprint(plan: &ErasurePlan) -> String {
    let canonical = serde_json::to_string(plan).expect("plans serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}
