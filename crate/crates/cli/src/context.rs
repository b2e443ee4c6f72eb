//! Error classification and the run-config file.
//!
//! Exit codes are part of the interface: 1 for usage problems, 2 for data
//! problems (missing or malformed files, shape mismatches), 3 for numeric
//! problems (degenerate inputs, non-finite values).

use std::fmt;
use std::path::{Path, PathBuf};

use erasure_core::{ProbeConfig, ProbeError, SpectralError, SynthError};
use serde::Deserialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Numeric(m) => write!(f, "numeric: {m}"),
        }
    }
}

pub fn usage<E: fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

pub fn numeric<E: fmt::Display>(e: E) -> CliError {
    CliError::Numeric(e.to_string())
}

pub fn spectral(e: SpectralError) -> CliError {
    match e {
        SpectralError::DegenerateData | SpectralError::NonProjectionInput(_) => numeric(e),
        _ => data(e),
    }
}

pub fn probe_err(e: ProbeError) -> CliError {
    match e {
        ProbeError::NonFiniteFeature => numeric(e),
        _ => data(e),
    }
}

pub fn synth_err(e: SynthError) -> CliError {
    match e {
        SynthError::DimensionTooSmall { .. } => usage(e),
        _ => data(e),
    }
}

/// Optional run-config file; command-line flags override these defaults.
/// Paths are relative to the config file's directory.
#[derive(Debug, Default, Deserialize)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub aggregate: Option<String>,
    pub probe: Option<ProbePartial>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ProbePartial {
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub l2: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| data(format!("config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| data(format!("config JSON: {e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(m) = config.manifest.take() {
            let resolved = base.join(m);
            if !resolved.exists() {
                return Err(usage(format!(
                    "config references missing manifest {}",
                    resolved.display()
                )));
            }
            config.manifest = Some(resolved);
        }
        if let Some(p) = config.plan.take() {
            let resolved = base.join(p);
            if !resolved.exists() {
                return Err(usage(format!(
                    "config references missing plan {}",
                    resolved.display()
                )));
            }
            config.plan = Some(resolved);
        }
        if let Some(o) = config.out.take() {
            config.out = Some(base.join(o));
        }
        Ok(config)
    }

    pub fn probe_config(&self, max_iter: Option<usize>, tol: Option<f64>, l2: Option<f64>) -> ProbeConfig {
        let base = ProbeConfig::default();
        let partial = self.probe.as_ref();
        ProbeConfig {
            max_iter: max_iter
                .or(partial.and_then(|p| p.max_iter))
                .unwrap_or(base.max_iter),
            tol: tol.or(partial.and_then(|p| p.tol)).unwrap_or(base.tol),
            l2: l2.or(partial.and_then(|p| p.l2)).unwrap_or(base.l2),
        }
    }
}
