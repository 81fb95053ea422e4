//! Result documents: versioned TOML with a stable field order so fixed
//! inputs, seed, and a single worker give byte-identical output. Timing is
//! deliberately excluded (it goes to stderr) to keep documents diffable.

use crate::config::EffectiveConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct ResultDoc {
    pub format_version: u32,
    pub mode: String,
    pub inputs: Vec<InputDigest>,
    pub config: EffectiveConfig,
    pub result: ResultSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsSection>,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Default, Serialize)]
pub struct ResultSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primal_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_best: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CexSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<GradientSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube: Option<Vec<TubeRow>>,
}

#[derive(Debug, Serialize)]
pub struct CexSection {
    pub x: Vec<f64>,
    pub clause_index: usize,
    pub margin: f64,
}

#[derive(Debug, Serialize)]
pub struct LinearSection {
    pub lower_coeffs: Vec<Vec<f64>>,
    pub lower_bias: Vec<f64>,
    pub upper_coeffs: Vec<Vec<f64>>,
    pub upper_bias: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct GradientSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TubeRow {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct StatsSection {
    pub domains_visited: usize,
    pub max_depth: usize,
    pub final_worst_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_volume: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub live_volume: Option<f64>,
}

pub fn digest_file(role: &str, path: &Path) -> Result<InputDigest, String> {
    let bytes =
        std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest { role: role.to_string(), path: path.display().to_string(), sha256: hex })
}

/// Render and deliver the document: to `--out` when given, else stdout.
pub fn emit_result(doc: &ResultDoc, out: Option<&Path>) -> Result<(), String> {
    let text =
        toml::to_string_pretty(doc).map_err(|e| format!("cannot serialize result: {e}"))?;
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl From<&veribound::bab::VerifyStats> for StatsSection {
    fn from(s: &veribound::bab::VerifyStats) -> Self {
        StatsSection {
            domains_visited: s.domains_visited,
            max_depth: s.max_depth,
            final_worst_bound: s.final_worst_bound,
            certified_volume: Some(s.certified_volume),
            live_volume: Some(s.live_volume),
        }
    }
}

impl From<&veribound::optimize::OptStats> for StatsSection {
    fn from(s: &veribound::optimize::OptStats) -> Self {
        StatsSection {
            domains_visited: s.domains_visited,
            max_depth: s.max_depth,
            final_worst_bound: s.bound_trace.last().copied().unwrap_or(f64::NEG_INFINITY),
            certified_volume: None,
            live_volume: None,
        }
    }
}
