//! Layered run configuration: built-in defaults, overridden by an optional
//! config file (`--config` or `VERIBOUND_CONFIG`), overridden by explicit
//! command-line flags. The effective values are echoed into every result
//! document.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Duration;
use veribound::bab::{Branching, VerifyConfig};
use veribound::falsify::PgdConfig;
use veribound::optimize::OptConfig;

/// Optional overrides read from a config file.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub pgd: PgdSection,
    #[serde(default)]
    pub optimize: OptimizeSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct VerifySection {
    pub timeout_secs: Option<f64>,
    pub max_domains: Option<usize>,
    pub batch: Option<usize>,
    pub branching: Option<String>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PgdSection {
    pub restarts: Option<usize>,
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct OptimizeSection {
    pub gap_tol: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}

/// Flag-level overrides shared by the verification-style commands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonFlags {
    /// Config file path (falls back to the VERIBOUND_CONFIG environment variable).
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// RNG seed; defaults are fixed so runs are reproducible.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for batched bounding (default 1).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Wall-clock budget in seconds for branch-and-bound.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Maximum number of subdomains to visit.
    #[arg(long)]
    pub max_domains: Option<usize>,
    /// Subdomains bounded per batched pass.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Split heuristic: smart or naive.
    #[arg(long, value_parser = parse_branching)]
    pub branching: Option<Branching>,
    /// Zero-boundary tolerance for clause certification.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// PGD restarts on the root box.
    #[arg(long)]
    pub pgd_restarts: Option<usize>,
    /// PGD steps per restart.
    #[arg(long)]
    pub pgd_steps: Option<usize>,
    /// PGD step size relative to box widths.
    #[arg(long)]
    pub pgd_step_size: Option<f64>,
    /// PGD candidates per restart.
    #[arg(long)]
    pub pgd_batch: Option<usize>,
    /// Write the result document here instead of stdout.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

fn parse_branching(s: &str) -> Result<Branching, String> {
    match s {
        "smart" => Ok(Branching::Smart),
        "naive" => Ok(Branching::Naive),
        other => Err(format!("unknown branching `{other}` (expected smart or naive)")),
    }
}

/// The fully resolved configuration echoed into result documents.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub seed: u64,
    pub workers: usize,
    pub timeout_secs: f64,
    pub max_domains: usize,
    pub batch: usize,
    pub branching: String,
    pub tolerance: f64,
    pub pgd_restarts: usize,
    pub pgd_steps: usize,
    pub pgd_step_size: f64,
    pub pgd_batch: usize,
    pub gap_tol: f64,
}

impl EffectiveConfig {
    /// Resolve flags over file values over defaults.
    pub fn resolve(flags: &CommonFlags, gap_tol_flag: Option<f64>) -> Result<EffectiveConfig, String> {
        let file = match flags
            .config
            .clone()
            .or_else(|| std::env::var_os("VERIBOUND_CONFIG").map(Into::into))
        {
            Some(path) => ConfigFile::load(&path)?,
            None => ConfigFile::default(),
        };
        let verify_defaults = VerifyConfig::default();
        let pgd_defaults = PgdConfig::default();
        let opt_defaults = OptConfig::default();
        let branching = match &flags.branching {
            Some(b) => *b,
            None => match file.verify.branching.as_deref() {
                Some("naive") => Branching::Naive,
                Some("smart") | None => Branching::Smart,
                Some(other) => return Err(format!("config: unknown branching `{other}`")),
            },
        };
        Ok(EffectiveConfig {
            seed: flags.seed.or(file.run.seed).unwrap_or(pgd_defaults.seed),
            workers: flags.workers.or(file.run.workers).unwrap_or(1),
            timeout_secs: flags
                .timeout
                .or(file.verify.timeout_secs)
                .unwrap_or(verify_defaults.timeout.as_secs_f64()),
            max_domains: flags
                .max_domains
                .or(file.verify.max_domains)
                .unwrap_or(verify_defaults.max_domains),
            batch: flags.batch.or(file.verify.batch).unwrap_or(verify_defaults.batch),
            branching: match branching {
                Branching::Smart => "smart".into(),
                Branching::Naive => "naive".into(),
            },
            tolerance: flags
                .tolerance
                .or(file.verify.tolerance)
                .unwrap_or(verify_defaults.tolerance),
            pgd_restarts: flags
                .pgd_restarts
                .or(file.pgd.restarts)
                .unwrap_or(pgd_defaults.restarts),
            pgd_steps: flags.pgd_steps.or(file.pgd.steps).unwrap_or(pgd_defaults.steps),
            pgd_step_size: flags
                .pgd_step_size
                .or(file.pgd.step_size)
                .unwrap_or(pgd_defaults.step_size),
            pgd_batch: flags.pgd_batch.or(file.pgd.batch).unwrap_or(pgd_defaults.batch),
            gap_tol: gap_tol_flag.or(file.optimize.gap_tol).unwrap_or(opt_defaults.gap_tol),
        })
    }

    pub fn branching(&self) -> Branching {
        match self.branching.as_str() {
            "naive" => Branching::Naive,
            _ => Branching::Smart,
        }
    }

    pub fn pgd(&self) -> PgdConfig {
        PgdConfig {
            restarts: self.pgd_restarts,
            steps: self.pgd_steps,
            step_size: self.pgd_step_size,
            batch: self.pgd_batch,
            seed: self.seed,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            timeout: Duration::from_secs_f64(self.timeout_secs),
            max_domains: self.max_domains,
            batch: self.batch,
            branching: self.branching(),
            pgd: self.pgd(),
            tolerance: self.tolerance,
            params: Default::default(),
        }
    }

    pub fn opt_config(&self) -> OptConfig {
        OptConfig {
            gap_tol: self.gap_tol,
            timeout: Duration::from_secs_f64(self.timeout_secs),
            max_domains: self.max_domains,
            batch: self.batch.max(1),
            branching: self.branching(),
            pgd: PgdConfig {
                // The optimizer runs its falsifier on every subdomain; keep
                // the per-domain budget at the reduced default unless the
                // flags override it.
                restarts: 1,
                steps: self.pgd_steps.min(40),
                step_size: self.pgd_step_size,
                batch: 16,
                seed: self.seed,
            },
            tolerance: self.tolerance,
            params: Default::default(),
            record_pruned: false,
        }
    }
}
