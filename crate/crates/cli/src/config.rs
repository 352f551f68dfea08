//! Experiment configuration files.
//!
//! A configuration is one JSON document:
//!
//! ```json
//! {
//!   "system": { "topology": "parallel", "groups": [[{"alpha": 1, "beta": 1}]] },
//!   "scheme": "two-stage",
//!   "m_grid": [100, 400],
//!   "replications": 10000,
//!   "master_seed": 42,
//!   "loss_mode": "posterior-variance",
//!   "output_path": "out.csv"
//! }
//! ```
//!
//! `scheme` defaults to `two-stage` for flat systems and `hybrid` for grouped
//! ones; `replications` defaults to 1000, `master_seed` to 0 and `loss_mode`
//! to `posterior-variance`. Optional keys `p_true`, `max_paths` and
//! `mc_draws` feed the `fractions` and `oracle` subcommands. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use relalloc::{BetaParams, LossMode, Scheme, SimulationConfig, SystemSpec, Topology};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    #[serde(default)]
    scheme: Option<Scheme>,
    m_grid: Vec<u64>,
    #[serde(default = "default_replications")]
    replications: u64,
    #[serde(default)]
    master_seed: u64,
    #[serde(default)]
    loss_mode: LossMode,
    #[serde(default)]
    output_path: Option<PathBuf>,
    #[serde(default)]
    p_true: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    max_paths: Option<u64>,
    #[serde(default)]
    mc_draws: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    topology: Topology,
    groups: Vec<Vec<RawPrior>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    alpha: f64,
    beta: f64,
}

fn default_replications() -> u64 {
    1000
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub simulation: SimulationConfig,
    pub output_path: Option<PathBuf>,
    pub p_true: Option<Vec<Vec<f64>>>,
    pub max_paths: Option<u64>,
    pub mc_draws: Option<u64>,
}

fn positive(value: f64, field: &str) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        bail!("{field}: must be positive and finite (got {value})");
    }
    Ok(())
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = serde_json::from_str(text).context("malformed configuration")?;

    if raw.system.groups.is_empty() {
        bail!("system.groups: at least one group is required");
    }
    let mut groups = Vec::with_capacity(raw.system.groups.len());
    for (i, g) in raw.system.groups.iter().enumerate() {
        if g.is_empty() {
            bail!("system.groups[{i}]: group is empty");
        }
        let mut priors = Vec::with_capacity(g.len());
        for (j, p) in g.iter().enumerate() {
            positive(p.alpha, &format!("system.groups[{i}][{j}].alpha"))?;
            positive(p.beta, &format!("system.groups[{i}][{j}].beta"))?;
            priors.push(BetaParams::new(p.alpha, p.beta).with_context(|| format!("system.groups[{i}][{j}]"))?);
        }
        groups.push(priors);
    }
    let spec = SystemSpec::new(raw.system.topology, groups).context("system")?;

    if let Some(k) = raw.m_grid.iter().position(|&m| m == 0) {
        bail!("m_grid[{k}]: budgets must be positive");
    }
    if raw.replications == 0 {
        bail!("replications: must be at least 1");
    }
    let scheme = raw.scheme.unwrap_or(if spec.topology().is_flat() {
        Scheme::TwoStage
    } else {
        Scheme::Hybrid
    });
    for (k, &m) in raw.m_grid.iter().enumerate() {
        scheme
            .check(&spec, m)
            .with_context(|| format!("scheme `{}` at m_grid[{k}] = {m}", scheme.name()))?;
    }
    if let Some(p) = &raw.p_true {
        let shape_ok = p.len() == spec.groups().len()
            && p.iter().zip(spec.groups()).all(|(a, b)| a.len() == b.len());
        if !shape_ok {
            bail!("p_true: shape must match system.groups");
        }
        if let Some(x) = p.iter().flatten().find(|&&x| !(x > 0.0 && x < 1.0)) {
            bail!("p_true: entries must lie in (0,1) (got {x})");
        }
    }
    if raw.max_paths == Some(0) {
        bail!("max_paths: must be positive");
    }
    if matches!(raw.mc_draws, Some(d) if d < 2) {
        bail!("mc_draws: must be at least 2");
    }

    Ok(ExperimentConfig {
        simulation: SimulationConfig {
            spec,
            scheme,
            m_grid: raw.m_grid,
            replications: raw.replications,
            master_seed: raw.master_seed,
            loss_mode: raw.loss_mode,
        },
        output_path: raw.output_path,
        p_true: raw.p_true,
        max_paths: raw.max_paths,
        mc_draws: raw.mc_draws,
    })
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("in config file {}", path.display()))
}
