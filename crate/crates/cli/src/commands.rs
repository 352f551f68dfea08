//! Subcommand implementations. Each returns its rendered output so it can be
//! exercised without spawning a process.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use relalloc::oracle::{exact_scheme_risk, mc_constant_check, optimal_fixed_allocation};
use relalloc::{
    asymptotic_constant, b_constant, convergence_study, estimate_bayes_risk, fraction_study,
    AllocationPlan, ComponentCounts, EnumerationBudget, Error, FractionReport, RiskRow, SystemSpec,
    Topology,
};

use crate::config::ExperimentConfig;
use crate::output::{convergence_csv, plan_table};

/// Draws used by `oracle` constant checks when the config does not say.
pub const DEFAULT_MC_DRAWS: u64 = 1_000_000;
/// Standard-error and relative tolerances for constant checks.
pub const CONSTANT_Z_LIMIT: f64 = 3.0;
pub const CONSTANT_REL_LIMIT: f64 = 0.005;

/// Stage-one data file: `{"groups": [[{"trials": 10, "successes": 4}, ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOneFile {
    pub groups: Vec<Vec<ComponentCounts>>,
}

fn single_budget(cfg: &ExperimentConfig, m: Option<u64>) -> Result<u64> {
    match (m, cfg.simulation.m_grid.as_slice()) {
        (Some(m), _) => Ok(m),
        (None, [m]) => Ok(*m),
        (None, []) => bail!("no budget: pass --m or give m_grid a single entry"),
        (None, _) => bail!("m_grid has several entries; pass --m to choose one"),
    }
}

/// Plan for the configured scheme given observed stage-one data.
pub fn cmd_allocate(cfg: &ExperimentConfig, stage_one_path: &Path, m: Option<u64>) -> Result<(AllocationPlan, String)> {
    let text = std::fs::read_to_string(stage_one_path)
        .with_context(|| format!("cannot read stage-one file {}", stage_one_path.display()))?;
    let data: StageOneFile = serde_json::from_str(&text)
        .with_context(|| format!("malformed stage-one file {}", stage_one_path.display()))?;
    let m = single_budget(cfg, m)?;
    let sim = &cfg.simulation;
    let plan = sim.scheme.allocate(&sim.spec, m, &data.groups)?;
    let table = plan_table(&plan);
    Ok((plan, table))
}

/// Risk estimates for every budget, as JSON rows.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Vec<RiskRow>> {
    cfg.simulation.validate()?;
    cfg.simulation
        .m_grid
        .iter()
        .map(|&m| estimate_bayes_risk(&cfg.simulation, m).map_err(Into::into))
        .collect()
}

/// Convergence table as CSV text.
pub fn cmd_converge(cfg: &ExperimentConfig) -> Result<String> {
    let rows = convergence_study(&cfg.simulation)?;
    convergence_csv(&rows)
}

/// Realized versus limiting allocation fractions for `p_true`.
pub fn cmd_fractions(cfg: &ExperimentConfig, m: Option<u64>) -> Result<FractionReport> {
    let p = cfg
        .p_true
        .as_ref()
        .context("fractions needs `p_true` in the config")?;
    let m = match m {
        Some(m) => m,
        None => *cfg.simulation.m_grid.last().context("m_grid is empty; pass --m")?,
    };
    Ok(fraction_study(&cfg.simulation, m, p)?)
}

/// Closed-form constants for the configured system.
pub fn cmd_constants(cfg: &ExperimentConfig) -> Result<Value> {
    let spec = &cfg.simulation.spec;
    let frame = parallel_frame(spec);
    let b: Vec<f64> = frame.groups().iter().map(|g| b_constant(g)).collect();
    Ok(json!({
        "topology": spec.topology(),
        "asymptotic_constant": asymptotic_constant(spec)?,
        "b_constants": b,
    }))
}

fn parallel_frame(spec: &SystemSpec) -> SystemSpec {
    match spec.topology() {
        Topology::Series | Topology::SeriesParallel => spec.dualize(),
        _ => spec.clone(),
    }
}

/// Oracle report with a pass flag covering every item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub items: Vec<Value>,
    pub ok: bool,
}

fn failure_item(kind: &str, m: Option<u64>, err: &Error) -> Value {
    let status = match err {
        Error::EnumerationBudget { .. } => "budget_exceeded",
        _ => "error",
    };
    json!({ "kind": kind, "m": m, "status": status, "message": err.to_string() })
}

fn constant_item(label: String, spec: &SystemSpec, draws: u64, seed: u64) -> (Value, bool) {
    match mc_constant_check(spec, draws, seed) {
        Ok(c) => {
            let pass = c.passes(CONSTANT_Z_LIMIT, CONSTANT_REL_LIMIT);
            let item = json!({
                "kind": "constant_check",
                "target": label,
                "status": "ok",
                "closed_form": c.closed_form,
                "mc": c.mc,
                "std_error": c.std_error,
                "z_score": c.z_score(),
                "relative_error": c.relative_error(),
                "draws": c.draws,
                "result": if pass { "pass" } else { "fail" },
            });
            (item, pass)
        }
        Err(e) => (failure_item("constant_check", None, &e), false),
    }
}

/// Exact risks, optimal fixed allocations and constant cross-checks.
///
/// A failing item is recorded and the remaining items still run.
pub fn cmd_oracle(cfg: &ExperimentConfig) -> OracleReport {
    let sim = &cfg.simulation;
    let budget = cfg
        .max_paths
        .map_or_else(EnumerationBudget::default, |max_paths| EnumerationBudget { max_paths });
    let draws = cfg.mc_draws.unwrap_or(DEFAULT_MC_DRAWS);
    let mut items = Vec::new();
    let mut ok = true;

    for &m in &sim.m_grid {
        match exact_scheme_risk(&sim.spec, &sim.scheme, m, budget) {
            Ok(r) => items.push(json!({
                "kind": "exact_risk",
                "scheme": sim.scheme.name(),
                "m": m,
                "status": "ok",
                "exact_risk": r.risk,
                "total_probability": r.total_probability,
                "paths": r.paths,
            })),
            Err(e) => {
                ok = false;
                items.push(failure_item("exact_risk", Some(m), &e));
            }
        }
        match optimal_fixed_allocation(&sim.spec, m, budget) {
            Ok((alloc, r)) => items.push(json!({
                "kind": "optimal_fixed",
                "m": m,
                "status": "ok",
                "allocation": alloc,
                "exact_risk": r.risk,
            })),
            Err(e) => {
                ok = false;
                items.push(failure_item("optimal_fixed", Some(m), &e));
            }
        }
    }

    let (item, pass) = constant_item("asymptotic".into(), &sim.spec, draws, sim.master_seed);
    ok &= pass;
    items.push(item);
    if !sim.spec.topology().is_flat() {
        let frame = parallel_frame(&sim.spec);
        for (i, g) in frame.groups().iter().enumerate() {
            let group = SystemSpec::parallel(g.clone()).expect("non-empty group");
            let (item, pass) = constant_item(format!("b_constant[{i}]"), &group, draws, sim.master_seed);
            ok &= pass;
            items.push(item);
        }
    }
    OracleReport { items, ok }
}
