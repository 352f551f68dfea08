//! Seeded Monte Carlo estimation of Bayes risk.
//!
//! Each replication draws the true component reliabilities from the prior,
//! generates stage-one data, allocates, generates stage-two data and records
//! the loss. Bernoulli batches are drawn as binomial counts, which carry the
//! same information for every quantity computed here.
//!
//! Random streams: replication `k` uses `ChaCha8Rng::seed_from_u64(master_seed)`
//! moved to stream `k` via `set_stream`. ChaCha has 2^64 independent streams,
//! so every replication owns its stream regardless of which thread runs it.
//! Losses are collected in replication order and reduced sequentially with
//! compensated summation, so results do not depend on the thread count.
//! Bit-for-bit reproducibility relies on the locked versions of `rand_chacha`
//! (0.9) and `rand_distr` (0.5).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationPlan, Scheme};
use crate::error::{Error, Result};
use crate::model::{
    check_nested_shape, estimate_reliability, ComponentCounts, ObservationLedger, SystemSpec,
    Topology,
};
use crate::risk::{asymptotic_constant, b_constant, posterior_variance};

/// Which loss each replication reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Exact posterior variance of the system reliability (Rao-Blackwellized).
    #[default]
    PosteriorVariance,
    /// `(p_hat - p_true)^2`.
    SquaredError,
    /// Both; the posterior variance is the headline estimate.
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub spec: SystemSpec,
    pub scheme: Scheme,
    pub m_grid: Vec<u64>,
    pub replications: u64,
    pub master_seed: u64,
    pub loss_mode: LossMode,
}

impl SimulationConfig {
    /// Checks the replication count and every grid point against the scheme.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        for &m in &self.m_grid {
            self.scheme.check(&self.spec, m)?;
        }
        Ok(())
    }
}

/// Losses recorded by one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub posterior_variance: Option<f64>,
    pub squared_error: Option<f64>,
}

/// Sample mean with its standard error (absent for a single replication).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: Option<f64>,
}

impl Estimate {
    /// Mean and `sd / sqrt(n)` of `values` in the given order.
    #[must_use]
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = neumaier_sum(values.iter().copied()) / n;
        let std_error = (values.len() > 1).then(|| {
            let ss = neumaier_sum(values.iter().map(|x| (x - mean) * (x - mean)));
            (ss / (n - 1.0) / n).sqrt()
        });
        Self { mean, std_error }
    }
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub m: u64,
    pub scheme: String,
    pub risk_estimate: f64,
    pub std_error: Option<f64>,
    pub m_times_risk: f64,
    pub target_constant: Option<f64>,
    pub replications: u64,
    pub seed: u64,
    /// Squared-error estimate reported alongside the posterior variance in `Both` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squared_error: Option<Estimate>,
}

/// RNG for replication `index` under `master_seed`.
#[must_use]
pub fn replication_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn draw_counts<R: Rng + ?Sized>(
    rng: &mut R,
    trials: &[Vec<u64>],
    p: &[Vec<f64>],
) -> Result<Vec<Vec<ComponentCounts>>> {
    trials
        .iter()
        .zip(p)
        .map(|(tg, pg)| {
            tg.iter()
                .zip(pg)
                .map(|(&t, &pi)| {
                    let binom = Binomial::new(t, pi)
                        .map_err(|e| Error::Config(format!("binomial({t}, {pi}): {e}")))?;
                    ComponentCounts::new(t, binom.sample(rng))
                })
                .collect()
        })
        .collect()
}

/// Draws component reliabilities from the prior.
pub fn draw_reliabilities<R: Rng + ?Sized>(spec: &SystemSpec, rng: &mut R) -> Vec<Vec<f64>> {
    spec.groups()
        .iter()
        .map(|g| {
            g.iter()
                .map(|b| {
                    Beta::new(b.alpha(), b.beta())
                        .expect("validated beta parameters")
                        .sample(rng)
                })
                .collect()
        })
        .collect()
}

/// Runs one allocation path for fixed component reliabilities `p`.
pub fn simulate_path<R: Rng + ?Sized>(
    spec: &SystemSpec,
    scheme: &Scheme,
    m: u64,
    p: &[Vec<f64>],
    rng: &mut R,
) -> Result<(AllocationPlan, ObservationLedger)> {
    let first_sizes = scheme.stage_one_sizes(spec, m)?;
    let stage_one = draw_counts(rng, &first_sizes, p)?;
    let plan = scheme.allocate(spec, m, &stage_one)?;
    let totals = plan.component_sizes();
    check_nested_shape(&spec.group_sizes(), &totals, "allocation plan")?;
    let extra: Vec<Vec<u64>> = totals
        .iter()
        .zip(&first_sizes)
        .map(|(t, f)| t.iter().zip(f).map(|(a, b)| a - b).collect())
        .collect();
    let stage_two = draw_counts(rng, &extra, p)?;
    let ledger = ObservationLedger::from_stages(stage_one, &stage_two)?;
    Ok((plan, ledger))
}

/// One replication of the scheme at budget `m`.
pub fn run_replication(config: &SimulationConfig, m: u64, replication_index: u64) -> Result<LossRecord> {
    let mut rng = replication_rng(config.master_seed, replication_index);
    let p = draw_reliabilities(&config.spec, &mut rng);
    let (_, ledger) = simulate_path(&config.spec, &config.scheme, m, &p, &mut rng)?;
    let want_pv = config.loss_mode != LossMode::SquaredError;
    let want_se = config.loss_mode != LossMode::PosteriorVariance;
    let posterior_variance = want_pv
        .then(|| posterior_variance(&config.spec, &ledger))
        .transpose()?;
    let squared_error = if want_se {
        let estimate = estimate_reliability(&config.spec, &ledger)?;
        let truth = config.spec.reliability(&p)?;
        Some((estimate - truth).powi(2))
    } else {
        None
    };
    Ok(LossRecord {
        posterior_variance,
        squared_error,
    })
}

/// The asymptotic constant the adaptive schemes should approach.
fn target_constant(config: &SimulationConfig) -> Result<Option<f64>> {
    if config.scheme.is_adaptive() {
        asymptotic_constant(&config.spec).map(Some)
    } else {
        Ok(None)
    }
}

/// Averages `replications` independent runs at budget `m`.
pub fn estimate_bayes_risk(config: &SimulationConfig, m: u64) -> Result<RiskRow> {
    if config.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    config.scheme.check(&config.spec, m)?;
    let records = (0..config.replications)
        .into_par_iter()
        .map(|k| run_replication(config, m, k))
        .collect::<Result<Vec<_>>>()?;
    let pv: Vec<f64> = records.iter().filter_map(|r| r.posterior_variance).collect();
    let se: Vec<f64> = records.iter().filter_map(|r| r.squared_error).collect();
    let (headline, cross) = match config.loss_mode {
        LossMode::PosteriorVariance => (Estimate::from_samples(&pv), None),
        LossMode::SquaredError => (Estimate::from_samples(&se), None),
        LossMode::Both => (Estimate::from_samples(&pv), Some(Estimate::from_samples(&se))),
    };
    Ok(RiskRow {
        m,
        scheme: config.scheme.name().to_owned(),
        risk_estimate: headline.mean,
        std_error: headline.std_error,
        m_times_risk: m as f64 * headline.mean,
        target_constant: target_constant(config)?,
        replications: config.replications,
        seed: config.master_seed,
        squared_error: cross,
    })
}

/// One row per budget in the grid.
pub fn convergence_study(config: &SimulationConfig) -> Result<Vec<RiskRow>> {
    let failures: Vec<String> = std::iter::once(config.validate())
        .chain(config.m_grid.iter().map(|&m| config.scheme.check(&config.spec, m)))
        .filter_map(|r| r.err().map(|e| e.to_string()))
        .collect();
    if !failures.is_empty() {
        return Err(Error::Config(failures.join("; ")));
    }
    config
        .m_grid
        .iter()
        .map(|&m| estimate_bayes_risk(config, m))
        .collect()
}

/// Realized allocation fractions for a fixed truth, with their limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionReport {
    pub m: u64,
    pub plan: AllocationPlan,
    /// `m_i / m` (components for flat systems, subsystems otherwise).
    pub realized: Vec<f64>,
    pub targets: Vec<f64>,
    /// `m_ij / m_i` for grouped systems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_realized: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_targets: Option<Vec<Vec<f64>>>,
}

impl FractionReport {
    /// Largest `|realized - target|` at the top level.
    #[must_use]
    pub fn max_deviation(&self) -> f64 {
        self.realized
            .iter()
            .zip(&self.targets)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn normalized(values: Vec<f64>) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    values.into_iter().map(|v| v / sum).collect()
}

/// `sqrt(V_i) / sum_j sqrt(V_j)` for a parallel group, `V_i = p_i q_i prod_{j != i} q_j^2`.
#[must_use]
pub fn parallel_fraction_targets(p: &[f64]) -> Vec<f64> {
    let roots = (0..p.len())
        .map(|i| {
            let rest: f64 = (0..p.len()).filter(|&j| j != i).map(|j| (1.0 - p[j]).powi(2)).product();
            (p[i] * (1.0 - p[i]) * rest).sqrt()
        })
        .collect();
    normalized(roots)
}

/// `sqrt(B_i Z_i) / sum_k sqrt(B_k Z_k)` for a parallel-series system.
pub fn hybrid_fraction_targets(spec: &SystemSpec, p: &[Vec<f64>]) -> Result<Vec<f64>> {
    if spec.topology() != Topology::ParallelSeries {
        return Err(Error::Topology {
            expected: "parallel-series",
            found: spec.topology().name(),
        });
    }
    let subsystem: Vec<f64> = p
        .iter()
        .map(|g| 1.0 - g.iter().map(|x| 1.0 - x).product::<f64>())
        .collect();
    let n = subsystem.len();
    let roots = spec
        .groups()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let z: f64 = (0..n).filter(|&l| l != i).map(|l| subsystem[l].powi(2)).product();
            (b_constant(g) * z).sqrt()
        })
        .collect();
    Ok(normalized(roots))
}

/// Runs the adaptive scheme once on data generated from fixed reliabilities.
pub fn fraction_study(config: &SimulationConfig, m: u64, p_true: &[Vec<f64>]) -> Result<FractionReport> {
    check_nested_shape(&config.spec.group_sizes(), p_true, "p_true")?;
    if let Some(bad) = p_true.iter().flatten().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::Config(format!("p_true entries must lie in (0,1), got {bad}")));
    }
    if !config.scheme.is_adaptive() {
        return Err(Error::Config("fraction study needs an adaptive scheme".into()));
    }
    let mut rng = replication_rng(config.master_seed, 0);
    let (plan, _) = simulate_path(&config.spec, &config.scheme, m, p_true, &mut rng)?;

    // Work in the parallel-type frame; series-type systems are mapped by duality.
    let (spec, p) = match config.spec.topology() {
        Topology::Series | Topology::SeriesParallel => (
            config.spec.dualize(),
            p_true.iter().map(|g| g.iter().map(|x| 1.0 - x).collect()).collect(),
        ),
        _ => (config.spec.clone(), p_true.to_vec()),
    };
    let realized: Vec<f64> = plan.per_subsystem.iter().map(|&x| x as f64 / m as f64).collect();
    if spec.topology().is_flat() {
        return Ok(FractionReport {
            m,
            targets: parallel_fraction_targets(&p[0]),
            realized,
            component_realized: None,
            component_targets: None,
            plan,
        });
    }
    let targets = hybrid_fraction_targets(&spec, &p)?;
    let component_targets = p.iter().map(|g| parallel_fraction_targets(g)).collect();
    let component_realized = plan
        .component_sizes()
        .iter()
        .zip(&plan.per_subsystem)
        .map(|(g, &mi)| g.iter().map(|&x| x as f64 / mi as f64).collect())
        .collect();
    Ok(FractionReport {
        m,
        plan,
        realized,
        targets,
        component_realized: Some(component_realized),
        component_targets: Some(component_targets),
    })
}
