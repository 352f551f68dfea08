//! Exact small-instance computations used to check the simulation and the
//! closed forms.
//!
//! Enumeration works on count vectors: under a beta prior the outcomes of a
//! component are exchangeable, so the number of successes is all that
//! matters and its marginal law is beta-binomial.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_binomial;

use crate::allocation::Scheme;
use crate::error::{Error, Result};
use crate::model::{posterior_params, BetaParams, ComponentCounts, ObservationLedger, SystemSpec, Topology};
use crate::risk::{asymptotic_constant, b_constant, posterior_variance};
use crate::simulation::{neumaier_sum, replication_rng, draw_reliabilities};

/// Cap on the number of weighted outcome paths an enumeration may visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_paths: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self {
            max_paths: 10_000_000,
        }
    }
}

impl EnumerationBudget {
    fn admit(&self, paths: u128) -> Result<()> {
        if paths > u128::from(self.max_paths) {
            return Err(Error::EnumerationBudget {
                paths,
                max_paths: self.max_paths,
            });
        }
        Ok(())
    }
}

/// `C(n, s) B(alpha + s, beta + n - s) / B(alpha, beta)`.
#[must_use]
pub fn beta_binomial_pmf(prior: BetaParams, trials: u64, successes: u64) -> f64 {
    if successes > trials {
        return 0.0;
    }
    let (a, b) = (prior.alpha(), prior.beta());
    let (n, s) = (trials, successes);
    (ln_binomial(n, s) + ln_beta(a + s as f64, b + (n - s) as f64) - ln_beta(a, b)).exp()
}

fn pmf_table(prior: BetaParams, trials: u64) -> Vec<f64> {
    (0..=trials).map(|s| beta_binomial_pmf(prior, trials, s)).collect()
}

/// Visits every vector `v` with `0 <= v[k] <= limits[k]` in lexicographic order.
fn for_each_outcome(limits: &[u64], mut visit: impl FnMut(&[u64])) {
    let mut v = vec![0u64; limits.len()];
    loop {
        visit(&v);
        let mut k = limits.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if v[k] < limits[k] {
                v[k] += 1;
                break;
            }
            v[k] = 0;
        }
    }
}

fn path_count(trials: &[u64]) -> u128 {
    trials.iter().map(|&t| u128::from(t) + 1).product()
}

fn reshape<T: Clone>(flat: &[T], sizes: &[usize]) -> Vec<Vec<T>> {
    let mut rest = flat;
    sizes
        .iter()
        .map(|&n| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        })
        .collect()
}

/// Exact Bayes risk of a scheme together with enumeration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactRisk {
    pub risk: f64,
    /// Sum of all path probabilities; 1 up to rounding.
    pub total_probability: f64,
    pub paths: u64,
}

/// Expected posterior variance of the system reliability under `scheme`,
/// summed over every stage-one and stage-two count vector.
pub fn exact_scheme_risk(
    spec: &SystemSpec,
    scheme: &Scheme,
    m: u64,
    budget: EnumerationBudget,
) -> Result<ExactRisk> {
    let sizes = spec.group_sizes();
    let priors: Vec<BetaParams> = spec.components().copied().collect();
    let first: Vec<u64> = scheme.stage_one_sizes(spec, m)?.concat();
    budget.admit(path_count(&first))?;

    let first_tables: Vec<Vec<f64>> = priors
        .iter()
        .zip(&first)
        .map(|(&p, &t)| pmf_table(p, t))
        .collect();

    // Pass 1: plans for every stage-one outcome, and the total path count.
    let mut branches = Vec::new();
    let mut error = None;
    let mut total_paths: u128 = 0;
    for_each_outcome(&first, |s| {
        if error.is_some() {
            return;
        }
        let counts: Vec<ComponentCounts> = first
            .iter()
            .zip(s)
            .map(|(&t, &x)| ComponentCounts::new(t, x).expect("s <= t"))
            .collect();
        let weight: f64 = s.iter().zip(&first_tables).map(|(&x, tab)| tab[x as usize]).product();
        let planned = scheme
            .allocate(spec, m, &reshape(&counts, &sizes))
            .map(|plan| plan.component_sizes().concat());
        match planned {
            Ok(totals) => {
                let extra: Vec<u64> = totals.iter().zip(&first).map(|(a, b)| a - b).collect();
                total_paths += path_count(&extra);
                branches.push((counts, weight, extra));
            }
            Err(e) => error = Some(e),
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    budget.admit(total_paths)?;

    // Pass 2: weighted posterior variances, reduced in stage-one order.
    let parts = branches
        .par_iter()
        .map(|(counts, weight, extra)| -> Result<(f64, f64)> {
            let tables: Vec<Vec<f64>> = priors
                .iter()
                .zip(counts)
                .zip(extra)
                .map(|((&p, &c), &e)| pmf_table(posterior_params(p, c), e))
                .collect();
            let stage_one = reshape(counts, &sizes);
            let mut risk = Vec::new();
            let mut prob = Vec::new();
            let mut failure = None;
            for_each_outcome(extra, |s| {
                let w: f64 = s.iter().zip(&tables).map(|(&x, tab)| tab[x as usize]).product();
                let second: Vec<ComponentCounts> = extra
                    .iter()
                    .zip(s)
                    .map(|(&t, &x)| ComponentCounts::new(t, x).expect("s <= t"))
                    .collect();
                let variance = ObservationLedger::from_stages(stage_one.clone(), &reshape(&second, &sizes))
                    .and_then(|ledger| posterior_variance(spec, &ledger));
                match variance {
                    Ok(v) => {
                        risk.push(w * v);
                        prob.push(w);
                    }
                    Err(e) => failure = Some(e),
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            Ok((weight * neumaier_sum(risk), weight * neumaier_sum(prob)))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExactRisk {
        risk: neumaier_sum(parts.iter().map(|p| p.0)),
        total_probability: neumaier_sum(parts.iter().map(|p| p.1)),
        paths: total_paths as u64,
    })
}

/// All ways to write `m` as an ordered sum of `n` non-negative parts, in
/// lexicographic order.
fn compositions(m: u64, n: usize) -> Vec<Vec<u64>> {
    fn go(rest: u64, n: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if n == 1 {
            prefix.push(rest);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for x in 0..=rest {
            prefix.push(x);
            go(rest - x, n - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(m, n, &mut Vec::new(), &mut out);
    out
}

/// Best fixed (non-adaptive) allocation by exhaustive search.
///
/// Ties (equal risk up to a relative 1e-12) keep the lexicographically first allocation.
pub fn optimal_fixed_allocation(
    spec: &SystemSpec,
    m: u64,
    budget: EnumerationBudget,
) -> Result<(Vec<u64>, ExactRisk)> {
    let candidates = compositions(m, spec.component_count());
    let total: u128 = candidates.iter().map(|c| path_count(c)).sum();
    budget.admit(total)?;
    let mut best: Option<(Vec<u64>, ExactRisk)> = None;
    for alloc in candidates {
        let exact = exact_scheme_risk(spec, &Scheme::FixedCustom(alloc.clone()), m, budget)?;
        let better = match &best {
            None => true,
            Some((_, b)) => exact.risk < b.risk * (1.0 - 1e-12),
        };
        if better {
            best = Some((alloc, exact));
        }
    }
    Ok(best.expect("at least one composition"))
}

// ---------------------------------------------------------------------------
// Monte Carlo check of the closed-form constants
// ---------------------------------------------------------------------------

/// Closed-form constant next to its prior-sampling Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantCheck {
    pub closed_form: f64,
    pub mc: f64,
    pub std_error: f64,
    pub draws: u64,
}

impl ConstantCheck {
    #[must_use]
    pub fn z_score(&self) -> f64 {
        (self.mc - self.closed_form) / self.std_error
    }

    #[must_use]
    pub fn relative_error(&self) -> f64 {
        (self.mc - self.closed_form).abs() / self.closed_form
    }

    /// Within `z_limit` standard errors and `rel_limit` relative error.
    #[must_use]
    pub fn passes(&self, z_limit: f64, rel_limit: f64) -> bool {
        self.z_score().abs() <= z_limit && self.relative_error() <= rel_limit
    }
}

const MC_CHUNK: u64 = 1 << 16;

/// `(sum_i sqrt(V_i))^2` for one parallel group at fixed reliabilities.
fn parallel_integrand(p: &[f64]) -> f64 {
    let roots: f64 = (0..p.len())
        .map(|i| {
            let rest: f64 = (0..p.len()).filter(|&j| j != i).map(|j| (1.0 - p[j]).powi(2)).product();
            (p[i] * (1.0 - p[i]) * rest).sqrt()
        })
        .sum();
    roots * roots
}

/// `(sum_i sqrt(B_i Z_i))^2` for a parallel-series system at fixed reliabilities.
fn hybrid_integrand(b: &[f64], p: &[Vec<f64>]) -> f64 {
    let subsystem: Vec<f64> = p
        .iter()
        .map(|g| 1.0 - g.iter().map(|x| 1.0 - x).product::<f64>())
        .collect();
    let n = subsystem.len();
    let roots: f64 = (0..n)
        .map(|i| {
            let z: f64 = (0..n).filter(|&l| l != i).map(|l| subsystem[l].powi(2)).product();
            (b[i] * z).sqrt()
        })
        .sum();
    roots * roots
}

/// Estimates the asymptotic constant of `spec` by sampling reliabilities
/// from the prior and averaging the integrand directly.
///
/// Draws are split into chunks of 65536, chunk `k` using stream `k` of the
/// seed; chunk statistics are merged in chunk order.
pub fn mc_constant_check(spec: &SystemSpec, draws: u64, seed: u64) -> Result<ConstantCheck> {
    if draws < 2 {
        return Err(Error::Config("constant check needs at least 2 draws".into()));
    }
    let closed_form = asymptotic_constant(spec)?;
    let spec = match spec.topology() {
        Topology::Series | Topology::SeriesParallel => spec.dualize(),
        _ => spec.clone(),
    };
    let b: Vec<f64> = spec.groups().iter().map(|g| b_constant(g)).collect();
    let chunks = draws.div_ceil(MC_CHUNK);
    let stats: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = replication_rng(seed, k);
            let len = MC_CHUNK.min(draws - k * MC_CHUNK);
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..len {
                let p = draw_reliabilities(&spec, &mut rng);
                let x = match spec.topology() {
                    Topology::Parallel => parallel_integrand(&p[0]),
                    _ => hybrid_integrand(&b, &p),
                };
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            (len as f64, mean, m2)
        })
        .collect();
    let (n, mean, m2) = stats
        .into_iter()
        .fold((0.0, 0.0, 0.0), |(na, ma, sa), (nb, mb, sb)| {
            let n = na + nb;
            let delta = mb - ma;
            (n, ma + delta * nb / n, sa + sb + delta * delta * na * nb / n)
        });
    Ok(ConstantCheck {
        closed_form,
        mc: mean,
        std_error: (m2 / (n - 1.0) / n).sqrt(),
        draws,
    })
}
