//! Beta-binomial conjugate machinery.
//!
//! Every component reliability `p` carries an independent `Beta(alpha, beta)`
//! prior and is observed through Bernoulli trials. Only sufficient statistics
//! (trial and success counts) are kept; posteriors follow by additive updates.
//!
//! System reliability is assembled from two-level block structures: a
//! [`SystemSpec`] is a list of groups, each group a list of components, and the
//! [`Topology`] says how members combine inside a group and how groups combine
//! with each other.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Priors and counts
// ---------------------------------------------------------------------------

/// Conjugate `Beta(alpha, beta)` prior or posterior for one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBeta")]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeta {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawBeta> for BetaParams {
    type Error = Error;

    fn try_from(raw: RawBeta) -> Result<Self> {
        Self::new(raw.alpha, raw.beta)
    }
}

impl BetaParams {
    /// Builds a proper beta distribution; both parameters must be positive
    /// and their sum finite.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidPrior {
                field: "alpha",
                value: alpha,
            });
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidPrior {
                field: "beta",
                value: beta,
            });
        }
        if !(alpha + beta).is_finite() {
            return Err(Error::InvalidPrior {
                field: "alpha + beta",
                value: alpha + beta,
            });
        }
        Ok(Self { alpha, beta })
    }

    /// The uniform prior `Beta(1, 1)`.
    #[must_use]
    pub const fn uniform() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    #[must_use]
    pub const fn alpha(&self) -> f64 {
        self.alpha
    }

    #[must_use]
    pub const fn beta(&self) -> f64 {
        self.beta
    }

    /// Prior sample size `r = alpha + beta`.
    #[must_use]
    pub fn total(&self) -> f64 {
        self.alpha + self.beta
    }

    /// Swaps the roles of successes and failures.
    #[must_use]
    pub const fn swapped(&self) -> Self {
        Self {
            alpha: self.beta,
            beta: self.alpha,
        }
    }

    /// `E[p]`.
    #[must_use]
    pub fn mean(&self) -> f64 {
        self.alpha / self.total()
    }

    /// `E[1 - p]`.
    #[must_use]
    pub fn failure_mean(&self) -> f64 {
        self.beta / self.total()
    }

    /// `E[p^2]`.
    #[must_use]
    pub fn second_moment(&self) -> f64 {
        let r = self.total();
        self.alpha * (self.alpha + 1.0) / (r * (r + 1.0))
    }

    /// `E[(1 - p)^2]`.
    #[must_use]
    pub fn failure_second_moment(&self) -> f64 {
        let r = self.total();
        self.beta * (self.beta + 1.0) / (r * (r + 1.0))
    }

    /// `E[p (1 - p)]`.
    #[must_use]
    pub fn cross_moment(&self) -> f64 {
        let r = self.total();
        self.alpha * self.beta / (r * (r + 1.0))
    }

    /// `Var(p) = alpha beta / (r^2 (r + 1))`.
    #[must_use]
    pub fn variance(&self) -> f64 {
        self.cross_moment() / self.total()
    }

    /// Probability that the next trial succeeds.
    #[must_use]
    pub fn predictive_success(&self) -> f64 {
        self.mean()
    }
}

/// Trial and success counts for one component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCounts")]
pub struct ComponentCounts {
    trials: u64,
    successes: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCounts {
    trials: u64,
    successes: u64,
}

impl TryFrom<RawCounts> for ComponentCounts {
    type Error = Error;

    fn try_from(raw: RawCounts) -> Result<Self> {
        Self::new(raw.trials, raw.successes)
    }
}

impl ComponentCounts {
    pub fn new(trials: u64, successes: u64) -> Result<Self> {
        if successes > trials {
            return Err(Error::InvalidCounts { trials, successes });
        }
        Ok(Self { trials, successes })
    }

    #[must_use]
    pub const fn empty() -> Self {
        Self {
            trials: 0,
            successes: 0,
        }
    }

    #[must_use]
    pub const fn trials(&self) -> u64 {
        self.trials
    }

    #[must_use]
    pub const fn successes(&self) -> u64 {
        self.successes
    }

    #[must_use]
    pub const fn failures(&self) -> u64 {
        self.trials - self.successes
    }

    /// Counts with successes and failures exchanged.
    #[must_use]
    pub const fn swapped(&self) -> Self {
        Self {
            trials: self.trials,
            successes: self.trials - self.successes,
        }
    }

    /// Pools two disjoint batches of trials.
    #[must_use]
    pub const fn merged(&self, other: &Self) -> Self {
        Self {
            trials: self.trials + other.trials,
            successes: self.successes + other.successes,
        }
    }

    /// Appends a single outcome.
    #[must_use]
    pub const fn with_outcome(&self, success: bool) -> Self {
        Self {
            trials: self.trials + 1,
            successes: self.successes + success as u64,
        }
    }
}

/// Conjugate update: `(alpha + s, beta + t - s)`.
#[must_use]
pub fn posterior_params(prior: BetaParams, counts: ComponentCounts) -> BetaParams {
    BetaParams {
        alpha: prior.alpha + counts.successes as f64,
        beta: prior.beta + counts.failures() as f64,
    }
}

/// `E[p^s (1 - p)^t]` under `Beta(alpha, beta)`, i.e. `B(alpha+s, beta+t) / B(alpha, beta)`.
///
/// Small integer exponents use the exact rising-factorial ratio; everything
/// else goes through log-beta.
#[must_use]
pub fn beta_moment(params: BetaParams, s: f64, t: f64) -> f64 {
    debug_assert!(s >= 0.0 && t >= 0.0);
    let (a, b) = (params.alpha, params.beta);
    let is_small_int = |x: f64| x.fract() == 0.0 && x <= 64.0;
    if is_small_int(s) && is_small_int(t) {
        let r = a + b;
        let mut value = 1.0;
        let (s, t) = (s as u32, t as u32);
        for k in 0..s {
            value *= (a + f64::from(k)) / (r + f64::from(k));
        }
        for k in 0..t {
            value *= (b + f64::from(k)) / (r + f64::from(s + k));
        }
        return value;
    }
    (ln_beta(a + s, b + t) - ln_beta(a, b)).exp()
}

// ---------------------------------------------------------------------------
// System structure
// ---------------------------------------------------------------------------

/// How components combine inside a group and how groups combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// One group of components in parallel.
    Parallel,
    /// One group of components in series.
    Series,
    /// Groups in series, members of each group in parallel.
    ParallelSeries,
    /// Groups in parallel, members of each group in series.
    SeriesParallel,
}

/// Elementary combination rule for independent blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Series,
    Parallel,
}

impl Topology {
    #[must_use]
    pub const fn name(self) -> &'static str {
        match self {
            Self::Parallel => "parallel",
            Self::Series => "series",
            Self::ParallelSeries => "parallel-series",
            Self::SeriesParallel => "series-parallel",
        }
    }

    /// The topology obtained by exchanging reliabilities and failure probabilities.
    #[must_use]
    pub const fn dual(self) -> Self {
        match self {
            Self::Parallel => Self::Series,
            Self::Series => Self::Parallel,
            Self::ParallelSeries => Self::SeriesParallel,
            Self::SeriesParallel => Self::ParallelSeries,
        }
    }

    /// True for the single-group topologies.
    #[must_use]
    pub const fn is_flat(self) -> bool {
        matches!(self, Self::Parallel | Self::Series)
    }

    /// Rule applied to the members of a group.
    #[must_use]
    pub const fn inner(self) -> Combine {
        match self {
            Self::Parallel | Self::ParallelSeries => Combine::Parallel,
            Self::Series | Self::SeriesParallel => Combine::Series,
        }
    }

    /// Rule applied across groups. Flat topologies have a single group, so
    /// the choice is immaterial there.
    #[must_use]
    pub const fn outer(self) -> Combine {
        match self {
            Self::Parallel | Self::Series | Self::ParallelSeries => Combine::Series,
            Self::SeriesParallel => Combine::Parallel,
        }
    }
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A system topology together with per-component priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct SystemSpec {
    topology: Topology,
    groups: Vec<Vec<BetaParams>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    topology: Topology,
    groups: Vec<Vec<BetaParams>>,
}

impl TryFrom<RawSpec> for SystemSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.topology, raw.groups)
    }
}

impl SystemSpec {
    pub fn new(topology: Topology, groups: Vec<Vec<BetaParams>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Shape("system has no groups".into()));
        }
        if let Some(i) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Shape(format!("group {i} is empty")));
        }
        if topology.is_flat() && groups.len() != 1 {
            return Err(Error::Shape(format!(
                "{topology} system must have exactly one group, got {}",
                groups.len()
            )));
        }
        Ok(Self { topology, groups })
    }

    /// A flat parallel system.
    pub fn parallel(components: Vec<BetaParams>) -> Result<Self> {
        Self::new(Topology::Parallel, vec![components])
    }

    /// A flat series system.
    pub fn series(components: Vec<BetaParams>) -> Result<Self> {
        Self::new(Topology::Series, vec![components])
    }

    /// Parallel groups connected in series.
    pub fn parallel_series(groups: Vec<Vec<BetaParams>>) -> Result<Self> {
        Self::new(Topology::ParallelSeries, groups)
    }

    #[must_use]
    pub const fn topology(&self) -> Topology {
        self.topology
    }

    #[must_use]
    pub fn groups(&self) -> &[Vec<BetaParams>] {
        &self.groups
    }

    #[must_use]
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    #[must_use]
    pub fn component_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Components in group-major order.
    pub fn components(&self) -> impl Iterator<Item = &BetaParams> {
        self.groups.iter().flatten()
    }

    /// Exchanges the topology with its dual and swaps every prior.
    #[must_use]
    pub fn dualize(&self) -> Self {
        Self {
            topology: self.topology.dual(),
            groups: self
                .groups
                .iter()
                .map(|g| g.iter().map(BetaParams::swapped).collect())
                .collect(),
        }
    }

    /// Reliability of the system for fixed component reliabilities.
    pub fn reliability(&self, p: &[Vec<f64>]) -> Result<f64> {
        check_nested_shape(&self.group_sizes(), p, "reliability vector")?;
        let group_values = p.iter().map(|g| combine_values(self.topology.inner(), g));
        let group_values: Vec<f64> = group_values.collect();
        Ok(combine_values(self.topology.outer(), &group_values))
    }
}

fn combine_values(rule: Combine, values: &[f64]) -> f64 {
    match rule {
        Combine::Series => values.iter().product(),
        Combine::Parallel => 1.0 - values.iter().map(|p| 1.0 - p).product::<f64>(),
    }
}

pub(crate) fn check_nested_shape<T>(sizes: &[usize], data: &[Vec<T>], what: &str) -> Result<()> {
    if data.len() != sizes.len() || data.iter().zip(sizes).any(|(g, &n)| g.len() != n) {
        let found: Vec<usize> = data.iter().map(Vec::len).collect();
        return Err(Error::Shape(format!(
            "{what} has group sizes {found:?}, system has {sizes:?}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// Per-component counts, with the stage-one prefix kept separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLedger {
    counts: Vec<Vec<ComponentCounts>>,
    stage_one: Vec<Vec<ComponentCounts>>,
}

impl ObservationLedger {
    /// A ledger with no observations, shaped like `spec`.
    #[must_use]
    pub fn empty(spec: &SystemSpec) -> Self {
        let zeros: Vec<Vec<ComponentCounts>> = spec
            .groups()
            .iter()
            .map(|g| vec![ComponentCounts::empty(); g.len()])
            .collect();
        Self {
            counts: zeros.clone(),
            stage_one: zeros,
        }
    }

    /// A ledger whose counts were all observed in one batch (no stage-one prefix).
    #[must_use]
    pub fn from_counts(counts: Vec<Vec<ComponentCounts>>) -> Self {
        let stage_one = counts
            .iter()
            .map(|g| vec![ComponentCounts::empty(); g.len()])
            .collect();
        Self { counts, stage_one }
    }

    /// A ledger holding only stage-one data.
    #[must_use]
    pub fn from_stage_one(stage_one: Vec<Vec<ComponentCounts>>) -> Self {
        Self {
            counts: stage_one.clone(),
            stage_one,
        }
    }

    /// Combines stage-one data with the stage-two batch that followed it.
    pub fn from_stages(
        stage_one: Vec<Vec<ComponentCounts>>,
        stage_two: &[Vec<ComponentCounts>],
    ) -> Result<Self> {
        let sizes: Vec<usize> = stage_one.iter().map(Vec::len).collect();
        check_nested_shape(&sizes, stage_two, "stage-two counts")?;
        let counts = stage_one
            .iter()
            .zip(stage_two)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.merged(y)).collect())
            .collect();
        Ok(Self { counts, stage_one })
    }

    #[must_use]
    pub fn counts(&self) -> &[Vec<ComponentCounts>] {
        &self.counts
    }

    #[must_use]
    pub fn stage_one(&self) -> &[Vec<ComponentCounts>] {
        &self.stage_one
    }

    /// Returns the ledger with one more outcome on component `(group, index)`.
    pub fn with_outcome(&self, group: usize, index: usize, success: bool) -> Result<Self> {
        let mut next = self.clone();
        let len = next.counts.len();
        let g = next
            .counts
            .get_mut(group)
            .ok_or(Error::IndexOutOfRange { index: group, len })?;
        let len = g.len();
        let c = g.get_mut(index).ok_or(Error::IndexOutOfRange { index, len })?;
        *c = c.with_outcome(success);
        Ok(next)
    }

    /// Successes and failures exchanged everywhere.
    #[must_use]
    pub fn dualize(&self) -> Self {
        let swap = |v: &Vec<Vec<ComponentCounts>>| {
            v.iter()
                .map(|g| g.iter().map(ComponentCounts::swapped).collect())
                .collect()
        };
        Self {
            counts: swap(&self.counts),
            stage_one: swap(&self.stage_one),
        }
    }

    /// Checks that the ledger matches `spec` and that stage-one data is a prefix of the totals.
    pub fn check(&self, spec: &SystemSpec) -> Result<()> {
        let sizes = spec.group_sizes();
        check_nested_shape(&sizes, &self.counts, "ledger")?;
        check_nested_shape(&sizes, &self.stage_one, "stage-one ledger")?;
        let prefix_ok = self
            .counts
            .iter()
            .flatten()
            .zip(self.stage_one.iter().flatten())
            .all(|(all, first)| {
                first.trials <= all.trials
                    && first.successes <= all.successes
                    && first.failures() <= all.failures()
            });
        if !prefix_ok {
            return Err(Error::Shape("stage-one counts exceed total counts".into()));
        }
        Ok(())
    }

    /// Posterior parameters for every component.
    pub fn posteriors(&self, spec: &SystemSpec) -> Result<Vec<Vec<BetaParams>>> {
        self.check(spec)?;
        Ok(spec
            .groups()
            .iter()
            .zip(&self.counts)
            .map(|(g, c)| g.iter().zip(c).map(|(&p, &n)| posterior_params(p, n)).collect())
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Block moments
// ---------------------------------------------------------------------------

/// Mean and variance of the reliability of an independent block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    #[must_use]
    pub fn of_component(params: BetaParams) -> Self {
        Self {
            mean: params.mean(),
            variance: params.variance(),
        }
    }

    #[must_use]
    pub fn second_moment(&self) -> f64 {
        self.mean * self.mean + self.variance
    }

    /// Moments of the complement `1 - X`.
    #[must_use]
    pub fn complement(&self) -> Self {
        Self {
            mean: 1.0 - self.mean,
            variance: self.variance,
        }
    }

    /// Moments of `X Y` for independent `X`, `Y`.
    ///
    /// `Var(XY) = Var(X) E[Y^2] + E[X]^2 Var(Y)`, which keeps every term
    /// non-negative instead of differencing two second moments.
    #[must_use]
    pub fn product(&self, other: &Self) -> Self {
        Self {
            mean: self.mean * other.mean,
            variance: self.variance * other.second_moment()
                + self.mean * self.mean * other.variance,
        }
    }

    /// Combines independent blocks under `rule`.
    pub fn combine<I: IntoIterator<Item = Self>>(rule: Combine, blocks: I) -> Self {
        let one = Self {
            mean: 1.0,
            variance: 0.0,
        };
        match rule {
            Combine::Series => blocks.into_iter().fold(one, |acc, b| acc.product(&b)),
            Combine::Parallel => blocks
                .into_iter()
                .fold(one, |acc, b| acc.product(&b.complement()))
                .complement(),
        }
    }
}

/// Per-group moments from component posteriors.
#[must_use]
pub fn group_moments(topology: Topology, posteriors: &[Vec<BetaParams>]) -> Vec<Moments> {
    posteriors
        .iter()
        .map(|g| Moments::combine(topology.inner(), g.iter().copied().map(Moments::of_component)))
        .collect()
}

/// Posterior mean and variance of the system reliability.
pub fn system_moments(spec: &SystemSpec, ledger: &ObservationLedger) -> Result<Moments> {
    let post = ledger.posteriors(spec)?;
    let groups = group_moments(spec.topology(), &post);
    Ok(Moments::combine(spec.topology().outer(), groups))
}

/// Posterior-mean plug-in estimate of the system reliability.
///
/// By independence this equals the posterior mean of the system reliability.
pub fn estimate_reliability(spec: &SystemSpec, ledger: &ObservationLedger) -> Result<f64> {
    system_moments(spec, ledger).map(|m| m.mean)
}
