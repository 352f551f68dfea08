//! Posterior variances, allocation weights and asymptotic risk constants.
//!
//! For a parallel group with component reliabilities `p_j` and `q_j = 1 - p_j`,
//! the per-component risk driver is `V_i = p_i q_i prod_{j != i} q_j^2`, and
//! `U_i = E[V_i | data]`. For a series of parallel subsystems with subsystem
//! reliabilities `P_l`, the subsystem driver is `Z_i = prod_{l != i} P_l^2`
//! with `w_i = E[Z_i | data]`, and `B_i = E[(sum_j sqrt(V_ij))^2]` is the
//! prior rate constant of subsystem `i`.

use crate::error::{Error, Result};
use crate::model::{
    beta_moment, posterior_params, system_moments, BetaParams, ComponentCounts,
    ObservationLedger, SystemSpec, Topology,
};

/// Allocation weights for a parallel-series system (a flat parallel system is
/// treated as a single subsystem).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskWeights {
    /// `U_ij` per subsystem and component.
    pub u: Vec<Vec<f64>>,
    /// `w_i` per subsystem.
    pub w: Vec<f64>,
    /// `B_i` per subsystem.
    pub b: Vec<f64>,
}

impl RiskWeights {
    pub fn compute(spec: &SystemSpec, ledger: &ObservationLedger) -> Result<Self> {
        require_parallel_groups(spec)?;
        ledger.check(spec)?;
        let u = spec
            .groups()
            .iter()
            .zip(ledger.counts())
            .map(|(priors, counts)| {
                (0..priors.len())
                    .map(|i| u_weight(priors, counts, i))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let w = (0..spec.groups().len())
            .map(|i| w_weight_unchecked(spec, ledger, i, WFormula::Derived))
            .collect();
        let b = spec.groups().iter().map(|g| b_constant(g)).collect();
        Ok(Self { u, w, b })
    }
}

fn require_parallel_groups(spec: &SystemSpec) -> Result<()> {
    match spec.topology() {
        Topology::Parallel | Topology::ParallelSeries => Ok(()),
        other => Err(Error::Topology {
            expected: "parallel or parallel-series",
            found: other.name(),
        }),
    }
}

fn require_parallel_series(spec: &SystemSpec) -> Result<()> {
    match spec.topology() {
        Topology::ParallelSeries => Ok(()),
        other => Err(Error::Topology {
            expected: "parallel-series",
            found: other.name(),
        }),
    }
}

/// `U_i = E[p_i q_i prod_{j != i} q_j^2 | data]` for one parallel group.
pub fn u_weight(priors: &[BetaParams], counts: &[ComponentCounts], i: usize) -> Result<f64> {
    if priors.len() != counts.len() {
        return Err(Error::Shape(format!(
            "{} priors but {} count entries",
            priors.len(),
            counts.len()
        )));
    }
    if i >= priors.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: priors.len(),
        });
    }
    let weight = priors
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (&prior, &c))| {
            let post = posterior_params(prior, c);
            if j == i {
                post.cross_moment()
            } else {
                post.failure_second_moment()
            }
        })
        .product();
    Ok(weight)
}

/// Exact posterior variance of the system reliability.
pub fn posterior_variance(spec: &SystemSpec, ledger: &ObservationLedger) -> Result<f64> {
    system_moments(spec, ledger).map(|m| m.variance)
}

/// `sum_i U_i / (m_i + r_i)`: the first-order part of a parallel group's posterior variance.
pub fn leading_risk_term(priors: &[BetaParams], counts: &[ComponentCounts]) -> Result<f64> {
    (0..priors.len())
        .map(|i| {
            let size = counts[i].trials() as f64 + priors[i].total();
            u_weight(priors, counts, i).map(|u| u / size)
        })
        .sum()
}

/// Which algebraic form of the subsystem weight to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WFormula {
    /// `prod_{l != i} (1 - 2 prod_j b'/r' + prod_j b'(b'+1)/(r'(r'+1)))`,
    /// the posterior expectation of `Z_i`.
    #[default]
    Derived,
    /// The historical variant whose middle term divides `b'` by `r'(r'+1)`.
    /// Not a posterior expectation; kept for comparison only.
    Printed,
}

/// `w_i = E[prod_{l != i} P_l^2 | data]` for a parallel-series system.
pub fn w_weight(spec: &SystemSpec, ledger: &ObservationLedger, i: usize) -> Result<f64> {
    w_weight_with(spec, ledger, i, WFormula::Derived)
}

pub fn w_weight_with(
    spec: &SystemSpec,
    ledger: &ObservationLedger,
    i: usize,
    formula: WFormula,
) -> Result<f64> {
    require_parallel_series(spec)?;
    ledger.check(spec)?;
    let n = spec.groups().len();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    Ok(w_weight_unchecked(spec, ledger, i, formula))
}

fn w_weight_unchecked(
    spec: &SystemSpec,
    ledger: &ObservationLedger,
    i: usize,
    formula: WFormula,
) -> f64 {
    spec.groups()
        .iter()
        .zip(ledger.counts())
        .enumerate()
        .filter(|&(l, _)| l != i)
        .map(|(_, (priors, counts))| {
            let post: Vec<BetaParams> = priors
                .iter()
                .zip(counts)
                .map(|(&p, &c)| posterior_params(p, c))
                .collect();
            let q1: f64 = match formula {
                WFormula::Derived => post.iter().map(BetaParams::failure_mean).product(),
                WFormula::Printed => post
                    .iter()
                    .map(|b| b.beta() / (b.total() * (b.total() + 1.0)))
                    .product(),
            };
            let q2: f64 = post.iter().map(BetaParams::failure_second_moment).product();
            1.0 - 2.0 * q1 + q2
        })
        .product()
}

/// `E[(sum_j sqrt(V_j))^2]` under the prior of one parallel group.
///
/// Expanding the square under independence gives
/// `sum_j E[V_j] + sum_{j != k} E[sqrt(V_j V_k)]` with
/// `E[V_j] = M_j(1,1) prod_{l != j} M_l(0,2)` and
/// `E[sqrt(V_j V_k)] = M_j(1/2,3/2) M_k(1/2,3/2) prod_{l != j,k} M_l(0,2)`,
/// where `M(s,t) = E[p^s (1-p)^t]`.
#[must_use]
pub fn b_constant(priors: &[BetaParams]) -> f64 {
    let q2: Vec<f64> = priors.iter().map(|&p| beta_moment(p, 0.0, 2.0)).collect();
    let pq: Vec<f64> = priors.iter().map(|&p| beta_moment(p, 1.0, 1.0)).collect();
    let half: Vec<f64> = priors.iter().map(|&p| beta_moment(p, 0.5, 1.5)).collect();
    let n = priors.len();
    let mut total = 0.0;
    for j in 0..n {
        let rest: f64 = (0..n).filter(|&l| l != j).map(|l| q2[l]).product();
        total += pq[j] * rest;
        for k in (0..n).filter(|&k| k != j) {
            let rest: f64 = (0..n).filter(|&l| l != j && l != k).map(|l| q2[l]).product();
            total += half[j] * half[k] * rest;
        }
    }
    total
}

/// Limit of `m R_m` for the two-stage scheme on a parallel system.
#[must_use]
pub fn asymptotic_constant_parallel(priors: &[BetaParams]) -> f64 {
    b_constant(priors)
}

/// Limit of `m R_m` for the hybrid scheme on a parallel-series system:
/// `E[(sum_i sqrt(B_i Z_i))^2]`.
pub fn asymptotic_constant_hybrid(spec: &SystemSpec) -> Result<f64> {
    require_parallel_series(spec)?;
    let b: Vec<f64> = spec.groups().iter().map(|g| b_constant(g)).collect();
    // Prior moments of each subsystem reliability.
    let (m1, m2): (Vec<f64>, Vec<f64>) = spec
        .groups()
        .iter()
        .map(|g| {
            let q1: f64 = g.iter().map(BetaParams::failure_mean).product();
            let q2: f64 = g.iter().map(BetaParams::failure_second_moment).product();
            (1.0 - q1, 1.0 - 2.0 * q1 + q2)
        })
        .unzip();
    let n = b.len();
    let mut total = 0.0;
    for i in 0..n {
        let z: f64 = (0..n).filter(|&l| l != i).map(|l| m2[l]).product();
        total += b[i] * z;
        for k in (0..n).filter(|&k| k != i) {
            let rest: f64 = (0..n).filter(|&l| l != i && l != k).map(|l| m2[l]).product();
            total += (b[i] * b[k]).sqrt() * m1[i] * m1[k] * rest;
        }
    }
    Ok(total)
}

/// The asymptotic constant matching the adaptive scheme for `spec`'s
/// topology; series and series-parallel systems go through their duals.
pub fn asymptotic_constant(spec: &SystemSpec) -> Result<f64> {
    match spec.topology() {
        Topology::Parallel => Ok(asymptotic_constant_parallel(&spec.groups()[0])),
        Topology::Series => Ok(asymptotic_constant_parallel(&spec.dualize().groups()[0])),
        Topology::ParallelSeries => asymptotic_constant_hybrid(spec),
        Topology::SeriesParallel => asymptotic_constant_hybrid(&spec.dualize()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComponentCounts as C;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn beta(a: f64, b: f64) -> BetaParams {
        BetaParams::new(a, b).unwrap()
    }

    fn c(t: u64, s: u64) -> C {
        C::new(t, s).unwrap()
    }

    const U: BetaParams = BetaParams::uniform();

    #[test]
    fn u_weight_examples() {
        assert_relative_eq!(u_weight(&[U], &[C::empty()], 0).unwrap(), 1.0 / 6.0);
        let none = [C::empty(), C::empty()];
        let u1 = u_weight(&[U, U], &none, 0).unwrap();
        assert_relative_eq!(u1, 1.0 / 18.0, max_relative = 1e-15);
        assert_eq!(u1, u_weight(&[U, U], &none, 1).unwrap());
        assert!(matches!(
            u_weight(&[U, U], &none, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn u_weight_uses_failure_second_moment_of_other_components() {
        // Component 1 failed all 10 trials (Beta(1,11)), component 2 passed all (Beta(11,1)).
        let data = [c(10, 0), c(10, 10)];
        let u1 = u_weight(&[U, U], &data, 0).unwrap();
        let u2 = u_weight(&[U, U], &data, 1).unwrap();
        assert_relative_eq!(u1, (11.0 / 156.0) * (2.0 / 156.0), max_relative = 1e-15);
        assert_relative_eq!(u2, (11.0 / 156.0) * (132.0 / 156.0), max_relative = 1e-15);
    }

    #[test]
    fn posterior_variance_examples() {
        let one = SystemSpec::parallel(vec![U]).unwrap();
        let empty = ObservationLedger::empty(&one);
        assert_relative_eq!(posterior_variance(&one, &empty).unwrap(), 1.0 / 12.0);

        let two = SystemSpec::parallel(vec![U, U]).unwrap();
        let v = posterior_variance(&two, &ObservationLedger::empty(&two)).unwrap();
        assert_relative_eq!(v, 7.0 / 144.0, max_relative = 1e-14);

        let data = ObservationLedger::from_counts(vec![vec![c(1, 1)]]);
        assert_relative_eq!(posterior_variance(&one, &data).unwrap(), 1.0 / 18.0, max_relative = 1e-14);
    }

    #[test]
    fn w_weight_examples() {
        let spec = SystemSpec::parallel_series(vec![vec![U], vec![U]]).unwrap();
        let ledger = ObservationLedger::empty(&spec);
        let w1 = w_weight(&spec, &ledger, 0).unwrap();
        assert_relative_eq!(w1, 1.0 / 3.0, max_relative = 1e-15);
        assert_eq!(w1, w_weight(&spec, &ledger, 1).unwrap());

        let single = SystemSpec::parallel_series(vec![vec![U, beta(2.0, 5.0)]]).unwrap();
        assert_eq!(w_weight(&single, &ObservationLedger::empty(&single), 0).unwrap(), 1.0);

        let flat = SystemSpec::parallel(vec![U]).unwrap();
        assert!(matches!(
            w_weight(&flat, &ObservationLedger::empty(&flat), 0),
            Err(Error::Topology { .. })
        ));
    }

    #[test]
    fn w_weight_symmetric_data() {
        let spec = SystemSpec::parallel_series(vec![vec![U, U], vec![U, U]]).unwrap();
        let data = vec![vec![c(4, 3), c(4, 1)], vec![c(4, 1), c(4, 3)]];
        let ledger = ObservationLedger::from_counts(data);
        assert_relative_eq!(
            w_weight(&spec, &ledger, 0).unwrap(),
            w_weight(&spec, &ledger, 1).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn printed_w_form_differs_from_posterior_expectation() {
        let spec = SystemSpec::parallel_series(vec![vec![U], vec![U]]).unwrap();
        let ledger = ObservationLedger::from_counts(vec![vec![c(3, 3)], vec![c(3, 0)]]);
        let derived = w_weight(&spec, &ledger, 0).unwrap();
        let printed = w_weight_with(&spec, &ledger, 0, WFormula::Printed).unwrap();
        assert_relative_eq!(derived, 1.0 / 15.0, max_relative = 1e-14);
        // 1 + 20/30 - 2 * 4/30
        assert_relative_eq!(printed, 1.0 + 2.0 / 3.0 - 8.0 / 30.0, max_relative = 1e-14);
    }

    #[test]
    fn b_constant_examples() {
        assert_relative_eq!(b_constant(&[U]), 1.0 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(b_constant(&[U, U]), 1.0 / 9.0 + PI * PI / 128.0, max_relative = 1e-12);
        let p = beta(2.5, 0.7);
        assert_relative_eq!(b_constant(&[p]), beta_moment(p, 1.0, 1.0), max_relative = 1e-15);
        let r = p.total();
        assert_relative_eq!(b_constant(&[p]), 2.5 * 0.7 / (r * (r + 1.0)), max_relative = 1e-14);
    }

    #[test]
    fn parallel_constant_is_permutation_symmetric() {
        let (a, b) = (beta(2.0, 1.0), beta(1.0, 3.0));
        assert_relative_eq!(
            asymptotic_constant_parallel(&[a, b]),
            asymptotic_constant_parallel(&[b, a]),
            max_relative = 1e-15
        );
    }

    #[test]
    fn hybrid_constant_examples() {
        let g = vec![U, beta(2.0, 3.0)];
        let one = SystemSpec::parallel_series(vec![g.clone()]).unwrap();
        assert_relative_eq!(asymptotic_constant_hybrid(&one).unwrap(), b_constant(&g));

        let two = SystemSpec::parallel_series(vec![vec![U], vec![U]]).unwrap();
        assert_relative_eq!(asymptotic_constant_hybrid(&two).unwrap(), 7.0 / 36.0, max_relative = 1e-14);

        let x = SystemSpec::parallel_series(vec![vec![U, U], vec![beta(2.0, 1.0)], vec![beta(1.0, 3.0)]])
            .unwrap();
        let y = SystemSpec::parallel_series(vec![vec![beta(1.0, 3.0)], vec![U, U], vec![beta(2.0, 1.0)]])
            .unwrap();
        assert_relative_eq!(
            asymptotic_constant_hybrid(&x).unwrap(),
            asymptotic_constant_hybrid(&y).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn constant_dispatch_uses_duals() {
        let series = SystemSpec::series(vec![beta(2.0, 1.0), beta(1.0, 3.0)]).unwrap();
        assert_eq!(
            asymptotic_constant(&series).unwrap(),
            asymptotic_constant_parallel(&[beta(1.0, 2.0), beta(3.0, 1.0)])
        );
    }

    #[test]
    fn risk_weights_for_flat_parallel() {
        let spec = SystemSpec::parallel(vec![U, U]).unwrap();
        let w = RiskWeights::compute(&spec, &ObservationLedger::empty(&spec)).unwrap();
        assert_eq!(w.w, vec![1.0]);
        assert_relative_eq!(w.u[0][0], 1.0 / 18.0, max_relative = 1e-15);
        assert_relative_eq!(w.b[0], b_constant(&[U, U]));
    }

    fn arb_group(max: usize) -> impl Strategy<Value = (Vec<BetaParams>, Vec<C>)> {
        prop::collection::vec(
            (0.2f64..6.0, 0.2f64..6.0, (0u64..40).prop_flat_map(|t| (Just(t), 0..=t))),
            1..=max,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(a, b, (t, s))| (beta(a, b), c(t, s)))
                .unzip()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn u_weight_is_one_step_martingale((priors, counts) in arb_group(4), i in 0usize..4, k in 0usize..4) {
            let n = priors.len();
            let (i, k) = (i % n, k % n);
            let before = u_weight(&priors, &counts, i).unwrap();
            let pred = posterior_params(priors[k], counts[k]).predictive_success();
            let mut next = counts.clone();
            next[k] = counts[k].with_outcome(true);
            let up = u_weight(&priors, &next, i).unwrap();
            next[k] = counts[k].with_outcome(false);
            let down = u_weight(&priors, &next, i).unwrap();
            prop_assert!((pred * up + (1.0 - pred) * down - before).abs() <= 1e-12);
        }

        #[test]
        fn w_weight_is_one_step_martingale(
            groups in prop::collection::vec(arb_group(3), 1..4),
            i in 0usize..4, g in 0usize..4, j in 0usize..4,
        ) {
            let (priors, data): (Vec<_>, Vec<_>) = groups.into_iter().unzip();
            let spec = SystemSpec::parallel_series(priors).unwrap();
            let ledger = ObservationLedger::from_counts(data);
            let n = spec.groups().len();
            let (i, g) = (i % n, g % n);
            let j = j % spec.groups()[g].len();
            let before = w_weight(&spec, &ledger, i).unwrap();
            let pred = posterior_params(spec.groups()[g][j], ledger.counts()[g][j]).predictive_success();
            let up = w_weight(&spec, &ledger.with_outcome(g, j, true).unwrap(), i).unwrap();
            let down = w_weight(&spec, &ledger.with_outcome(g, j, false).unwrap(), i).unwrap();
            prop_assert!((pred * up + (1.0 - pred) * down - before).abs() <= 1e-12);
        }

        #[test]
        fn lagrange_residual_is_second_order((priors, counts) in arb_group(5)) {
            prop_assume!(priors.iter().zip(&counts).all(|(p, c)| p.total() + c.trials() as f64 >= 1.0));
            let spec = SystemSpec::parallel(priors.clone()).unwrap();
            let ledger = ObservationLedger::from_counts(vec![counts.clone()]);
            let residual = posterior_variance(&spec, &ledger).unwrap()
                - leading_risk_term(&priors, &counts).unwrap();
            let sizes: Vec<f64> = priors.iter().zip(&counts).map(|(p, c)| p.total() + c.trials() as f64).collect();
            let mut bound = 0.0;
            for a in 0..sizes.len() {
                for b in a + 1..sizes.len() {
                    bound += 1.0 / (sizes[a] * sizes[b]);
                }
            }
            prop_assert!(residual.abs() <= bound + 1e-15);
        }

        #[test]
        fn weights_strictly_positive((priors, counts) in arb_group(4)) {
            for i in 0..priors.len() {
                prop_assert!(u_weight(&priors, &counts, i).unwrap() > 0.0);
            }
            prop_assert!(b_constant(&priors) > 0.0);
        }

        #[test]
        fn constant_dominates_diagonal_terms((priors, _) in arb_group(4)) {
            let n = priors.len();
            let diag: f64 = (0..n)
                .map(|j| {
                    beta_moment(priors[j], 1.0, 1.0)
                        * (0..n).filter(|&l| l != j).map(|l| beta_moment(priors[l], 0.0, 2.0)).product::<f64>()
                })
                .sum();
            prop_assert!(b_constant(&priors) >= diag);
        }
    }
}
