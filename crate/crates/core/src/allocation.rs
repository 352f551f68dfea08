//! Two-stage and hybrid two-stage allocation of a fixed sample budget.
//!
//! Two-stage (parallel systems): test `L = floor(sqrt(m))` units of every
//! component, estimate the weights `U_iL`, and split the budget in proportion
//! to `sqrt(U_iL)` with every component kept at `L` or more.
//!
//! Hybrid (parallel-series systems): test `L~ = floor(sqrt(L))` units of every
//! component, split the budget across subsystems in proportion to
//! `sqrt(B_i w~_i)` with floor `L`, then split each subsystem budget across
//! its components with the two-stage rule and floor `L~`.
//!
//! In both cases the first `n - 1` shares are floored and the last one takes
//! the remainder. If the remainder falls below its floor, the largest other
//! share that is above its own floor gives up one unit at a time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BetaParams, ComponentCounts, ObservationLedger, SystemSpec, Topology};
use crate::risk::{b_constant, u_weight, w_weight};

/// Sample sizes chosen by a scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Total budget `m`.
    #[serde(rename = "m")]
    pub total: u64,
    /// Stage-one size `L` (zero for fixed designs).
    #[serde(rename = "L")]
    pub stage_one: u64,
    /// Component-level stage-one size `L~` (hybrid only).
    #[serde(rename = "L_tilde", default, skip_serializing_if = "Option::is_none")]
    pub stage_one_component: Option<u64>,
    /// Per-subsystem sizes `m_i`; for flat systems these are the component sizes.
    #[serde(rename = "m_i")]
    pub per_subsystem: Vec<u64>,
    /// Per-component sizes `m_ij` for grouped systems.
    #[serde(rename = "m_ij", default, skip_serializing_if = "Option::is_none")]
    pub per_component: Option<Vec<Vec<u64>>>,
}

impl AllocationPlan {
    /// Component sample sizes in group-major order, shaped like the system.
    #[must_use]
    pub fn component_sizes(&self) -> Vec<Vec<u64>> {
        self.per_component
            .clone()
            .unwrap_or_else(|| vec![self.per_subsystem.clone()])
    }

    /// Checks the bookkeeping invariants of the plan.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Shape(msg));
        if self.per_subsystem.iter().sum::<u64>() != self.total {
            return fail(format!("m_i {:?} do not sum to m = {}", self.per_subsystem, self.total));
        }
        if self.per_subsystem.iter().any(|&x| x < self.stage_one) {
            return fail(format!("some m_i below L = {}", self.stage_one));
        }
        if let Some(groups) = &self.per_component {
            if groups.len() != self.per_subsystem.len() {
                return fail("m_ij and m_i disagree on the number of subsystems".into());
            }
            let floor = self.stage_one_component.unwrap_or(0);
            for (g, &mi) in groups.iter().zip(&self.per_subsystem) {
                if g.iter().sum::<u64>() != mi {
                    return fail(format!("m_ij {g:?} do not sum to m_i = {mi}"));
                }
                if g.iter().any(|&x| x < floor) {
                    return fail(format!("some m_ij below L~ = {floor}"));
                }
            }
        }
        Ok(())
    }
}

/// `L = floor(sqrt(m))`.
#[must_use]
pub fn stage_one_size(m: u64) -> u64 {
    m.isqrt()
}

/// Unrounded shares `m * x_i / sum_j x_j`.
#[must_use]
pub fn predictor(total: u64, sqrt_weights: &[f64]) -> Vec<f64> {
    let sum: f64 = sqrt_weights.iter().sum();
    sqrt_weights
        .iter()
        .map(|&x| total as f64 * x / sum)
        .collect()
}

/// Floors the first `n - 1` predictor shares at `floors[i]`, gives the
/// remainder to the last entry and repairs it if it lands below its floor.
pub fn corrected_split(total: u64, sqrt_weights: &[f64], floors: &[u64]) -> Result<Vec<u64>> {
    debug_assert_eq!(sqrt_weights.len(), floors.len());
    let n = floors.len();
    let needed: u64 = floors.iter().sum();
    if n == 0 || needed > total {
        return Err(Error::BudgetTooSmall(format!(
            "budget {total} cannot cover minimum sizes {floors:?}"
        )));
    }
    let shares = predictor(total, sqrt_weights);
    let mut sizes: Vec<u64> = shares[..n - 1]
        .iter()
        .zip(floors)
        .map(|(&s, &f)| (s.floor() as u64).max(f))
        .collect();
    let used: u64 = sizes.iter().sum();
    let mut last = total as i128 - used as i128;
    let last_floor = i128::from(floors[n - 1]);
    while last < last_floor {
        let donor = sizes
            .iter()
            .zip(floors)
            .enumerate()
            .filter(|(_, (&s, &f))| s > f)
            .max_by(|(i, (a, _)), (j, (b, _))| a.cmp(b).then(j.cmp(i)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::BudgetTooSmall(format!("cannot raise last share to {last_floor}")))?;
        sizes[donor] -= 1;
        last += 1;
    }
    sizes.push(last as u64);
    Ok(sizes)
}

fn check_stage_one(counts: &[ComponentCounts], expected: u64) -> Result<()> {
    if let Some(c) = counts.iter().find(|c| c.trials() != expected) {
        return Err(Error::Shape(format!(
            "stage-one trials must all equal {expected}, found {}",
            c.trials()
        )));
    }
    Ok(())
}

/// Two-stage allocation for a flat parallel system.
pub fn two_stage_allocate(
    m: u64,
    priors: &[BetaParams],
    stage_one_data: &[ComponentCounts],
) -> Result<AllocationPlan> {
    let n = priors.len() as u64;
    if priors.len() != stage_one_data.len() {
        return Err(Error::Shape(format!(
            "{} priors but {} stage-one entries",
            priors.len(),
            stage_one_data.len()
        )));
    }
    let l = stage_one_size(m);
    if m == 0 || n * l > m {
        return Err(Error::BudgetTooSmall(format!(
            "n L = {n} x {l} exceeds m = {m}"
        )));
    }
    check_stage_one(stage_one_data, l)?;
    let sqrt_u = (0..priors.len())
        .map(|i| u_weight(priors, stage_one_data, i).map(f64::sqrt))
        .collect::<Result<Vec<_>>>()?;
    let sizes = corrected_split(m, &sqrt_u, &vec![l; priors.len()])?;
    Ok(AllocationPlan {
        total: m,
        stage_one: l,
        stage_one_component: None,
        per_subsystem: sizes,
        per_component: None,
    })
}

/// Hybrid two-stage allocation for a parallel-series system.
pub fn hybrid_allocate(
    m: u64,
    spec: &SystemSpec,
    stage_one_data: &[Vec<ComponentCounts>],
) -> Result<AllocationPlan> {
    if spec.topology() != Topology::ParallelSeries {
        return Err(Error::Topology {
            expected: "parallel-series",
            found: spec.topology().name(),
        });
    }
    let ledger = ObservationLedger::from_stage_one(stage_one_data.to_vec());
    ledger.check(spec)?;
    let l = stage_one_size(m);
    let lt = stage_one_size(l);
    let n = spec.groups().len() as u64;
    let components = spec.component_count() as u64;
    if m == 0 || n * l > m || components * lt > m {
        return Err(Error::BudgetTooSmall(format!(
            "m = {m} cannot cover n L = {n} x {l} or sum n_i L~ = {components} x {lt}"
        )));
    }
    for g in stage_one_data {
        check_stage_one(g, lt)?;
    }

    let sqrt_bw = (0..spec.groups().len())
        .map(|i| {
            let w = w_weight(spec, &ledger, i)?;
            Ok((b_constant(&spec.groups()[i]) * w).sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    // A subsystem must also hold L~ units for each of its components.
    let floors: Vec<u64> = spec
        .groups()
        .iter()
        .map(|g| l.max(g.len() as u64 * lt))
        .collect();
    let per_subsystem = corrected_split(m, &sqrt_bw, &floors)?;

    let per_component = spec
        .groups()
        .iter()
        .zip(stage_one_data)
        .zip(&per_subsystem)
        .map(|((priors, counts), &mi)| {
            let sqrt_u = (0..priors.len())
                .map(|j| u_weight(priors, counts, j).map(f64::sqrt))
                .collect::<Result<Vec<_>>>()?;
            corrected_split(mi, &sqrt_u, &vec![lt; priors.len()])
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AllocationPlan {
        total: m,
        stage_one: l,
        stage_one_component: Some(lt),
        per_subsystem,
        per_component: Some(per_component),
    })
}

/// Swaps successes and failures in every count.
#[must_use]
pub fn dualize_counts(counts: &[Vec<ComponentCounts>]) -> Vec<Vec<ComponentCounts>> {
    counts
        .iter()
        .map(|g| g.iter().map(ComponentCounts::swapped).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Schemes
// ---------------------------------------------------------------------------

/// A sampling design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Two-stage design for parallel systems (series systems via duality).
    TwoStage,
    /// Hybrid two-stage design for parallel-series systems (series-parallel via duality).
    Hybrid,
    /// Non-adaptive equal split; the first `m mod N` components get one extra unit.
    FixedEqual,
    /// Non-adaptive split given per component in group-major order.
    FixedCustom(Vec<u64>),
}

impl Scheme {
    #[must_use]
    pub fn name(&self) -> &'static str {
        match self {
            Self::TwoStage => "two-stage",
            Self::Hybrid => "hybrid",
            Self::FixedEqual => "fixed-equal",
            Self::FixedCustom(_) => "fixed-custom",
        }
    }

    #[must_use]
    pub fn is_adaptive(&self) -> bool {
        matches!(self, Self::TwoStage | Self::Hybrid)
    }

    /// Checks topology compatibility and the budget preconditions for `m`.
    pub fn check(&self, spec: &SystemSpec, m: u64) -> Result<()> {
        let topo = spec.topology();
        match self {
            Self::TwoStage => {
                if !topo.is_flat() {
                    return Err(Error::Topology {
                        expected: "parallel or series",
                        found: topo.name(),
                    });
                }
                let (n, l) = (spec.component_count() as u64, stage_one_size(m));
                if m == 0 || n * l > m {
                    return Err(Error::BudgetTooSmall(format!("n L = {n} x {l} exceeds m = {m}")));
                }
            }
            Self::Hybrid => {
                if topo.is_flat() {
                    return Err(Error::Topology {
                        expected: "parallel-series or series-parallel",
                        found: topo.name(),
                    });
                }
                let l = stage_one_size(m);
                let lt = stage_one_size(l);
                let floors: u64 = spec
                    .groups()
                    .iter()
                    .map(|g| l.max(g.len() as u64 * lt))
                    .sum();
                if m == 0 || floors > m {
                    return Err(Error::BudgetTooSmall(format!(
                        "m = {m} cannot cover subsystem minimum sizes totalling {floors}"
                    )));
                }
            }
            Self::FixedEqual => {}
            Self::FixedCustom(sizes) => {
                if sizes.len() != spec.component_count() {
                    return Err(Error::Config(format!(
                        "fixed-custom allocation has {} entries, system has {} components",
                        sizes.len(),
                        spec.component_count()
                    )));
                }
                let sum: u64 = sizes.iter().sum();
                if sum != m {
                    return Err(Error::Config(format!(
                        "fixed-custom allocation sums to {sum}, expected m = {m}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stage-one trials per component.
    pub fn stage_one_sizes(&self, spec: &SystemSpec, m: u64) -> Result<Vec<Vec<u64>>> {
        self.check(spec, m)?;
        let size = match self {
            Self::TwoStage => stage_one_size(m),
            Self::Hybrid => stage_one_size(stage_one_size(m)),
            Self::FixedEqual | Self::FixedCustom(_) => 0,
        };
        Ok(spec.groups().iter().map(|g| vec![size; g.len()]).collect())
    }

    /// Computes the plan given stage-one data (ignored by fixed designs).
    pub fn allocate(
        &self,
        spec: &SystemSpec,
        m: u64,
        stage_one: &[Vec<ComponentCounts>],
    ) -> Result<AllocationPlan> {
        self.check(spec, m)?;
        match self {
            Self::TwoStage => {
                let (spec, data) = match spec.topology() {
                    Topology::Series => (spec.dualize(), dualize_counts(stage_one)),
                    _ => (spec.clone(), stage_one.to_vec()),
                };
                let first = data
                    .first()
                    .ok_or_else(|| Error::Shape("stage-one data has no groups".into()))?;
                two_stage_allocate(m, &spec.groups()[0], first)
            }
            Self::Hybrid => match spec.topology() {
                Topology::SeriesParallel => {
                    hybrid_allocate(m, &spec.dualize(), &dualize_counts(stage_one))
                }
                _ => hybrid_allocate(m, spec, stage_one),
            },
            Self::FixedEqual => {
                let n = spec.component_count() as u64;
                let (base, extra) = (m / n, m % n);
                let flat: Vec<u64> = (0..n).map(|k| base + u64::from(k < extra)).collect();
                Ok(fixed_plan(spec, m, &flat))
            }
            Self::FixedCustom(sizes) => Ok(fixed_plan(spec, m, sizes)),
        }
    }
}

fn fixed_plan(spec: &SystemSpec, m: u64, flat: &[u64]) -> AllocationPlan {
    if spec.topology().is_flat() {
        return AllocationPlan {
            total: m,
            stage_one: 0,
            stage_one_component: None,
            per_subsystem: flat.to_vec(),
            per_component: None,
        };
    }
    let mut rest = flat;
    let groups: Vec<Vec<u64>> = spec
        .group_sizes()
        .into_iter()
        .map(|n| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        })
        .collect();
    AllocationPlan {
        total: m,
        stage_one: 0,
        stage_one_component: None,
        per_subsystem: groups.iter().map(|g| g.iter().sum()).collect(),
        per_component: Some(groups),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComponentCounts as C;
    use proptest::prelude::*;

    const U: BetaParams = BetaParams::uniform();

    fn c(t: u64, s: u64) -> C {
        C::new(t, s).unwrap()
    }

    #[test]
    fn stage_one_size_examples() {
        assert_eq!(stage_one_size(100), 10);
        assert_eq!(stage_one_size(99), 9);
        assert_eq!(stage_one_size(1), 1);
    }

    #[test]
    fn symmetric_data_splits_evenly() {
        let plan = two_stage_allocate(100, &[U, U], &[c(10, 5), c(10, 5)]).unwrap();
        assert_eq!(plan.per_subsystem, vec![50, 50]);
        assert_eq!(plan.stage_one, 10);
    }

    #[test]
    fn asymmetric_stage_one_favours_uncertain_component() {
        // Component 1: 0/10 (Beta(1,11)); component 2: 10/10 (Beta(11,1)).
        // U_1 = (11/156)(2/156), U_2 = (11/156)(132/156), so
        // m^_1 = 100 / (1 + sqrt(66)) ~ 10.96 and the corrector gives (10, 90).
        let plan = two_stage_allocate(100, &[U, U], &[c(10, 0), c(10, 10)]).unwrap();
        assert_eq!(plan.per_subsystem, vec![10, 90]);
        let m_hat = predictor(100, &[2f64.sqrt(), 132f64.sqrt()]);
        assert!((m_hat[0] - 100.0 / (1.0 + 66f64.sqrt())).abs() < 1e-12);

        // The alternative factor a'(a'+1) in the product reverses the split.
        let printed = [(11.0 * 132.0f64).sqrt(), (11.0 * 2.0f64).sqrt()];
        let sizes = corrected_split(100, &printed, &[10, 10]).unwrap();
        assert_eq!(sizes, vec![89, 11]);
    }

    #[test]
    fn corrector_floors_at_stage_one_size() {
        // L = 5: component 1 failed every trial, component 2 passed every trial, so m^_1 ~ 4.48.
        let plan = two_stage_allocate(25, &[U, U], &[c(5, 0), c(5, 5)]).unwrap();
        assert_eq!(plan.per_subsystem, vec![5, 20]);
    }

    #[test]
    fn repair_raises_last_share() {
        // Predictor puts nearly everything on the first share.
        let sizes = corrected_split(25, &[1.0, 1e-6], &[5, 5]).unwrap();
        assert_eq!(sizes, vec![20, 5]);
        let sizes = corrected_split(30, &[1.0, 1.0, 1e-9], &[5, 5, 5]).unwrap();
        assert_eq!(sizes.iter().sum::<u64>(), 30);
        assert!(sizes.iter().all(|&s| s >= 5));
        assert_eq!(sizes[2], 5);
    }

    #[test]
    fn infeasible_budget_is_rejected() {
        // m = 5: L = 2, n L = 6 > 5.
        assert!(matches!(
            two_stage_allocate(5, &[U, U, U], &[c(2, 1); 3]),
            Err(Error::BudgetTooSmall(_))
        ));
        assert!(matches!(
            two_stage_allocate(100, &[U, U], &[c(9, 1), c(10, 1)]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn hybrid_symmetric_two_by_two() {
        let spec = SystemSpec::parallel_series(vec![vec![U, U], vec![U, U]]).unwrap();
        // m = 400: L = 20, L~ = 4.
        let data = vec![vec![c(4, 2), c(4, 2)], vec![c(4, 2), c(4, 2)]];
        let plan = hybrid_allocate(400, &spec, &data).unwrap();
        assert_eq!(plan.per_subsystem, vec![200, 200]);
        assert_eq!(plan.per_component, Some(vec![vec![100, 100], vec![100, 100]]));
        assert_eq!(plan.stage_one_component, Some(4));
    }

    #[test]
    fn hybrid_single_subsystem_reduces_to_component_split() {
        let priors = vec![U, BetaParams::new(2.0, 3.0).unwrap(), U];
        let spec = SystemSpec::parallel_series(vec![priors.clone()]).unwrap();
        // m = 200: L = 14, L~ = 3.
        let data = vec![c(3, 0), c(3, 2), c(3, 3)];
        let plan = hybrid_allocate(200, &spec, std::slice::from_ref(&data)).unwrap();
        assert_eq!(plan.per_subsystem, vec![200]);
        let sqrt_u: Vec<f64> = (0..3).map(|j| u_weight(&priors, &data, j).unwrap().sqrt()).collect();
        let expected = corrected_split(200, &sqrt_u, &[3, 3, 3]).unwrap();
        assert_eq!(plan.per_component.unwrap()[0], expected);
    }

    #[test]
    fn hybrid_two_single_component_subsystems() {
        // w~_1 = 1/15, w~_2 = 2/3, B_1 = B_2 = 1/6 -> m~_1 = floor(100 / (1 + sqrt(10))) = 24.
        let spec = SystemSpec::parallel_series(vec![vec![U], vec![U]]).unwrap();
        let data = vec![vec![c(3, 3)], vec![c(3, 0)]];
        let plan = hybrid_allocate(100, &spec, &data).unwrap();
        assert_eq!(plan.stage_one, 10);
        assert_eq!(plan.stage_one_component, Some(3));
        assert_eq!(plan.per_subsystem, vec![24, 76]);
        plan.validate().unwrap();
    }

    #[test]
    fn hybrid_rejects_wrong_topology() {
        let spec = SystemSpec::parallel(vec![U, U]).unwrap();
        assert!(matches!(
            hybrid_allocate(100, &spec, &[vec![c(3, 1), c(3, 1)]]),
            Err(Error::Topology { .. })
        ));
    }

    #[test]
    fn series_two_stage_uses_dual() {
        let series = SystemSpec::series(vec![U, BetaParams::new(1.0, 3.0).unwrap()]).unwrap();
        let data = vec![vec![c(10, 7), c(10, 2)]];
        let plan = Scheme::TwoStage.allocate(&series, 100, &data).unwrap();
        let dual = series.dualize();
        let direct = two_stage_allocate(100, &dual.groups()[0], &dualize_counts(&data)[0]).unwrap();
        assert_eq!(plan, direct);
    }

    #[test]
    fn fixed_schemes() {
        let spec = SystemSpec::parallel_series(vec![vec![U, U], vec![U]]).unwrap();
        let plan = Scheme::FixedEqual.allocate(&spec, 10, &[]).unwrap();
        assert_eq!(plan.per_component, Some(vec![vec![4, 3], vec![3]]));
        assert_eq!(plan.per_subsystem, vec![7, 3]);
        let custom = Scheme::FixedCustom(vec![1, 2, 7]);
        assert_eq!(custom.allocate(&spec, 10, &[]).unwrap().per_subsystem, vec![3, 7]);
        assert!(matches!(custom.check(&spec, 11), Err(Error::Config(_))));
    }

    fn arb_parallel() -> impl Strategy<Value = (u64, Vec<BetaParams>, Vec<C>)> {
        (1usize..5, 1u64..5000)
            .prop_filter("stage one must fit", |&(n, m)| n as u64 * stage_one_size(m) <= m)
            .prop_flat_map(|(n, m)| {
                let l = stage_one_size(m);
                (
                    Just(m),
                    prop::collection::vec((0.2f64..5.0, 0.2f64..5.0), n),
                    prop::collection::vec(0..=l, n),
                )
                    .prop_map(move |(m, p, s)| {
                        let priors = p.into_iter().map(|(a, b)| BetaParams::new(a, b).unwrap()).collect();
                        let counts = s.into_iter().map(|s| C::new(l, s).unwrap()).collect();
                        (m, priors, counts)
                    })
            })
    }

    proptest! {
        #[test]
        fn two_stage_plan_invariants((m, priors, counts) in arb_parallel()) {
            let l = stage_one_size(m);
            let plan = two_stage_allocate(m, &priors, &counts).unwrap();
            prop_assert_eq!(plan.per_subsystem.iter().sum::<u64>(), m);
            prop_assert!(plan.per_subsystem.iter().all(|&x| x >= l));
            plan.validate().unwrap();
        }

        #[test]
        fn predictor_sums_to_budget(m in 1u64..1_000_000, w in prop::collection::vec(1e-6f64..10.0, 1..6)) {
            let total: f64 = predictor(m, &w).iter().sum();
            prop_assert!((total - m as f64).abs() <= 1e-9 * m as f64);
        }

        #[test]
        fn permutation_moves_plan_up_to_rounding((m, priors, counts) in arb_parallel(), shift in 0usize..4) {
            let n = priors.len();
            let k = shift % n;
            let sqrt_u: Vec<f64> = (0..n).map(|i| u_weight(&priors, &counts, i).unwrap().sqrt()).collect();
            prop_assume!(predictor(m, &sqrt_u).iter().all(|&x| x >= stage_one_size(m) as f64));
            let base = two_stage_allocate(m, &priors, &counts).unwrap().per_subsystem;
            let mut p2 = priors.clone();
            let mut c2 = counts.clone();
            p2.rotate_left(k);
            c2.rotate_left(k);
            let mut rotated = two_stage_allocate(m, &p2, &c2).unwrap().per_subsystem;
            rotated.rotate_right(k);
            for (a, b) in base.iter().zip(&rotated) {
                prop_assert!(a.abs_diff(*b) <= n as u64, "{:?} vs {:?}", base, rotated);
            }
        }

        #[test]
        fn hybrid_plan_invariants(
            m in 50u64..20_000,
            sizes in prop::collection::vec(1usize..4, 1..4),
            seed in any::<u64>(),
        ) {
            let spec = SystemSpec::parallel_series(sizes.iter().map(|&n| vec![U; n]).collect()).unwrap();
            let l = stage_one_size(m);
            let lt = stage_one_size(l);
            prop_assume!(Scheme::Hybrid.check(&spec, m).is_ok());
            let mut x = seed;
            let data: Vec<Vec<C>> = sizes
                .iter()
                .map(|&n| {
                    (0..n)
                        .map(|_| {
                            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                            C::new(lt, (x >> 33) % (lt + 1)).unwrap()
                        })
                        .collect()
                })
                .collect();
            let plan = hybrid_allocate(m, &spec, &data).unwrap();
            plan.validate().unwrap();
            prop_assert!(plan.per_subsystem.iter().all(|&x| x >= l));
        }
    }
}
