//! Several providers billed independently on the same slotting.
//!
//! Utility is earned on the aggregate usage `sum_i X_i[t]`, each provider
//! bills `price_i * mu95(X_i)`. [`solve_multi`] runs block-coordinate ascent:
//! each step re-plans one provider against the usage the others already
//! supply, which is a single-provider cap problem with per-slot offsets.
//! This is a heuristic; [`solve_multi_oracle`] is the exact reference for
//! two providers on very short cycles, and [`crate::milp::build_milp_multi`]
//! exports the full model.

use serde::{Deserialize, Serialize};

use crate::billing::{percentile_usage, top_free_mask, BillingPolicy};
use crate::demand::DemandScenario;
use crate::error::{check_len, Error, Result};
use crate::plan::{capped_max, expected_net_utility};
use crate::search::golden_section_max;
use crate::stochastic::cap::{next_combination, CapProblem, SlotCurve};
use crate::stochastic::DEFAULT_TOLERANCE;
use crate::utility::UtilitySpec;

pub const DEFAULT_ROUNDS: usize = 100;
pub const DEFAULT_ASCENT_TOL: f64 = 1e-8;
pub const MULTI_ORACLE_MAX_TAU: usize = 8;

/// Providers sharing one billing geometry, each with its own price.
/// Provider ids are their positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderSet {
    base: BillingPolicy,
    prices: Vec<f64>,
}

impl ProviderSet {
    /// `base.price` is ignored; `prices[i]` is provider `i`'s price.
    pub fn new(base: BillingPolicy, prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::invalid("at least one provider is required"));
        }
        let set = Self { base, prices };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, _) in self.prices.iter().enumerate() {
            self.policy(i).validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn tau(&self) -> usize {
        self.base.tau
    }

    pub fn slot_seconds(&self) -> f64 {
        self.base.slot_seconds
    }

    /// Billing policy of provider `i`.
    pub fn policy(&self, i: usize) -> BillingPolicy {
        self.base.with_price(self.prices[i])
    }

    /// Lowest price, lowest id among ties.
    pub fn cheapest(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.prices.iter().enumerate() {
            if p < self.prices[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderPlan {
    pub id: usize,
    pub price: f64,
    #[serde(rename = "planned_usage_mbps")]
    pub planned_usage: Vec<f64>,
    #[serde(with = "mask_bits")]
    pub burst_mask: Vec<bool>,
    #[serde(rename = "cap_phi_mbps")]
    pub cap_phi: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiPlan {
    pub tau: usize,
    pub providers: Vec<ProviderPlan>,
    pub expected_net_utility: f64,
    pub expected_cost: f64,
    pub expected_surplus: f64,
    /// Completed ascent rounds (zero for the oracle).
    pub rounds: usize,
    pub solver: String,
}

mod mask_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(mask.iter().map(|&m| u8::from(m)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Vec::<u8>::deserialize(d)?
            .into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "burst mask entries must be 0 or 1, got {other}"
                ))),
            })
            .collect()
    }
}

impl MultiPlan {
    fn assemble(
        usage: Vec<Vec<f64>>,
        masks: Vec<Vec<bool>>,
        scenario: &DemandScenario,
        spec: &UtilitySpec,
        providers: &ProviderSet,
        rounds: usize,
        solver: &str,
    ) -> Result<Self> {
        let tau = providers.tau();
        let mut blocks = Vec::with_capacity(providers.len());
        for (i, (x, mask)) in usage.into_iter().zip(masks).enumerate() {
            let policy = providers.policy(i);
            blocks.push(ProviderPlan {
                id: i,
                price: policy.price,
                cost: policy.price * percentile_usage(&x, &policy)?,
                cap_phi: capped_max(&x, &mask),
                planned_usage: x,
                burst_mask: mask,
            });
        }
        let total = aggregate(&blocks, tau);
        let net = expected_net_utility(&total, scenario, spec, providers.slot_seconds());
        let cost: f64 = blocks.iter().map(|b| b.cost).sum();
        Ok(Self {
            tau,
            providers: blocks,
            expected_net_utility: net,
            expected_cost: cost,
            expected_surplus: net - cost,
            rounds,
            solver: solver.to_string(),
        })
    }

    /// Aggregate planned usage per slot.
    pub fn total_usage(&self) -> Vec<f64> {
        aggregate(&self.providers, self.tau)
    }

    pub fn usage(&self) -> Vec<Vec<f64>> {
        self.providers.iter().map(|p| p.planned_usage.clone()).collect()
    }

    /// Per-provider mask cardinality, cap identity and recomputed bills.
    pub fn check_invariants(&self, providers: &ProviderSet) -> Result<()> {
        check_len(self.providers.len(), providers.len())?;
        let mut cost = 0.0;
        for (i, p) in self.providers.iter().enumerate() {
            let policy = providers.policy(i);
            check_len(p.planned_usage.len(), policy.tau)?;
            check_len(p.burst_mask.len(), policy.tau)?;
            let counted = p.burst_mask.iter().filter(|m| **m).count();
            if counted != policy.kept_count() {
                return Err(Error::Guard(format!(
                    "provider {i} mask counts {counted} slots, expected {}",
                    policy.kept_count()
                )));
            }
            if capped_max(&p.planned_usage, &p.burst_mask) != p.cap_phi {
                return Err(Error::Guard(format!("provider {i} cap differs from its largest capped usage")));
            }
            cost += policy.price * percentile_usage(&p.planned_usage, &policy)?;
        }
        if (cost - self.expected_cost).abs() > 1e-9 * (1.0 + cost.abs()) {
            return Err(Error::Guard(format!(
                "recorded cost {} differs from the recomputed {cost}",
                self.expected_cost
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        for p in &plan.providers {
            check_len(p.planned_usage.len(), plan.tau)?;
            check_len(p.burst_mask.len(), plan.tau)?;
        }
        Ok(plan)
    }
}

fn aggregate(blocks: &[ProviderPlan], tau: usize) -> Vec<f64> {
    let mut total = vec![0.0; tau];
    for b in blocks {
        for (s, x) in total.iter_mut().zip(&b.planned_usage) {
            *s += x;
        }
    }
    total
}

/// Expected aggregate surplus of per-provider usage vectors.
pub fn evaluate_multi_surplus(
    usage: &[Vec<f64>],
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
) -> Result<f64> {
    check_len(usage.len(), providers.len())?;
    check_len(scenario.tau(), providers.tau())?;
    let mut total = vec![0.0; providers.tau()];
    let mut cost = 0.0;
    for (i, x) in usage.iter().enumerate() {
        check_len(x.len(), providers.tau())?;
        for (s, v) in total.iter_mut().zip(x) {
            *s += v;
        }
        cost += providers.prices[i] * percentile_usage(x, &providers.policy(i))?;
    }
    Ok(expected_net_utility(&total, scenario, spec, providers.slot_seconds()) - cost)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AscentOptions {
    pub rounds_max: usize,
    /// Stop once a round improves the surplus by less than `tol * max(1, |surplus|)`.
    pub tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            rounds_max: DEFAULT_ROUNDS,
            tol: DEFAULT_ASCENT_TOL,
        }
    }
}

fn check_inputs(scenario: &DemandScenario, spec: &UtilitySpec, providers: &ProviderSet) -> Result<()> {
    spec.validate()?;
    providers.validate()?;
    check_len(scenario.tau(), providers.tau())
}

/// Re-plans provider `i` against the others' usage.
fn best_response(
    i: usize,
    usage: &[Vec<f64>],
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
) -> (Vec<f64>, Vec<bool>) {
    let tau = providers.tau();
    let t_sec = providers.slot_seconds();
    let curves = (0..tau)
        .map(|t| {
            let offset: f64 = usage
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, x)| x[t])
                .sum();
            SlotCurve::new(scenario.slot(t), offset, spec, t_sec)
        })
        .collect();
    let problem = CapProblem {
        curves,
        spec,
        slot_seconds: t_sec,
        price: providers.prices[i],
        free: providers.policy(i).burst_budget(),
        tol: DEFAULT_TOLERANCE,
    };
    let sol = problem.sweep();
    let mut x = problem.usage(&sol);
    let mask = problem.mask(&sol);
    // Served free slots cost nothing, so they carry the full peak demand.
    // The others then see those slots as covered and can drop them.
    for t in 0..tau {
        if !mask[t] && x[t] > 0.0 {
            x[t] = scenario.max_demand(t);
        }
    }
    (x, mask)
}

/// Block-coordinate ascent over providers, restarted with each provider
/// carrying the initial load, cheapest first; the best run wins (earliest on
/// ties). Within a run a step is kept only if it does not lower the
/// aggregate surplus, so the surplus is nondecreasing across rounds.
pub fn solve_multi(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
    options: AscentOptions,
) -> Result<MultiPlan> {
    check_inputs(scenario, spec, providers)?;
    if !(options.tol >= 0.0) {
        return Err(Error::invalid("ascent tolerance must be nonnegative"));
    }
    let cheapest = providers.cheapest();
    let starts = std::iter::once(cheapest).chain((0..providers.len()).filter(|&i| i != cheapest));
    let mut best: Option<MultiPlan> = None;
    for start in starts {
        let plan = ascend(start, scenario, spec, providers, options)?;
        log::debug!("ascent from provider {start}: surplus {}", plan.expected_surplus);
        if best.as_ref().is_none_or(|b| plan.expected_surplus > b.expected_surplus) {
            best = Some(plan);
        }
    }
    Ok(best.expect("at least one provider"))
}

fn ascend(
    first: usize,
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
    options: AscentOptions,
) -> Result<MultiPlan> {
    let n = providers.len();
    let tau = providers.tau();
    let mut usage = vec![vec![0.0; tau]; n];
    let mut masks: Vec<Vec<bool>> = (0..n)
        .map(|i| top_free_mask(&usage[i], providers.policy(i).burst_budget()))
        .collect();
    let (x, m) = best_response(first, &usage, scenario, spec, providers);
    usage[first] = x;
    masks[first] = m;
    let mut current = evaluate_multi_surplus(&usage, scenario, spec, providers)?;
    let mut rounds = 0;
    if n > 1 {
        while rounds < options.rounds_max {
            let start = current;
            for i in 0..n {
                let (x, m) = best_response(i, &usage, scenario, spec, providers);
                let old = std::mem::replace(&mut usage[i], x);
                let value = evaluate_multi_surplus(&usage, scenario, spec, providers)?;
                if value >= current {
                    current = value;
                    masks[i] = m;
                } else {
                    usage[i] = old;
                }
            }
            rounds += 1;
            if current < start {
                return Err(Error::Guard(format!(
                    "ascent round {rounds} lowered the surplus from {start} to {current}"
                )));
            }
            log::debug!("ascent round {rounds}: surplus {current}");
            if current - start < options.tol * current.abs().max(1.0) {
                break;
            }
        }
    }
    MultiPlan::assemble(usage, masks, scenario, spec, providers, rounds, "coordinate-ascent")
}

/// Exact two-provider reference: every pair of free-slot sets, with both
/// caps chosen by nested golden-section search.
pub fn solve_multi_oracle(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
) -> Result<MultiPlan> {
    check_inputs(scenario, spec, providers)?;
    if providers.len() != 2 || providers.tau() > MULTI_ORACLE_MAX_TAU {
        return Err(Error::Guard(format!(
            "the multi-provider oracle handles exactly 2 providers and at most {MULTI_ORACLE_MAX_TAU} slots \
             (got {} providers, {} slots)",
            providers.len(),
            providers.tau()
        )));
    }
    let tau = providers.tau();
    let t_sec = providers.slot_seconds();
    let (m1, m2) = (
        providers.policy(0).burst_budget(),
        providers.policy(1).burst_budget(),
    );
    let (d1, d2) = (providers.prices[0], providers.prices[1]);
    let top = scenario.peak_demand();
    let full: Vec<f64> = (0..tau)
        .map(|t| {
            scenario
                .slot(t)
                .iter()
                .map(|r| r.prob * spec.eval(t_sec * r.demand))
                .sum()
        })
        .collect();
    let slot_value = |t: usize, x: f64| -> f64 {
        scenario
            .slot(t)
            .iter()
            .map(|r| r.prob * spec.eval(t_sec * x.min(r.demand)))
            .sum()
    };

    let mut best: Option<(f64, f64, f64, Vec<usize>, Vec<usize>)> = None;
    let mut s1: Vec<usize> = (0..m1).collect();
    loop {
        let mut s2: Vec<usize> = (0..m2).collect();
        loop {
            let free_either = |t: &usize| s1.binary_search(t).is_ok() || s2.binary_search(t).is_ok();
            let constant: f64 = (0..tau).filter(free_either).map(|t| full[t]).sum();
            let both: Vec<usize> = (0..tau).filter(|t| !free_either(t)).collect();
            let inner = |p1: f64| {
                golden_section_max(
                    |p2| {
                        constant + both.iter().map(|&t| slot_value(t, p1 + p2)).sum::<f64>()
                            - d1 * p1
                            - d2 * p2
                    },
                    0.0,
                    top,
                    DEFAULT_TOLERANCE,
                )
            };
            let outer = golden_section_max(|p1| inner(p1).value, 0.0, top, DEFAULT_TOLERANCE);
            let p2 = inner(outer.arg).arg;
            let improves = match &best {
                None => true,
                Some((v, ..)) => outer.value > *v,
            };
            if improves {
                best = Some((outer.value, outer.arg, p2, s1.clone(), s2.clone()));
            }
            if !next_combination(&mut s2, tau) {
                break;
            }
        }
        if !next_combination(&mut s1, tau) {
            break;
        }
    }
    let (_, p1, p2, s1, s2) = best.expect("at least one pair is enumerated");
    let mut x1 = vec![0.0; tau];
    let mut x2 = vec![0.0; tau];
    for t in 0..tau {
        let d = scenario.max_demand(t);
        if s1.binary_search(&t).is_ok() {
            x1[t] = d;
        } else if s2.binary_search(&t).is_ok() {
            x2[t] = d;
        } else {
            x1[t] = p1.min(d);
            x2[t] = p2.min(d - x1[t]);
        }
    }
    let mask_of = |s: &[usize]| (0..tau).map(|t| s.binary_search(&t).is_err()).collect();
    let masks = vec![mask_of(&s1), mask_of(&s2)];
    MultiPlan::assemble(vec![x1, x2], masks, scenario, spec, providers, 0, "multi-oracle")
}
