//! Exact planner for a known demand vector.
//!
//! With deterministic demand the free burst slots can be fixed up front: the
//! `burst_budget` slots with the largest demand. What remains is the choice
//! of one cap `mu` for all other slots, and the surplus
//! `g(mu) = sum_free U(T D) + sum_capped U(T min(D, mu)) - price * mu`
//! is concave in `mu`, so a one-dimensional search finishes the job.

use crate::billing::{top_free_mask, BillingPolicy};
use crate::demand::DemandScenario;
use crate::error::{check_len, Error, Result};
use crate::plan::Plan;
use crate::search::golden_section_max;
use crate::utility::UtilitySpec;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Burst mask for a known demand: `false` on the `burst_budget` largest
/// demands (earliest index first among ties).
pub fn select_free_slots(demand: &[f64], policy: &BillingPolicy) -> Vec<bool> {
    top_free_mask(demand, policy.burst_budget())
}

/// The concave cap objective over the capped slots, free slots dropped.
fn cap_objective(capped: &[f64], spec: &UtilitySpec, policy: &BillingPolicy, mu: f64) -> f64 {
    capped
        .iter()
        .map(|&d| spec.eval(policy.slot_seconds * d.min(mu)))
        .sum::<f64>()
        - policy.price * mu
}

pub fn solve_deterministic(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
) -> Result<Plan> {
    solve_deterministic_with(scenario, spec, policy, DEFAULT_TOLERANCE)
}

pub fn solve_deterministic_with(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
    tol: f64,
) -> Result<Plan> {
    spec.validate()?;
    policy.validate()?;
    check_len(scenario.tau(), policy.tau)?;
    if !scenario.is_deterministic() {
        return Err(Error::invalid(
            "deterministic planner needs one realization per slot",
        ));
    }
    let demand: Vec<f64> = (0..scenario.tau()).map(|t| scenario.max_demand(t)).collect();
    let mask = select_free_slots(&demand, policy);
    let capped: Vec<f64> = demand
        .iter()
        .zip(&mask)
        .filter(|(_, &counted)| counted)
        .map(|(&d, _)| d)
        .collect();
    let top = capped.iter().cloned().fold(0.0, f64::max);
    let best = golden_section_max(|mu| cap_objective(&capped, spec, policy, mu), 0.0, top, tol);
    let cap = best.arg;
    let usage: Vec<f64> = demand
        .iter()
        .zip(&mask)
        .map(|(&d, &counted)| if counted { d.min(cap) } else { d })
        .collect();
    Plan::assemble(usage, mask, scenario, spec, policy, "deterministic")
}
