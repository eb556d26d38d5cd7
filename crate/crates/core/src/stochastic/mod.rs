//! Expected-surplus planning under per-slot demand distributions.
//!
//! The bill is modelled with an explicit cap `phi` that every counted slot
//! must respect, which removes the product of mask and usage from the
//! objective. [`solve_sweep`] searches the cap directly; [`solve_oracle`]
//! enumerates every free-slot set and is the exactness reference for small
//! cycles. For external certification at scale, see [`crate::milp`].

pub(crate) mod cap;

use crate::billing::BillingPolicy;
use crate::demand::DemandScenario;
use crate::error::{check_len, Error, Result};
use crate::plan::Plan;
use crate::utility::UtilitySpec;

use cap::{CapProblem, CapSolution, SlotCurve};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
/// Largest cycle the exhaustive oracle accepts.
pub const ORACLE_MAX_TAU: usize = 20;

fn single_provider_problem<'a>(
    scenario: &DemandScenario,
    spec: &'a UtilitySpec,
    policy: &BillingPolicy,
    tol: f64,
) -> Result<CapProblem<'a>> {
    spec.validate()?;
    policy.validate()?;
    check_len(scenario.tau(), policy.tau)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    Ok(CapProblem {
        curves: scenario
            .slots()
            .iter()
            .map(|d| SlotCurve::new(d, 0.0, spec, policy.slot_seconds))
            .collect(),
        spec,
        slot_seconds: policy.slot_seconds,
        price: policy.price,
        free: policy.burst_budget(),
        tol,
    })
}

fn into_plan(
    problem: &CapProblem<'_>,
    sol: &CapSolution,
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
    solver: &str,
) -> Result<Plan> {
    Plan::assemble(problem.usage(sol), problem.mask(sol), scenario, spec, policy, solver)
}

/// Breakpoint sweep over the cap.
///
/// Candidate caps are zero and every demand realization. Between two
/// neighbouring candidates each freed set yields a concave objective in the
/// cap, maximized by golden-section search to `tol`. All freed sets that are
/// optimal somewhere in the interval are examined.
pub fn solve_sweep(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
    tol: f64,
) -> Result<Plan> {
    let problem = single_provider_problem(scenario, spec, policy, tol)?;
    let sol = problem.sweep();
    into_plan(&problem, &sol, scenario, spec, policy, "sweep")
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleOptions {
    /// Stop enumerating once [`near_gap`] to the upper bound drops to this.
    pub stop_at_gap: Option<f64>,
}

/// Exhaustive reference solver: every free-slot set of size `burst_budget`,
/// each with its cap maximized by golden-section search.
pub fn solve_oracle(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
) -> Result<Plan> {
    solve_oracle_with(scenario, spec, policy, OracleOptions::default()).map(|(plan, _)| plan)
}

/// Like [`solve_oracle`], also returning the relative gap reached.
pub fn solve_oracle_with(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
    options: OracleOptions,
) -> Result<(Plan, f64)> {
    if policy.tau > ORACLE_MAX_TAU {
        return Err(Error::Guard(format!(
            "oracle enumerates free-slot sets and accepts at most {ORACLE_MAX_TAU} slots (got {}); \
             use the sweep solver or export the model as an LP file",
            policy.tau
        )));
    }
    if let Some(g) = options.stop_at_gap {
        if !(g >= 0.0) {
            return Err(Error::invalid("stop-at-gap must be nonnegative"));
        }
    }
    let problem = single_provider_problem(scenario, spec, policy, DEFAULT_TOLERANCE)?;
    let sol = problem.enumerate(options.stop_at_gap);
    let plan = into_plan(&problem, &sol, scenario, spec, policy, "oracle")?;
    Ok((plan, sol.gap))
}

/// Relative optimality gap `(upper - lower) / max(|upper|, tiny)`.
pub fn near_gap(lower: f64, upper: f64) -> Result<f64> {
    if !(lower.is_finite() && upper.is_finite()) {
        return Err(Error::invalid("bounds must be finite"));
    }
    if upper < lower {
        return Err(Error::Guard(format!(
            "upper bound {upper} is below lower bound {lower}"
        )));
    }
    Ok((upper - lower) / upper.abs().max(f64::MIN_POSITIVE))
}
