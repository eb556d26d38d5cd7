use serde::{Deserialize, Serialize};

use crate::billing::{percentile_usage, BillingPolicy};
use crate::demand::DemandScenario;
use crate::error::{check_len, Error, Result};
use crate::utility::UtilitySpec;

/// Expected net utility, bill and their difference for one usage vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surplus {
    pub surplus: f64,
    pub cost: f64,
    pub net_utility: f64,
}

/// `sum_t sum_k p_k U(T min(X[t], D_k[t])) - price * mu95(X)`.
pub fn evaluate_expected_surplus(
    usage: &[f64],
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
) -> Result<Surplus> {
    check_len(scenario.tau(), policy.tau)?;
    check_len(usage.len(), policy.tau)?;
    let net_utility = expected_net_utility(usage, scenario, spec, policy.slot_seconds);
    let cost = policy.price * percentile_usage(usage, policy)?;
    Ok(Surplus {
        surplus: net_utility - cost,
        cost,
        net_utility,
    })
}

pub(crate) fn expected_net_utility(
    usage: &[f64],
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    slot_seconds: f64,
) -> f64 {
    usage
        .iter()
        .zip(scenario.slots())
        .map(|(&x, dist)| {
            dist.iter()
                .map(|r| r.prob * spec.eval(slot_seconds * x.min(r.demand)))
                .sum::<f64>()
        })
        .sum()
}

/// A planned usage schedule for one provider.
///
/// `burst_mask[t]` is `true` when slot `t` counts toward the bill (capped) and
/// `false` when it is one of the free burst slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub planned_usage: Vec<f64>,
    pub burst_mask: Vec<bool>,
    pub cap_phi: f64,
    pub expected_cost: f64,
    pub expected_surplus: f64,
    pub solver: String,
}

impl Plan {
    /// Fills in the cap and the expected figures from the usage and mask.
    pub fn assemble(
        planned_usage: Vec<f64>,
        burst_mask: Vec<bool>,
        scenario: &DemandScenario,
        spec: &UtilitySpec,
        policy: &BillingPolicy,
        solver: impl Into<String>,
    ) -> Result<Self> {
        check_len(burst_mask.len(), planned_usage.len())?;
        let cap_phi = capped_max(&planned_usage, &burst_mask);
        let s = evaluate_expected_surplus(&planned_usage, scenario, spec, policy)?;
        Ok(Self {
            planned_usage,
            burst_mask,
            cap_phi,
            expected_cost: s.cost,
            expected_surplus: s.surplus,
            solver: solver.into(),
        })
    }

    pub fn tau(&self) -> usize {
        self.planned_usage.len()
    }

    pub fn free_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.burst_mask
            .iter()
            .enumerate()
            .filter(|(_, &counted)| !counted)
            .map(|(t, _)| t)
    }

    /// Checks mask cardinality, nonnegativity, the cap identity and the bill.
    pub fn check_invariants(&self, policy: &BillingPolicy) -> Result<()> {
        check_len(self.tau(), policy.tau)?;
        check_len(self.burst_mask.len(), policy.tau)?;
        let counted = self.burst_mask.iter().filter(|m| **m).count();
        if counted != policy.kept_count() {
            return Err(Error::Guard(format!(
                "mask counts {counted} slots, expected {}",
                policy.kept_count()
            )));
        }
        if let Some(x) = self.planned_usage.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::Guard(format!("negative planned usage {x}")));
        }
        let cap = capped_max(&self.planned_usage, &self.burst_mask);
        if cap != self.cap_phi {
            return Err(Error::Guard(format!(
                "cap {} differs from the largest capped usage {cap}",
                self.cap_phi
            )));
        }
        let cost = policy.price * percentile_usage(&self.planned_usage, policy)?;
        if (cost - self.expected_cost).abs() > 1e-9 * (1.0 + cost.abs()) {
            return Err(Error::Guard(format!(
                "recorded cost {} differs from the bill {cost}",
                self.expected_cost
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PlanFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<PlanFile>(text)?.try_into()
    }
}

pub(crate) fn capped_max(usage: &[f64], mask: &[bool]) -> f64 {
    usage
        .iter()
        .zip(mask)
        .filter(|(_, &counted)| counted)
        .map(|(&x, _)| x)
        .fold(0.0, f64::max)
}

/// Wire form of [`Plan`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct PlanFile {
    pub tau: usize,
    pub planned_usage_mbps: Vec<f64>,
    pub burst_mask: Vec<u8>,
    pub cap_phi_mbps: f64,
    pub expected_cost: f64,
    pub expected_surplus: f64,
    pub solver: String,
}

impl From<&Plan> for PlanFile {
    fn from(p: &Plan) -> Self {
        Self {
            tau: p.tau(),
            planned_usage_mbps: p.planned_usage.clone(),
            burst_mask: p.burst_mask.iter().map(|&m| u8::from(m)).collect(),
            cap_phi_mbps: p.cap_phi,
            expected_cost: p.expected_cost,
            expected_surplus: p.expected_surplus,
            solver: p.solver.clone(),
        }
    }
}

impl TryFrom<PlanFile> for Plan {
    type Error = Error;

    fn try_from(f: PlanFile) -> Result<Self> {
        check_len(f.planned_usage_mbps.len(), f.tau)?;
        check_len(f.burst_mask.len(), f.tau)?;
        let burst_mask = f
            .burst_mask
            .iter()
            .map(|&m| match m {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::invalid(format!("burst mask entries must be 0 or 1, got {other}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            planned_usage: f.planned_usage_mbps,
            burst_mask,
            cap_phi: f.cap_phi_mbps,
            expected_cost: f.expected_cost,
            expected_surplus: f.expected_surplus,
            solver: f.solver,
        })
    }
}
