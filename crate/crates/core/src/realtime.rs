//! Slot-by-slot execution of a plan once demand is revealed, and the
//! per-cycle comparison of planning methods.
//!
//! A counted slot may use up to `mu95` of the planned usage without raising
//! the bill, a free slot may use anything. So the updated usage is the
//! revealed demand whenever that fits, and `mu95(X)` otherwise.

use std::io::Write;

use serde::Serialize;

use crate::billing::{percentile_usage, BillingPolicy, UsageSeries};
use crate::demand::{DemandScenario, ExposedDemand};
use crate::deterministic::solve_deterministic;
use crate::error::{check_len, Error, Result};
use crate::multi::{solve_multi, AscentOptions, MultiPlan, ProviderSet};
use crate::plan::Plan;
use crate::stochastic::{solve_sweep, DEFAULT_TOLERANCE};
use crate::utility::UtilitySpec;

fn update_series(usage: &[f64], mask: &[bool], exposed: &[f64], policy: &BillingPolicy) -> Result<Vec<f64>> {
    check_len(usage.len(), policy.tau)?;
    check_len(mask.len(), policy.tau)?;
    check_len(exposed.len(), policy.tau)?;
    let mu = percentile_usage(usage, policy)?;
    Ok(exposed
        .iter()
        .zip(mask)
        .map(|(&d, &counted)| if !counted || d <= mu { d } else { mu })
        .collect())
}

/// Updated usage of a single-provider plan against the revealed demand.
/// `mu95` is recomputed from the planned usage.
pub fn update_usage(plan: &Plan, exposed: &ExposedDemand, policy: &BillingPolicy) -> Result<UsageSeries> {
    UsageSeries::new(update_series(
        &plan.planned_usage,
        &plan.burst_mask,
        exposed.as_slice(),
        policy,
    )?)
}

/// The single-provider rule applied to every provider independently.
///
/// Providers that all leave slot `t` free each deliver the full revealed
/// demand there, so the aggregate can exceed it.
pub fn update_usage_multi(
    plan: &MultiPlan,
    exposed: &ExposedDemand,
    providers: &ProviderSet,
) -> Result<Vec<UsageSeries>> {
    check_len(plan.providers.len(), providers.len())?;
    plan.providers
        .iter()
        .enumerate()
        .map(|(i, p)| {
            UsageSeries::new(update_series(
                &p.planned_usage,
                &p.burst_mask,
                exposed.as_slice(),
                &providers.policy(i),
            )?)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Realized {
    pub net_utility: f64,
    pub cost: f64,
    pub surplus: f64,
    /// Billed percentile per provider.
    pub mu95: Vec<f64>,
}

/// `sum_t U(T sum_i Xbar_i[t]) - sum_i price_i mu95(Xbar_i)`.
pub fn realized_surplus(updated: &[UsageSeries], spec: &UtilitySpec, providers: &ProviderSet) -> Result<Realized> {
    check_len(updated.len(), providers.len())?;
    let tau = providers.tau();
    let mut total = vec![0.0; tau];
    let mut mu95 = Vec::with_capacity(updated.len());
    let mut cost = 0.0;
    for (i, x) in updated.iter().enumerate() {
        check_len(x.len(), tau)?;
        for (s, v) in total.iter_mut().zip(x.iter()) {
            *s += v;
        }
        let mu = percentile_usage(x, &providers.policy(i))?;
        cost += providers.prices()[i] * mu;
        mu95.push(mu);
    }
    let t_sec = providers.slot_seconds();
    let net_utility: f64 = total.iter().map(|&x| spec.eval(t_sec * x)).sum();
    Ok(Realized {
        net_utility,
        cost,
        surplus: net_utility - cost,
        mu95,
    })
}

/// What the plan itself would earn against the revealed demand:
/// `sum_t U(T min(X[t], Dbar[t])) - price mu95(X)`.
pub fn planned_surplus_at(
    usage: &[f64],
    exposed: &ExposedDemand,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
) -> Result<f64> {
    check_len(usage.len(), policy.tau)?;
    check_len(exposed.len(), policy.tau)?;
    let net: f64 = usage
        .iter()
        .zip(exposed.as_slice())
        .map(|(&x, &d)| spec.eval(policy.slot_seconds * x.min(d)))
        .sum();
    Ok(net - policy.price * percentile_usage(usage, policy)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    /// On-demand usage, no planning.
    Baseline,
    /// Planned against the revealed demand itself.
    Ideal,
    /// Planned against the mean of the forecast.
    Deterministic,
    /// Planned against the full forecast distribution.
    Stochastic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::Ideal => "Ideal",
            Method::Deterministic => "Deterministic",
            Method::Stochastic => "Stochastic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Sourcing {
    /// Provider 0 only.
    Single,
    /// Every provider of the set.
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Case {
    pub method: Method,
    pub sourcing: Sourcing,
}

impl Case {
    pub const fn single(method: Method) -> Self {
        Self {
            method,
            sourcing: Sourcing::Single,
        }
    }

    pub const fn multi(method: Method) -> Self {
        Self {
            method,
            sourcing: Sourcing::Multi,
        }
    }

    /// The four single-provider methods.
    pub const SINGLE: [Case; 4] = [
        Case::single(Method::Baseline),
        Case::single(Method::Ideal),
        Case::single(Method::Deterministic),
        Case::single(Method::Stochastic),
    ];

    /// Ideal-MSP plus the SSP and MSP planners.
    pub const PROVIDER_COMPARISON: [Case; 6] = [
        Case::multi(Method::Ideal),
        Case::single(Method::Baseline),
        Case::single(Method::Deterministic),
        Case::single(Method::Stochastic),
        Case::multi(Method::Deterministic),
        Case::multi(Method::Stochastic),
    ];

    pub fn label(&self, tagged: bool) -> String {
        match (tagged, self.sourcing) {
            (false, _) => self.method.name().to_string(),
            (true, Sourcing::Single) => format!("{}-SSP", self.method.name()),
            (true, Sourcing::Multi) => format!("{}-MSP", self.method.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub method: String,
    pub cost: f64,
    pub surplus: f64,
    pub normalized_surplus: f64,
    pub mu95: Vec<f64>,
    /// Updated usage per provider.
    #[serde(skip)]
    pub updated_usage: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleReport {
    /// Realized surplus of the normalizing case (Ideal, or Ideal-MSP).
    pub base_surplus: f64,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    cost: f64,
    surplus: f64,
    normalized_surplus: f64,
}

impl CycleReport {
    pub fn outcome(&self, label: &str) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `method,cost,surplus,normalized_surplus`, one row per method.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for o in &self.outcomes {
            w.serialize(CsvRow {
                method: &o.method,
                cost: o.cost,
                surplus: o.surplus,
                normalized_surplus: o.normalized_surplus,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-slot aggregate updated usage, one column per method.
    pub fn write_usage_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["slot".to_string()];
        header.extend(self.outcomes.iter().map(|o| o.method.clone()));
        w.write_record(&header)?;
        let tau = self
            .outcomes
            .first()
            .and_then(|o| o.updated_usage.first())
            .map_or(0, Vec::len);
        for t in 0..tau {
            let mut row = vec![t.to_string()];
            for o in &self.outcomes {
                let total: f64 = o.updated_usage.iter().map(|x| x[t]).sum();
                row.push(total.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn plan_single(
    method: Method,
    truth: &ExposedDemand,
    forecast: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
) -> Result<Plan> {
    match method {
        Method::Ideal => solve_deterministic(&DemandScenario::deterministic(truth.as_slice())?, spec, policy),
        Method::Deterministic => solve_deterministic(&DemandScenario::deterministic(&forecast.mean_demand())?, spec, policy),
        Method::Stochastic => solve_sweep(forecast, spec, policy, DEFAULT_TOLERANCE),
        Method::Baseline => unreachable!("baseline has no plan"),
    }
}

fn plan_multi(
    method: Method,
    truth: &ExposedDemand,
    forecast: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
) -> Result<MultiPlan> {
    let scenario = match method {
        Method::Ideal => DemandScenario::deterministic(truth.as_slice())?,
        Method::Deterministic => DemandScenario::deterministic(&forecast.mean_demand())?,
        Method::Stochastic => forecast.clone(),
        Method::Baseline => unreachable!("baseline has no plan"),
    };
    solve_multi(&scenario, spec, providers, AscentOptions::default())
}

/// Plans each case, applies the update rule against `truth` and reports
/// realized cost and surplus, normalized by the Ideal case (Ideal-MSP when
/// present). Single-provider cases use provider 0.
pub fn simulate_cycle(
    truth: &ExposedDemand,
    forecast: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
    cases: &[Case],
) -> Result<CycleReport> {
    check_len(truth.len(), providers.tau())?;
    check_len(forecast.tau(), providers.tau())?;
    if cases.is_empty() {
        return Err(Error::invalid("no methods to simulate"));
    }
    for (n, c) in cases.iter().enumerate() {
        if cases[..n].contains(c) {
            return Err(Error::invalid(format!("method {} listed twice", c.label(true))));
        }
    }
    let base_case = [Case::multi(Method::Ideal), Case::single(Method::Ideal)]
        .into_iter()
        .find(|c| cases.contains(c))
        .ok_or_else(|| Error::invalid("the method list needs an Ideal case to normalize against"))?;
    let tagged = cases.iter().any(|c| c.sourcing == Sourcing::Multi);
    let single_set = ProviderSet::new(providers.policy(0), vec![providers.prices()[0]])?;

    let mut realized = Vec::with_capacity(cases.len());
    for case in cases {
        let (updated, set) = match (case.method, case.sourcing) {
            (Method::Baseline, Sourcing::Single) => {
                (vec![UsageSeries::new(truth.as_slice().to_vec())?], &single_set)
            }
            (Method::Baseline, Sourcing::Multi) => {
                let mut series = vec![UsageSeries::new(vec![0.0; truth.len()])?; providers.len()];
                series[providers.cheapest()] = UsageSeries::new(truth.as_slice().to_vec())?;
                (series, providers)
            }
            (m, Sourcing::Single) => {
                let policy = providers.policy(0);
                let plan = plan_single(m, truth, forecast, spec, &policy)?;
                (vec![update_usage(&plan, truth, &policy)?], &single_set)
            }
            (m, Sourcing::Multi) => {
                let plan = plan_multi(m, truth, forecast, spec, providers)?;
                (update_usage_multi(&plan, truth, providers)?, providers)
            }
        };
        let r = realized_surplus(&updated, spec, set)?;
        realized.push((case, r, updated));
    }
    let base_surplus = realized
        .iter()
        .find(|(c, ..)| **c == base_case)
        .map(|(_, r, _)| r.surplus)
        .expect("base case was simulated");
    let outcomes = realized
        .into_iter()
        .map(|(case, r, updated)| MethodOutcome {
            method: case.label(tagged),
            cost: r.cost,
            surplus: r.surplus,
            normalized_surplus: r.surplus / base_surplus,
            mu95: r.mu95,
            updated_usage: updated.into_iter().map(UsageSeries::into_inner).collect(),
        })
        .collect();
    Ok(CycleReport {
        base_surplus,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::forecast_stochastic;
    use crate::plan::evaluate_expected_surplus;

    fn policy(tau: usize, price: f64) -> BillingPolicy {
        BillingPolicy::new(tau, 1.0, 0.95, price).unwrap()
    }

    fn plan_with(usage: Vec<f64>, mask: Vec<bool>) -> Plan {
        Plan {
            cap_phi: crate::plan::capped_max(&usage, &mask),
            planned_usage: usage,
            burst_mask: mask,
            expected_cost: 0.0,
            expected_surplus: 0.0,
            solver: "test".into(),
        }
    }

    #[test]
    fn update_rule_cases() {
        // 20 slots, one free; mu95 of the plan is 80
        let mut usage = vec![80.0; 20];
        usage[0] = 500.0;
        let mut mask = vec![true; 20];
        mask[0] = false;
        let plan = plan_with(usage, mask);
        let mut exposed = vec![50.0; 20];
        exposed[0] = 900.0;
        exposed[1] = 100.0;
        let x = update_usage(&plan, &ExposedDemand::new(exposed).unwrap(), &policy(20, 1.0)).unwrap();
        assert_eq!(x[0], 900.0);
        assert_eq!(x[1], 80.0);
        assert_eq!(x[2], 50.0);
    }

    #[test]
    fn zero_cap_provider_delivers_nothing_on_counted_slots() {
        let p = policy(4, 1.0);
        let set = ProviderSet::new(p.clone(), vec![1.0, 1.0]).unwrap();
        let plan = MultiPlan {
            tau: 4,
            providers: vec![
                crate::multi::ProviderPlan {
                    id: 0,
                    price: 1.0,
                    planned_usage: vec![3.0; 4],
                    burst_mask: vec![true; 4],
                    cap_phi: 3.0,
                    cost: 3.0,
                },
                crate::multi::ProviderPlan {
                    id: 1,
                    price: 1.0,
                    planned_usage: vec![0.0; 4],
                    burst_mask: vec![true; 4],
                    cap_phi: 0.0,
                    cost: 0.0,
                },
            ],
            expected_net_utility: 0.0,
            expected_cost: 3.0,
            expected_surplus: 0.0,
            rounds: 0,
            solver: "test".into(),
        };
        let exposed = ExposedDemand::new(vec![1.0, 2.0, 5.0, 0.0]).unwrap();
        let x = update_usage_multi(&plan, &exposed, &set).unwrap();
        assert_eq!(&*x[0], &[1.0, 2.0, 3.0, 0.0]);
        assert_eq!(&*x[1], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn realized_matches_expected_on_degenerate_scenario() {
        let spec = UtilitySpec::new(1.0, 0.5).unwrap();
        let p = policy(20, 2.0);
        let demand: Vec<f64> = (0..20).map(|i| 1.0 + ((i * 7) % 13) as f64).collect();
        let usage: Vec<f64> = demand.iter().map(|d| d.min(6.0)).collect();
        let set = ProviderSet::new(p.clone(), vec![2.0]).unwrap();
        let r = realized_surplus(&[UsageSeries::new(usage.clone()).unwrap()], &spec, &set).unwrap();
        let sc = DemandScenario::deterministic(&demand).unwrap();
        let e = evaluate_expected_surplus(&usage, &sc, &spec, &p).unwrap();
        assert!((r.surplus - e.surplus).abs() < 1e-12);
        let zero = realized_surplus(&[UsageSeries::new(vec![0.0; 20]).unwrap()], &spec, &set).unwrap();
        assert_eq!(zero.surplus, 0.0);
    }

    #[test]
    fn perfect_forecast_collapses_methods() {
        let spec = UtilitySpec::new(1.0, 0.5).unwrap();
        let p = policy(20, 3.0);
        let truth: Vec<f64> = (0..20).map(|i| 2.0 + ((i * 11) % 17) as f64).collect();
        let forecast = forecast_stochastic(&truth, &truth).unwrap();
        let set = ProviderSet::new(p, vec![3.0]).unwrap();
        let report = simulate_cycle(
            &ExposedDemand::new(truth).unwrap(),
            &forecast,
            &spec,
            &set,
            &Case::SINGLE,
        )
        .unwrap();
        let ideal = report.outcome("Ideal").unwrap();
        assert_eq!(ideal.normalized_surplus, 1.0);
        for m in ["Deterministic", "Stochastic"] {
            let o = report.outcome(m).unwrap();
            assert!((o.surplus - ideal.surplus).abs() <= 1e-8 * ideal.surplus.abs());
        }
        assert!(report.outcome("Baseline").unwrap().normalized_surplus <= 1.0 + 1e-12);
    }

    #[test]
    fn method_list_validation() {
        let spec = UtilitySpec::default();
        let set = ProviderSet::new(policy(3, 1.0), vec![1.0]).unwrap();
        let truth = ExposedDemand::new(vec![1.0, 2.0, 3.0]).unwrap();
        let f = DemandScenario::deterministic(&[1.0, 2.0, 3.0]).unwrap();
        assert!(simulate_cycle(&truth, &f, &spec, &set, &[]).is_err());
        assert!(simulate_cycle(&truth, &f, &spec, &set, &[Case::single(Method::Baseline)]).is_err());
        let dup = [Case::single(Method::Ideal), Case::single(Method::Ideal)];
        assert!(simulate_cycle(&truth, &f, &spec, &set, &dup).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let spec = UtilitySpec::new(1.0, 0.5).unwrap();
        let set = ProviderSet::new(policy(3, 1.0), vec![1.0]).unwrap();
        let truth = ExposedDemand::new(vec![1.0, 2.0, 3.0]).unwrap();
        let f = DemandScenario::deterministic(&[1.0, 2.0, 3.0]).unwrap();
        let r = simulate_cycle(&truth, &f, &spec, &set, &Case::SINGLE).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,cost,surplus,normalized_surplus\nBaseline,"));
        assert_eq!(text.lines().count(), 5);
        let mut buf = Vec::new();
        r.write_usage_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("slot,Baseline,Ideal,Deterministic,Stochastic\n0,1,"));
    }
}
