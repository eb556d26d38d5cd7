//! Rolling evaluation over a trace and parameter sweeps.
//!
//! Cycle `c` is forecast from cycles `c - 2` and `c - 1` only, then simulated
//! against its own demand. Callers that want parallelism can run
//! [`rolling_cycle`] per cycle and hand the reports to [`summarize`].

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::demand::{forecast_stochastic, ExposedDemand};
use crate::error::{Error, Result};
use crate::multi::ProviderSet;
use crate::realtime::{simulate_cycle, Case, CycleReport};
use crate::utility::UtilitySpec;

/// Cycles of history a forecast needs.
pub const HISTORY: usize = 2;

/// Simulates cycle `c` (zero-based, `c >= 2`) of `cycles`.
pub fn rolling_cycle(
    cycles: &[Vec<f64>],
    c: usize,
    spec: &UtilitySpec,
    providers: &ProviderSet,
    cases: &[Case],
) -> Result<CycleReport> {
    if c < HISTORY || c >= cycles.len() {
        return Err(Error::invalid(format!(
            "cycle {c} needs {HISTORY} earlier cycles within a trace of {} cycles",
            cycles.len()
        )));
    }
    let forecast = forecast_stochastic(&cycles[c - 1], &cycles[c - 2])?;
    let truth = ExposedDemand::new(cycles[c].clone())?;
    simulate_cycle(&truth, &forecast, spec, providers, cases)
}

/// Indices of the cycles a rolling evaluation covers.
pub fn evaluated_cycles(cycles: &[Vec<f64>]) -> Result<std::ops::Range<usize>> {
    if cycles.len() <= HISTORY {
        return Err(Error::invalid(format!(
            "rolling evaluation needs at least {} cycles, the trace has {}",
            HISTORY + 1,
            cycles.len()
        )));
    }
    Ok(HISTORY..cycles.len())
}

/// Sequential rolling evaluation of every cycle after the first two.
pub fn rolling_reports(
    cycles: &[Vec<f64>],
    spec: &UtilitySpec,
    providers: &ProviderSet,
    cases: &[Case],
) -> Result<Vec<CycleReport>> {
    evaluated_cycles(cycles)?
        .map(|c| rolling_cycle(cycles, c, spec, providers, cases))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub avg_cost: f64,
    pub avg_surplus: f64,
    pub avg_normalized_surplus: f64,
}

/// Per-method averages, in the method order of the first report.
pub fn summarize(reports: &[CycleReport]) -> Result<Vec<SummaryRow>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("no cycle reports to summarize"))?;
    let n = reports.len() as f64;
    first
        .outcomes
        .iter()
        .map(|o| {
            let mut row = SummaryRow {
                method: o.method.clone(),
                avg_cost: 0.0,
                avg_surplus: 0.0,
                avg_normalized_surplus: 0.0,
            };
            for r in reports {
                let m = r
                    .outcome(&o.method)
                    .ok_or_else(|| Error::invalid(format!("report lacks method {}", o.method)))?;
                row.avg_cost += m.cost / n;
                row.avg_surplus += m.surplus / n;
                row.avg_normalized_surplus += m.normalized_surplus / n;
            }
            Ok(row)
        })
        .collect()
}

#[derive(Serialize)]
struct RollingRow<'a> {
    cycle: String,
    method: &'a str,
    cost: f64,
    surplus: f64,
    normalized_surplus: f64,
}

/// Per-cycle rows (cycle numbers one-based) followed by `average` rows.
pub fn write_rolling_csv<W: Write>(
    first_cycle: usize,
    reports: &[CycleReport],
    summary: &[SummaryRow],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (n, r) in reports.iter().enumerate() {
        for o in &r.outcomes {
            w.serialize(RollingRow {
                cycle: (first_cycle + n + 1).to_string(),
                method: &o.method,
                cost: o.cost,
                surplus: o.surplus,
                normalized_surplus: o.normalized_surplus,
            })?;
        }
    }
    for s in summary {
        w.serialize(RollingRow {
            cycle: "average".into(),
            method: &s.method,
            cost: s.avg_cost,
            surplus: s.avg_surplus,
            normalized_surplus: s.avg_normalized_surplus,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    /// Every provider's price set to the grid value.
    #[serde(rename = "price")]
    Price,
    /// The utility factor `A`.
    #[serde(rename = "utility_factor")]
    UtilityFactor,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Price => "price",
            SweepParam::UtilityFactor => "utility_factor",
        }
    }

    /// Inputs for one grid point.
    pub fn apply(self, value: f64, spec: &UtilitySpec, providers: &ProviderSet) -> Result<(UtilitySpec, ProviderSet)> {
        match self {
            SweepParam::Price => Ok((
                spec.clone(),
                ProviderSet::new(providers.policy(0), vec![value; providers.len()])?,
            )),
            SweepParam::UtilityFactor => {
                let mut s = spec.clone();
                s.factor = value;
                s.validate()?;
                Ok((s, providers.clone()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub method: String,
    pub avg_cost: f64,
    pub avg_surplus: f64,
    pub avg_normalized_surplus: f64,
}

/// Rolling evaluation at one grid point.
pub fn sweep_point(
    cycles: &[Vec<f64>],
    param: SweepParam,
    value: f64,
    spec: &UtilitySpec,
    providers: &ProviderSet,
    cases: &[Case],
) -> Result<Vec<SweepRow>> {
    let (spec, providers) = param.apply(value, spec, providers)?;
    let reports = rolling_reports(cycles, &spec, &providers, cases)?;
    Ok(summarize(&reports)?
        .into_iter()
        .map(|s| SweepRow {
            param,
            value,
            method: s.method,
            avg_cost: s.avg_cost,
            avg_surplus: s.avg_surplus,
            avg_normalized_surplus: s.avg_normalized_surplus,
        })
        .collect())
}

pub fn sweep(
    cycles: &[Vec<f64>],
    param: SweepParam,
    grid: &[f64],
    spec: &UtilitySpec,
    providers: &ProviderSet,
    cases: &[Case],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let mut rows = Vec::new();
    for &v in grid {
        rows.extend(sweep_point(cycles, param, v, spec, providers, cases)?);
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-method average surplus along the grid, for monotonicity checks.
pub fn surplus_by_method(rows: &[SweepRow]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        out.entry(r.method.clone()).or_default().push((r.value, r.avg_surplus));
    }
    out
}
