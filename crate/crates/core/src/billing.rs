//! Percentile billing.
//!
//! A provider samples usage once per slot, drops the highest
//! `burst_budget` samples of the cycle and bills the largest remaining one at
//! a fixed price per Mbps. Two routes compute the billed percentile: a sort of
//! the samples ([`percentile_usage`]) and a 0/1 selection mask over slots
//! ([`percentile_usage_via_mask`]). The sort is canonical; the mask is what the
//! planners reason about.

use std::cmp::Ordering;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const DEFAULT_PERCENTILE: f64 = 0.95;

/// Cycle geometry and tariff of one provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BillingPolicy {
    /// Slots per billing cycle.
    pub tau: usize,
    /// Slot length in seconds.
    pub slot_seconds: f64,
    pub percentile: f64,
    /// Price per Mbps of billed percentile usage.
    pub price: f64,
}

impl BillingPolicy {
    pub fn new(tau: usize, slot_seconds: f64, percentile: f64, price: f64) -> Result<Self> {
        let policy = Self {
            tau,
            slot_seconds,
            percentile,
            price,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::invalid("tau must be at least 1"));
        }
        if !(self.slot_seconds > 0.0 && self.slot_seconds.is_finite()) {
            return Err(Error::invalid(format!(
                "slot length must be positive, got {}",
                self.slot_seconds
            )));
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(Error::invalid(format!(
                "percentile must lie in (0, 1], got {}",
                self.percentile
            )));
        }
        if !(self.price >= 0.0 && self.price.is_finite()) {
            return Err(Error::invalid(format!(
                "price must be nonnegative, got {}",
                self.price
            )));
        }
        Ok(())
    }

    pub fn with_price(&self, price: f64) -> Self {
        Self {
            price,
            ..self.clone()
        }
    }

    /// Number of samples that count toward the bill, `ceil(q * tau)`.
    pub fn kept_count(&self) -> usize {
        let exact = self.percentile * self.tau as f64;
        // q * tau is often an integer that f64 lands a hair above (0.95 * 100).
        let nearest = exact.round();
        let kept = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
            nearest
        } else {
            exact.ceil()
        };
        (kept as usize).clamp(1, self.tau)
    }

    /// Number of samples discarded before taking the maximum.
    pub fn burst_budget(&self) -> usize {
        self.tau - self.kept_count()
    }
}

/// Usage samples of one cycle in Mbps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UsageSeries(Vec<f64>);

impl UsageSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((t, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::invalid(format!(
                "usage at slot {} must be a nonnegative number, got {v}",
                t + 1
            )));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for UsageSeries {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<UsageSeries> for Vec<f64> {
    fn from(series: UsageSeries) -> Self {
        series.0
    }
}

pub fn burst_budget(policy: &BillingPolicy) -> usize {
    policy.burst_budget()
}

/// The billed percentile: the `ceil(q * tau)`-th largest sample.
pub fn percentile_usage(series: &[f64], policy: &BillingPolicy) -> Result<f64> {
    check_len(series.len(), policy.tau)?;
    let mut sorted = series.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(sorted[policy.burst_budget()])
}

/// Slot indices ordered by value descending, ties by index ascending.
pub(crate) fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| match values[b].total_cmp(&values[a]) {
        Ordering::Equal => a.cmp(&b),
        other => other,
    });
    order
}

/// Mask with `false` on the `free` largest entries (earliest index first among
/// equal values) and `true` elsewhere.
pub(crate) fn top_free_mask(values: &[f64], free: usize) -> Vec<bool> {
    let mut mask = vec![true; values.len()];
    for &t in rank_descending(values).iter().take(free) {
        mask[t] = false;
    }
    mask
}

/// The billed percentile as `max_t mask[t] * x[t]` under the optimal selection
/// mask, together with that mask (`true` = the sample counts).
pub fn percentile_usage_via_mask(
    series: &[f64],
    policy: &BillingPolicy,
) -> Result<(f64, Vec<bool>)> {
    check_len(series.len(), policy.tau)?;
    let mask = top_free_mask(series, policy.burst_budget());
    let value = series
        .iter()
        .zip(&mask)
        .filter(|(_, &counted)| counted)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((value, mask))
}

/// Burstable bill `price * percentile_usage`.
pub fn billing_cost(series: &[f64], policy: &BillingPolicy) -> Result<f64> {
    Ok(policy.price * percentile_usage(series, policy)?)
}
