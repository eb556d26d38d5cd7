//! Isoelastic utility of delivered volume.
//!
//! `U(v) = A * v^(1-a) / (1-a)` for `0 < a < 1` and `U(v) = A * ln(v)` for
//! `a = 1`, where `v` is transferred volume in megabits (slot seconds times
//! Mbps). Solvers always pass volumes, never rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FACTOR: f64 = 0.08;
pub const DEFAULT_CURVATURE: f64 = 0.1;
/// Volume floor used by the logarithmic member of the family.
pub const DEFAULT_EVAL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    /// Utility factor `A`.
    pub factor: f64,
    /// Concavity `a` in (0, 1].
    pub curvature: f64,
    /// Only consulted when `curvature == 1`: `ln` is evaluated at
    /// `max(volume, eval_floor)`.
    pub eval_floor: f64,
}

impl Default for UtilitySpec {
    fn default() -> Self {
        Self {
            factor: DEFAULT_FACTOR,
            curvature: DEFAULT_CURVATURE,
            eval_floor: DEFAULT_EVAL_FLOOR,
        }
    }
}

impl UtilitySpec {
    pub fn new(factor: f64, curvature: f64) -> Result<Self> {
        let spec = Self {
            factor,
            curvature,
            eval_floor: DEFAULT_EVAL_FLOOR,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor.is_finite()) {
            return Err(Error::invalid(format!(
                "utility factor must be positive, got {}",
                self.factor
            )));
        }
        if !(self.curvature > 0.0 && self.curvature <= 1.0) {
            return Err(Error::invalid(format!(
                "utility curvature must lie in (0, 1], got {}",
                self.curvature
            )));
        }
        if !(self.eval_floor > 0.0) {
            return Err(Error::invalid("utility evaluation floor must be positive"));
        }
        Ok(())
    }

    fn is_log(&self) -> bool {
        self.curvature >= 1.0
    }

    /// `U(volume)`, rejecting negative volume. Hot loops use [`UtilitySpec::eval`].
    pub fn value(&self, volume: f64) -> Result<f64> {
        if !(volume >= 0.0) {
            return Err(Error::domain(format!(
                "utility volume must be nonnegative, got {volume}"
            )));
        }
        Ok(self.eval(volume))
    }

    /// Unchecked `U(volume)` for `volume >= 0`.
    #[inline]
    pub fn eval(&self, volume: f64) -> f64 {
        if self.is_log() {
            self.factor * volume.max(self.eval_floor).ln()
        } else {
            let e = 1.0 - self.curvature;
            self.factor * volume.powf(e) / e
        }
    }

    /// `U'(volume) = A * volume^(-a)`, defined for positive volume.
    pub fn derivative(&self, volume: f64) -> Result<f64> {
        if !(volume > 0.0) {
            return Err(Error::domain(format!(
                "utility derivative needs positive volume, got {volume}"
            )));
        }
        Ok(self.slope(volume))
    }

    #[inline]
    pub(crate) fn slope(&self, volume: f64) -> f64 {
        if self.is_log() {
            self.factor / volume
        } else {
            self.factor * volume.powf(-self.curvature)
        }
    }

    /// Tangent lines anchored at `n * T * demand / N` for `n = 1..=N`.
    ///
    /// A zero-demand slot gets the single line `h <= 0`.
    pub fn tangent_envelope(&self, demand: f64, slot_seconds: f64, count: usize) -> Result<TangentSet> {
        if count == 0 {
            return Err(Error::invalid("tangent count must be at least 1"));
        }
        if !(demand >= 0.0) {
            return Err(Error::domain(format!("demand must be nonnegative, got {demand}")));
        }
        if demand == 0.0 {
            return Ok(TangentSet {
                lines: vec![TangentLine {
                    slope: 0.0,
                    intercept: 0.0,
                }],
                anchor_spacing: 0.0,
                count: 1,
            });
        }
        let spacing = slot_seconds * demand / count as f64;
        let lines = (1..=count)
            .map(|n| {
                let anchor = n as f64 * spacing;
                let slope = self.slope(anchor);
                TangentLine {
                    slope,
                    intercept: self.eval(anchor) - slope * anchor,
                }
            })
            .collect();
        Ok(TangentSet {
            lines,
            anchor_spacing: spacing,
            count,
        })
    }
}

/// `value(v) = intercept + slope * v`, with `v` a volume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentLine {
    pub slope: f64,
    pub intercept: f64,
}

impl TangentLine {
    pub fn at(&self, volume: f64) -> f64 {
        self.intercept + self.slope * volume
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentSet {
    pub lines: Vec<TangentLine>,
    /// Volume between consecutive anchors.
    pub anchor_spacing: f64,
    pub count: usize,
}

impl TangentSet {
    /// Pointwise minimum of the lines, the piecewise-linear over-approximation.
    pub fn envelope(&self, volume: f64) -> f64 {
        self.lines
            .iter()
            .map(|l| l.at(volume))
            .fold(f64::INFINITY, f64::min)
    }
}

/// One realization of slot demand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    #[serde(rename = "demand_mbps")]
    pub demand: f64,
    #[serde(rename = "prob")]
    pub prob: f64,
}

pub(crate) const PROB_TOLERANCE: f64 = 1e-9;

pub(crate) fn check_distribution(dist: &[Realization]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::invalid("a slot needs at least one demand realization"));
    }
    let mut total = 0.0;
    for r in dist {
        if !(r.demand >= 0.0 && r.demand.is_finite()) {
            return Err(Error::invalid(format!(
                "demand realization must be nonnegative, got {}",
                r.demand
            )));
        }
        if !(r.prob >= 0.0) {
            return Err(Error::invalid(format!("probability must be nonnegative, got {}", r.prob)));
        }
        total += r.prob;
    }
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::invalid(format!(
            "slot probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// `G(x) = sum_k p_k * U(T * min(x, D_k))`.
pub fn expected_slot_utility(
    spec: &UtilitySpec,
    dist: &[Realization],
    slot_seconds: f64,
    usage: f64,
) -> Result<f64> {
    check_distribution(dist)?;
    if !(usage >= 0.0) {
        return Err(Error::domain(format!("usage must be nonnegative, got {usage}")));
    }
    Ok(dist
        .iter()
        .map(|r| r.prob * spec.eval(slot_seconds * usage.min(r.demand)))
        .sum())
}
