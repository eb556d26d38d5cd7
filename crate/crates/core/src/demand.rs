//! Workload traces, billing-cycle slicing and two-cycle demand forecasts.
//!
//! Trace files are CSV with header `timestamp,value`, one row per slot, UTC
//! ISO-8601 timestamps and nonnegative values in raw workload units.
//! `unit_scale` converts raw units to Mbps. Scenarios serialize as
//! `{"tau": n, "slots": [{"realizations": [{"demand_mbps": d, "prob": p}]}]}`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::utility::{check_distribution, Realization};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub timestamps: Vec<DateTime<Utc>>,
    pub values: Vec<f64>,
    /// Raw units to Mbps.
    pub unit_scale: f64,
}

impl Trace {
    pub fn new(timestamps: Vec<DateTime<Utc>>, values: Vec<f64>, unit_scale: f64) -> Result<Self> {
        check_len(values.len(), timestamps.len())?;
        if !(unit_scale > 0.0 && unit_scale.is_finite()) {
            return Err(Error::invalid(format!("unit scale must be positive, got {unit_scale}")));
        }
        for (i, v) in values.iter().enumerate() {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("trace value {} is negative or not finite: {v}", i + 1)));
            }
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::invalid(format!(
                    "timestamps must be strictly increasing (sample {} at {} follows {})",
                    i + 2,
                    w[1].format(TIMESTAMP_FORMAT),
                    w[0].format(TIMESTAMP_FORMAT)
                )));
            }
        }
        Ok(Self {
            timestamps,
            values,
            unit_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceFormat {
    pub unit_scale: f64,
}

impl Default for TraceFormat {
    fn default() -> Self {
        Self { unit_scale: 1.0 }
    }
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|n| n.and_utc())
}

/// Parses a trace CSV. Errors carry the 1-based file line.
pub fn read_trace<R: Read>(reader: R, format: TraceFormat) -> Result<Trace> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "value" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `timestamp,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut step: Option<Duration> = None;
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 2 {
            return Err(parse_err(format!("expected 2 fields, found {}", record.len())));
        }
        let (raw_ts, raw_value) = (&record[0], &record[1]);
        if raw_value.is_empty() {
            return Err(parse_err("missing value".into()));
        }
        let ts = parse_timestamp(raw_ts).ok_or_else(|| parse_err(format!("bad timestamp `{raw_ts}`")))?;
        let value: f64 = raw_value
            .parse()
            .map_err(|_| parse_err(format!("bad value `{raw_value}`")))?;
        if !(value >= 0.0 && value.is_finite()) {
            return Err(parse_err(format!("value must be nonnegative, got {raw_value}")));
        }
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(parse_err(format!("timestamp `{raw_ts}` does not increase")));
            }
            let gap = ts - prev;
            match step {
                None => step = Some(gap),
                Some(s) if s != gap => {
                    return Err(parse_err(format!(
                        "missing or irregular slot before `{raw_ts}` (gap {}s, expected {}s)",
                        gap.num_seconds(),
                        s.num_seconds()
                    )))
                }
                Some(_) => {}
            }
        }
        timestamps.push(ts);
        values.push(value);
    }
    Trace::new(timestamps, values, format.unit_scale)
}

pub fn load_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<Trace> {
    read_trace(File::open(path)?, format)
}

/// Writes raw trace values (not scaled) in the trace CSV format.
pub fn write_trace<W: Write>(trace: &Trace, writer: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    out.write_record(["timestamp", "value"])?;
    for (ts, v) in trace.timestamps.iter().zip(&trace.values) {
        out.write_record([ts.format(TIMESTAMP_FORMAT).to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Consecutive non-overlapping cycles of `tau` slots in Mbps; a trailing
/// partial cycle is dropped.
pub fn slice_cycles(trace: &Trace, tau: usize) -> Result<Vec<Vec<f64>>> {
    if tau == 0 {
        return Err(Error::invalid("tau must be at least 1"));
    }
    if trace.len() < tau {
        return Err(Error::invalid(format!(
            "trace has {} samples, fewer than one cycle of {tau}",
            trace.len()
        )));
    }
    Ok(trace
        .values
        .chunks_exact(tau)
        .map(|c| c.iter().map(|v| v * trace.unit_scale).collect())
        .collect())
}

/// Per-slot probability mass over demand realizations.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandScenario {
    slots: Vec<Vec<Realization>>,
}

impl DemandScenario {
    pub fn new(slots: Vec<Vec<Realization>>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::invalid("scenario has no slots"));
        }
        for (t, dist) in slots.iter().enumerate() {
            check_distribution(dist).map_err(|e| Error::invalid(format!("slot {}: {e}", t + 1)))?;
        }
        Ok(Self { slots })
    }

    /// The single-realization scenario `D[t]` with probability one.
    pub fn deterministic(demand: &[f64]) -> Result<Self> {
        Self::new(
            demand
                .iter()
                .map(|&d| vec![Realization { demand: d, prob: 1.0 }])
                .collect(),
        )
    }

    pub fn tau(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Vec<Realization>] {
        &self.slots
    }

    pub fn slot(&self, t: usize) -> &[Realization] {
        &self.slots[t]
    }

    pub fn is_deterministic(&self) -> bool {
        self.slots.iter().all(|s| s.len() == 1)
    }

    /// Total number of realizations over all slots.
    pub fn realization_count(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn max_demand(&self, t: usize) -> f64 {
        self.slots[t].iter().map(|r| r.demand).fold(0.0, f64::max)
    }

    pub fn peak_demand(&self) -> f64 {
        (0..self.tau()).map(|t| self.max_demand(t)).fold(0.0, f64::max)
    }

    /// Probability-weighted mean demand per slot.
    pub fn mean_demand(&self) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| s.iter().map(|r| r.prob * r.demand).sum())
            .collect()
    }

    /// Merges realizations with identical demand.
    pub fn merged(&self) -> Self {
        let slots = self
            .slots
            .iter()
            .map(|dist| {
                let mut out: Vec<Realization> = Vec::with_capacity(dist.len());
                for r in dist {
                    match out.iter_mut().find(|o| o.demand == r.demand) {
                        Some(o) => o.prob += r.prob,
                        None => out.push(*r),
                    }
                }
                out
            })
            .collect();
        Self { slots }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScenarioFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioSlot {
    realizations: Vec<Realization>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    tau: usize,
    slots: Vec<ScenarioSlot>,
}

impl From<&DemandScenario> for ScenarioFile {
    fn from(s: &DemandScenario) -> Self {
        Self {
            tau: s.tau(),
            slots: s
                .slots
                .iter()
                .map(|r| ScenarioSlot { realizations: r.clone() })
                .collect(),
        }
    }
}

impl TryFrom<ScenarioFile> for DemandScenario {
    type Error = Error;

    fn try_from(file: ScenarioFile) -> Result<Self> {
        check_len(file.slots.len(), file.tau)?;
        DemandScenario::new(file.slots.into_iter().map(|s| s.realizations).collect())
    }
}

/// Demand actually revealed during the cycle, in Mbps.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposedDemand(Vec<f64>);

impl ExposedDemand {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("exposed demand must be nonnegative, got {v}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Builds a next-cycle demand scenario from the two preceding cycles.
pub trait Forecaster {
    fn forecast(&self, prev1: &[f64], prev2: &[f64]) -> Result<DemandScenario>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastKind {
    /// Equal-weight average of the two cycles.
    Deterministic,
    /// Each cycle is one realization with probability one half.
    Stochastic,
}

impl Forecaster for ForecastKind {
    fn forecast(&self, prev1: &[f64], prev2: &[f64]) -> Result<DemandScenario> {
        match self {
            ForecastKind::Deterministic => forecast_deterministic(prev1, prev2),
            ForecastKind::Stochastic => forecast_stochastic(prev1, prev2),
        }
    }
}

pub fn forecast_deterministic(prev1: &[f64], prev2: &[f64]) -> Result<DemandScenario> {
    check_len(prev2.len(), prev1.len())?;
    let mean: Vec<f64> = prev1.iter().zip(prev2).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    DemandScenario::deterministic(&mean)
}

/// Identical slot values collapse into a single realization.
pub fn forecast_stochastic(prev1: &[f64], prev2: &[f64]) -> Result<DemandScenario> {
    check_len(prev2.len(), prev1.len())?;
    let slots = prev1
        .iter()
        .zip(prev2)
        .map(|(&a, &b)| {
            if a == b {
                vec![Realization { demand: a, prob: 1.0 }]
            } else {
                vec![Realization { demand: a, prob: 0.5 }, Realization { demand: b, prob: 0.5 }]
            }
        })
        .collect();
    DemandScenario::new(slots)
}

/// Parameters of the synthetic diurnal-plus-bursts workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub slots: usize,
    pub slot_seconds: u32,
    /// Mean level of the diurnal curve.
    pub base_level: f64,
    /// Relative swing of the diurnal curve, in [0, 1).
    pub diurnal_amplitude: f64,
    pub period_slots: usize,
    /// Relative standard deviation of multiplicative noise.
    pub noise: f64,
    pub burst_prob: f64,
    /// Burst slots sit at this multiple of the diurnal peak.
    pub burst_height: f64,
    pub start: DateTime<Utc>,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            slots: 4 * 672,
            slot_seconds: 3600,
            base_level: 200.0,
            diurnal_amplitude: 0.5,
            period_slots: 24,
            noise: 0.1,
            burst_prob: 0.05,
            burst_height: 5.0,
            start: DateTime::parse_from_rfc3339("2014-01-01T00:00:00Z")
                .expect("static timestamp")
                .with_timezone(&Utc),
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("synthetic profile: {what}")));
        if self.slots == 0 || self.period_slots == 0 || self.slot_seconds == 0 {
            return bad("slots, period and slot length must be positive");
        }
        if !(self.base_level > 0.0 && self.base_level.is_finite()) {
            return bad("base level must be positive");
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return bad("diurnal amplitude must lie in [0, 1)");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.burst_prob) {
            return bad("burst probability must lie in [0, 1]");
        }
        if !(self.burst_height >= 1.0 && self.burst_height.is_finite()) {
            return bad("burst height must be at least 1");
        }
        Ok(())
    }

    pub fn diurnal(&self, slot: usize) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * (slot % self.period_slots) as f64 / self.period_slots as f64;
        self.base_level * (1.0 + self.diurnal_amplitude * phase.sin())
    }

    pub fn diurnal_peak(&self) -> f64 {
        self.base_level * (1.0 + self.diurnal_amplitude)
    }
}

/// Reproducible synthetic trace: the same profile and seed give the same trace.
pub fn synth_trace(profile: &SynthProfile, seed: u64) -> Result<Trace> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let peak = profile.diurnal_peak();
    let step = Duration::seconds(i64::from(profile.slot_seconds));
    let mut timestamps = Vec::with_capacity(profile.slots);
    let mut values = Vec::with_capacity(profile.slots);
    for t in 0..profile.slots {
        let z: f64 = rng.sample(StandardNormal);
        let burst = rng.random::<f64>() < profile.burst_prob;
        let v = if burst {
            profile.burst_height * peak * (1.0 + profile.noise * z.abs())
        } else {
            (profile.diurnal(t) * (1.0 + profile.noise * z)).max(0.0)
        };
        timestamps.push(profile.start + step * t as i32);
        values.push(v);
    }
    Trace::new(timestamps, values, 1.0)
}
