//! Usage planning for a customer billed at the 95th percentile of its
//! per-slot bandwidth, with utility from the traffic it actually serves.
//!
//! The crate covers the bill itself ([`billing`]), the utility model
//! ([`utility`]), demand traces and forecasts ([`demand`]), offline planners
//! for known and uncertain demand ([`deterministic`], [`stochastic`]), several
//! providers at once ([`multi`]), the slot-by-slot update against revealed
//! demand ([`realtime`]) and an LP-file export of the mixed-integer model
//! ([`milp`]).

// `!(x >= 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod billing;
pub mod demand;
pub mod deterministic;
pub mod error;
pub mod experiment;
pub mod milp;
pub mod multi;
pub mod plan;
pub mod realtime;
pub mod search;
pub mod stochastic;
pub mod utility;

pub use billing::{billing_cost, burst_budget, percentile_usage, BillingPolicy, UsageSeries};
pub use demand::{DemandScenario, ExposedDemand, ForecastKind, Forecaster, Trace};
pub use deterministic::solve_deterministic;
pub use error::{Error, Result};
pub use plan::{evaluate_expected_surplus, Plan, Surplus};
pub use stochastic::{near_gap, solve_oracle, solve_sweep};
pub use utility::{Realization, UtilitySpec};
