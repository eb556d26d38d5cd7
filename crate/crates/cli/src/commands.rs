use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use burstopt::billing::{burst_budget, percentile_usage, BillingPolicy};
use burstopt::demand::{load_trace, slice_cycles, synth_trace, DemandScenario, SynthProfile, TraceFormat};
use burstopt::experiment::{
    evaluated_cycles, rolling_cycle, summarize, sweep_point, write_rolling_csv, write_sweep_csv, SweepParam, HISTORY,
};
use burstopt::milp::build_milp_multi;
use burstopt::multi::{solve_multi, AscentOptions, ProviderSet};
use burstopt::realtime::{Case, CycleReport};
use burstopt::stochastic::DEFAULT_TOLERANCE;
use burstopt::utility::UtilitySpec;
use burstopt::{solve_deterministic, solve_oracle, solve_sweep, Forecaster};
use burstopt::{ForecastKind, Result as CoreResult};
use rayon::prelude::*;
use serde_json::json;

use crate::{Config, Failure, Forecast, Param, Solver};

type Outcome = Result<(), Failure>;

fn policy(cfg: &Config, tau: usize) -> Result<BillingPolicy, Failure> {
    let price = *cfg.prices.first().ok_or_else(|| Failure::usage("at least one --price is required"))?;
    Ok(BillingPolicy::new(tau, cfg.slot_seconds, cfg.percentile, price)?)
}

fn providers(cfg: &Config, tau: usize) -> Result<ProviderSet, Failure> {
    Ok(ProviderSet::new(policy(cfg, tau)?, cfg.prices.clone())?)
}

fn spec(cfg: &Config) -> Result<UtilitySpec, Failure> {
    Ok(UtilitySpec::new(cfg.utility_factor, cfg.utility_a)?)
}

fn cycles(cfg: &Config, path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let trace = load_trace(path, TraceFormat { unit_scale: cfg.unit_scale }).map_err(|e| match e {
        burstopt::Error::Io(e) => Failure::usage(format!("{}: {e}", path.display())),
        e => e.into(),
    })?;
    Ok(slice_cycles(&trace, cfg.tau)?)
}

/// Writes `name` under `--out`, or to stdout when no directory is given.
fn emit(cfg: &Config, name: &str, write: impl FnOnce(&mut dyn Write) -> CoreResult<()>) -> Outcome {
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path)?);
            write(&mut w)?;
            w.flush()?;
            log::info!("wrote {}", path.display());
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            let done = write(&mut w).and_then(|()| Ok(w.flush()?));
            match done {
                // a reader such as `head` closed the pipe
                Err(burstopt::Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn emit_text(cfg: &Config, name: &str, text: &str) -> Outcome {
    emit(cfg, name, |w| {
        w.write_all(text.as_bytes())?;
        if !text.ends_with('\n') {
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn read_scenario(path: &Path) -> Result<DemandScenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(DemandScenario::from_json(&text)?)
}

pub fn bill(cfg: &Config, usage: &Path) -> Outcome {
    let cycles = cycles(cfg, usage)?;
    let p = policy(cfg, cfg.tau)?;
    let rows = cycles
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let mu = percentile_usage(x, &p)?;
            Ok(json!({
                "cycle": n + 1,
                "percentile_mbps": mu,
                "burst_budget": burst_budget(&p),
                "cost": p.price * mu,
            }))
        })
        .collect::<CoreResult<Vec<_>>>()?;
    let text = serde_json::to_string_pretty(&json!({ "tau": cfg.tau, "price": p.price, "cycles": rows }))
        .map_err(|e| Failure::runtime(e.to_string()))?;
    emit_text(cfg, "bill.json", &text)
}

pub fn plan(cfg: &Config, trace: Option<&Path>, scenario: Option<&Path>) -> Outcome {
    let spec = spec(cfg)?;
    let (sc, deterministic) = match (trace, scenario) {
        (Some(t), _) => {
            let cycles = cycles(cfg, t)?;
            if cycles.len() < HISTORY {
                return Err(Failure::usage(format!(
                    "planning from a trace needs {HISTORY} full cycles of {} slots, found {}",
                    cfg.tau,
                    cycles.len()
                )));
            }
            let n = cycles.len();
            let kind = match cfg.forecast {
                Forecast::Deterministic => ForecastKind::Deterministic,
                Forecast::Stochastic => ForecastKind::Stochastic,
            };
            (kind.forecast(&cycles[n - 1], &cycles[n - 2])?, cfg.forecast == Forecast::Deterministic)
        }
        (None, Some(s)) => {
            let sc = read_scenario(s)?;
            let det = sc.is_deterministic();
            (sc, det)
        }
        (None, None) => return Err(Failure::usage("give --trace or --scenario")),
    };
    let tau = sc.tau();
    if cfg.prices.len() > 1 {
        let set = providers(cfg, tau)?;
        let plan = solve_multi(&sc, &spec, &set, AscentOptions::default())?;
        return emit_text(cfg, "plan.json", &plan.to_json()?);
    }
    let p = policy(cfg, tau)?;
    let plan = match cfg.solver {
        Solver::Oracle => solve_oracle(&sc, &spec, &p)?,
        Solver::Sweep if deterministic => solve_deterministic(&sc, &spec, &p)?,
        Solver::Sweep => solve_sweep(&sc, &spec, &p, DEFAULT_TOLERANCE)?,
    };
    emit_text(cfg, "plan.json", &plan.to_json()?)
}

fn rolling(cfg: &Config, trace: &Path, cases: &[Case]) -> Result<(usize, Vec<CycleReport>), Failure> {
    let cycles = cycles(cfg, trace)?;
    let range = evaluated_cycles(&cycles)?;
    let first = range.start;
    let set = providers(cfg, cfg.tau)?;
    let spec = spec(cfg)?;
    let reports = range
        .into_par_iter()
        .map(|c| rolling_cycle(&cycles, c, &spec, &set, cases))
        .collect::<CoreResult<Vec<_>>>()?;
    Ok((first, reports))
}

fn write_reports(cfg: &Config, name: &str, first: usize, reports: &[CycleReport]) -> Outcome {
    let summary = summarize(reports)?;
    emit(cfg, name, |w| write_rolling_csv(first, reports, &summary, w))?;
    if let Some(dir) = &cfg.out {
        // per-cycle detail next to the table
        let detail: PathBuf = dir.join("cycles");
        fs::create_dir_all(&detail)?;
        for (n, r) in reports.iter().enumerate() {
            let cycle = first + n + 1;
            fs::write(detail.join(format!("cycle_{cycle:03}.json")), r.to_json()? + "\n")?;
            let mut w = BufWriter::new(File::create(detail.join(format!("cycle_{cycle:03}_usage.csv")))?);
            r.write_usage_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn simulate(cfg: &Config, trace: &Path) -> Outcome {
    let (first, reports) = rolling(cfg, trace, &Case::SINGLE)?;
    write_reports(cfg, "rolling.csv", first, &reports)
}

pub fn compare_providers(cfg: &Config, trace: &Path) -> Outcome {
    if cfg.prices.len() < 2 {
        return Err(Failure::usage("compare-providers needs at least two --price values"));
    }
    let (first, reports) = rolling(cfg, trace, &Case::PROVIDER_COMPARISON)?;
    write_reports(cfg, "compare.csv", first, &reports)
}

pub fn sweep(cfg: &Config, trace: &Path, param: Param, grid: &[f64]) -> Outcome {
    if grid.is_empty() {
        return Err(Failure::usage("the sweep grid is empty"));
    }
    let cycles = cycles(cfg, trace)?;
    let set = providers(cfg, cfg.tau)?;
    let spec = spec(cfg)?;
    let param = match param {
        Param::Price => SweepParam::Price,
        Param::UtilityFactor => SweepParam::UtilityFactor,
    };
    let rows = grid
        .par_iter()
        .map(|&v| sweep_point(&cycles, param, v, &spec, &set, &Case::SINGLE))
        .collect::<CoreResult<Vec<_>>>()?
        .concat();
    emit(cfg, "sweep.csv", |w| write_sweep_csv(&rows, w))
}

pub fn export_milp(cfg: &Config, scenario: &Path) -> Outcome {
    let sc = read_scenario(scenario)?;
    let n = cfg.providers.unwrap_or(cfg.prices.len());
    let prices = match (n, cfg.prices.len()) {
        (0, _) => return Err(Failure::usage("--providers must be at least 1")),
        (n, k) if k == n => cfg.prices.clone(),
        (n, 1) => vec![cfg.prices[0]; n],
        (n, k) => return Err(Failure::usage(format!("{n} providers need 1 or {n} prices, got {k}"))),
    };
    let set = ProviderSet::new(policy(cfg, sc.tau())?, prices)?;
    let model = build_milp_multi(&sc, &spec(cfg)?, &set, cfg.tangents, None)?;
    emit(cfg, "model.lp", |w| Ok(w.write_all(model.to_lp_string().as_bytes())?))
}

pub fn synth(cfg: &Config, cycles: usize) -> Outcome {
    if cycles == 0 {
        return Err(Failure::usage("--cycles must be at least 1"));
    }
    let profile = SynthProfile {
        slots: cycles * cfg.tau,
        ..SynthProfile::default()
    };
    let trace = synth_trace(&profile, cfg.seed)?;
    emit(cfg, "trace.csv", |w| burstopt::demand::write_trace(&trace, w))
}
