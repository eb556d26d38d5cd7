//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Trace-driven criteria (6, 7, 8) bill hour-long slots with volumes in
//! Mbps-hours (`slot_seconds = 1`). With volumes in Mbit (3600 per
//! Mbps-hour) the marginal utility of every slot exceeds any tested price,
//! every method plans on-demand usage, and the comparisons are vacuous.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use burstopt::billing::{percentile_usage, percentile_usage_via_mask, BillingPolicy};
use burstopt::demand::{slice_cycles, synth_trace, DemandScenario, ExposedDemand, SynthProfile};
use burstopt::deterministic::solve_deterministic;
use burstopt::experiment::{rolling_reports, summarize, sweep, surplus_by_method, SweepParam};
use burstopt::milp::{build_milp, build_milp_multi, MilpModel};
use burstopt::multi::ProviderSet;
use burstopt::plan::Plan;
use burstopt::realtime::{planned_surplus_at, realized_surplus, update_usage, Case};
use burstopt::stochastic::{solve_oracle, solve_sweep, DEFAULT_TOLERANCE};
use burstopt::utility::{Realization, UtilitySpec};
use common::{envelope_argmax, exact_optimum, random_scenario, rel, rng, surplus_of, textbook_percentile, Iso};
use rand::seq::IndexedRandom;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("took {took:.1?}, limit {limit:?}"));
    }
    Ok(took)
}

fn percentile_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let qs = [0.9, 0.95, 0.99, 1.0];
    for case in 0..1000 {
        let len = r.random_range(1..=500);
        let q = *qs.choose(&mut r).unwrap();
        let integer = case % 3 == 0;
        let x: Vec<f64> = (0..len)
            .map(|_| {
                if integer {
                    r.random_range(0..20) as f64
                } else {
                    r.random_range(0.0..1e4)
                }
            })
            .collect();
        let policy = BillingPolicy::new(len, 1.0, q, 1.0).unwrap();
        let sorted = percentile_usage(&x, &policy).unwrap();
        let (masked, mask) = percentile_usage_via_mask(&x, &policy).unwrap();
        ensure!(masked == sorted, "case {case}: mask {masked} vs sort {sorted}");
        ensure!(sorted == textbook_percentile(&x, q), "case {case}: differs from the reference");
        ensure!(
            mask.iter().filter(|m| !**m).count() == policy.burst_budget(),
            "case {case}: mask frees the wrong number of slots"
        );
    }
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!("1000 series agree exactly ({took:.2?})"))
}

fn deterministic_optimality() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let a = *[0.1, 0.5, 1.0].choose(&mut r).unwrap();
        let factor = r.random_range(0.5..4.0);
        let price = r.random_range(0.0..50.0);
        // every fourth instance frees four slots instead of one
        let q = if case % 4 == 0 { 0.8 } else { 0.95 };
        let demand: Vec<f64> = (0..20).map(|_| r.random_range(0.5..100.0)).collect();
        let sc = DemandScenario::deterministic(&demand).unwrap();
        let spec = UtilitySpec::new(factor, a).unwrap();
        let policy = BillingPolicy::new(20, 1.0, q, price).unwrap();
        let plan = solve_deterministic(&sc, &spec, &policy).unwrap();
        let iso = Iso { factor, curvature: a };
        let exact = exact_optimum(&sc, iso, 1.0, q, price);
        let own = surplus_of(&plan.planned_usage, &sc, iso, 1.0, q, price);
        let err = rel(own, exact);
        worst = worst.max(err);
        ensure!(err <= 1e-6, "case {case}: solver {own} vs exact {exact}");
        ensure!(rel(plan.expected_surplus, own) <= 1e-12, "case {case}: reported surplus is off");
    }
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!("200 instances, worst relative gap {worst:.1e} ({took:.2?})"))
}

fn stochastic_agreement() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let qs = [0.5, 0.75, 0.9, 0.95];
    let mut worst: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    for case in 0..200 {
        let tau = r.random_range(2..=12);
        let q = *qs.choose(&mut r).unwrap();
        let a = *[0.1, 0.5, 1.0].choose(&mut r).unwrap();
        let factor = r.random_range(0.5..4.0);
        let price = r.random_range(0.0..20.0);
        let sc = random_scenario(&mut r, tau, 3, 50.0);
        let spec = UtilitySpec::new(factor, a).unwrap();
        let policy = BillingPolicy::new(tau, 1.0, q, price).unwrap();
        let sweep_plan = solve_sweep(&sc, &spec, &policy, DEFAULT_TOLERANCE).unwrap();
        let oracle_plan = solve_oracle(&sc, &spec, &policy).unwrap();
        let (s, o) = (sweep_plan.expected_surplus, oracle_plan.expected_surplus);
        let err = (s - o).abs() / o.abs().max(1e-300);
        worst = worst.max(err);
        ensure!(err <= 1e-6, "case {case} (tau {tau}, q {q}): sweep {s} vs oracle {o}");
        let exact = exact_optimum(&sc, Iso { factor, curvature: a }, 1.0, q, price);
        let e = rel(o, exact);
        worst_exact = worst_exact.max(e);
        ensure!(e <= 1e-6, "case {case}: oracle {o} vs closed-form reference {exact}");
        sweep_plan.check_invariants(&policy).map_err(|e| e.to_string())?;
    }
    let took = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "200 instances, sweep/oracle gap {worst:.1e}, oracle/reference gap {worst_exact:.1e} ({took:.2?})"
    ))
}

fn tangent_accuracy() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let counts = [1, 2, 3, 5, 10];
    let mut worst3: f64 = 0.0;
    let mut mean = [0.0; 5];
    let mut solution_loss = [0.0; 5];
    let mut failure = None;
    for case in 0..100 {
        let tau = r.random_range(2..=8);
        let sc = random_scenario(&mut r, tau, 3, 400.0);
        let spec = UtilitySpec::default();
        let iso = Iso { factor: spec.factor, curvature: spec.curvature };
        // about the summed marginal utility of the capped slots near 200
        let price = r.random_range(0.3..1.5) * tau as f64 * iso.slope_at(200.0);
        let policy = BillingPolicy::new(tau, 1.0, 0.75, price).unwrap();
        let plan = solve_sweep(&sc, &spec, &policy, DEFAULT_TOLERANCE).unwrap();
        let truth = plan.expected_surplus;
        let mut prev = f64::INFINITY;
        for (j, &n) in counts.iter().enumerate() {
            let model = build_milp(&sc, &spec, &policy, n, None).unwrap();
            let values = model.embed_plan(&plan, &sc, &spec, 1.0, n).unwrap();
            let viol = model.max_violation(&values).unwrap();
            ensure!(viol <= 1e-9, "case {case}, N={n}: embedded plan violates the model by {viol}");
            let objective = model.evaluate_objective(&values).unwrap();
            let gap = (objective - truth) / truth.abs();
            ensure!(gap >= -1e-12, "case {case}, N={n}: model objective below the true surplus");
            if gap > prev + 1e-12 && failure.is_none() {
                failure = Some(format!("case {case}: gap grows from {prev} to {gap} at N={n}"));
            }
            prev = gap;
            mean[j] += gap / 100.0;
            if n == 3 {
                worst3 = worst3.max(gap);
            }
            // surplus lost by acting on the model's own optimum instead
            let usage = envelope_argmax(&sc, iso, 1.0, 0.75, price, n);
            let achieved = surplus_of(&usage, &sc, iso, 1.0, 0.75, price);
            solution_loss[j] += (truth - achieved) / truth.abs() / 100.0;
        }
    }
    let took = within(Duration::from_secs(30), start)?;
    let pct = |v: [f64; 5]| v.map(|g| format!("{:.3}%", 100.0 * g)).join(" ");
    let detail = format!(
        "worst objective gap at N=3 {:.2}%; mean objective gap for N=1,2,3,5,10: {}; \
         mean surplus lost by the model's own optimum: {} ({took:.2?})",
        100.0 * worst3,
        pct(mean),
        pct(solution_loss)
    );
    if let Some(f) = failure {
        return Err(format!("{f}; {detail}"));
    }
    ensure!(worst3 <= 0.01, "{detail}");
    Ok(detail)
}

fn update_monotonicity() -> Outcome {
    let mut r = rng(5);
    for case in 0..500 {
        let tau = r.random_range(5..=60);
        let q = *[0.8, 0.9, 0.95].choose(&mut r).unwrap();
        let price = r.random_range(0.0..10.0);
        let spec = UtilitySpec::new(r.random_range(0.5..3.0), *[0.1, 0.5, 1.0].choose(&mut r).unwrap()).unwrap();
        let policy = BillingPolicy::new(tau, 1.0, q, price).unwrap();
        let plan = if case % 2 == 0 {
            let sc = random_scenario(&mut r, tau, 3, 80.0);
            solve_sweep(&sc, &spec, &policy, DEFAULT_TOLERANCE).unwrap()
        } else {
            // arbitrary usage, freeing its largest samples
            let usage: Vec<f64> = (0..tau).map(|_| r.random_range(0.0..80.0)).collect();
            let (_, mask) = percentile_usage_via_mask(&usage, &policy).unwrap();
            let sc = DemandScenario::deterministic(&usage).unwrap();
            Plan::assemble(usage, mask, &sc, &spec, &policy, "arbitrary").unwrap()
        };
        let exposed: Vec<f64> = (0..tau)
            .map(|_| if r.random_bool(0.1) { r.random_range(100.0..400.0) } else { r.random_range(0.0..90.0) })
            .collect();
        let exposed = ExposedDemand::new(exposed).unwrap();
        let updated = update_usage(&plan, &exposed, &policy).unwrap();
        let mu = textbook_percentile(&plan.planned_usage, q);
        for t in 0..tau {
            let d = exposed.as_slice()[t];
            let want = if !plan.burst_mask[t] || d <= mu { d } else { mu };
            ensure!(updated[t] == want, "case {case}, slot {t}: rule gives {}, expected {want}", updated[t]);
            ensure!(updated[t] <= d, "case {case}, slot {t}: updated usage above demand");
        }
        let mu_bar = textbook_percentile(&updated, q);
        ensure!(mu_bar <= mu, "case {case}: percentile rose from {mu} to {mu_bar}");
        let set = ProviderSet::new(policy.clone(), vec![price]).unwrap();
        let after = realized_surplus(&[updated], &spec, &set).unwrap().surplus;
        let before = planned_surplus_at(&plan.planned_usage, &exposed, &spec, &policy).unwrap();
        ensure!(
            after >= before - 1e-12 * before.abs().max(1.0),
            "case {case}: realized {after} below planned {before}"
        );
    }
    Ok("500 pairs: rule exact, surplus and percentile monotone".into())
}

fn synthetic_cycles(cycles: usize, seed: u64) -> Vec<Vec<f64>> {
    let profile = SynthProfile {
        slots: 672 * cycles,
        ..SynthProfile::default()
    };
    slice_cycles(&synth_trace(&profile, seed).unwrap(), 672).unwrap()
}

fn hourly(price: f64) -> BillingPolicy {
    BillingPolicy::new(672, 1.0, 0.95, price).unwrap()
}

fn method_ordering() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for seed in [7, 8] {
        let cycles = synthetic_cycles(22, seed);
        let spikes = cycles.iter().flatten().filter(|&&v| v > 2.0 * 300.0).count() as f64
            / (22.0 * 672.0);
        ensure!((0.04..0.06).contains(&spikes), "seed {seed}: spike share {spikes}");
        let set = ProviderSet::new(hourly(15.0), vec![15.0]).unwrap();
        let spec = UtilitySpec::default();
        let reports = rolling_reports(&cycles, &spec, &set, &Case::SINGLE).map_err(|e| e.to_string())?;
        ensure!(reports.len() == 20, "expected 20 evaluated cycles");
        for (n, rep) in reports.iter().enumerate() {
            let ideal = rep.outcome("Ideal").unwrap();
            ensure!(ideal.normalized_surplus == 1.0, "cycle {n}: Ideal not normalized to 1");
            for o in &rep.outcomes {
                ensure!(o.surplus <= ideal.surplus + 1e-9, "cycle {n}: {} beats Ideal", o.method);
            }
        }
        let s = summarize(&reports).map_err(|e| e.to_string())?;
        let get = |m: &str| s.iter().find(|r| r.method == m).unwrap().clone();
        let (b, d, st) = (get("Baseline"), get("Deterministic"), get("Stochastic"));
        for o in [&d, &st] {
            ensure!(
                b.avg_normalized_surplus <= o.avg_normalized_surplus && o.avg_normalized_surplus <= 1.0,
                "seed {seed}: {} normalized {} vs Baseline {}",
                o.method,
                o.avg_normalized_surplus,
                b.avg_normalized_surplus
            );
            ensure!(o.avg_cost < b.avg_cost, "seed {seed}: {} cost not below Baseline", o.method);
        }
        lines.push(format!(
            "seed {seed}: B {:.3} D {:.3} S {:.3}, cost B {:.0} D {:.0} S {:.0}",
            b.avg_normalized_surplus,
            d.avg_normalized_surplus,
            st.avg_normalized_surplus,
            b.avg_cost,
            d.avg_cost,
            st.avg_cost
        ));
    }
    let took = within(Duration::from_secs(120), start)?;
    Ok(format!("{} ({took:.2?})", lines.join("; ")))
}

fn price_utility_monotonicity() -> Outcome {
    let cycles = synthetic_cycles(8, 11);
    let spec = UtilitySpec::default();
    let set = ProviderSet::new(hourly(15.0), vec![15.0]).unwrap();
    let grids = [
        (SweepParam::Price, vec![5.0, 10.0, 15.0, 20.0, 25.0], -1.0),
        (SweepParam::UtilityFactor, vec![0.02, 0.04, 0.08, 0.16], 1.0),
    ];
    for (param, grid, direction) in grids {
        let rows = sweep(&cycles, param, &grid, &spec, &set, &Case::SINGLE).map_err(|e| e.to_string())?;
        for (method, series) in surplus_by_method(&rows) {
            for w in series.windows(2) {
                ensure!(
                    direction * (w[1].1 - w[0].1) >= 0.0,
                    "{} sweep, {method}: surplus {} at {} then {} at {}",
                    param.name(),
                    w[0].1,
                    w[0].0,
                    w[1].1,
                    w[1].0
                );
            }
        }
    }
    Ok("monotone for all four methods on both grids".into())
}

fn msp_vs_ssp() -> Outcome {
    let cycles = synthetic_cycles(8, 21);
    let spec = UtilitySpec::default();
    let mut worst_equal = f64::INFINITY;
    let equal = ProviderSet::new(hourly(15.0), vec![15.0, 15.0]).unwrap();
    let reports = rolling_reports(&cycles, &spec, &equal, &Case::PROVIDER_COMPARISON).map_err(|e| e.to_string())?;
    for (n, rep) in reports.iter().enumerate() {
        for m in ["Deterministic", "Stochastic"] {
            let msp = rep.outcome(&format!("{m}-MSP")).unwrap().surplus;
            let ssp = rep.outcome(&format!("{m}-SSP")).unwrap().surplus;
            worst_equal = worst_equal.min(msp - ssp);
            ensure!(msp >= ssp - 1e-9, "equal prices, cycle {n}, {m}: MSP {msp} below SSP {ssp}");
        }
    }
    let pricey = ProviderSet::new(hourly(15.0), vec![15.0, 1500.0]).unwrap();
    let reports = rolling_reports(&cycles, &spec, &pricey, &Case::PROVIDER_COMPARISON).map_err(|e| e.to_string())?;
    let avg = summarize(&reports).map_err(|e| e.to_string())?;
    let get = |m: &str| avg.iter().find(|r| r.method == m).unwrap().avg_surplus;
    for m in ["Deterministic", "Stochastic"] {
        let (msp, ssp) = (get(&format!("{m}-MSP")), get(&format!("{m}-SSP")));
        ensure!(
            rel(msp, ssp) <= 1e-6,
            "equal prices hold (smallest MSP-SSP margin {worst_equal:.3}), but with provider 2 at x100 \
             {m}-MSP averages {msp:.3} vs SSP {ssp:.3} ({:.2}% apart): the second provider bills nothing yet serves the full demand on its \
             free burst slots on top of the first provider",
            100.0 * rel(msp, ssp)
        );
    }
    Ok(format!("smallest MSP-SSP margin at equal prices {worst_equal:.3}"))
}

fn golden(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn toy_scenario_single() -> DemandScenario {
    DemandScenario::new(vec![vec![
        Realization { demand: 40.0, prob: 0.25 },
        Realization { demand: 120.0, prob: 0.75 },
    ]])
    .unwrap()
}

fn toy_scenario_multi() -> DemandScenario {
    DemandScenario::new(vec![
        vec![Realization { demand: 40.0, prob: 0.5 }, Realization { demand: 80.0, prob: 0.5 }],
        vec![Realization { demand: 20.0, prob: 0.25 }, Realization { demand: 60.0, prob: 0.75 }],
    ])
    .unwrap()
}

fn lp_golden_files() -> Outcome {
    let spec = UtilitySpec::default();
    let policy = BillingPolicy::new(1, 3600.0, 0.95, 15.0).unwrap();
    let single = build_milp(&toy_scenario_single(), &spec, &policy, 3, None).unwrap();
    let base = BillingPolicy::new(2, 3600.0, 0.95, 0.0).unwrap();
    let set = ProviderSet::new(base, vec![15.0, 20.0]).unwrap();
    let multi = build_milp_multi(&toy_scenario_multi(), &spec, &set, 3, None).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (model, file) in [(&single, "single_provider.lp"), (&multi, "two_providers.lp")] {
        let text = model.to_lp_string();
        if std::env::var_os("BURSTOPT_BLESS").is_some() {
            let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(file);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(path, &text).unwrap();
        }
        ensure!(text == golden(file), "{file}: export differs from the golden file");
        let path = dir.path().join(file);
        model.export_lp(&path).map_err(|e| e.to_string())?;
        model.export_lp(dir.path().join("again.lp")).map_err(|e| e.to_string())?;
        let (a, b) = (std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.lp")).unwrap());
        ensure!(a == b && a == text.as_bytes(), "{file}: repeated exports differ");
        let back = MilpModel::from_lp_str(&text).map_err(|e| e.to_string())?;
        ensure!(back.to_lp_string() == text, "{file}: parse and re-export is not byte-identical");
    }
    Ok("single- and two-provider exports match golden files".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("percentile via mask equals sorted percentile", percentile_equivalence),
        ("deterministic planner is optimal", deterministic_optimality),
        ("sweep agrees with oracle", stochastic_agreement),
        ("three tangents are accurate", tangent_accuracy),
        ("update rule is monotone", update_monotonicity),
        ("method ordering on bursty traces", method_ordering),
        ("surplus monotone in price and utility factor", price_utility_monotonicity),
        ("multiple providers never worse than one", msp_vs_ssp),
        ("LP export golden files", lp_golden_files),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
