//! Mixed-integer linear model of the planning problem, for external solvers.
//!
//! Per provider `i`: usage `x`, binary mask `rho` (1 = the slot counts toward
//! the bill) and cap `phi`, linked by `x - phi + L rho <= L`, with
//! `sum_t rho = kept_count`. Per realization `k` of slot `t`: served volume
//! `q <= sum_i x`, `q <= D`, and `h` bounded by N tangent lines of the
//! utility, anchored at `n T D / N`. The objective maximizes
//! `sum p h - sum_i price_i phi_i`. At finite N the tangent bound makes the
//! model objective an over-estimate of the true surplus.
//!
//! LP output uses the CPLEX text format. Numbers are rounded to 12
//! significant digits so the files do not depend on the last bits of
//! platform `powf`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::billing::BillingPolicy;
use crate::demand::DemandScenario;
use crate::error::{check_len, Error, Result};
use crate::multi::{MultiPlan, ProviderSet};
use crate::plan::Plan;
use crate::utility::UtilitySpec;

pub const DEFAULT_TANGENTS: usize = 3;
const LINE_WIDTH: usize = 78;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowFamily {
    CapLink,
    Cardinality,
    ServedBelowUsage,
    ServedBelowDemand,
    Tangent,
}

impl RowFamily {
    const ALL: [RowFamily; 5] = [
        RowFamily::CapLink,
        RowFamily::Cardinality,
        RowFamily::ServedBelowUsage,
        RowFamily::ServedBelowDemand,
        RowFamily::Tangent,
    ];

    fn prefix(self) -> &'static str {
        match self {
            RowFamily::CapLink => "caplink",
            RowFamily::Cardinality => "card",
            RowFamily::ServedBelowUsage => "qx",
            RowFamily::ServedBelowDemand => "qd",
            RowFamily::Tangent => "tan",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        let head = name.split('_').next()?;
        Self::ALL.into_iter().find(|f| f.prefix() == head)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub family: RowFamily,
    /// `(variable index, coefficient)`
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Maximized.
    pub objective: Vec<(usize, f64)>,
    pub big_l: f64,
    index: HashMap<String, usize>,
}

struct Builder {
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
}

impl Builder {
    fn var(&mut self, name: String, lower: f64, upper: f64, kind: VarKind) -> usize {
        self.variables.push(Variable {
            name,
            lower,
            upper,
            kind,
        });
        self.variables.len() - 1
    }

    fn row(&mut self, name: String, family: RowFamily, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        let terms = terms.into_iter().filter(|(_, c)| *c != 0.0).collect();
        self.constraints.push(Constraint {
            name,
            family,
            terms,
            sense,
            rhs,
        });
    }
}

/// Single-provider model with `tangents` lines per realization. `big_l`
/// defaults to the peak demand plus one and must not be below the peak.
pub fn build_milp(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    policy: &BillingPolicy,
    tangents: usize,
    big_l: Option<f64>,
) -> Result<MilpModel> {
    let set = ProviderSet::new(policy.clone(), vec![policy.price])?;
    build_milp_multi(scenario, spec, &set, tangents, big_l)
}

/// Model over all providers of `providers`. With one provider the names
/// match [`build_milp`] (`x_3`, `phi`); otherwise they carry the provider
/// id first (`x_1_3`, `phi_1`).
pub fn build_milp_multi(
    scenario: &DemandScenario,
    spec: &UtilitySpec,
    providers: &ProviderSet,
    tangents: usize,
    big_l: Option<f64>,
) -> Result<MilpModel> {
    spec.validate()?;
    providers.validate()?;
    check_len(scenario.tau(), providers.tau())?;
    if tangents == 0 {
        return Err(Error::invalid("tangent count must be at least 1"));
    }
    let peak = scenario.peak_demand();
    let big_l = match big_l {
        None => peak + 1.0,
        Some(l) if l.is_finite() && l >= peak => l,
        Some(l) => {
            return Err(Error::invalid(format!(
                "big-L {l} must be finite and at least the peak demand {peak}"
            )))
        }
    };
    let tau = providers.tau();
    let t_sec = providers.slot_seconds();
    let single = providers.len() == 1;
    let tag = |i: usize, rest: &str| -> String {
        match (single, rest.is_empty()) {
            (true, true) => String::new(),
            (true, false) => format!("_{rest}"),
            (false, true) => format!("_{i}"),
            (false, false) => format!("_{i}_{rest}"),
        }
    };

    let mut b = Builder {
        variables: Vec::new(),
        constraints: Vec::new(),
    };
    let mut x = Vec::new();
    let mut rho = Vec::new();
    let mut phi = Vec::new();
    for i in 0..providers.len() {
        x.push(
            (0..tau)
                .map(|t| b.var(format!("x{}", tag(i, &t.to_string())), 0.0, f64::INFINITY, VarKind::Continuous))
                .collect::<Vec<_>>(),
        );
        rho.push(
            (0..tau)
                .map(|t| b.var(format!("rho{}", tag(i, &t.to_string())), 0.0, 1.0, VarKind::Binary))
                .collect::<Vec<_>>(),
        );
        phi.push(b.var(format!("phi{}", tag(i, "")), 0.0, f64::INFINITY, VarKind::Continuous));
    }
    let q: Vec<Vec<usize>> = (0..tau)
        .map(|t| {
            (0..scenario.slot(t).len())
                .map(|k| b.var(format!("q_{t}_{k}"), 0.0, f64::INFINITY, VarKind::Continuous))
                .collect()
        })
        .collect();
    let h: Vec<Vec<usize>> = (0..tau)
        .map(|t| {
            (0..scenario.slot(t).len())
                .map(|k| {
                    b.var(
                        format!("h_{t}_{k}"),
                        f64::NEG_INFINITY,
                        f64::INFINITY,
                        VarKind::Continuous,
                    )
                })
                .collect()
        })
        .collect();

    for i in 0..providers.len() {
        for t in 0..tau {
            b.row(
                format!("caplink{}", tag(i, &t.to_string())),
                RowFamily::CapLink,
                vec![(x[i][t], 1.0), (phi[i], -1.0), (rho[i][t], big_l)],
                Sense::Le,
                big_l,
            );
        }
    }
    for i in 0..providers.len() {
        b.row(
            format!("card{}", tag(i, "")),
            RowFamily::Cardinality,
            rho[i].iter().map(|&r| (r, 1.0)).collect(),
            Sense::Eq,
            providers.policy(i).kept_count() as f64,
        );
    }
    for t in 0..tau {
        for k in 0..q[t].len() {
            let mut terms = vec![(q[t][k], 1.0)];
            terms.extend(x.iter().map(|xi| (xi[t], -1.0)));
            b.row(format!("qx_{t}_{k}"), RowFamily::ServedBelowUsage, terms, Sense::Le, 0.0);
        }
    }
    for t in 0..tau {
        for (k, r) in scenario.slot(t).iter().enumerate() {
            b.row(
                format!("qd_{t}_{k}"),
                RowFamily::ServedBelowDemand,
                vec![(q[t][k], 1.0)],
                Sense::Le,
                r.demand,
            );
        }
    }
    for t in 0..tau {
        for (k, r) in scenario.slot(t).iter().enumerate() {
            let set = spec.tangent_envelope(r.demand, t_sec, tangents)?;
            for (n, line) in set.lines.iter().enumerate() {
                b.row(
                    format!("tan_{t}_{k}_{n}"),
                    RowFamily::Tangent,
                    vec![(h[t][k], 1.0), (q[t][k], -line.slope * t_sec)],
                    Sense::Le,
                    line.intercept,
                );
            }
        }
    }

    let mut objective = Vec::new();
    for t in 0..tau {
        for (k, r) in scenario.slot(t).iter().enumerate() {
            if r.prob != 0.0 {
                objective.push((h[t][k], r.prob));
            }
        }
    }
    for (i, &p) in phi.iter().enumerate() {
        if providers.prices()[i] != 0.0 {
            objective.push((p, -providers.prices()[i]));
        }
    }
    Ok(MilpModel::new(b.variables, b.constraints, objective, big_l))
}

impl MilpModel {
    fn new(
        variables: Vec<Variable>,
        constraints: Vec<Constraint>,
        objective: Vec<(usize, f64)>,
        big_l: f64,
    ) -> Self {
        let index = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.clone(), i))
            .collect();
        Self {
            variables,
            constraints,
            objective,
            big_l,
            index,
        }
    }

    pub fn variable(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn row_count(&self, family: RowFamily) -> usize {
        self.constraints.iter().filter(|c| c.family == family).count()
    }

    pub fn binary_count(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn evaluate_objective(&self, values: &[f64]) -> Result<f64> {
        check_len(values.len(), self.variables.len())?;
        Ok(self.objective.iter().map(|&(j, c)| c * values[j]).sum())
    }

    /// Largest violation over rows, bounds and integrality.
    pub fn max_violation(&self, values: &[f64]) -> Result<f64> {
        check_len(values.len(), self.variables.len())?;
        let mut worst: f64 = 0.0;
        for (v, &val) in self.variables.iter().zip(values) {
            worst = worst.max(v.lower - val).max(val - v.upper);
            if v.kind == VarKind::Binary {
                worst = worst.max((val - val.round()).abs());
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(j, a)| a * values[j]).sum();
            let excess = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(excess);
        }
        Ok(worst)
    }

    fn named(&self, name: &str) -> Result<usize> {
        self.variable(name)
            .ok_or_else(|| Error::invalid(format!("model has no variable {name}")))
    }

    /// Variable values for a single-provider plan: `q = min(x, D)` and `h` on
    /// the tangent envelope.
    pub fn embed_plan(
        &self,
        plan: &Plan,
        scenario: &DemandScenario,
        spec: &UtilitySpec,
        slot_seconds: f64,
        tangents: usize,
    ) -> Result<Vec<f64>> {
        let mut values = vec![0.0; self.variables.len()];
        check_len(plan.tau(), scenario.tau())?;
        for t in 0..plan.tau() {
            values[self.named(&format!("x_{t}"))?] = plan.planned_usage[t];
            values[self.named(&format!("rho_{t}"))?] = f64::from(u8::from(plan.burst_mask[t]));
        }
        values[self.named("phi")?] = plan.cap_phi;
        self.embed_served(&mut values, &plan.planned_usage, scenario, spec, slot_seconds, tangents)?;
        Ok(values)
    }

    /// Multi-provider counterpart of [`MilpModel::embed_plan`].
    pub fn embed_multi_plan(
        &self,
        plan: &MultiPlan,
        scenario: &DemandScenario,
        spec: &UtilitySpec,
        slot_seconds: f64,
        tangents: usize,
    ) -> Result<Vec<f64>> {
        if plan.providers.len() == 1 {
            let p = &plan.providers[0];
            let single = Plan {
                planned_usage: p.planned_usage.clone(),
                burst_mask: p.burst_mask.clone(),
                cap_phi: p.cap_phi,
                expected_cost: p.cost,
                expected_surplus: plan.expected_surplus,
                solver: plan.solver.clone(),
            };
            return self.embed_plan(&single, scenario, spec, slot_seconds, tangents);
        }
        check_len(plan.tau, scenario.tau())?;
        let mut values = vec![0.0; self.variables.len()];
        for (i, p) in plan.providers.iter().enumerate() {
            for t in 0..plan.tau {
                values[self.named(&format!("x_{i}_{t}"))?] = p.planned_usage[t];
                values[self.named(&format!("rho_{i}_{t}"))?] = f64::from(u8::from(p.burst_mask[t]));
            }
            values[self.named(&format!("phi_{i}"))?] = p.cap_phi;
        }
        self.embed_served(&mut values, &plan.total_usage(), scenario, spec, slot_seconds, tangents)?;
        Ok(values)
    }

    fn embed_served(
        &self,
        values: &mut [f64],
        total: &[f64],
        scenario: &DemandScenario,
        spec: &UtilitySpec,
        slot_seconds: f64,
        tangents: usize,
    ) -> Result<()> {
        for (t, dist) in scenario.slots().iter().enumerate() {
            for (k, r) in dist.iter().enumerate() {
                let served = total[t].min(r.demand);
                values[self.named(&format!("q_{t}_{k}"))?] = served;
                let set = spec.tangent_envelope(r.demand, slot_seconds, tangents)?;
                values[self.named(&format!("h_{t}_{k}"))?] = set.envelope(slot_seconds * served);
            }
        }
        Ok(())
    }

    /// CPLEX LP text. Variables appear in the bounds section in model order.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::new();
        out.push_str("\\ burstopt planning model\n");
        out.push_str("Maximize\n");
        push_expr(&mut out, "obj", &self.objective, &self.variables, None);
        out.push_str("Subject To\n");
        for c in &self.constraints {
            push_expr(
                &mut out,
                &c.name,
                &c.terms,
                &self.variables,
                Some((c.sense, c.rhs)),
            );
        }
        out.push_str("Bounds\n");
        for v in &self.variables {
            let line = match (v.lower, v.upper) {
                (l, u) if l == f64::NEG_INFINITY && u == f64::INFINITY => format!(" {} free", v.name),
                (l, u) if u == f64::INFINITY => format!(" {} >= {}", v.name, num(l)),
                (l, u) if l == f64::NEG_INFINITY => format!(" -inf <= {} <= {}", v.name, num(u)),
                (l, u) => format!(" {} <= {} <= {}", num(l), v.name, num(u)),
            };
            out.push_str(&line);
            out.push('\n');
        }
        let binaries: Vec<&str> = self
            .variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| v.name.as_str())
            .collect();
        if !binaries.is_empty() {
            out.push_str("Binary\n");
            push_wrapped(&mut out, binaries.iter().map(|s| s.to_string()));
        }
        out.push_str("End\n");
        out
    }

    pub fn export_lp(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_lp_string().as_bytes())?;
        Ok(())
    }

    /// Reads the subset of the LP format that [`MilpModel::to_lp_string`]
    /// writes. Every variable must be listed in the bounds section.
    pub fn from_lp_str(text: &str) -> Result<Self> {
        parse_lp(text)
    }
}

/// 12 significant digits, shortest form, no negative zero.
fn num(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

fn push_wrapped(out: &mut String, tokens: impl Iterator<Item = String>) {
    let mut line = String::new();
    for tok in tokens {
        if !line.is_empty() && line.len() + 1 + tok.len() > LINE_WIDTH {
            out.push_str(&line);
            out.push('\n');
            line.clear();
        }
        if line.is_empty() {
            line.push_str("   ");
        }
        line.push(' ');
        line.push_str(&tok);
    }
    if !line.is_empty() {
        out.push_str(&line);
        out.push('\n');
    }
}

fn push_expr(
    out: &mut String,
    name: &str,
    terms: &[(usize, f64)],
    vars: &[Variable],
    tail: Option<(Sense, f64)>,
) {
    let mut tokens = Vec::with_capacity(terms.len() + 1);
    for (n, &(j, c)) in terms.iter().enumerate() {
        let sign = if c < 0.0 { "-" } else { "+" };
        let mag = num(c.abs());
        let body = if mag == "1" {
            vars[j].name.clone()
        } else {
            format!("{mag} {}", vars[j].name)
        };
        tokens.push(if n == 0 && sign == "+" {
            body
        } else {
            format!("{sign} {body}")
        });
    }
    if tokens.is_empty() {
        tokens.push("0".to_string());
    }
    if let Some((sense, rhs)) = tail {
        tokens.push(format!("{} {}", sense.symbol(), num(rhs)));
    }
    let mut first = format!(" {name}:");
    let mut rest = tokens.into_iter();
    // the head line keeps at least one token so no line ends on the label
    if let Some(tok) = rest.next() {
        let _ = write!(first, " {tok}");
    }
    let mut line = first;
    for tok in rest {
        if line.len() + 1 + tok.len() > LINE_WIDTH {
            out.push_str(&line);
            out.push('\n');
            line = String::from("   ");
        }
        line.push(' ');
        line.push_str(&tok);
    }
    out.push_str(&line);
    out.push('\n');
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Objective,
    Rows,
    Bounds,
    Binary,
    End,
}

fn parse_lp(text: &str) -> Result<MilpModel> {
    let mut section = Section::Preamble;
    let mut statements: Vec<(Section, usize, String)> = Vec::new();
    let mut bounds: Vec<(usize, String)> = Vec::new();
    let mut binaries: Vec<String> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('\\').next().unwrap_or("").trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let keyword = line.trim().to_ascii_lowercase();
        let next = match keyword.as_str() {
            "maximize" | "maximum" | "max" => Some(Section::Objective),
            "subject to" | "st" | "s.t." => Some(Section::Rows),
            "bounds" => Some(Section::Bounds),
            "binary" | "binaries" => Some(Section::Binary),
            "end" => Some(Section::End),
            _ => None,
        };
        if let Some(s) = next {
            section = s;
            continue;
        }
        match section {
            Section::Objective | Section::Rows => {
                let continuation = line.starts_with("   ");
                match statements.last_mut() {
                    Some((s, _, body)) if continuation && *s == section => {
                        body.push(' ');
                        body.push_str(line.trim());
                    }
                    _ => statements.push((section, line_no, line.trim().to_string())),
                }
            }
            Section::Bounds => bounds.push((line_no, line.trim().to_string())),
            Section::Binary => binaries.extend(line.split_whitespace().map(str::to_string)),
            Section::Preamble | Section::End => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "text outside a section".into(),
                })
            }
        }
    }

    let mut variables = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, b) in &bounds {
        let err = |m: &str| Error::Parse {
            line: *line,
            message: m.to_string(),
        };
        let tok: Vec<&str> = b.split_whitespace().collect();
        let (name, lower, upper) = match tok.as_slice() {
            [n, "free"] => (*n, f64::NEG_INFINITY, f64::INFINITY),
            [n, ">=", l] => (*n, parse_num(l).ok_or_else(|| err("bad bound"))?, f64::INFINITY),
            [l, "<=", n, "<=", u] => (
                *n,
                parse_num(l).ok_or_else(|| err("bad bound"))?,
                parse_num(u).ok_or_else(|| err("bad bound"))?,
            ),
            _ => return Err(err("unsupported bound form")),
        };
        if index.insert(name.to_string(), variables.len()).is_some() {
            return Err(err("variable bounded twice"));
        }
        variables.push(Variable {
            name: name.to_string(),
            lower,
            upper,
            kind: VarKind::Continuous,
        });
    }
    for name in &binaries {
        let j = *index
            .get(name)
            .ok_or_else(|| Error::invalid(format!("binary {name} has no bounds entry")))?;
        variables[j].kind = VarKind::Binary;
    }

    let mut objective = None;
    let mut constraints = Vec::new();
    for (sec, line, body) in statements {
        let err = |m: String| Error::Parse { line, message: m };
        let (name, expr) = body
            .split_once(':')
            .ok_or_else(|| err("missing row label".into()))?;
        let tokens: Vec<&str> = expr.split_whitespace().collect();
        let (terms, tail) = parse_terms(&tokens, &index).map_err(err)?;
        match sec {
            Section::Objective => {
                if tail.is_some() {
                    return Err(err("objective has a right-hand side".into()));
                }
                objective = Some(terms);
            }
            _ => {
                let (sense, rhs) = tail.ok_or_else(|| err("row has no right-hand side".into()))?;
                let family = RowFamily::from_name(name.trim())
                    .ok_or_else(|| err(format!("unknown row family in {name}")))?;
                constraints.push(Constraint {
                    name: name.trim().to_string(),
                    family,
                    terms,
                    sense,
                    rhs,
                });
            }
        }
    }
    let objective = objective.ok_or_else(|| Error::invalid("LP text has no objective"))?;
    let big_l = constraints
        .iter()
        .find(|c| c.family == RowFamily::CapLink)
        .map(|c| c.rhs)
        .unwrap_or(0.0);
    Ok(MilpModel::new(variables, constraints, objective, big_l))
}

fn parse_num(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

type Terms = Vec<(usize, f64)>;

fn parse_terms(
    tokens: &[&str],
    index: &HashMap<String, usize>,
) -> std::result::Result<(Terms, Option<(Sense, f64)>), String> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i];
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            "<=" | ">=" | "=" => {
                let sense = match tok {
                    "<=" => Sense::Le,
                    ">=" => Sense::Ge,
                    _ => Sense::Eq,
                };
                let rhs = tokens
                    .get(i + 1)
                    .and_then(|s| parse_num(s))
                    .ok_or("missing right-hand side")?;
                if i + 2 != tokens.len() {
                    return Err("trailing tokens after right-hand side".into());
                }
                return Ok((terms, Some((sense, rhs))));
            }
            _ => {
                if let Some(&j) = index.get(tok) {
                    terms.push((j, sign * coef.take().unwrap_or(1.0)));
                    sign = 1.0;
                } else if let Some(c) = parse_num(tok) {
                    // a lone "0" stands for an empty expression
                    coef = Some(c);
                } else {
                    return Err(format!("unknown variable {tok}"));
                }
            }
        }
        i += 1;
    }
    Ok((terms, None))
}
