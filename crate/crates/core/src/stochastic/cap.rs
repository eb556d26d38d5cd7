//! The cap problem shared by the stochastic and multi-provider planners.
//!
//! Each slot carries a concave nondecreasing value curve
//! `v_t(x) = sum_k p_k U(T min(x + o_t, D_k))` of the usage `x` bought from the
//! provider being planned (`o_t` is usage already covered elsewhere, zero for
//! a single provider). Choosing a cap `phi` and a set `S` of `m` free slots
//! gives
//!
//! ```text
//! F(phi, S) = sum_{t not in S} v_t(phi) + sum_{t in S} v_t(inf) - price * phi
//! ```
//!
//! and for fixed `phi` the best `S` is the `m` slots with the largest gain
//! `v_t(inf) - v_t(phi)`. Between consecutive demand breakpoints every curve is
//! `c_t + p_t U(T(phi + o_t))`. When all offsets agree the gains are affine in
//! the common `u = U(T(phi + o))`, so the top-`m` sum is a convex piecewise
//! linear function of `u` whose pieces are found exactly by intersecting
//! supporting lines. With distinct offsets the pieces are located by
//! bisection on `phi`, which can miss a set that wins only on a sliver
//! narrower than the bisection depth.

use std::cmp::Ordering;

use crate::search::golden_section_max;
use crate::utility::{Realization, UtilitySpec};

/// Bisection depth for segments whose gains share no common parametrization.
const BISECT_DEPTH: u32 = 14;
const SHARED_DEPTH: u32 = 64;
const DEDUP_REL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub(crate) struct SlotCurve {
    offset: f64,
    dist: Vec<Realization>,
    saturation: f64,
    sat_value: f64,
}

impl SlotCurve {
    pub(crate) fn new(dist: &[Realization], offset: f64, spec: &UtilitySpec, slot_seconds: f64) -> Self {
        let saturation = dist
            .iter()
            .map(|r| (r.demand - offset).max(0.0))
            .fold(0.0, f64::max);
        let mut curve = Self {
            offset,
            dist: dist.to_vec(),
            saturation,
            sat_value: 0.0,
        };
        curve.sat_value = curve.value(saturation, spec, slot_seconds);
        curve
    }

    pub(crate) fn value(&self, x: f64, spec: &UtilitySpec, slot_seconds: f64) -> f64 {
        self.dist
            .iter()
            .map(|r| r.prob * spec.eval(slot_seconds * (x + self.offset).min(r.demand)))
            .sum()
    }

    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.dist
            .iter()
            .map(move |r| r.demand - self.offset)
            .filter(|&b| b > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct CapSolution {
    pub cap: f64,
    /// Free slots, ascending.
    pub freed: Vec<usize>,
    pub objective: f64,
    /// `(upper - lower) / |upper|` at termination; zero for exhaustive runs.
    pub gap: f64,
}

pub(crate) struct CapProblem<'a> {
    pub curves: Vec<SlotCurve>,
    pub spec: &'a UtilitySpec,
    pub slot_seconds: f64,
    pub price: f64,
    pub free: usize,
    pub tol: f64,
}

/// Candidate ranking: objective, then smaller cap, then lexicographically
/// smaller mask (earlier free slot).
fn better(value: f64, cap: f64, freed: &[usize], best: &CapSolution) -> bool {
    match value.partial_cmp(&best.objective) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => match cap.partial_cmp(&best.cap) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => freed < best.freed.as_slice(),
            _ => false,
        },
        _ => false,
    }
}

/// The `m` largest gains (earliest index among ties), as ascending indices.
fn top_set(gains: &[f64], m: usize) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    let order = |a: &usize, b: &usize| match gains[*b].total_cmp(&gains[*a]) {
        Ordering::Equal => a.cmp(b),
        o => o,
    };
    if m < idx.len() {
        idx.select_nth_unstable_by(m - 1, order);
        idx.truncate(m);
    }
    idx.sort_unstable();
    idx
}

/// Curves restricted to one breakpoint-free interval: `v_t = c_t + p_t U(T(phi + o_t))`.
struct Segment {
    lo: f64,
    hi: f64,
    base: Vec<f64>,
    weight: Vec<f64>,
    /// `v_t(inf) - c_t`; the gain is `alpha_t - p_t U(T(phi + o_t))`.
    alpha: Vec<f64>,
}

impl<'a> CapProblem<'a> {
    pub(crate) fn tau(&self) -> usize {
        self.curves.len()
    }

    fn shared_offset(&self) -> Option<f64> {
        let first = self.curves.first()?.offset;
        self.curves.iter().all(|c| c.offset == first).then_some(first)
    }

    fn u(&self, phi: f64, offset: f64) -> f64 {
        self.spec.eval(self.slot_seconds * (phi + offset))
    }

    /// Direct evaluation of `F(cap, freed)`.
    pub(crate) fn objective(&self, cap: f64, freed: &[usize]) -> f64 {
        let mut free_iter = freed.iter().peekable();
        let mut total = 0.0;
        for (t, c) in self.curves.iter().enumerate() {
            if free_iter.peek() == Some(&&t) {
                free_iter.next();
                total += c.sat_value;
            } else {
                total += c.value(cap, self.spec, self.slot_seconds);
            }
        }
        total - self.price * cap
    }

    fn gains_at(&self, phi: f64) -> Vec<f64> {
        self.curves
            .iter()
            .map(|c| c.sat_value - c.value(phi, self.spec, self.slot_seconds))
            .collect()
    }

    /// Planned usage for a solution: saturation on free slots, capped elsewhere.
    pub(crate) fn usage(&self, sol: &CapSolution) -> Vec<f64> {
        let mut usage: Vec<f64> = self
            .curves
            .iter()
            .map(|c| c.saturation.min(sol.cap))
            .collect();
        for &t in &sol.freed {
            usage[t] = self.curves[t].saturation;
        }
        usage
    }

    pub(crate) fn mask(&self, sol: &CapSolution) -> Vec<bool> {
        let mut mask = vec![true; self.tau()];
        for &t in &sol.freed {
            mask[t] = false;
        }
        mask
    }

    fn candidate_caps(&self) -> Vec<f64> {
        let mut caps: Vec<f64> = std::iter::once(0.0)
            .chain(self.curves.iter().flat_map(SlotCurve::breakpoints))
            .collect();
        caps.sort_by(f64::total_cmp);
        caps.dedup_by(|b, a| (*b - *a).abs() <= DEDUP_REL * a.abs().max(b.abs()));
        caps
    }

    fn segment(&self, lo: f64, hi: f64) -> Segment {
        let mid = 0.5 * (lo + hi);
        let n = self.tau();
        let (mut base, mut weight, mut alpha) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (t, c) in self.curves.iter().enumerate() {
            for r in &c.dist {
                if r.demand - c.offset <= mid {
                    base[t] += r.prob * self.spec.eval(self.slot_seconds * r.demand);
                } else {
                    weight[t] += r.prob;
                }
            }
            alpha[t] = c.sat_value - base[t];
        }
        Segment {
            lo,
            hi,
            base,
            weight,
            alpha,
        }
    }

    /// Breakpoint sweep over the cap with exact piece enumeration inside each
    /// interval when offsets are shared.
    pub(crate) fn sweep(&self) -> CapSolution {
        let caps = self.candidate_caps();
        let m = self.free;
        let start = top_set(&self.gains_at(0.0), m);
        let mut best = CapSolution {
            cap: 0.0,
            objective: self.objective(0.0, &start),
            freed: start,
            gap: 0.0,
        };
        let shared = self.shared_offset();
        for w in caps.windows(2) {
            let seg = self.segment(w[0], w[1]);
            let sets = match shared {
                Some(offset) => self.pieces_shared(&seg, offset),
                None => self.pieces_bisect(&seg),
            };
            for set in sets {
                let eval = SetObjective::new(self, &seg, &set);
                let found = golden_section_max(|phi| eval.value(self, phi), seg.lo, seg.hi, self.tol);
                if better(found.value, found.arg, &set, &best) {
                    best = CapSolution {
                        cap: found.arg,
                        freed: set,
                        objective: found.value,
                        gap: 0.0,
                    };
                }
            }
        }
        best.objective = self.objective(best.cap, &best.freed);
        best
    }

    fn pieces_shared(&self, seg: &Segment, offset: f64) -> Vec<Vec<usize>> {
        let m = self.free;
        let top_u = |u: f64| -> Vec<usize> {
            let gains: Vec<f64> = seg
                .alpha
                .iter()
                .zip(&seg.weight)
                .map(|(a, p)| a - p * u)
                .collect();
            top_set(&gains, m)
        };
        let line = |set: &[usize]| -> (f64, f64) {
            set.iter()
                .fold((0.0, 0.0), |(a, p), &t| (a + seg.alpha[t], p + seg.weight[t]))
        };
        let (u_lo, u_hi) = (self.u(seg.lo, offset), self.u(seg.hi, offset));
        let s_lo = top_u(u_lo);
        let s_hi = top_u(u_hi);
        let mut out = vec![s_lo.clone()];
        if s_hi != s_lo {
            // convex piecewise-linear top-m sum: refine between supporting lines
            let mut stack = vec![(s_lo, s_hi.clone(), 0u32)];
            while let Some((a, b, depth)) = stack.pop() {
                let (alpha_a, p_a) = line(&a);
                let (alpha_b, p_b) = line(&b);
                let dp = p_a - p_b;
                if depth >= SHARED_DEPTH || dp.abs() <= 1e-15 {
                    continue;
                }
                let u_x = ((alpha_a - alpha_b) / dp).clamp(u_lo.min(u_hi), u_lo.max(u_hi));
                let s_x = top_u(u_x);
                if s_x == a || s_x == b {
                    continue;
                }
                let (alpha_x, p_x) = line(&s_x);
                let on_line = alpha_a - p_a * u_x;
                let top = alpha_x - p_x * u_x;
                if top <= on_line + 1e-12 * (1.0 + on_line.abs()) {
                    continue;
                }
                if !out.contains(&s_x) {
                    out.push(s_x.clone());
                }
                stack.push((a, s_x.clone(), depth + 1));
                stack.push((s_x, b, depth + 1));
            }
            if !out.contains(&s_hi) {
                out.push(s_hi);
            }
        }
        out
    }

    fn pieces_bisect(&self, seg: &Segment) -> Vec<Vec<usize>> {
        let m = self.free;
        let top_phi = |phi: f64| -> Vec<usize> {
            let gains: Vec<f64> = (0..self.tau())
                .map(|t| seg.alpha[t] - seg.weight[t] * self.u(phi, self.curves[t].offset))
                .collect();
            top_set(&gains, m)
        };
        let s_lo = top_phi(seg.lo);
        let s_hi = top_phi(seg.hi);
        let mut out = vec![s_lo.clone()];
        if s_hi != s_lo {
            let mut stack = vec![(seg.lo, seg.hi, s_lo, s_hi.clone(), 0u32)];
            while let Some((lo, hi, a, b, depth)) = stack.pop() {
                if depth >= BISECT_DEPTH {
                    continue;
                }
                let mid = 0.5 * (lo + hi);
                let s_mid = top_phi(mid);
                if !out.contains(&s_mid) {
                    out.push(s_mid.clone());
                }
                if s_mid != a {
                    stack.push((lo, mid, a, s_mid.clone(), depth + 1));
                }
                if s_mid != b {
                    stack.push((mid, hi, s_mid, b, depth + 1));
                }
            }
            if !out.contains(&s_hi) {
                out.push(s_hi);
            }
        }
        out
    }

    /// Exhaustive search over every free set. With `stop_at_gap`, stops once
    /// the incumbent is within that relative gap of an upper bound.
    pub(crate) fn enumerate(&self, stop_at_gap: Option<f64>) -> CapSolution {
        let n = self.tau();
        let m = self.free;
        let upper = stop_at_gap.map(|_| self.upper_bound());
        let mut best: Option<CapSolution> = None;
        let mut subset: Vec<usize> = (0..m).collect();
        loop {
            let top = self
                .curves
                .iter()
                .enumerate()
                .filter(|(t, _)| subset.binary_search(t).is_err())
                .map(|(_, c)| c.saturation)
                .fold(0.0, f64::max);
            let found = golden_section_max(|phi| self.objective(phi, &subset), 0.0, top, self.tol);
            let replace = match &best {
                None => true,
                Some(b) => better(found.value, found.arg, &subset, b),
            };
            if replace {
                best = Some(CapSolution {
                    cap: found.arg,
                    freed: subset.clone(),
                    objective: found.value,
                    gap: 0.0,
                });
            }
            if let (Some(limit), Some(ub), Some(b)) = (stop_at_gap, upper, &best) {
                let g = super::near_gap(b.objective, ub.max(b.objective)).unwrap_or(0.0);
                if g <= limit {
                    let mut sol = b.clone();
                    sol.gap = g;
                    return sol;
                }
            }
            if !next_combination(&mut subset, n) {
                break;
            }
        }
        let mut sol = best.expect("at least one subset is enumerated");
        if let Some(ub) = upper {
            sol.gap = super::near_gap(sol.objective, ub.max(sol.objective)).unwrap_or(0.0);
        }
        sol
    }

    /// On each breakpoint interval, the best cap objective with no free slots
    /// plus the largest possible free-slot gains (gains fall as the cap rises).
    fn upper_bound(&self) -> f64 {
        let mut points: Vec<f64> = std::iter::once(0.0)
            .chain(self.curves.iter().flat_map(SlotCurve::breakpoints))
            .collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        let bonus = |phi: f64| -> f64 {
            let gains = self.gains_at(phi);
            top_set(&gains, self.free).iter().map(|&t| gains[t]).sum()
        };
        let mut ub = self.objective(0.0, &[]) + bonus(0.0);
        for w in points.windows(2) {
            let m = golden_section_max(|phi| self.objective(phi, &[]), w[0], w[1], self.tol);
            ub = ub.max(m.value + bonus(w[0]));
        }
        ub
    }
}

/// Advances a sorted k-subset of `0..n` to its lexicographic successor.
pub(crate) fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `F(phi, S)` on one segment: `constant + sum_j w_j U(T(phi + o_j)) - price * phi`.
struct SetObjective {
    constant: f64,
    terms: Vec<(f64, f64)>,
}

impl SetObjective {
    fn new(problem: &CapProblem<'_>, seg: &Segment, freed: &[usize]) -> Self {
        let mut constant: f64 = seg.base.iter().sum();
        constant += freed.iter().map(|&t| seg.alpha[t]).sum::<f64>();
        let mut terms: Vec<(f64, f64)> = problem
            .curves
            .iter()
            .enumerate()
            .filter(|(t, _)| seg.weight[*t] > 0.0 && freed.binary_search(t).is_err())
            .map(|(t, c)| (c.offset, seg.weight[t]))
            .collect();
        terms.sort_by(|a, b| a.0.total_cmp(&b.0));
        terms.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        Self { constant, terms }
    }

    fn value(&self, problem: &CapProblem<'_>, phi: f64) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|&(o, w)| w * problem.u(phi, o))
                .sum::<f64>()
            - problem.price * phi
    }
}
