//! Test-side references that share no code with the solvers.
#![allow(dead_code)]

use burstopt::demand::DemandScenario;
use burstopt::utility::Realization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isoelastic utility of a volume, written out again.
#[derive(Clone, Copy, Debug)]
pub struct Iso {
    pub factor: f64,
    pub curvature: f64,
}

impl Iso {
    pub fn u(&self, v: f64) -> f64 {
        if self.curvature == 1.0 {
            self.factor * v.max(1e-6).ln()
        } else {
            self.factor * v.powf(1.0 - self.curvature) / (1.0 - self.curvature)
        }
    }

    /// Argmax over `x >= 0` of `w U(T x) - price x`.
    fn stationary(&self, w: f64, t: f64, price: f64) -> f64 {
        if price <= 0.0 {
            return f64::INFINITY;
        }
        if self.curvature == 1.0 {
            w * self.factor / price
        } else {
            (w * t * self.factor / price).powf(1.0 / self.curvature) / t
        }
    }
}

/// Billed percentile by the textbook procedure: sort, drop the top
/// `tau - ceil(q tau)` samples, take the largest remaining.
pub fn textbook_percentile(x: &[f64], q: f64) -> f64 {
    let tau = x.len();
    let raw = q * tau as f64;
    let kept = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() } as usize;
    let mut s = x.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if kept == 0 {
        0.0
    } else {
        s[tau - kept]
    }
}

pub fn kept_count(tau: usize, q: f64) -> usize {
    let raw = q * tau as f64;
    (if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() }) as usize
}

/// Expected surplus of a usage vector, from scratch.
pub fn surplus_of(usage: &[f64], sc: &DemandScenario, iso: Iso, t: f64, q: f64, price: f64) -> f64 {
    let util: f64 = usage
        .iter()
        .zip(sc.slots())
        .map(|(&x, d)| d.iter().map(|r| r.prob * iso.u(t * x.min(r.demand))).sum::<f64>())
        .sum();
    util - price * textbook_percentile(usage, q)
}

/// Exact optimum of the expected-surplus problem by enumerating free-slot
/// sets. For each set the cap objective is piecewise `c + w U(T phi) - price phi`
/// between realizations, so its maximum is at a breakpoint or at the closed
/// form stationary point of some piece.
pub fn exact_optimum(sc: &DemandScenario, iso: Iso, t: f64, q: f64, price: f64) -> f64 {
    let tau = sc.tau();
    let m = tau - kept_count(tau, q);
    let full: Vec<f64> = sc
        .slots()
        .iter()
        .map(|d| d.iter().map(|r| r.prob * iso.u(t * r.demand)).sum())
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut subset: Vec<usize> = (0..m).collect();
    loop {
        let capped: Vec<&Vec<Realization>> = (0..tau)
            .filter(|i| !subset.contains(i))
            .map(|i| &sc.slots()[i])
            .collect();
        let constant: f64 = subset.iter().map(|&i| full[i]).sum();
        let mut points: Vec<f64> = vec![0.0];
        points.extend(capped.iter().flat_map(|d| d.iter().map(|r| r.demand)));
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup();
        let g = |phi: f64| -> f64 {
            constant
                + capped
                    .iter()
                    .map(|d| d.iter().map(|r| r.prob * iso.u(t * phi.min(r.demand))).sum::<f64>())
                    .sum::<f64>()
                - price * phi
        };
        let mut local = f64::NEG_INFINITY;
        for p in &points {
            local = local.max(g(*p));
        }
        for w in points.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let weight: f64 = capped
                .iter()
                .flat_map(|d| d.iter())
                .filter(|r| r.demand > mid)
                .map(|r| r.prob)
                .sum();
            let s = iso.stationary(weight, t, price);
            if s > w[0] && s < w[1] {
                local = local.max(g(s));
            }
        }
        best = best.max(local);
        if !advance(&mut subset, tau) {
            break;
        }
    }
    best
}

fn advance(s: &mut [usize], n: usize) -> bool {
    let k = s.len();
    for i in (0..k).rev() {
        if s[i] < n - k + i {
            s[i] += 1;
            for j in i + 1..k {
                s[j] = s[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub fn random_scenario(r: &mut impl Rng, tau: usize, k_max: usize, scale: f64) -> DemandScenario {
    let slots = (0..tau)
        .map(|_| {
            let k = r.random_range(1..=k_max);
            let mut w: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            let mut dist: Vec<Realization> = w
                .iter()
                .map(|&p| Realization {
                    demand: scale * r.random_range(0.05..1.0),
                    prob: p,
                })
                .collect();
            // keep the sum exactly one
            let head: f64 = dist[..k - 1].iter().map(|x| x.prob).sum();
            dist[k - 1].prob = 1.0 - head;
            dist
        })
        .collect();
    DemandScenario::new(slots).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

impl Iso {
    pub fn slope_at(&self, v: f64) -> f64 {
        self.factor * v.powf(-self.curvature)
    }

    /// `N` tangents anchored at `n T d / N`, as (slope, intercept).
    pub fn tangents(&self, t: f64, d: f64, n: usize) -> Vec<(f64, f64)> {
        (1..=n)
            .map(|j| {
                let v = j as f64 * t * d / n as f64;
                (self.slope_at(v), self.u(v) - self.slope_at(v) * v)
            })
            .collect()
    }
}

fn envelope(lines: &[(f64, f64)], v: f64) -> f64 {
    lines.iter().map(|(s, b)| s * v + b).fold(f64::INFINITY, f64::min)
}

/// A maximizer of the tangent-envelope surplus, found by enumerating free
/// sets and the kinks of the concave piecewise-linear objective in the cap.
/// Returns the usage vector.
pub fn envelope_argmax(sc: &DemandScenario, iso: Iso, t: f64, q: f64, price: f64, n: usize) -> Vec<f64> {
    let tau = sc.tau();
    let m = tau - kept_count(tau, q);
    let lines: Vec<Vec<Vec<(f64, f64)>>> = sc
        .slots()
        .iter()
        .map(|d| d.iter().map(|r| iso.tangents(t, r.demand, n)).collect())
        .collect();
    let value = |slot: usize, x: f64| -> f64 {
        sc.slots()[slot]
            .iter()
            .zip(&lines[slot])
            .map(|(r, l)| r.prob * envelope(l, t * x.min(r.demand)))
            .sum()
    };
    let mut best = (f64::NEG_INFINITY, vec![]);
    let mut subset: Vec<usize> = (0..m).collect();
    loop {
        let mut cands = vec![0.0];
        for s in (0..tau).filter(|s| !subset.contains(s)) {
            for (r, l) in sc.slots()[s].iter().zip(&lines[s]) {
                cands.push(r.demand);
                for w in l.windows(2) {
                    let v = (w[1].1 - w[0].1) / (w[0].0 - w[1].0);
                    cands.push((v / t).min(r.demand));
                }
            }
        }
        for phi in cands {
            let usage: Vec<f64> = (0..tau)
                .map(|s| if subset.contains(&s) { sc.max_demand(s) } else { phi.min(sc.max_demand(s)) })
                .collect();
            let obj = (0..tau).map(|s| value(s, usage[s])).sum::<f64>() - price * phi;
            if obj > best.0 {
                best = (obj, usage);
            }
        }
        if !advance(&mut subset, tau) {
            break;
        }
    }
    best.1
}
