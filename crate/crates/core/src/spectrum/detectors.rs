//! Theorem-backed detectors for single spectrum entries.
//!
//! Each detector checks the hypotheses of one characterization numerically
//! and reports either an entry with its evidence or why it declined.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::epsgraph::{Chain, RefinementSchedule};
use crate::geometry::{Point, SpaceKind};
use crate::nesting::{verify_ordinately_nested, NestedFamily, OrdinateCertificate};
use crate::ordertypes::OrderTypeTerm;
use crate::systems::{orbit_derivative, SampleGrid, SystemDef};

pub const DEFAULT_OMEGA_BUDGET: usize = 100_000;

/// An exact landing `f(p) = y` from a point closer than this fraction of the
/// diameter is treated as floating-point collapse onto an attracting point,
/// not as an orbit relation.
pub const COLLAPSE_REL: f64 = 1e-6;

/// Cycle of `y` (starting at `y`) if `y` is periodic with period at most `max_period`.
pub fn cycle_of(sys: &SystemDef, y: &Point, max_period: usize) -> Option<Vec<Point>> {
    let mut cyc = vec![*y];
    for _ in 0..max_period {
        let c = sys.apply(cyc.last().expect("non-empty"));
        if sys.metric.dist(&c, y) <= PERIOD_TOL {
            return Some(cyc);
        }
        cyc.push(c);
    }
    None
}

/// Tells genuine exact landings on `y` from floating-point collapse. An
/// orbit that first lands exactly on the cycle of `y` from a point within
/// `COLLAPSE_REL · diam` of the cycle (but not on it) has collapsed, and so
/// has every later landing; landings on a non-periodic `y` are genuine.
pub struct HitJudge {
    cycle: Option<Vec<Point>>,
    entered: Option<bool>,
    y: Point,
    threshold: f64,
}

impl HitJudge {
    pub fn new(sys: &SystemDef, x: &Point, y: &Point) -> Self {
        let cycle = cycle_of(sys, y, 64);
        let entered = cycle.as_ref().and_then(|c| c.contains(x).then_some(true));
        HitJudge { cycle, entered, y: *y, threshold: COLLAPSE_REL * sys.diam }
    }

    /// Record the step `prev -> next`; `Some(genuine)` when `next == y`.
    pub fn step(&mut self, sys: &SystemDef, prev: &Point, next: &Point) -> Option<bool> {
        if let (None, Some(cyc)) = (self.entered, &self.cycle) {
            if let Some(i) = cyc.iter().position(|c| c == next) {
                let pred = cyc[(i + cyc.len() - 1) % cyc.len()];
                let d = sys.metric.dist(prev, &pred);
                self.entered = Some(d == 0.0 || d >= self.threshold);
            }
        }
        (*next == self.y).then(|| self.entered.unwrap_or(true))
    }
}

/// Smallest `k <= kmax` with `f^(k+1)(x) = y` (within `tol`), as `Fin(k)`.
pub fn detect_finite(sys: &SystemDef, x: &Point, y: &Point, kmax: usize, tol: f64) -> Option<OrderTypeTerm> {
    let mut judge = HitJudge::new(sys, x, y);
    let threshold = COLLAPSE_REL * sys.diam;
    // a tolerance hit must jump into the ball, not creep up on y
    let mut approached = false;
    let mut prev = *x;
    for k in 0..=kmax {
        let cur = sys.apply(&prev);
        let exact = judge.step(sys, &prev, &cur);
        let d = sys.metric.dist(&cur, y);
        let genuine = match exact {
            Some(g) => g,
            None => d <= tol && !approached,
        };
        if genuine {
            return Some(OrderTypeTerm::Fin(k as u64));
        }
        approached |= d < threshold;
        if cur == prev && sys.metric.dist(&cur, y) > tol {
            // stuck on a fixed point that is not y
            return None;
        }
        prev = cur;
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaDetection {
    pub present: bool,
    /// Budget ran out while the orbit was still closing in on `y`.
    pub inconclusive: bool,
    /// The tail of the orbit enters every schedule ball around `y`.
    pub y_in_limit_set: bool,
    /// First genuine exact hit `f^k(x) = y`.
    pub exact_hit: Option<usize>,
    /// Exact hits discarded as floating-point collapse.
    pub collapses: usize,
    /// `(start, period)` of an exact cycle of the float orbit.
    pub cycle: Option<(usize, usize)>,
    /// Number of schedule levels whose ball the tail enters.
    pub levels_entered: usize,
    pub tail_distance: f64,
    pub steps: usize,
}

/// `ω` detection: the orbit tail accumulates at `y` at every schedule scale,
/// and no genuine exact hit occurs.
pub fn detect_omega(sys: &SystemDef, sched: &RefinementSchedule, x: &Point, y: &Point, budget: usize) -> OmegaDetection {
    let m = &sys.metric;
    let mut orbit = Vec::with_capacity(budget.min(1 << 16) + 1);
    let mut seen: HashMap<Point, usize> = HashMap::new();
    let mut cur = *x;
    orbit.push(cur);
    seen.insert(cur, 0);
    let (mut exact_hit, mut collapses, mut cycle) = (None, 0, None);
    let mut judge = HitJudge::new(sys, x, y);
    for t in 1..=budget {
        let next = sys.apply(&cur);
        match judge.step(sys, &cur, &next) {
            Some(true) => {
                exact_hit.get_or_insert(t);
            }
            Some(false) => collapses += 1,
            None => {}
        }
        cur = next;
        if let Some(&s) = seen.get(&cur) {
            cycle = Some((s, t - s));
            break;
        }
        seen.insert(cur, t);
        orbit.push(cur);
    }
    let steps = orbit.len() - 1;
    let tail: &[Point] = match cycle {
        Some((s, _)) => &orbit[s..],
        None => &orbit[(orbit.len() / 2).max(1).min(orbit.len() - 1)..],
    };
    let tail_distance = tail.iter().map(|p| m.dist(p, y)).fold(f64::INFINITY, f64::min);
    let levels_entered = sched.epsilons.iter().filter(|&&e| tail_distance < e).count();
    let y_in_limit_set = levels_entered == sched.len();
    let present = y_in_limit_set && exact_hit.is_none();
    let mut inconclusive = false;
    if !y_in_limit_set && cycle.is_none() && orbit.len() > 4 {
        let h = orbit.len() / 2;
        let first = orbit[1..h].iter().map(|p| m.dist(p, y)).fold(f64::INFINITY, f64::min);
        inconclusive = tail_distance < 0.5 * first;
    }
    OmegaDetection { present, inconclusive, y_in_limit_set, exact_hit, collapses, cycle, levels_entered, tail_distance, steps }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicEvidence {
    pub period: usize,
    pub multiplier: f64,
    pub terms: Vec<OrderTypeTerm>,
}

pub const PERIOD_TOL: f64 = 1e-9;

/// `{ω, ω+1, ..., ω+K-1}` when `y` lies on an attracting `K`-periodic orbit
/// that the orbit of `x` converges to without hitting `y`.
pub fn detect_periodic_attractor_spectrum(
    sys: &SystemDef,
    sched: &RefinementSchedule,
    x: &Point,
    y: &Point,
    max_period: usize,
    budget: usize,
) -> Result<PeriodicEvidence, String> {
    let m = &sys.metric;
    let mut c = *y;
    let mut period = None;
    for k in 1..=max_period {
        c = sys.apply(&c);
        if m.dist(&c, y) <= PERIOD_TOL {
            period = Some(k);
            break;
        }
    }
    let k = period.ok_or_else(|| format!("y has no period up to {max_period}"))?;
    let multiplier = orbit_derivative(sys, y, k as u32).ok_or("no derivative available for this space")?;
    if multiplier >= 1.0 {
        return Err(format!("orbit of period {k} is not attracting (multiplier {multiplier:.3})"));
    }
    let om = detect_omega(sys, sched, x, y, budget);
    if let Some(t) = om.exact_hit {
        return Err(format!("f^{t}(x) = y: the pair is orbit related"));
    }
    if !om.y_in_limit_set {
        return Err(format!("orbit of x does not accumulate at y (tail distance {:.3e})", om.tail_distance));
    }
    let terms = (0..k as u64).map(OrderTypeTerm::omega_plus).collect();
    Ok(PeriodicEvidence { period: k, multiplier, terms })
}

/// Largest gap between consecutive orbit points on a 1-D domain, with the
/// domain ends (or the wrap-around on a circle) counted.
pub fn orbit_max_gap(sys: &SystemDef, grid: &SampleGrid, orbit: &[Point]) -> f64 {
    let mut u: Vec<f64> = orbit.iter().map(|p| sys.metric.coord(p.x())).collect();
    if u.is_empty() || grid.is_empty() {
        return f64::INFINITY;
    }
    u.sort_by(f64::total_cmp);
    let mut gap: f64 = u.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    match sys.metric.space() {
        SpaceKind::Circle => gap = gap.max(u[0] + 1.0 - u[u.len() - 1]),
        _ => {
            let g: Vec<f64> = grid.points.iter().map(|p| sys.metric.coord(p.x())).collect();
            let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            gap = gap.max(2.0 * (u[0] - lo)).max(2.0 * (hi - u[u.len() - 1]));
        }
    }
    gap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEvidence {
    pub present: bool,
    pub witness: Option<Point>,
    pub orbit_length: usize,
    pub max_gap: f64,
    pub family: Option<NestedFamily>,
    pub certificate: Option<OrdinateCertificate>,
    pub note: Option<String>,
}

pub const WITNESS_ORBIT_BUDGET: usize = 1 << 19;

/// Splice segments of the orbit `o` of a transitive point into a chain from
/// `x` to `y`: every later level inserts fresh segments, with indices above
/// all indices used so far, into two gaps chosen round-robin. All junctions
/// are tighter than half the finest scale, so every level is valid at every
/// scale of the schedule.
pub fn eta_witness_family(
    sys: &SystemDef,
    o: &[Point],
    sched: &RefinementSchedule,
    x: &Point,
    y: &Point,
) -> Option<NestedFamily> {
    let m = &sys.metric;
    let r = sched.finest() / 2.0;
    let usable = |p: &Point| p != x && p != y;
    let find = |from: usize, c: &Point| (from..o.len()).find(|&t| usable(&o[t]) && m.dist(&o[t], c) < r);
    // end of a segment starting at `from`: last index before re-entry near `c`
    let find_end = |from: usize, c: &Point| {
        (from..o.len().saturating_sub(1)).find(|&t| m.dist(&o[t + 1], c) < r).filter(|&t| (from..=t).all(|s| usable(&o[s])))
    };
    let i0 = find(1, &sys.apply(x))?;
    let j0 = find_end(i0, y)?;
    let mut pts: Vec<Point> = vec![*x];
    pts.extend_from_slice(&o[i0..=j0]);
    pts.push(*y);
    let mut used = j0;
    let mut chains = vec![Chain::new(pts.clone(), sched.epsilons[0])];
    let mut turn = 0usize;
    for &e in &sched.epsilons[1..] {
        for _ in 0..2 {
            let gaps = pts.len() - 1;
            let g = (turn * 7919) % gaps;
            turn += 1;
            let (a, b) = (pts[g], pts[g + 1]);
            let p = find(used + 1, &sys.apply(&a))?;
            let q = find_end(p, &b)?;
            used = q;
            pts.splice(g + 1..g + 1, o[p..=q].iter().copied());
        }
        chains.push(Chain::new(pts.clone(), e));
    }
    NestedFamily::new(chains).ok()
}

/// `η` from a transitivity witness: the witness orbit must be dense at the
/// finest scale, and the spliced family must certify as ordinately nested.
pub fn detect_eta(
    sys: &SystemDef,
    grid: &SampleGrid,
    sched: &RefinementSchedule,
    x: &Point,
    y: &Point,
    witness: Option<Point>,
) -> EtaEvidence {
    let mut ev = EtaEvidence {
        present: false,
        witness,
        orbit_length: 0,
        max_gap: f64::INFINITY,
        family: None,
        certificate: None,
        note: None,
    };
    let Some(z) = witness else {
        ev.note = Some("no transitivity witness".into());
        return ev;
    };
    if z.kind().dim() != 1 {
        ev.note = Some("density check needs a 1-D space".into());
        return ev;
    }
    let fine = sched.finest();
    let mut o = Vec::with_capacity(1 << 14);
    let mut c = z;
    o.push(c);
    let mut len = 1 << 12;
    loop {
        while o.len() < len {
            c = sys.apply(&c);
            o.push(c);
        }
        ev.max_gap = orbit_max_gap(sys, grid, &o);
        if ev.max_gap < fine || len >= WITNESS_ORBIT_BUDGET {
            break;
        }
        len *= 2;
    }
    ev.orbit_length = o.len();
    if ev.max_gap >= fine {
        ev.note = Some(format!("witness orbit not dense at scale {fine:.3e} (gap {:.3e})", ev.max_gap));
        return ev;
    }
    // headroom for the spliced segments
    while o.len() < WITNESS_ORBIT_BUDGET {
        c = sys.apply(&c);
        o.push(c);
    }
    let Some(fam) = eta_witness_family(sys, &o, sched, x, y) else {
        ev.note = Some("witness orbit too short to splice every level".into());
        return ev;
    };
    let cert = verify_ordinately_nested(&fam, 3);
    ev.present = cert.passed();
    if !ev.present {
        ev.note = Some("spliced family failed certification".into());
    }
    ev.certificate = Some(cert);
    ev.family = Some(fam);
    ev
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonwanderingReport {
    pub per_level: Vec<bool>,
    pub passes: bool,
}

/// Finite form of `x N y`: at every scale some grid point within `ε` of `x`
/// has an exact orbit point within `ε` of `y`.
pub fn nonwandering_check(
    sys: &SystemDef,
    grid: &SampleGrid,
    sched: &RefinementSchedule,
    x: &Point,
    y: &Point,
    orbit_budget: usize,
) -> NonwanderingReport {
    let m = &sys.metric;
    let per_level: Vec<bool> = sched
        .epsilons
        .iter()
        .map(|&e| {
            let mut ball = grid.ball(x, e, false);
            if !grid.points.is_empty() && ball.is_empty() {
                ball.push(grid.nearest(x).1);
            }
            ball.iter().any(|&z| {
                let mut c = grid.points[z];
                for _ in 0..orbit_budget {
                    let n = sys.apply(&c);
                    if m.dist(&n, y) < e {
                        return true;
                    }
                    if n == c {
                        return false;
                    }
                    c = n;
                }
                false
            })
        })
        .collect();
    let passes = per_level.iter().all(|b| *b);
    NonwanderingReport { per_level, passes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaCheck {
    pub zeta_asserted: bool,
    pub nonwandering: NonwanderingReport,
    /// `ζ` was asserted but the pair is not nonwandering-related.
    pub contradiction: bool,
}

/// `ζ ∈ Ω(x, y)` forces `x N y`; the converse is not claimed.
pub fn zeta_nonwandering_check(
    sys: &SystemDef,
    grid: &SampleGrid,
    sched: &RefinementSchedule,
    x: &Point,
    y: &Point,
    zeta_asserted: bool,
) -> ZetaCheck {
    let nonwandering = nonwandering_check(sys, grid, sched, x, y, 4096);
    let contradiction = zeta_asserted && !nonwandering.passes;
    ZetaCheck { zeta_asserted, nonwandering, contradiction }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::sample;
    use OrderTypeTerm::*;

    #[test]
    fn finite_on_rational_orbits() {
        let s = SystemDef::rotation_rational("rotation-quarter", 4);
        assert_eq!(detect_finite(&s, &Point::circle(0.0), &Point::circle(0.5), 10, 0.0), Some(Fin(1)));
        assert_eq!(detect_finite(&s, &Point::circle(0.0), &Point::circle(0.25), 10, 0.0), Some(Fin(0)));
        assert_eq!(detect_finite(&s, &Point::circle(0.0), &Point::circle(0.1), 10, 0.0), None);
        let id = SystemDef::identity_interval();
        assert_eq!(detect_finite(&id, &Point::line(0.2), &Point::line(0.3), 10, 0.0), None);
        assert_eq!(detect_finite(&id, &Point::line(0.2), &Point::line(0.2), 10, 0.0), Some(Fin(0)));
    }

    #[test]
    fn collapse_is_not_a_hit() {
        let h = SystemDef::halving();
        assert_eq!(detect_finite(&h, &Point::line(1.0), &Point::line(0.0), 5000, 0.0), None);
        let sched = RefinementSchedule::standard(1.0, 10);
        let om = detect_omega(&h, &sched, &Point::line(1.0), &Point::line(0.0), DEFAULT_OMEGA_BUDGET);
        assert!(om.present && om.collapses >= 1 && om.exact_hit.is_none(), "{om:?}");
        let t = SystemDef::two_interval();
        let om = detect_omega(&t, &RefinementSchedule::standard(2.0, 12), &Point::line(-0.5), &Point::line(-1.0), 1000);
        assert!(om.present, "{om:?}");
    }

    #[test]
    fn tolerance_hits_must_jump() {
        let w = 0.3;
        let h = |v: f64| Point::circle(crate::geometry::warp(w, v));
        let r = SystemDef::rotation_rational("rotation-eighth", 8).conjugate(w);
        assert_eq!(detect_finite(&r, &h(0.0), &h(0.375), 64, 1e-12), Some(Fin(2)));
        let c = SystemDef::periodic_circle(2, 0.5).conjugate(w);
        assert_eq!(detect_finite(&c, &h(0.1), &h(0.25), 10_000, 1e-12), None);
    }

    #[test]
    fn omega_absent_on_orbit_hit() {
        let s = SystemDef::rotation_rational("rotation-eighth", 8);
        let sched = RefinementSchedule::standard(0.5, 8);
        let om = detect_omega(&s, &sched, &Point::circle(0.0), &Point::circle(0.375), 1000);
        assert!(!om.present && om.exact_hit == Some(3) && om.y_in_limit_set);
        // passing close once is not accumulation
        let c = SystemDef::cascade();
        let om = detect_omega(&c, &RefinementSchedule::standard(1.0, 10), &Point::line(0.9), &Point::line(0.7), 1000);
        assert!(!om.present && !om.inconclusive);
    }

    #[test]
    fn periodic_spectrum() {
        let s = SystemDef::periodic_circle(2, 0.5);
        let sched = RefinementSchedule::standard(0.5, 9);
        let ev = detect_periodic_attractor_spectrum(&s, &sched, &Point::circle(0.1), &Point::circle(0.25), 64, 10_000).unwrap();
        assert_eq!(ev.period, 2);
        assert_eq!(ev.terms, vec![Omega, OrderTypeTerm::omega_plus(1)]);
        let h = SystemDef::halving();
        let ev = detect_periodic_attractor_spectrum(&h, &sched, &Point::line(0.7), &Point::line(0.0), 64, 10_000).unwrap();
        assert_eq!(ev.terms, vec![Omega]);
        assert!(detect_periodic_attractor_spectrum(&h, &sched, &Point::line(0.0), &Point::line(0.0), 64, 100).is_err());
        let c = SystemDef::cascade();
        assert!(detect_periodic_attractor_spectrum(&c, &sched, &Point::line(1.0), &Point::line(0.0), 64, 1000).is_err());
    }

    #[test]
    fn golden_eta_family() {
        let s = SystemDef::rotation_golden();
        let g = sample(&s, 0.01).unwrap();
        let sched = RefinementSchedule::for_grid(s.diam, 14, g.spacing);
        let ev = detect_eta(&s, &g, &sched, &Point::circle(0.3), &Point::circle(0.7), s.meta.witness);
        assert!(ev.present, "{:?}", ev.note);
        let fam = ev.family.unwrap();
        assert_eq!(fam.len(), sched.len());
        for (c, &e) in fam.chains.iter().zip(&sched.epsilons) {
            assert!(crate::epsgraph::is_chain(&s, &c.points, e).unwrap().valid);
        }
        let c = SystemDef::cascade();
        let gc = sample(&c, 0.01).unwrap();
        assert!(!detect_eta(&c, &gc, &sched, &Point::line(1.0), &Point::line(0.0), None).present);
    }

    #[test]
    fn nonwandering() {
        let c = SystemDef::cascade();
        let g = sample(&c, 0.01).unwrap();
        let sched = RefinementSchedule::for_grid(1.0, 8, g.spacing);
        assert!(nonwandering_check(&c, &g, &sched, &Point::line(1.0), &Point::line(0.5), 2000).passes);
        assert!(!nonwandering_check(&c, &g, &sched, &Point::line(1.0), &Point::line(0.0), 2000).passes);
    }
}
