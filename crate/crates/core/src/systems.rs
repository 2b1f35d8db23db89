//! Discrete dynamical systems, their sample grids and the built-in zoo.
//!
//! A [`SystemDef`] bundles a domain, a metric, a continuous self-map and the
//! exact diameter of the domain. Evaluation is pure; [`SystemDef::apply`] is
//! the unchecked hot path, [`evaluate`] the checked one.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{unwarp, warp, wrap_unit, LineIndex, Metric, MetricKind, Point, SpaceKind};

/// Default cap on the number of grid points produced by [`sample`].
pub const DEFAULT_POINT_BUDGET: usize = 200_000;

/// Points closer than this (relative to the diameter) count as one in domain checks.
pub const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("point {0} is outside the domain of {1}")]
    OutsideDomain(String, String),
    #[error("resolution {resolution} needs {needed} points, budget is {budget}")]
    Capacity { resolution: f64, needed: usize, budget: usize },
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("unknown system {0:?}")]
    Unknown(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Interval { lo: f64, hi: f64 },
    /// A disjoint union of closed intervals; component `i` gets tag `i`.
    Intervals(Vec<(f64, f64)>),
    Circle,
    /// An explicit finite point set (used for small exhaustive checks).
    Finite(Vec<Point>),
    /// Two horizontal half-lines at heights 0 and 1 plus the isolated points
    /// `(k, h / (k + 1))`, truncated at `x <= k_max`.
    Comb { k_max: usize },
}

/// Denjoy blow-up of the golden rotation: the orbit points `n alpha`, `|n| <= N`,
/// are replaced by intervals of length `c / (1 + n^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenjoyData {
    pub alpha: f64,
    pub n_max: i32,
    pub c: f64,
    /// Rotation-circle angle of each blown-up orbit point, sorted.
    pub angles: Vec<f64>,
    /// Orbit index `n` of each sorted slot.
    pub orbit_index: Vec<i32>,
    /// Left endpoint of each inserted interval, sorted.
    pub starts: Vec<f64>,
    pub lens: Vec<f64>,
    /// Sum of `lens[..j]`.
    prefix: Vec<f64>,
    /// Sorted slot of orbit index `n`, offset by `n_max`.
    slot_of: Vec<usize>,
    scale: f64,
}

impl DenjoyData {
    pub fn new(alpha: f64, n_max: i32, c: f64) -> Result<Self, SystemError> {
        if n_max < 0 || c <= 0.0 {
            return Err(SystemError::BadParameter("denjoy needs n_max >= 0 and c > 0".into()));
        }
        let mut slots: Vec<(f64, i32)> =
            (-n_max..=n_max).map(|n| (wrap_unit(n as f64 * alpha), n)).collect();
        slots.sort_by(|a, b| a.0.total_cmp(&b.0));
        let lens: Vec<f64> = slots.iter().map(|&(_, n)| c / (1.0 + (n as f64).powi(2))).collect();
        let total: f64 = lens.iter().sum();
        if total >= 1.0 {
            return Err(SystemError::BadParameter(format!("inserted length {total} must stay below 1")));
        }
        let scale = 1.0 - total;
        let mut prefix = Vec::with_capacity(lens.len() + 1);
        prefix.push(0.0);
        for l in &lens {
            prefix.push(prefix.last().unwrap() + l);
        }
        let starts = slots.iter().enumerate().map(|(j, s)| scale * s.0 + prefix[j]).collect();
        let mut slot_of = vec![0; (2 * n_max + 1) as usize];
        for (j, &(_, n)) in slots.iter().enumerate() {
            slot_of[(n + n_max) as usize] = j;
        }
        Ok(DenjoyData {
            alpha,
            n_max,
            c,
            angles: slots.iter().map(|s| s.0).collect(),
            orbit_index: slots.iter().map(|s| s.1).collect(),
            starts,
            lens,
            prefix,
            slot_of,
            scale,
        })
    }

    /// The inserted interval `I_n` as `(start, length)`.
    pub fn interval(&self, n: i32) -> Option<(f64, f64)> {
        if n.abs() > self.n_max {
            return None;
        }
        let j = self.slot_of[(n + self.n_max) as usize];
        Some((self.starts[j], self.lens[j]))
    }

    /// Which inserted interval contains `s`, if any.
    pub fn interval_of(&self, s: f64) -> Option<i32> {
        let j = self.starts.partition_point(|&a| a <= s);
        if j == 0 {
            return None;
        }
        let j = j - 1;
        (s < self.starts[j] + self.lens[j]).then(|| self.orbit_index[j])
    }

    /// Blow-up coordinate of a rotation angle. Orbit angles go to their interval's left end.
    fn embed(&self, theta: f64) -> f64 {
        let j = self.angles.partition_point(|&a| a < theta);
        wrap_unit(self.scale * theta + self.prefix[j])
    }

    fn apply(&self, s: f64) -> f64 {
        let j = self.starts.partition_point(|&a| a <= s);
        if j > 0 {
            let k = j - 1;
            if s < self.starts[k] + self.lens[k] {
                let n = self.orbit_index[k];
                if n < self.n_max {
                    let t = self.slot_of[(n + 1 + self.n_max) as usize];
                    return wrap_unit(self.starts[t] + (s - self.starts[k]) * self.lens[t] / self.lens[k]);
                }
                // the last interval collapses onto the next orbit point
                return self.embed(wrap_unit(self.angles[k] + self.alpha));
            }
        }
        let theta = (s - self.prefix[j]) / self.scale;
        self.embed(wrap_unit(theta + self.alpha))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MapKind {
    Identity,
    /// `2^-m (x - 2^m)^2 + 2^m` on `[2^m, 2^(m+1))`, fixing every `2^-n` and 0.
    Cascade,
    /// `(x + 1)^2 - 1` on `[-1, 0]`, the cascade on `[0, 1]`.
    TwoInterval,
    Halving,
    /// `x - a sin(2 pi x) / (2 pi)` on `[0, 1]`: attractors 0 and 1, repeller 1/2.
    Bistable { a: f64 },
    Rotation { alpha: f64 },
    /// `t + a sin(2 pi K t) / (2 pi K) + 1/K`: attracting orbit at `(2j+1)/(2K)`,
    /// repelling orbit at `j/K`.
    PeriodicCircle { k: u32, a: f64 },
    Denjoy(Arc<DenjoyData>),
    /// Image indices for a `Domain::Finite` point list.
    Table(Vec<usize>),
    /// `h o f o h^-1` with `h` the warp homeomorphism of parameter `warp`.
    Conjugate { base: Box<SystemDef>, warp: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemMeta {
    /// Claimed fixed points, checked by the self-test.
    pub fixed_points: Vec<Point>,
    /// Claimed attracting periodic orbit, in orbit order.
    pub attracting_orbit: Option<Vec<Point>>,
    pub repelling_orbit: Option<Vec<Point>>,
    /// A point with dense forward orbit.
    pub witness: Option<Point>,
    /// Claimed exact period of every point (rational rotations).
    pub period: Option<u32>,
    /// Claimed: no exact periodic sample points for this many steps.
    pub aperiodic_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDef {
    pub name: String,
    pub domain: Domain,
    pub metric: Metric,
    pub map: MapKind,
    pub diam: f64,
    /// Known Lipschitz constant of the map in the plain metric, if any.
    pub lipschitz: Option<f64>,
    pub meta: SystemMeta,
    /// Finite-domain lookup table, rebuilt on demand.
    #[serde(skip)]
    lookup: Option<Arc<HashMap<Point, usize>>>,
}

fn cascade(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut m = x.log2().floor() as i32;
    // guard the floor against rounding in log2
    while 2f64.powi(m) > x {
        m -= 1;
    }
    while 2f64.powi(m + 1) <= x {
        m += 1;
    }
    let a = 2f64.powi(m);
    let d = x - a;
    d * d / a + a
}

impl SystemDef {
    fn new(name: &str, domain: Domain, metric: Metric, map: MapKind) -> Self {
        let mut s = SystemDef {
            name: name.to_string(),
            domain,
            metric,
            map,
            diam: 0.0,
            lipschitz: None,
            meta: SystemMeta::default(),
            lookup: None,
        };
        s.diam = s.compute_diam();
        s.lipschitz = s.known_lipschitz();
        s.rebuild_lookup();
        s
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = match &self.domain {
            Domain::Finite(pts) => Some(Arc::new(pts.iter().enumerate().map(|(i, p)| (*p, i)).collect())),
            _ => None,
        };
    }

    pub fn identity_interval() -> Self {
        let mut s = Self::new("identity-interval", Domain::Interval { lo: 0.0, hi: 1.0 }, Metric::interval(), MapKind::Identity);
        s.meta.period = Some(1);
        s
    }

    pub fn identity_two_intervals() -> Self {
        let mut s = Self::new(
            "identity-two-intervals",
            Domain::Intervals(vec![(0.0, 1.0), (2.0, 3.0)]),
            Metric::interval(),
            MapKind::Identity,
        );
        s.meta.period = Some(1);
        s
    }

    pub fn cascade() -> Self {
        let mut s = Self::new("cascade", Domain::Interval { lo: 0.0, hi: 1.0 }, Metric::interval(), MapKind::Cascade);
        s.meta.fixed_points = (0..=30).map(|n| Point::line(2f64.powi(-n))).chain([Point::line(0.0)]).collect();
        s
    }

    pub fn two_interval() -> Self {
        let mut s = Self::new("two-interval", Domain::Interval { lo: -1.0, hi: 1.0 }, Metric::interval(), MapKind::TwoInterval);
        s.meta.fixed_points = (0..=30)
            .map(|n| Point::line(2f64.powi(-n)))
            .chain([Point::line(0.0), Point::line(-1.0)])
            .collect();
        s
    }

    pub fn halving() -> Self {
        let mut s = Self::new("halving", Domain::Interval { lo: 0.0, hi: 1.0 }, Metric::interval(), MapKind::Halving);
        s.meta.fixed_points = vec![Point::line(0.0)];
        s
    }

    pub fn bistable(a: f64) -> Self {
        let mut s = Self::new("bistable", Domain::Interval { lo: 0.0, hi: 1.0 }, Metric::interval(), MapKind::Bistable { a });
        s.meta.fixed_points = vec![Point::line(0.0), Point::line(0.5), Point::line(1.0)];
        s
    }

    pub fn rotation(name: &str, alpha: f64) -> Self {
        Self::new(name, Domain::Circle, Metric::circle(), MapKind::Rotation { alpha })
    }

    pub fn rotation_golden() -> Self {
        let mut s = Self::rotation("rotation-golden", (5f64.sqrt() - 1.0) / 2.0);
        s.meta.witness = Some(Point::circle(0.0));
        s.meta.aperiodic_steps = Some(10_000);
        s
    }

    pub fn rotation_rational(name: &str, q: u32) -> Self {
        let mut s = Self::rotation(name, 1.0 / q as f64);
        s.meta.period = Some(q);
        s
    }

    pub fn periodic_circle(k: u32, a: f64) -> Self {
        let mut s = Self::new(
            &format!("circle-periodic-{k}"),
            Domain::Circle,
            Metric::circle(),
            MapKind::PeriodicCircle { k, a },
        );
        let kf = k as f64;
        s.meta.attracting_orbit = Some((0..k).map(|j| Point::circle((2 * j + 1) as f64 / (2.0 * kf))).collect());
        s.meta.repelling_orbit = Some((0..k).map(|j| Point::circle(j as f64 / kf)).collect());
        s
    }

    pub fn denjoy(n_max: i32, c: f64) -> Result<Self, SystemError> {
        let data = DenjoyData::new((5f64.sqrt() - 1.0) / 2.0, n_max, c)?;
        Ok(Self::new("denjoy", Domain::Circle, Metric::circle(), MapKind::Denjoy(Arc::new(data))))
    }

    pub fn comb(k_max: usize) -> Self {
        let mut s = Self::new("comb", Domain::Comb { k_max }, Metric::plane(), MapKind::Identity);
        s.meta.period = Some(1);
        s
    }

    /// A map on an explicit finite point set, `f(points[i]) = points[images[i]]`.
    pub fn table(name: &str, points: Vec<Point>, images: Vec<usize>) -> Result<Self, SystemError> {
        if points.len() != images.len() || images.iter().any(|&j| j >= points.len()) {
            return Err(SystemError::BadParameter("table images must index the point list".into()));
        }
        let metric = match points.first().map(|p| p.kind()) {
            Some(SpaceKind::Circle) => Metric::circle(),
            Some(SpaceKind::Plane) => Metric::plane(),
            _ => Metric::interval(),
        };
        Ok(Self::new(name, Domain::Finite(points), metric, MapKind::Table(images)))
    }

    /// The same dynamics measured in a different (equivalent) metric.
    pub fn with_metric(&self, metric: Metric) -> Self {
        let mut s = self.clone();
        s.metric = metric;
        s.diam = s.compute_diam();
        s
    }

    /// The conjugate system `h o f o h^-1`, with `h` the warp of parameter `w`.
    pub fn conjugate(&self, w: f64) -> Self {
        let h = |p: &Point| p.with_coords([warp(w, p.coords[0]), warp(w, p.coords[1])]);
        let mut s = SystemDef::new(
            &format!("{}-conj", self.name),
            self.domain.clone(),
            self.metric,
            MapKind::Conjugate { base: Box::new(self.clone()), warp: w },
        );
        s.lipschitz = None;
        s.meta = SystemMeta {
            fixed_points: self.meta.fixed_points.iter().map(h).collect(),
            attracting_orbit: self.meta.attracting_orbit.as_ref().map(|o| o.iter().map(h).collect()),
            repelling_orbit: self.meta.repelling_orbit.as_ref().map(|o| o.iter().map(h).collect()),
            witness: self.meta.witness.as_ref().map(h),
            period: self.meta.period,
            aperiodic_steps: None,
        };
        s
    }

    pub fn is_identity(&self) -> bool {
        match &self.map {
            MapKind::Identity => true,
            MapKind::Conjugate { base, .. } => base.is_identity(),
            _ => false,
        }
    }

    fn compute_diam(&self) -> f64 {
        let m = &self.metric;
        match &self.domain {
            Domain::Interval { lo, hi } => m.coord(*hi) - m.coord(*lo),
            Domain::Intervals(parts) => {
                let lo = parts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let hi = parts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                m.coord(hi) - m.coord(lo)
            }
            Domain::Circle => 0.5,
            Domain::Finite(pts) => {
                let mut d: f64 = 0.0;
                for a in pts {
                    for b in pts {
                        d = d.max(m.dist(a, b));
                    }
                }
                d
            }
            Domain::Comb { k_max } => {
                let c = [Point::plane(0.0, 0.0), Point::plane(*k_max as f64, 1.0)];
                m.dist(&c[0], &c[1])
            }
        }
    }

    fn known_lipschitz(&self) -> Option<f64> {
        match &self.map {
            MapKind::Identity | MapKind::Rotation { .. } => Some(1.0),
            MapKind::Cascade | MapKind::TwoInterval => Some(2.0),
            MapKind::Halving => Some(0.5),
            MapKind::Bistable { a } => Some(1.0 + a.abs()),
            MapKind::PeriodicCircle { a, .. } => Some(1.0 + a.abs()),
            MapKind::Denjoy(_) | MapKind::Table(_) | MapKind::Conjugate { .. } => None,
        }
    }

    /// Unchecked evaluation. Points outside the domain give unspecified results.
    pub fn apply(&self, p: &Point) -> Point {
        match &self.map {
            MapKind::Identity => *p,
            MapKind::Cascade => Point::line(cascade(p.x())),
            MapKind::TwoInterval => {
                let x = p.x();
                if x < 0.0 {
                    Point::line((x + 1.0) * (x + 1.0) - 1.0)
                } else {
                    Point::line(cascade(x))
                }
            }
            MapKind::Halving => Point::line(p.x() / 2.0),
            MapKind::Bistable { a } => {
                let x = p.x();
                Point::line(x - a * (TAU * x).sin() / TAU)
            }
            MapKind::Rotation { alpha } => Point::circle(p.x() + alpha),
            MapKind::PeriodicCircle { k, a } => {
                let kf = *k as f64;
                let t = p.x();
                Point::circle(t + a * (TAU * kf * t).sin() / (TAU * kf) + 1.0 / kf)
            }
            MapKind::Denjoy(d) => Point::circle(d.apply(p.x())),
            MapKind::Table(images) => {
                let i = self.lookup.as_ref().and_then(|l| l.get(p).copied());
                match (i, &self.domain) {
                    (Some(i), Domain::Finite(pts)) => pts[images[i]],
                    _ => *p,
                }
            }
            // h . id . h^-1 is the identity exactly
            MapKind::Conjugate { base, .. } if base.is_identity() => *p,
            MapKind::Conjugate { base, warp: w } => {
                let inv = p.with_coords([unwarp(*w, p.coords[0]), unwarp(*w, p.coords[1])]);
                let q = base.apply(&inv);
                q.with_coords([warp(*w, q.coords[0]), warp(*w, q.coords[1])])
            }
        }
    }

    /// Whether `p` lies in the domain, up to [`DOMAIN_TOL`].
    pub fn contains(&self, p: &Point) -> bool {
        if !p.is_finite() || p.kind() != self.metric.space() {
            return false;
        }
        let tol = DOMAIN_TOL * self.diam.max(1.0);
        let x = p.x();
        match &self.domain {
            Domain::Interval { lo, hi } => x >= lo - tol && x <= hi + tol,
            Domain::Intervals(parts) => parts
                .get(p.tag.component as usize)
                .is_some_and(|(lo, hi)| x >= lo - tol && x <= hi + tol),
            Domain::Circle => true,
            Domain::Finite(_) => self.lookup.as_ref().is_some_and(|l| l.contains_key(p)),
            Domain::Comb { k_max } => {
                let (x, y) = (p.coords[0], p.coords[1]);
                let on_line = x >= -tol && x <= *k_max as f64 + tol && (y.abs() <= tol || (y - 1.0).abs() <= tol);
                let k = x.round();
                let on_tooth = (x - k).abs() <= tol && k >= 1.0 && k <= *k_max as f64 && {
                    let h = y * (k + 1.0);
                    (h - h.round()).abs() <= tol * (k + 1.0) && h.round() >= 1.0 && h.round() <= k
                };
                on_line || on_tooth
            }
        }
    }

    /// A point of the domain with the given plain coordinate (component chosen by position).
    pub fn point(&self, x: f64) -> Point {
        match &self.domain {
            Domain::Circle => Point::circle(x),
            Domain::Intervals(parts) => {
                let c = parts
                    .iter()
                    .position(|(lo, hi)| x >= *lo - DOMAIN_TOL && x <= *hi + DOMAIN_TOL)
                    .unwrap_or(0);
                Point::line_in(x, c as u16)
            }
            Domain::Comb { .. } => Point::plane(x, 0.0),
            Domain::Finite(pts) => pts
                .iter()
                .min_by(|a, b| (a.x() - x).abs().total_cmp(&(b.x() - x).abs()))
                .copied()
                .unwrap_or(Point::line(x)),
            Domain::Interval { .. } => Point::line(x),
        }
    }
}

/// Checked evaluation: the argument must lie in the domain.
pub fn evaluate(sys: &SystemDef, p: &Point) -> Result<Point, SystemError> {
    if !sys.contains(p) {
        return Err(SystemError::OutsideDomain(p.to_string(), sys.name.clone()));
    }
    Ok(sys.apply(p))
}

/// `p, f(p), ..., f^len(p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSegment {
    pub points: Vec<Point>,
}

pub fn orbit(sys: &SystemDef, p: &Point, len: usize) -> Result<OrbitSegment, SystemError> {
    let mut cur = *p;
    evaluate(sys, &cur)?;
    let mut points = Vec::with_capacity(len + 1);
    points.push(cur);
    for _ in 0..len {
        cur = sys.apply(&cur);
        points.push(cur);
    }
    Ok(OrbitSegment { points })
}

/// Finite sample of the domain with precomputed images.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub points: Vec<Point>,
    pub images: Vec<Point>,
    /// Requested covering radius.
    pub resolution: f64,
    /// Typical spacing between neighbouring grid points.
    pub spacing: f64,
    pub metric: Metric,
    index: Option<LineIndex>,
    lookup: HashMap<Point, usize>,
}

impl SampleGrid {
    pub fn from_points(sys: &SystemDef, points: Vec<Point>, resolution: f64, spacing: f64) -> Self {
        let images: Vec<Point> = points.par_iter().map(|p| sys.apply(p)).collect();
        let index = LineIndex::supports(&sys.metric).then(|| LineIndex::new(&points, sys.metric));
        let mut lookup = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            lookup.entry(*p).or_insert(i);
        }
        SampleGrid { points, images, resolution, spacing, metric: sys.metric, index, lookup }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, p: &Point) -> Option<usize> {
        self.lookup.get(p).copied()
    }

    /// Nearest grid point as `(distance, index)`.
    pub fn nearest(&self, p: &Point) -> (f64, usize) {
        match &self.index {
            Some(ix) => ix.nearest(p).expect("empty grid"),
            None => crate::geometry::nearest_brute(&self.points, p, &self.metric).expect("empty grid"),
        }
    }

    /// Ascending indices of grid points within `r` of `c`.
    pub fn ball_into(&self, c: &Point, r: f64, closed: bool, out: &mut Vec<usize>) {
        match &self.index {
            Some(ix) => ix.ball_into(c, r, closed, out),
            None => {
                out.clear();
                for (i, p) in self.points.iter().enumerate() {
                    let d = self.metric.dist(p, c);
                    if d < r || (closed && d == r) {
                        out.push(i);
                    }
                }
            }
        }
    }

    pub fn ball(&self, c: &Point, r: f64, closed: bool) -> Vec<usize> {
        let mut v = Vec::new();
        self.ball_into(c, r, closed, &mut v);
        v
    }

    /// This grid with extra points appended (existing points are reused).
    /// Returns the index of each requested point.
    pub fn augmented(&self, sys: &SystemDef, extra: &[Point]) -> (SampleGrid, Vec<usize>) {
        let mut points = self.points.clone();
        let mut ids = Vec::with_capacity(extra.len());
        let mut fresh: HashMap<Point, usize> = HashMap::new();
        for p in extra {
            if let Some(i) = self.index_of(p).or_else(|| fresh.get(p).copied()) {
                ids.push(i);
            } else {
                fresh.insert(*p, points.len());
                ids.push(points.len());
                points.push(*p);
            }
        }
        if fresh.is_empty() {
            return (self.clone(), ids);
        }
        (SampleGrid::from_points(sys, points, self.resolution, self.spacing), ids)
    }

    /// The grid restricted to `keep` (ascending indices), plus the old-to-new map.
    pub fn restricted(&self, sys: &SystemDef, keep: &[usize]) -> (SampleGrid, Vec<Option<usize>>) {
        let mut map = vec![None; self.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = Some(new);
        }
        let pts = keep.iter().map(|&i| self.points[i]).collect();
        (SampleGrid::from_points(sys, pts, self.resolution, self.spacing), map)
    }
}

fn uniform(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { lo } else if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
}

fn segments(len: f64, resolution: f64) -> usize {
    ((len / resolution) - 1e-9).ceil().max(1.0) as usize
}

/// Sample the domain with covering radius at most `resolution`.
pub fn sample(sys: &SystemDef, resolution: f64) -> Result<SampleGrid, SystemError> {
    sample_with_budget(sys, resolution, DEFAULT_POINT_BUDGET)
}

pub fn sample_with_budget(sys: &SystemDef, resolution: f64, budget: usize) -> Result<SampleGrid, SystemError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(SystemError::BadResolution(resolution));
    }
    let over = |needed: usize| SystemError::Capacity { resolution, needed, budget };
    let (points, spacing): (Vec<Point>, f64) = match &sys.domain {
        Domain::Interval { lo, hi } => {
            let s = segments(hi - lo, resolution);
            if s + 1 > budget {
                return Err(over(s + 1));
            }
            (uniform(*lo, *hi, s + 1).map(Point::line).collect(), (hi - lo) / s as f64)
        }
        Domain::Intervals(parts) => {
            let counts: Vec<usize> = parts.iter().map(|(lo, hi)| segments(hi - lo, resolution) + 1).collect();
            let total: usize = counts.iter().sum();
            if total > budget {
                return Err(over(total));
            }
            let mut pts = Vec::with_capacity(total);
            let mut spacing: f64 = 0.0;
            for (c, ((lo, hi), n)) in parts.iter().zip(&counts).enumerate() {
                spacing = spacing.max((hi - lo) / (n - 1).max(1) as f64);
                pts.extend(uniform(*lo, *hi, *n).map(|x| Point::line_in(x, c as u16)));
            }
            (pts, spacing)
        }
        Domain::Circle => {
            let n = segments(1.0, resolution);
            if n > budget {
                return Err(over(n));
            }
            ((0..n).map(|i| Point::circle(i as f64 / n as f64)).collect(), 1.0 / n as f64)
        }
        Domain::Finite(pts) => {
            if pts.len() > budget {
                return Err(over(pts.len()));
            }
            let sep = crate::geometry::min_positive_separation(pts, &sys.metric).unwrap_or(1.0);
            (pts.clone(), sep)
        }
        Domain::Comb { k_max } => {
            let len = *k_max as f64;
            let s = segments(len, resolution);
            let teeth = k_max * (k_max + 1) / 2;
            let total = 2 * (s + 1) + teeth;
            if total > budget {
                return Err(over(total));
            }
            let mut pts: Vec<Point> = uniform(0.0, len, s + 1).map(|x| Point::plane(x, 0.0)).collect();
            for k in 1..=*k_max {
                for h in 1..=k {
                    pts.push(Point::plane(k as f64, h as f64 / (k + 1) as f64));
                }
            }
            pts.extend(uniform(0.0, len, s + 1).map(|x| Point::plane(x, 1.0)));
            (pts, len / s as f64)
        }
    };
    Ok(SampleGrid::from_points(sys, points, resolution, spacing))
}

/// All built-in systems, each passing its own self-test.
pub fn builtin_zoo() -> Vec<SystemDef> {
    vec![
        SystemDef::identity_interval(),
        SystemDef::identity_two_intervals(),
        SystemDef::cascade(),
        SystemDef::two_interval(),
        SystemDef::halving(),
        SystemDef::bistable(0.5),
        SystemDef::rotation_golden(),
        SystemDef::rotation_rational("rotation-quarter", 4),
        SystemDef::rotation_rational("rotation-eighth", 8),
        SystemDef::denjoy(30, 0.1).expect("default denjoy parameters are valid"),
        SystemDef::periodic_circle(1, 0.5),
        SystemDef::periodic_circle(2, 0.5),
        SystemDef::periodic_circle(3, 0.5),
        SystemDef::comb(12),
    ]
}

pub fn zoo_system(name: &str) -> Result<SystemDef, SystemError> {
    builtin_zoo().into_iter().find(|s| s.name == name).ok_or_else(|| SystemError::Unknown(name.to_string()))
}

/// Declarative system description, as read from a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    /// A zoo name, or one of the map family names below.
    pub map: String,
    pub alpha: Option<f64>,
    pub k: Option<u32>,
    pub a: Option<f64>,
    pub n_max: Option<i32>,
    pub c: Option<f64>,
    pub k_max: Option<usize>,
    /// Metric warp parameter.
    pub metric_warp: Option<f64>,
    /// Conjugate the map by the warp of this parameter.
    pub conjugate: Option<f64>,
}

impl SystemDef {
    pub fn from_spec(spec: &SystemSpec) -> Result<Self, SystemError> {
        let bad = |m: &str| SystemError::BadParameter(m.to_string());
        let mut sys = match spec.map.as_str() {
            "rotation" => {
                let alpha = spec.alpha.ok_or_else(|| bad("rotation needs alpha"))?;
                SystemDef::rotation("rotation", alpha)
            }
            "circle-periodic" => {
                let k = spec.k.ok_or_else(|| bad("circle-periodic needs k"))?;
                let a = spec.a.unwrap_or(0.5);
                if k == 0 || !(a > 0.0 && a < 1.0) {
                    return Err(bad("circle-periodic needs k >= 1 and 0 < a < 1"));
                }
                SystemDef::periodic_circle(k, a)
            }
            "bistable" => {
                let a = spec.a.unwrap_or(0.5);
                if !(a > 0.0 && a < 1.0) {
                    return Err(bad("bistable needs 0 < a < 1"));
                }
                SystemDef::bistable(a)
            }
            "denjoy" => SystemDef::denjoy(spec.n_max.unwrap_or(30), spec.c.unwrap_or(0.1))?,
            "comb" => SystemDef::comb(spec.k_max.unwrap_or(12)),
            name => zoo_system(name)?,
        };
        if let Some(w) = spec.metric_warp {
            if w.abs() >= 1.0 {
                return Err(bad("metric_warp must satisfy |w| < 1"));
            }
            sys = sys.with_metric(sys.metric.warped(w));
        }
        if let Some(w) = spec.conjugate {
            if w.abs() >= 1.0 {
                return Err(bad("conjugate must satisfy |w| < 1"));
            }
            sys = sys.conjugate(w);
        }
        Ok(sys)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub system: String,
    pub checks: Vec<(String, bool)>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

/// Check the claims recorded in the system's metadata.
pub fn self_test(sys: &SystemDef) -> SelfTestReport {
    let mut checks = Vec::new();
    let tol = 1e-9;
    for p in &sys.meta.fixed_points {
        checks.push((format!("fixed point {p}"), sys.metric.dist(&sys.apply(p), p) <= tol));
    }
    if let Some(orb) = &sys.meta.attracting_orbit {
        let k = orb.len();
        let ok = (0..k).all(|j| sys.metric.dist(&sys.apply(&orb[j]), &orb[(j + 1) % k]) <= tol);
        checks.push((format!("attracting orbit of period {k}"), ok));
        if let Some(lip) = orbit_derivative(sys, &orb[0], k as u32) {
            checks.push(("attracting orbit is stable".into(), lip < 1.0));
        }
    }
    if let Some(orb) = &sys.meta.repelling_orbit {
        let k = orb.len();
        let ok = (0..k).all(|j| sys.metric.dist(&sys.apply(&orb[j]), &orb[(j + 1) % k]) <= tol);
        checks.push((format!("repelling orbit of period {k}"), ok));
    }
    if let Some(q) = sys.meta.period {
        let grid = sample(sys, 0.05).expect("coarse grid fits the budget");
        let ok = grid.points.iter().all(|p| {
            let mut c = *p;
            for _ in 0..q {
                c = sys.apply(&c);
            }
            sys.metric.dist(&c, p) <= tol
        });
        checks.push((format!("every point has period dividing {q}"), ok));
    }
    if let Some(steps) = sys.meta.aperiodic_steps {
        let grid = sample(sys, 0.05).expect("coarse grid fits the budget");
        let ok = grid.points.iter().all(|p| {
            let mut c = *p;
            (0..steps).all(|_| {
                c = sys.apply(&c);
                c != *p
            })
        });
        checks.push((format!("no periodic sample point within {steps} steps"), ok));
    }
    if let MapKind::Denjoy(d) = &sys.map {
        checks.push(("inserted intervals are disjoint".into(), denjoy_disjoint(d)));
        checks.push(("I_n maps onto I_(n+1)".into(), denjoy_shifts(sys, d)));
    }
    let grid = sample(sys, 0.01).expect("coarse grid fits the budget");
    let into = grid.images.iter().all(|q| sys.contains(q));
    checks.push(("maps the sample into the domain".into(), into));
    let again: Vec<Point> = grid.points.iter().map(|p| sys.apply(p)).collect();
    checks.push(("deterministic".into(), again == grid.images));
    SelfTestReport { system: sys.name.clone(), checks }
}

/// Central-difference derivative of `f^k` at `p` (1-D systems only).
pub fn orbit_derivative(sys: &SystemDef, p: &Point, k: u32) -> Option<f64> {
    if p.kind().dim() != 1 {
        return None;
    }
    let h = 1e-6;
    let it = |x: f64| {
        let mut c = p.with_coords([x, 0.0]);
        for _ in 0..k {
            c = sys.apply(&c);
        }
        c
    };
    let (a, b) = (it(p.x() - h), it(p.x() + h));
    let d = match sys.metric.kind {
        MetricKind::ArcCircle => {
            let raw = b.x() - a.x();
            raw - raw.round()
        }
        _ => b.x() - a.x(),
    };
    Some((d / (2.0 * h)).abs())
}

fn denjoy_disjoint(d: &DenjoyData) -> bool {
    d.starts.windows(2).zip(&d.lens).all(|(w, l)| w[0] + l <= w[1] + 1e-15)
        && d.starts.last().zip(d.lens.last()).is_none_or(|(s, l)| s + l <= 1.0 + 1e-15)
}

fn denjoy_shifts(sys: &SystemDef, d: &DenjoyData) -> bool {
    (-d.n_max..d.n_max).all(|n| {
        let (s0, l0) = d.interval(n).unwrap();
        let (s1, l1) = d.interval(n + 1).unwrap();
        (0..=8).all(|t| {
            let frac = t as f64 / 8.0 * (1.0 - 1e-9);
            let img = sys.apply(&Point::circle(s0 + frac * l0)).x();
            (img - (s1 + frac * l1)).abs() < 1e-12 && d.interval_of(img) == Some(n + 1)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zoo_passes_self_tests() {
        for sys in builtin_zoo() {
            let r = self_test(&sys);
            assert!(r.passed(), "{}: {:?}", sys.name, r.checks.iter().filter(|c| !c.1).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zoo_names_are_unique() {
        let zoo = builtin_zoo();
        let mut names: Vec<_> = zoo.iter().map(|s| s.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), zoo.len());
        assert!(names.iter().any(|n| n == "identity-interval"));
    }

    #[test]
    fn cascade_values() {
        let s = SystemDef::cascade();
        let o = orbit(&s, &Point::line(0.75), 2).unwrap();
        assert_eq!(o.points, vec![Point::line(0.75), Point::line(0.625), Point::line(0.53125)]);
        assert_eq!(s.apply(&Point::line(1.0)), Point::line(1.0));
        for n in 0..40 {
            let p = Point::line(2f64.powi(-n));
            assert_eq!(s.apply(&p), p);
        }
    }

    #[test]
    fn quarter_rotation_orbit() {
        let s = zoo_system("rotation-quarter").unwrap();
        let o = orbit(&s, &Point::circle(0.0), 4).unwrap();
        let xs: Vec<f64> = o.points.iter().map(|p| p.x()).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 0.0]);
    }

    #[test]
    fn identity_orbit_is_constant() {
        let s = SystemDef::identity_interval();
        let o = orbit(&s, &Point::line(0.3), 3).unwrap();
        assert!(o.points.iter().all(|p| *p == Point::line(0.3)));
    }

    #[test]
    fn evaluate_rejects_foreign_points() {
        let s = SystemDef::cascade();
        assert!(evaluate(&s, &Point::line(1.5)).is_err());
        assert!(evaluate(&s, &Point::circle(0.5)).is_err());
        let t = SystemDef::identity_two_intervals();
        assert!(evaluate(&t, &Point::line_in(1.5, 0)).is_err());
        assert!(evaluate(&t, &Point::line_in(2.5, 1)).is_ok());
    }

    #[test]
    fn grid_sizes() {
        let g = sample(&SystemDef::identity_interval(), 0.01).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g.points[50], Point::line(0.5));
        let c = sample(&SystemDef::rotation_golden(), 0.01).unwrap();
        assert_eq!(c.len(), 100);
        let t = sample(&SystemDef::identity_two_intervals(), 0.01).unwrap();
        assert_eq!(t.len(), 202);
        assert_eq!(t.points[101].tag.component, 1);
        assert_eq!(t.points[101].x(), 2.0);
    }

    #[test]
    fn sample_respects_budget() {
        let e = sample_with_budget(&SystemDef::identity_interval(), 1e-4, 1000);
        assert!(matches!(e, Err(SystemError::Capacity { .. })));
        assert!(matches!(sample(&SystemDef::cascade(), 0.0), Err(SystemError::BadResolution(_))));
    }

    #[test]
    fn comb_grid_holds_the_teeth() {
        let s = SystemDef::comb(4);
        let g = sample(&s, 0.5).unwrap();
        assert!(g.points.contains(&Point::plane(3.0, 0.5)));
        assert!(g.points.iter().all(|p| s.contains(p)));
        assert!(!s.contains(&Point::plane(2.5, 0.5)));
    }

    #[test]
    fn denjoy_intervals_shift() {
        let s = SystemDef::denjoy(20, 0.1).unwrap();
        let MapKind::Denjoy(d) = &s.map else { unreachable!() };
        assert!(denjoy_disjoint(d));
        assert!(denjoy_shifts(&s, d));
        let (s0, l0) = d.interval(0).unwrap();
        assert_eq!(s0, 0.0);
        assert!(l0 > 0.09);
    }

    #[test]
    fn periodic_circle_orbits() {
        for k in 1..=3 {
            let s = SystemDef::periodic_circle(k, 0.5);
            let orb = s.meta.attracting_orbit.clone().unwrap();
            let d = orbit_derivative(&s, &orb[0], k).unwrap();
            assert!((d - 0.5f64.powi(k as i32)).abs() < 1e-5, "k={k} d={d}");
            let rep = s.meta.repelling_orbit.clone().unwrap();
            assert!(orbit_derivative(&s, &rep[0], k).unwrap() > 1.0);
        }
    }

    #[test]
    fn conjugate_preserves_orbit_structure() {
        let base = zoo_system("rotation-eighth").unwrap();
        let c = base.conjugate(0.3);
        let x = Point::circle(warp(0.3, 0.1));
        let mut p = x;
        for _ in 0..8 {
            p = c.apply(&p);
        }
        assert!(c.metric.dist(&p, &x) < 1e-12);
        assert!(self_test(&c).passed());
    }

    #[test]
    fn spec_round_trip() {
        let spec = SystemSpec { map: "circle-periodic".into(), k: Some(2), a: Some(0.4), ..Default::default() };
        let s = SystemDef::from_spec(&spec).unwrap();
        assert_eq!(s.map, MapKind::PeriodicCircle { k: 2, a: 0.4 });
        assert!(SystemDef::from_spec(&SystemSpec { map: "nope".into(), ..Default::default() }).is_err());
    }

    #[test]
    fn augmented_grid_reuses_existing_points() {
        let s = SystemDef::identity_interval();
        let g = sample(&s, 0.1).unwrap();
        let (g2, ids) = g.augmented(&s, &[Point::line(0.5), Point::line(0.55)]);
        assert_eq!(ids, vec![5, 11]);
        assert_eq!(g2.len(), 12);
        assert_eq!(g2.nearest(&Point::line(0.56)).1, 11);
    }

    proptest! {
        #[test]
        fn cascade_descends_on_each_branch(n in 0i32..20, t in 0.0f64..1.0) {
            let a = 2f64.powi(-n - 1);
            let x = a + t * a;
            let f = SystemDef::cascade().apply(&Point::line(x)).x();
            prop_assert!(f <= x);
            prop_assert!(f >= a);
        }

        #[test]
        fn evaluation_is_deterministic_and_stays_in_domain(i in 0usize..14, x in 0.0f64..1.0) {
            let sys = &builtin_zoo()[i];
            let g = sample(sys, 0.05).unwrap();
            let p = g.points[(x * (g.len() - 1) as f64) as usize];
            let q = sys.apply(&p);
            prop_assert_eq!(q, sys.apply(&p));
            prop_assert!(sys.contains(&q));
        }
    }
}
