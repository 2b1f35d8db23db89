//! Points, metrics and finite point sets.
//!
//! Every point carries a [`SpaceTag`] naming the space it lives in. Circle
//! coordinates are kept canonical in `[0, 1)` so that equality and hashing
//! agree with the metric (`0.0` and `1.0` are the same point).
//!
//! A [`Metric`] may carry a warp parameter `w` with `|w| < 1`. The distance is
//! then measured between the warped coordinates `h(x) = x + w sin(2 pi x) / (2 pi)`,
//! which is bi-Lipschitz to the plain metric and fixes every integer, so the
//! diameter of the built-in domains does not move.

use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("space mismatch: {0:?} vs {1:?}")]
    SpaceMismatch(SpaceKind, SpaceKind),
    #[error("metric {metric:?} cannot measure points in {space:?}")]
    MetricMismatch { metric: MetricKind, space: SpaceKind },
    #[error("hausdorff distance of an empty set")]
    EmptySet,
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpaceKind {
    Interval,
    Circle,
    Plane,
}

impl SpaceKind {
    pub fn dim(self) -> usize {
        match self {
            SpaceKind::Interval | SpaceKind::Circle => 1,
            SpaceKind::Plane => 2,
        }
    }
}

/// Which space a point lives in, plus the connected component for disjoint unions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceTag {
    pub kind: SpaceKind,
    pub component: u16,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Point {
    pub coords: [f64; 2],
    pub tag: SpaceTag,
}

fn clean(v: f64) -> f64 {
    // -0.0 and 0.0 must hash the same
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Reduce a circle coordinate into `[0, 1)`.
pub fn wrap_unit(t: f64) -> f64 {
    let r = t.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        clean(r)
    }
}

impl Point {
    pub fn line(x: f64) -> Self {
        Self::line_in(x, 0)
    }

    pub fn line_in(x: f64, component: u16) -> Self {
        Point {
            coords: [clean(x), 0.0],
            tag: SpaceTag { kind: SpaceKind::Interval, component },
        }
    }

    pub fn circle(t: f64) -> Self {
        Point {
            coords: [wrap_unit(t), 0.0],
            tag: SpaceTag { kind: SpaceKind::Circle, component: 0 },
        }
    }

    pub fn plane(x: f64, y: f64) -> Self {
        Point {
            coords: [clean(x), clean(y)],
            tag: SpaceTag { kind: SpaceKind::Plane, component: 0 },
        }
    }

    /// Same space as `self`, new coordinates (re-canonicalized).
    pub fn with_coords(&self, c: [f64; 2]) -> Self {
        match self.tag.kind {
            SpaceKind::Circle => Point::circle(c[0]),
            SpaceKind::Interval => Point::line_in(c[0], self.tag.component),
            SpaceKind::Plane => Point::plane(c[0], c[1]),
        }
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn kind(&self) -> SpaceKind {
        self.tag.kind
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    /// Total order used for deterministic sorting: tag, then coordinates.
    pub fn total_cmp(&self, other: &Point) -> Ordering {
        self.tag
            .cmp(&other.tag)
            .then(self.coords[0].total_cmp(&other.coords[0]))
            .then(self.coords[1].total_cmp(&other.coords[1]))
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag
            && self.coords[0].to_bits() == other.coords[0].to_bits()
            && self.coords[1].to_bits() == other.coords[1].to_bits()
    }
}

impl Eq for Point {}

impl Hash for Point {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tag.hash(state);
        self.coords[0].to_bits().hash(state);
        self.coords[1].to_bits().hash(state);
    }
}

impl std::fmt::Display for Point {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.tag.kind {
            SpaceKind::Plane => write!(f, "({}, {})", self.coords[0], self.coords[1]),
            _ => write!(f, "{}", self.coords[0]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    /// `|a - b|` on subsets of the real line.
    EuclideanInterval,
    /// Arc length on the circle of circumference 1.
    ArcCircle,
    EuclideanPlane,
    /// `max(|dx|, |dy|)` on a product of intervals.
    MaxProduct,
}

impl MetricKind {
    pub fn space(self) -> SpaceKind {
        match self {
            MetricKind::EuclideanInterval => SpaceKind::Interval,
            MetricKind::ArcCircle => SpaceKind::Circle,
            MetricKind::EuclideanPlane | MetricKind::MaxProduct => SpaceKind::Plane,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub warp: f64,
}

/// The warp homeomorphism `h(x) = x + w sin(2 pi x) / (2 pi)`.
pub fn warp(w: f64, x: f64) -> f64 {
    if w == 0.0 {
        x
    } else {
        x + w * (TAU * x).sin() / TAU
    }
}

/// Inverse of [`warp`], by Newton iteration safeguarded with bisection.
pub fn unwarp(w: f64, u: f64) -> f64 {
    if w == 0.0 {
        return u;
    }
    // h(x) - x is bounded by |w| / (2 pi)
    let bound = w.abs() / TAU;
    let (mut lo, mut hi) = (u - bound - 1e-12, u + bound + 1e-12);
    let mut x = u;
    for _ in 0..100 {
        let fx = warp(w, x) - u;
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = 1.0 + w * (TAU * x).cos();
        let mut next = x - fx / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == x {
            break;
        }
        x = next;
    }
    x
}

fn arc(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

impl Metric {
    pub fn interval() -> Self {
        Metric { kind: MetricKind::EuclideanInterval, warp: 0.0 }
    }

    pub fn circle() -> Self {
        Metric { kind: MetricKind::ArcCircle, warp: 0.0 }
    }

    pub fn plane() -> Self {
        Metric { kind: MetricKind::EuclideanPlane, warp: 0.0 }
    }

    pub fn max_product() -> Self {
        Metric { kind: MetricKind::MaxProduct, warp: 0.0 }
    }

    pub fn warped(self, w: f64) -> Self {
        assert!(w.abs() < 1.0, "warp must satisfy |w| < 1");
        Metric { warp: w, ..self }
    }

    pub fn space(&self) -> SpaceKind {
        self.kind.space()
    }

    /// Warped coordinate of a 1-D point; the metric is `|u - v|` (or arc) in these.
    #[inline]
    pub fn coord(&self, x: f64) -> f64 {
        warp(self.warp, x)
    }

    /// Unchecked distance. Callers guarantee both points match the metric.
    #[inline]
    pub fn dist(&self, a: &Point, b: &Point) -> f64 {
        match self.kind {
            MetricKind::EuclideanInterval => (self.coord(a.coords[0]) - self.coord(b.coords[0])).abs(),
            MetricKind::ArcCircle => arc(self.coord(a.coords[0]), self.coord(b.coords[0])),
            MetricKind::EuclideanPlane => {
                let dx = self.coord(a.coords[0]) - self.coord(b.coords[0]);
                let dy = self.coord(a.coords[1]) - self.coord(b.coords[1]);
                dx.hypot(dy)
            }
            MetricKind::MaxProduct => {
                let dx = self.coord(a.coords[0]) - self.coord(b.coords[0]);
                let dy = self.coord(a.coords[1]) - self.coord(b.coords[1]);
                dx.abs().max(dy.abs())
            }
        }
    }

    pub fn check(&self, p: &Point) -> Result<(), GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if p.kind() != self.space() {
            return Err(GeometryError::MetricMismatch { metric: self.kind, space: p.kind() });
        }
        Ok(())
    }
}

/// Checked distance: both points must live in the metric's space.
pub fn distance(a: &Point, b: &Point, m: &Metric) -> Result<f64, GeometryError> {
    if a.kind() != b.kind() {
        return Err(GeometryError::SpaceMismatch(a.kind(), b.kind()));
    }
    m.check(a)?;
    m.check(b)?;
    Ok(m.dist(a, b))
}

/// An ordered collection of points. Duplicates are allowed and can be counted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FiniteSet {
    pub points: Vec<Point>,
}

impl FiniteSet {
    pub fn new(points: Vec<Point>) -> Self {
        FiniteSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duplicate_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        self.points.iter().filter(|p| !seen.insert(**p)).count()
    }

    /// Distinct points in order of first appearance.
    pub fn dedup(&self) -> FiniteSet {
        let mut seen = std::collections::HashSet::new();
        FiniteSet::new(self.points.iter().copied().filter(|p| seen.insert(*p)).collect())
    }
}

impl From<Vec<Point>> for FiniteSet {
    fn from(points: Vec<Point>) -> Self {
        FiniteSet { points }
    }
}

/// Sorted warped coordinates of a 1-D point list, for nearest and ball queries.
#[derive(Clone, Debug)]
pub struct LineIndex {
    metric: Metric,
    // (warped coordinate, original index), sorted by coordinate then index
    sorted: Vec<(f64, usize)>,
}

impl LineIndex {
    pub fn supports(metric: &Metric) -> bool {
        matches!(metric.kind, MetricKind::EuclideanInterval | MetricKind::ArcCircle)
    }

    pub fn new(points: &[Point], metric: Metric) -> Self {
        debug_assert!(Self::supports(&metric));
        let mut sorted: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let u = metric.coord(p.coords[0]);
                let u = if metric.kind == MetricKind::ArcCircle { u.rem_euclid(1.0) } else { u };
                (u, i)
            })
            .collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        LineIndex { metric, sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    fn circular(&self) -> bool {
        self.metric.kind == MetricKind::ArcCircle
    }

    fn gap(&self, u: f64, v: f64) -> f64 {
        if self.circular() {
            arc(u, v)
        } else {
            (u - v).abs()
        }
    }

    fn query_coord(&self, p: &Point) -> f64 {
        let u = self.metric.coord(p.coords[0]);
        if self.circular() {
            u.rem_euclid(1.0)
        } else {
            u
        }
    }

    /// Nearest indexed point to `p` as `(distance, index)`; ties go to the smallest index.
    pub fn nearest(&self, p: &Point) -> Option<(f64, usize)> {
        let n = self.sorted.len();
        if n == 0 {
            return None;
        }
        let u = self.query_coord(p);
        let pos = self.sorted.partition_point(|e| e.0 < u);
        let mut cand: Vec<usize> = vec![pos.min(n - 1), pos.saturating_sub(1)];
        if self.circular() {
            cand.push(0);
            cand.push(n - 1);
        }
        let best = cand
            .iter()
            .map(|&k| self.gap(u, self.sorted[k].0))
            .fold(f64::INFINITY, f64::min);
        // every entry at exactly the best distance sits in a contiguous run
        // around one of the candidate positions
        let mut idx = usize::MAX;
        for &k in &cand {
            let mut j = k;
            loop {
                if self.gap(u, self.sorted[j].0) != best {
                    break;
                }
                idx = idx.min(self.sorted[j].1);
                if j == 0 {
                    break;
                }
                j -= 1;
            }
            let mut j = k;
            while j < n && self.gap(u, self.sorted[j].0) == best {
                idx = idx.min(self.sorted[j].1);
                j += 1;
            }
        }
        Some((best, idx))
    }

    /// Indices (ascending) of points within `r` of `p`; strict `<` unless `closed`.
    pub fn ball(&self, p: &Point, r: f64, closed: bool) -> Vec<usize> {
        let mut out = Vec::new();
        self.ball_into(p, r, closed, &mut out);
        out
    }

    pub fn ball_into(&self, p: &Point, r: f64, closed: bool, out: &mut Vec<usize>) {
        out.clear();
        let n = self.sorted.len();
        if n == 0 {
            return;
        }
        let u = self.query_coord(p);
        let keep = |d: f64| if closed { d <= r } else { d < r };
        let pad = 1e-12 * (1.0 + r.abs() + u.abs());
        let push_window = |lo: f64, hi: f64, out: &mut Vec<usize>| {
            let a = self.sorted.partition_point(|e| e.0 < lo - pad);
            let b = self.sorted.partition_point(|e| e.0 <= hi + pad);
            for e in &self.sorted[a..b] {
                if keep(self.gap(u, e.0)) {
                    out.push(e.1);
                }
            }
        };
        if self.circular() {
            if r >= 0.5 {
                for e in &self.sorted {
                    if keep(self.gap(u, e.0)) {
                        out.push(e.1);
                    }
                }
            } else {
                let (lo, hi) = (u - r, u + r);
                if lo < 0.0 {
                    push_window(lo + 1.0, 1.0, out);
                    push_window(0.0, hi, out);
                } else if hi >= 1.0 {
                    push_window(lo, 1.0, out);
                    push_window(0.0, hi - 1.0, out);
                } else {
                    push_window(lo, hi, out);
                }
            }
        } else {
            push_window(u - r, u + r, out);
        }
        out.sort_unstable();
        out.dedup();
    }
}

/// Nearest point of `set` to `p` by brute force; ties go to the smallest index.
pub fn nearest_brute(set: &[Point], p: &Point, m: &Metric) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, q) in set.iter().enumerate() {
        let d = m.dist(p, q);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best
}

fn check_all(set: &[Point], m: &Metric) -> Result<(), GeometryError> {
    set.iter().try_for_each(|p| m.check(p))
}

/// One-sided sup-inf distance by brute force.
fn directed_brute(a: &[Point], b: &[Point], m: &Metric) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| m.dist(p, q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Hausdorff distance by exhaustive comparison, `O(|A| |B|)`.
pub fn hausdorff_brute(a: &FiniteSet, b: &FiniteSet, m: &Metric) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptySet);
    }
    check_all(&a.points, m)?;
    check_all(&b.points, m)?;
    Ok(directed_brute(&a.points, &b.points, m).max(directed_brute(&b.points, &a.points, m)))
}

/// Hausdorff distance. One-dimensional inputs go through a sorted index;
/// the result is identical to [`hausdorff_brute`].
pub fn hausdorff_distance(a: &FiniteSet, b: &FiniteSet, m: &Metric) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptySet);
    }
    check_all(&a.points, m)?;
    check_all(&b.points, m)?;
    if !LineIndex::supports(m) || a.len().saturating_mul(b.len()) < 4096 {
        return Ok(directed_brute(&a.points, &b.points, m).max(directed_brute(&b.points, &a.points, m)));
    }
    let directed = |x: &[Point], y: &[Point]| {
        let idx = LineIndex::new(y, *m);
        x.iter().map(|p| idx.nearest(p).map_or(f64::INFINITY, |t| t.0)).fold(0.0, f64::max)
    };
    Ok(directed(&a.points, &b.points).max(directed(&b.points, &a.points)))
}

/// Indices of points of `set` with `d(p, c) < r`.
pub fn ball_query(set: &FiniteSet, c: &Point, r: f64, m: &Metric) -> Vec<usize> {
    set.points.iter().enumerate().filter(|(_, p)| m.dist(p, c) < r).map(|(i, _)| i).collect()
}

/// Indices of points of `set` with `d(p, c) <= r`.
pub fn ball_query_closed(set: &FiniteSet, c: &Point, r: f64, m: &Metric) -> Vec<usize> {
    set.points.iter().enumerate().filter(|(_, p)| m.dist(p, c) <= r).map(|(i, _)| i).collect()
}

/// Smallest positive pairwise distance, or `None` when all points coincide.
pub fn min_positive_separation(points: &[Point], m: &Metric) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    if LineIndex::supports(m) {
        let idx = LineIndex::new(points, *m);
        let s = &idx.sorted;
        let mut best = f64::INFINITY;
        for w in s.windows(2) {
            let d = idx.gap(w[0].0, w[1].0);
            if d > 0.0 {
                best = best.min(d);
            }
        }
        if idx.circular() && s.len() > 2 {
            let d = idx.gap(s[0].0, s[s.len() - 1].0);
            if d > 0.0 {
                best = best.min(d);
            }
        }
        // equal warped coordinates can hide distinct points only if warping
        // collapsed them, which a homeomorphism does not do
        return best.is_finite().then_some(best);
    }
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = m.dist(&points[i], &points[j]);
            if d > 0.0 {
                best = best.min(d);
            }
        }
    }
    best.is_finite().then_some(best)
}
