//! Nested chain families: Hausdorff projection, cycle pruning and the
//! stabilized order of a nested family.
//!
//! A family of chains `C_1, C_2, ...` from `x` to `y` with shrinking scales is
//! projected onto the support of its last chain, producing chains
//! `S_1 ⊆ S_2 ⊆ ...` (as point sets) with `S_n` valid at the `n`-th schedule
//! level. Pruning alternates cycle removal with re-projection until the
//! limit support stops moving. The order in which points first occur along
//! the later chains gives the stabilized order.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epsgraph::{is_chain, remove_cycles, Chain, EpsilonGraph, RefinementSchedule};
use crate::geometry::{hausdorff_distance, min_positive_separation, FiniteSet, LineIndex, Metric, Point, SpaceKind};
use crate::systems::{sample, SampleGrid, SystemDef};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum NestingError {
    #[error("empty family")]
    EmptyFamily,
    #[error("chain {0} does not share the family's endpoints")]
    EndpointMismatch(usize),
    #[error("chain {index} is not a valid chain at its nominal scale {epsilon}")]
    InvalidChain { index: usize, epsilon: f64 },
    #[error("no input chain is close enough to the limit support at level {level} (best d_H {best_distance} vs needed {needed})")]
    ScheduleExhausted { level: usize, best_distance: f64, needed: f64 },
    #[error("assignment of level {level} points to chain {chain} is not injective")]
    Injectivity { level: usize, chain: usize },
    #[error("projected chain at level {level} has slack {slack}, above its scale {epsilon}")]
    Validation { level: usize, slack: f64, epsilon: f64 },
    #[error("family needs at least {needed} levels, has {got}")]
    TooShallow { needed: usize, got: usize },
    #[error("malformed family text at line {0}: {1}")]
    Parse(usize, String),
}

/// A sequence of chains `S_1, ..., S_L` sharing endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedFamily {
    pub x: Point,
    pub y: Point,
    pub chains: Vec<Chain>,
}

impl NestedFamily {
    pub fn new(chains: Vec<Chain>) -> Result<Self, NestingError> {
        let first = chains.first().ok_or(NestingError::EmptyFamily)?;
        let (x, y) = (first.start(), first.end());
        for (k, c) in chains.iter().enumerate() {
            if c.points.len() < 2 || c.start() != x || c.end() != y {
                return Err(NestingError::EndpointMismatch(k));
            }
        }
        Ok(NestedFamily { x, y, chains })
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn last(&self) -> &Chain {
        self.chains.last().expect("non-empty family")
    }

    pub fn support(&self, level: usize) -> HashSet<Point> {
        self.chains[level].points.iter().copied().collect()
    }

    pub fn is_nested(&self) -> bool {
        self.chains.windows(2).all(|w| {
            let next: HashSet<Point> = w[1].points.iter().copied().collect();
            w[0].points.iter().all(|p| next.contains(p))
        })
    }

    /// Line-oriented text form; floats are written in round-trip notation.
    pub fn to_text(&self) -> String {
        let mut s = String::from("nested-family 1\n");
        s.push_str(&format!("x {}\ny {}\nlevels {}\n", point_text(&self.x), point_text(&self.y), self.len()));
        for (n, c) in self.chains.iter().enumerate() {
            s.push_str(&format!("level {} eps {:?} points {}\n", n + 1, c.epsilon, c.points.len()));
            for p in &c.points {
                s.push_str(&point_text(p));
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NestingError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| NestingError::Parse(0, format!("missing {what}")));
        let (i, head) = next("header")?;
        if head.trim() != "nested-family 1" {
            return Err(NestingError::Parse(i + 1, "bad header".into()));
        }
        let (i, xl) = next("x")?;
        let _x = parse_point(xl.strip_prefix("x ").ok_or_else(|| NestingError::Parse(i + 1, "expected x".into()))?, i)?;
        let (i, yl) = next("y")?;
        let _y = parse_point(yl.strip_prefix("y ").ok_or_else(|| NestingError::Parse(i + 1, "expected y".into()))?, i)?;
        let (i, ll) = next("levels")?;
        let levels: usize = ll
            .strip_prefix("levels ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| NestingError::Parse(i + 1, "expected levels".into()))?;
        let mut chains = Vec::with_capacity(levels);
        for _ in 0..levels {
            let (i, hl) = next("level")?;
            let f: Vec<&str> = hl.split_whitespace().collect();
            if f.len() != 6 || f[0] != "level" || f[2] != "eps" || f[4] != "points" {
                return Err(NestingError::Parse(i + 1, "expected level header".into()));
            }
            let eps: f64 = f[3].parse().map_err(|_| NestingError::Parse(i + 1, "bad eps".into()))?;
            let count: usize = f[5].parse().map_err(|_| NestingError::Parse(i + 1, "bad count".into()))?;
            let mut pts = Vec::with_capacity(count);
            for _ in 0..count {
                let (i, pl) = next("point")?;
                pts.push(parse_point(pl, i)?);
            }
            chains.push(Chain::new(pts, eps));
        }
        NestedFamily::new(chains)
    }
}

fn point_text(p: &Point) -> String {
    let k = match p.tag.kind {
        SpaceKind::Interval => "I",
        SpaceKind::Circle => "C",
        SpaceKind::Plane => "P",
    };
    format!("{k} {} {:?} {:?}", p.tag.component, p.coords[0], p.coords[1])
}

fn parse_point(s: &str, line: usize) -> Result<Point, NestingError> {
    let bad = || NestingError::Parse(line + 1, format!("bad point {s:?}"));
    let f: Vec<&str> = s.split_whitespace().collect();
    if f.len() != 4 {
        return Err(bad());
    }
    let comp: u16 = f[1].parse().map_err(|_| bad())?;
    let a: f64 = f[2].parse().map_err(|_| bad())?;
    let b: f64 = f[3].parse().map_err(|_| bad())?;
    match f[0] {
        "I" => Ok(Point::line_in(a, comp)),
        "C" => Ok(Point::circle(a)),
        "P" => Ok(Point::plane(a, b)),
        _ => Err(bad()),
    }
}

/// Support of the last input chain, standing in for the Hausdorff limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSupport {
    pub points: Vec<Point>,
    /// `d_H` between the last two input supports: how far from converged the input was.
    pub residual: f64,
}

/// Distinct points of a chain, in order of first occurrence.
pub fn support_set(c: &Chain) -> FiniteSet {
    FiniteSet::new(c.points.clone()).dedup()
}

/// `delta` such that `d(u, v) < delta` implies `d(f(u), f(v)) < target`.
pub fn continuity_modulus(sys: &SystemDef, target: f64) -> f64 {
    let w = sys.metric.warp.abs();
    let distortion = if w == 0.0 { 1.0 } else { (1.0 + w) / (1.0 - w) };
    if let Some(l) = sys.lipschitz {
        return target / (l * distortion).max(1e-300);
    }
    if let crate::systems::Domain::Finite(pts) = &sys.domain {
        return min_positive_separation(pts, &sys.metric).unwrap_or(f64::INFINITY);
    }
    sampled_modulus(sys, target)
}

fn sampled_modulus(sys: &SystemDef, target: f64) -> f64 {
    let grid = match sample(sys, sys.diam / 1024.0) {
        Ok(g) => g,
        Err(_) => return 0.0,
    };
    let mut delta = target;
    for _ in 0..60 {
        let mut worst: f64 = 0.0;
        for p in &grid.points {
            if p.kind() == SpaceKind::Plane {
                continue;
            }
            for s in [0.25, 0.5, 0.75, 0.999] {
                let q = p.with_coords([p.x() + s * delta, 0.0]);
                if !sys.contains(&q) || sys.metric.dist(p, &q) >= delta {
                    continue;
                }
                worst = worst.max(sys.metric.dist(&sys.apply(p), &sys.apply(&q)));
            }
        }
        // factor 2 of safety on the sampled estimate
        if worst < target / 2.0 {
            return delta;
        }
        delta /= 2.0;
    }
    0.0
}

/// Nearest point lookup over a fixed point list, ties to the smallest index.
struct Nearest<'a> {
    points: &'a [Point],
    metric: Metric,
    line: Option<LineIndex>,
}

impl<'a> Nearest<'a> {
    fn new(points: &'a [Point], metric: Metric) -> Self {
        let line = (LineIndex::supports(&metric) && points.len() > 32).then(|| LineIndex::new(points, metric));
        Nearest { points, metric, line }
    }

    fn get(&self, p: &Point) -> (f64, usize) {
        match &self.line {
            Some(ix) => ix.nearest(p).expect("non-empty"),
            None => crate::geometry::nearest_brute(self.points, p, &self.metric).expect("non-empty"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLevel {
    /// Which input chain was used to build this level.
    pub source: usize,
    pub delta: f64,
    /// Adjacent duplicates merged while building the level.
    pub collapsed: usize,
    pub max_slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub family: NestedFamily,
    pub limit: LimitSupport,
    /// Bookkeeping for `S_2, ..., S_L`.
    pub levels: Vec<ProjectionLevel>,
}

fn validate_input(sys: &SystemDef, family: &[Chain]) -> Result<(Point, Point), NestingError> {
    let first = family.first().ok_or(NestingError::EmptyFamily)?;
    let (x, y) = (first.start(), first.end());
    for (k, c) in family.iter().enumerate() {
        if c.points.len() < 2 || c.start() != x || c.end() != y {
            return Err(NestingError::EndpointMismatch(k));
        }
        let chk = is_chain(sys, &c.points, c.epsilon).map_err(|_| NestingError::InvalidChain { index: k, epsilon: c.epsilon })?;
        if !chk.valid {
            return Err(NestingError::InvalidChain { index: k, epsilon: c.epsilon });
        }
    }
    Ok((x, y))
}

/// Project a family of chains onto the support of its last chain.
///
/// Level `n + 1` is built from the first input chain that is an
/// `ε'/6`-chain within `δ/2` of the limit support, where
/// `ε' = min(ε_n, 2 ε_(n+1))` and `δ` respects the continuity modulus and
/// half the smallest gap of the current level. Matched points keep their
/// place; every other position takes its nearest limit point.
pub fn hausdorff_project(sys: &SystemDef, family: &[Chain], sched: &RefinementSchedule) -> Result<Projection, NestingError> {
    let (x, y) = validate_input(sys, family)?;
    let m = sys.metric;
    let last = family.last().expect("validated");
    let limit_set = support_set(last);
    let residual = if family.len() >= 2 {
        hausdorff_distance(&support_set(&family[family.len() - 2]), &limit_set, &m).unwrap_or(0.0)
    } else {
        0.0
    };
    let limit = LimitSupport { points: limit_set.points.clone(), residual };
    let near_limit = Nearest::new(&limit.points, m);
    let candidates: Vec<usize> = if family.len() >= 2 { (0..family.len() - 1).collect() } else { vec![0] };
    let cand_supports: Vec<FiniteSet> = candidates.iter().map(|&k| support_set(&family[k])).collect();
    let cand_dh: Vec<f64> =
        cand_supports.iter().map(|s| hausdorff_distance(s, &limit_set, &m).unwrap_or(f64::INFINITY)).collect();
    let cand_slack: Vec<f64> = candidates
        .iter()
        .map(|&k| is_chain(sys, &family[k].points, f64::INFINITY).map(|c| c.max_slack()).unwrap_or(f64::INFINITY))
        .collect();

    let eps = &sched.epsilons;
    let first = Chain::new(vec![x, y], eps[0]);
    let chk = is_chain(sys, &first.points, eps[0]).expect("two points");
    if !chk.valid {
        return Err(NestingError::Validation { level: 1, slack: chk.max_slack(), epsilon: eps[0] });
    }
    let mut chains = vec![first];
    let mut levels = Vec::new();
    let mut modulus_cache: HashMap<u64, f64> = HashMap::new();
    for n in 0..eps.len().saturating_sub(1) {
        let e_prime = eps[n].min(2.0 * eps[n + 1]);
        let target = e_prime / 6.0;
        let cur = chains.last().expect("non-empty");
        let cur_support = support_set(cur);
        let sep = min_positive_separation(&cur_support.points, &m).unwrap_or(f64::INFINITY);
        let modulus = *modulus_cache.entry(target.to_bits()).or_insert_with(|| continuity_modulus(sys, target));
        let delta = 0.999 * target.min(sep / 2.0).min(modulus);
        let pick = (0..candidates.len()).find(|&i| cand_slack[i] < target && cand_dh[i] < delta / 2.0);
        let Some(ci) = pick else {
            let best = (0..candidates.len())
                .filter(|&i| cand_slack[i] < target)
                .map(|i| cand_dh[i])
                .fold(f64::INFINITY, f64::min);
            return Err(NestingError::ScheduleExhausted { level: n + 2, best_distance: best, needed: delta / 2.0 });
        };
        let ck = &family[candidates[ci]];
        let mk = ck.points.len() - 1;
        // every distinct point of the current level claims its nearest position in C_k
        let near_ck = Nearest::new(&ck.points, m);
        let mut claimed: Vec<Option<Point>> = vec![None; mk + 1];
        claimed[0] = Some(x);
        claimed[mk] = Some(y);
        for p in &cur_support.points {
            if *p == x || *p == y {
                continue;
            }
            let (d, j) = near_ck.get(p);
            if d > delta / 2.0 || j == 0 || j == mk || claimed[j].is_some() {
                return Err(NestingError::Injectivity { level: n + 2, chain: candidates[ci] });
            }
            claimed[j] = Some(*p);
        }
        let mut pts: Vec<Point> = Vec::with_capacity(mk + 1);
        let mut collapsed = 0;
        for (h, c) in claimed.iter().enumerate() {
            let p = match c {
                Some(p) => *p,
                None => limit.points[near_limit.get(&ck.points[h]).1],
            };
            if pts.last() == Some(&p) {
                collapsed += 1;
                continue;
            }
            pts.push(p);
        }
        if pts.len() == 1 {
            // x = y and everything collapsed onto it
            pts.push(y);
        }
        let chk = is_chain(sys, &pts, eps[n + 1]).expect("at least two points");
        if !chk.valid {
            return Err(NestingError::Validation { level: n + 2, slack: chk.max_slack(), epsilon: eps[n + 1] });
        }
        levels.push(ProjectionLevel { source: candidates[ci], delta, collapsed, max_slack: chk.max_slack() });
        chains.push(Chain::new(pts, eps[n + 1]));
    }
    Ok(Projection { family: NestedFamily { x, y, chains }, limit, levels })
}

/// Number of leading schedule levels the projection can follow. An a-priori
/// bound comes first: each step needs an input chain with slack below its
/// target and support within `δ/2` of the limit, `δ` bounded by the target
/// and the continuity modulus. The gaps of the level being extended bound
/// `δ` as well, which only the projection itself reveals, so it runs on the
/// bound and stops one level before running out of candidates. Levels only
/// depend on the levels above them, so the truncated run is a prefix.
pub fn feasible_depth(sys: &SystemDef, family: &[Chain], sched: &RefinementSchedule) -> usize {
    let Some(last) = family.last() else { return 1 };
    let k = if family.len() >= 2 { family.len() - 1 } else { family.len() };
    let limit = support_set(last);
    let cands: Vec<(f64, f64)> = family[..k]
        .iter()
        .map(|c| {
            let slack = is_chain(sys, &c.points, f64::INFINITY).map(|r| r.max_slack()).unwrap_or(f64::INFINITY);
            let dh = hausdorff_distance(&support_set(c), &limit, &sys.metric).unwrap_or(f64::INFINITY);
            (slack, dh)
        })
        .collect();
    let eps = &sched.epsilons;
    let mut depth = 1;
    for n in 0..eps.len().saturating_sub(1) {
        let target = eps[n].min(2.0 * eps[n + 1]) / 6.0;
        let delta = 0.999 * target.min(continuity_modulus(sys, target));
        if cands.iter().any(|&(sl, dh)| sl < target && dh < delta / 2.0) {
            depth = n + 2;
        } else {
            break;
        }
    }
    match hausdorff_project(sys, family, &sched.truncated(depth)) {
        Err(NestingError::ScheduleExhausted { level, .. }) => level - 1,
        _ => depth,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub converged: bool,
    pub rounds: usize,
    /// `d_H` between successive limit supports, one entry per round.
    pub movement: Vec<f64>,
    pub result: Option<Projection>,
    pub failure: Option<NestingError>,
    /// Rounds in which acyclic input supported on the limit produced a cycle.
    pub acyclicity_breaks: usize,
}

/// Alternate cycle removal and projection until the limit support is stable.
pub fn prune_loop(
    sys: &SystemDef,
    family: &[Chain],
    sched: &RefinementSchedule,
    budget: usize,
    tol: f64,
) -> PruneOutcome {
    let m = sys.metric;
    let mut input: Vec<Chain> = family.to_vec();
    let mut prev_limit = match input.last() {
        Some(c) => support_set(c),
        None => {
            return PruneOutcome {
                converged: false,
                rounds: 0,
                movement: vec![],
                result: None,
                failure: Some(NestingError::EmptyFamily),
                acyclicity_breaks: 0,
            }
        }
    };
    let mut out = PruneOutcome { converged: false, rounds: 0, movement: vec![], result: None, failure: None, acyclicity_breaks: 0 };
    for _ in 0..budget.max(1) {
        out.rounds += 1;
        let pruned: Vec<Chain> = input.iter().map(remove_cycles).collect();
        let proj = match hausdorff_project(sys, &pruned, sched) {
            Ok(p) => p,
            Err(e) => {
                out.failure = Some(e);
                return out;
            }
        };
        let limit = FiniteSet::new(proj.limit.points.clone());
        let moved = hausdorff_distance(&limit, &prev_limit, &m).unwrap_or(f64::INFINITY);
        out.movement.push(moved);
        let acyclic = proj.family.chains.iter().all(Chain::is_acyclic);
        let on_limit: HashSet<Point> = proj.limit.points.iter().copied().collect();
        let input_on_limit = pruned.iter().all(|c| c.points.iter().all(|p| on_limit.contains(p)));
        if input_on_limit && !acyclic {
            out.acyclicity_breaks += 1;
        }
        input = proj.family.chains.clone();
        prev_limit = limit;
        out.result = Some(proj);
        if moved < tol && acyclic {
            out.converged = true;
            return out;
        }
    }
    out
}

/// Interior points of a chain ranked by the index at which they first occur.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOccurrenceOrder {
    pub points: Vec<Point>,
}

impl FirstOccurrenceOrder {
    pub fn rank(&self) -> HashMap<Point, usize> {
        self.points.iter().enumerate().map(|(i, p)| (*p, i)).collect()
    }
}

pub fn first_occurrence_order(c: &Chain) -> FirstOccurrenceOrder {
    let (x, y) = (c.start(), c.end());
    let mut seen = HashSet::new();
    let points = c.interior().iter().copied().filter(|p| *p != x && *p != y && seen.insert(*p)).collect();
    FirstOccurrenceOrder { points }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairOrder {
    Before,
    After,
    Unstable,
    /// At least one point is not in the support.
    Unknown,
}

/// The order on the support of the last `window` chains of a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizedOrder {
    pub window: usize,
    /// Support in reference order: first occurrence along the last chain,
    /// then points missing from it, in order of appearance.
    pub support: Vec<Point>,
    /// Unordered pairs (as support positions, smaller first) whose order is not constant.
    pub unstable: Vec<(usize, usize)>,
    /// The unstable list was cut at [`UNSTABLE_CAP`].
    pub truncated: bool,
    /// Points seen only before the window.
    pub vanished: Vec<Point>,
    #[serde(skip)]
    rank: HashMap<Point, usize>,
    #[serde(skip)]
    unstable_set: HashSet<(usize, usize)>,
    /// Decided pairs that run against the reference ranking (only when points flicker).
    #[serde(skip)]
    reversed: HashSet<(usize, usize)>,
}

pub const UNSTABLE_CAP: usize = 200_000;

impl StabilizedOrder {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn position(&self, p: &Point) -> Option<usize> {
        self.rank.get(p).copied()
    }

    pub fn relation(&self, p: &Point, q: &Point) -> PairOrder {
        let (Some(a), Some(b)) = (self.position(p), self.position(q)) else { return PairOrder::Unknown };
        if a == b {
            return PairOrder::Unknown;
        }
        let key = (a.min(b), a.max(b));
        if self.unstable_set.contains(&key) {
            PairOrder::Unstable
        } else if (a < b) != self.reversed.contains(&key) {
            PairOrder::Before
        } else {
            PairOrder::After
        }
    }

    pub fn fully_decided(&self) -> bool {
        self.unstable.is_empty() && !self.truncated
    }

    /// Points whose pairwise order agrees with the ranking, in order.
    pub fn decided_support(&self) -> Vec<Point> {
        let mut bad = vec![false; self.support.len()];
        for &(a, b) in self.unstable.iter().chain(self.reversed.iter()) {
            bad[a] = true;
            bad[b] = true;
        }
        self.support.iter().zip(bad).filter(|(_, b)| !b).map(|(p, _)| *p).collect()
    }
}

fn inversions(seq: &[usize], cap: usize, out: &mut HashSet<(usize, usize)>) -> bool {
    // seq holds reference ranks; any i < j with seq[i] > seq[j] is a flip
    let mut order: Vec<usize> = (0..seq.len()).collect();
    order.sort_by_key(|&i| seq[i]);
    // a Fenwick-free scan: for each element, the earlier elements with larger rank
    let mut sorted_prefix: Vec<usize> = Vec::with_capacity(seq.len());
    for &r in seq {
        let pos = sorted_prefix.partition_point(|&v| v <= r);
        for &v in &sorted_prefix[pos..] {
            out.insert((r.min(v), r.max(v)));
            if out.len() >= cap {
                return true;
            }
        }
        sorted_prefix.insert(pos, r);
    }
    false
}

pub fn stabilized_order(nf: &NestedFamily, window: usize) -> StabilizedOrder {
    let w = window.clamp(1, nf.len());
    let win = &nf.chains[nf.len() - w..];
    let last = first_occurrence_order(nf.last());
    let mut support = last.points.clone();
    let mut rank: HashMap<Point, usize> = support.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    for c in win.iter().rev() {
        for p in first_occurrence_order(c).points {
            if let std::collections::hash_map::Entry::Vacant(e) = rank.entry(p) {
                e.insert(support.len());
                support.push(p);
            }
        }
    }
    let mut vanished = Vec::new();
    let mut seen_v = HashSet::new();
    for c in &nf.chains[..nf.len() - w] {
        for p in first_occurrence_order(c).points {
            if !rank.contains_key(&p) && seen_v.insert(p) {
                vanished.push(p);
            }
        }
    }
    let mut unstable_set = HashSet::new();
    let mut reversed = HashSet::new();
    let mut truncated = false;
    let orders: Vec<Vec<usize>> =
        win.iter().map(|c| first_occurrence_order(c).points.iter().map(|p| rank[p]).collect()).collect();
    if support.len() == last.points.len() {
        for seq in &orders[..orders.len() - 1] {
            if inversions(seq, UNSTABLE_CAP, &mut unstable_set) {
                truncated = true;
                break;
            }
        }
    } else {
        // some points flicker in and out of the window: decide pair by pair
        let pos: Vec<HashMap<usize, usize>> =
            orders.iter().map(|s| s.iter().enumerate().map(|(i, r)| (*r, i)).collect()).collect();
        'outer: for a in 0..support.len() {
            for b in a + 1..support.len() {
                let mut dir: Option<bool> = None;
                let mut unstable = true;
                for p in &pos {
                    if let (Some(i), Some(j)) = (p.get(&a), p.get(&b)) {
                        let d = i < j;
                        match dir {
                            None => {
                                dir = Some(d);
                                unstable = false;
                            }
                            Some(prev) if prev != d => {
                                unstable = true;
                                break;
                            }
                            _ => {}
                        }
                    }
                }
                if unstable {
                    unstable_set.insert((a, b));
                    if unstable_set.len() >= UNSTABLE_CAP {
                        truncated = true;
                        break 'outer;
                    }
                }
            }
        }
        // pairs decided against the reference ranking
        for a in 0..support.len() {
            for b in a + 1..support.len() {
                if !unstable_set.contains(&(a, b))
                    && pos.iter().any(|p| matches!((p.get(&a), p.get(&b)), (Some(i), Some(j)) if i > j))
                {
                    reversed.insert((a, b));
                }
            }
        }
    }
    let mut unstable: Vec<(usize, usize)> = unstable_set.iter().copied().collect();
    unstable.sort_unstable();
    StabilizedOrder { window: w, support, unstable, truncated, vanished, rank, unstable_set, reversed }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinateCertificate {
    pub nested: bool,
    pub acyclic: bool,
    pub order_compatible: bool,
    pub first_not_nested: Option<usize>,
    pub first_cycle: Option<usize>,
    /// Level and a pair of points whose order flips between levels `n` and `n + 1`.
    pub first_flip: Option<(usize, Point, Point)>,
    pub window_unstable: usize,
}

impl OrdinateCertificate {
    pub fn passed(&self) -> bool {
        self.nested && self.acyclic && self.order_compatible
    }
}

pub fn verify_ordinately_nested(nf: &NestedFamily, window: usize) -> OrdinateCertificate {
    let first_not_nested = nf.chains.windows(2).position(|w| {
        let next: HashSet<Point> = w[1].points.iter().copied().collect();
        !w[0].points.iter().all(|p| next.contains(p))
    });
    let first_cycle = nf.chains.iter().position(|c| !c.is_acyclic());
    let mut first_flip = None;
    for (n, w) in nf.chains.windows(2).enumerate() {
        let next = first_occurrence_order(&w[1]).rank();
        let cur = first_occurrence_order(&w[0]).points;
        let ranks: Vec<Option<usize>> = cur.iter().map(|p| next.get(p).copied()).collect();
        let mut best: Option<(usize, usize)> = None;
        for (i, r) in ranks.iter().enumerate() {
            let Some(r) = *r else { continue };
            if let Some((bi, br)) = best {
                if r < br {
                    first_flip = Some((n + 1, cur[bi], cur[i]));
                    break;
                }
            }
            best = Some((i, r));
        }
        if first_flip.is_some() {
            break;
        }
    }
    let so = stabilized_order(nf, window);
    OrdinateCertificate {
        nested: first_not_nested.is_none(),
        acyclic: first_cycle.is_none(),
        order_compatible: first_flip.is_none() && so.fully_decided(),
        first_not_nested: first_not_nested.map(|n| n + 1),
        first_cycle: first_cycle.map(|n| n + 1),
        first_flip,
        window_unstable: so.unstable.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitCheck {
    pub distance: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare `f(L) ∪ {x}` with `L ∪ {f(y)}` in the Hausdorff metric.
pub fn limit_support_check(ls: &LimitSupport, sys: &SystemDef, x: &Point, y: &Point, tol: f64) -> LimitCheck {
    let mut a: Vec<Point> = ls.points.iter().map(|p| sys.apply(p)).collect();
    a.push(*x);
    let mut b = ls.points.clone();
    b.push(sys.apply(y));
    let distance = hausdorff_distance(&FiniteSet::new(a), &FiniteSet::new(b), &sys.metric).unwrap_or(f64::INFINITY);
    LimitCheck { distance, tolerance: tol, passed: distance <= tol }
}

/// BFS path from `x` to `y` (at least one step) avoiding `blocked` vertices.
pub fn path_avoiding(g: &EpsilonGraph, x: usize, y: usize, blocked: &[bool]) -> Option<Vec<usize>> {
    let n = g.len();
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut q = VecDeque::new();
    for &v in g.out(x) {
        let v = v as usize;
        if v == y {
            return Some(vec![x, y]);
        }
        if !blocked[v] && !seen[v] {
            seen[v] = true;
            parent[v] = x;
            q.push_back(v);
        }
    }
    while let Some(u) = q.pop_front() {
        for &v in g.out(u) {
            let v = v as usize;
            if v == y {
                let mut path = vec![y, u];
                let mut w = u;
                while parent[w] != x {
                    w = parent[w];
                    path.push(w);
                }
                path.push(x);
                path.reverse();
                return Some(path);
            }
            if !blocked[v] && !seen[v] {
                seen[v] = true;
                parent[v] = u;
                q.push_back(v);
            }
        }
    }
    None
}

#[derive(Clone, Debug)]
pub struct Ladder {
    pub family: NestedFamily,
    /// Grid indices of each level.
    pub indices: Vec<Vec<usize>>,
    /// First schedule level (1-based) that could not be refined.
    pub stalled_at: Option<usize>,
}

/// A nested family on grid points: level 1 is a shortest chain, and each
/// later level replaces every step that is too long for its scale by a
/// shortest path through unused grid points. `allowed` restricts the
/// vertices that may be used.
pub fn graph_ladder(
    grid: &SampleGrid,
    sched: &RefinementSchedule,
    x: usize,
    y: usize,
    allowed: Option<&[bool]>,
) -> Option<Ladder> {
    let n = grid.len();
    let base_block: Vec<bool> = match allowed {
        Some(a) => a.iter().map(|v| !v).collect(),
        None => vec![false; n],
    };
    let g0 = EpsilonGraph::build(grid, sched.epsilons[0]);
    let first = path_avoiding(&g0, x, y, &base_block)?;
    let mut levels = vec![first];
    let mut stalled_at = None;
    for (lvl, &e) in sched.epsilons.iter().enumerate().skip(1) {
        let g = EpsilonGraph::build(grid, e);
        let cur = levels.last().expect("non-empty");
        let mut used = base_block.clone();
        for &v in cur {
            used[v] = true;
        }
        let mut next = vec![cur[0]];
        let mut ok = true;
        for w in cur.windows(2) {
            let (a, b) = (w[0], w[1]);
            if g.has_edge(a, b) {
                next.push(b);
                continue;
            }
            match path_avoiding(&g, a, b, &used) {
                Some(p) => {
                    for &v in &p[1..p.len() - 1] {
                        used[v] = true;
                    }
                    next.extend_from_slice(&p[1..]);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            stalled_at = Some(lvl + 1);
            break;
        }
        levels.push(next);
    }
    let chains: Vec<Chain> = levels
        .iter()
        .zip(&sched.epsilons)
        .map(|(ix, &e)| Chain::from_indices(grid, ix.clone(), e))
        .collect();
    let family = NestedFamily::new(chains).ok()?;
    Some(Ladder { family, indices: levels, stalled_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sample, SystemDef};
    use proptest::prelude::*;

    fn p(x: f64) -> Point {
        Point::line(x)
    }

    fn orbit_family(sys: &SystemDef, x: f64, y: f64, lens: &[usize]) -> Vec<Chain> {
        lens.iter()
            .map(|&k| {
                let mut pts = vec![p(x)];
                let mut c = p(x);
                for _ in 0..k {
                    c = sys.apply(&c);
                    pts.push(c);
                }
                let slack = sys.metric.dist(&sys.apply(&c), &p(y));
                pts.push(p(y));
                Chain::new(pts, slack * 2.0 + 1e-15)
            })
            .collect()
    }

    #[test]
    fn halving_orbit_family_projects() {
        let s = SystemDef::halving();
        let fam = orbit_family(&s, 1.0, 0.0, &(4..40).collect::<Vec<_>>());
        let sched = RefinementSchedule::standard(1.0, 14);
        let depth = feasible_depth(&s, &fam, &sched);
        let sched = sched.truncated(depth);
        let pr = hausdorff_project(&s, &fam, &sched).unwrap();
        assert!(pr.family.is_nested());
        let cert = verify_ordinately_nested(&pr.family, 3);
        assert!(cert.passed(), "{cert:?}");
        for (c, &e) in pr.family.chains.iter().zip(&sched.epsilons) {
            assert!(is_chain(&s, &c.points, e).unwrap().valid);
        }
        let lc = limit_support_check(&pr.limit, &s, &p(1.0), &p(0.0), 1e-9);
        assert!(lc.distance < 1e-10, "{lc:?}");
    }

    #[test]
    fn constant_family_is_its_own_projection() {
        let s = SystemDef::identity_interval();
        let c = Chain::new(vec![p(0.0), p(0.1), p(0.2), p(0.3)], 0.2);
        let fam = vec![c.clone(); 4];
        let sched = RefinementSchedule::from_list(vec![2.0, 1.2, 1.0, 0.8]).unwrap();
        let pr = hausdorff_project(&s, &fam, &sched).unwrap();
        assert_eq!(pr.family.chains[1].points, c.points);
        assert_eq!(pr.family.last().points, c.points);
        assert_eq!(pr.limit.residual, 0.0);
        let out = prune_loop(&s, &fam, &sched, 16, 1e-3);
        assert!(out.converged);
        assert_eq!(out.rounds, 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = SystemDef::identity_interval();
        let sched = RefinementSchedule::standard(1.0, 3);
        assert_eq!(hausdorff_project(&s, &[], &sched).unwrap_err(), NestingError::EmptyFamily);
        let a = Chain::new(vec![p(0.0), p(0.5)], 1.0);
        let b = Chain::new(vec![p(0.0), p(0.6)], 1.0);
        assert_eq!(hausdorff_project(&s, &[a.clone(), b], &sched).unwrap_err(), NestingError::EndpointMismatch(1));
        let bad = Chain::new(vec![p(0.0), p(0.5)], 0.1);
        assert!(matches!(hausdorff_project(&s, &[bad], &sched), Err(NestingError::InvalidChain { .. })));
    }

    #[test]
    fn comb_projection_is_exhausted() {
        let s = SystemDef::comb(12);
        let g = sample(&s, 0.05).unwrap();
        let pt = |x: f64, y: f64| Point::plane(x, y);
        let mut fam = Vec::new();
        for k in [3usize, 6, 12] {
            let mut pts: Vec<Point> = Vec::new();
            let steps = (k as f64 / 0.05).round() as usize;
            for i in 0..=steps {
                pts.push(pt(i as f64 * 0.05, 0.0));
            }
            for h in 1..=k {
                pts.push(pt(k as f64, h as f64 / (k + 1) as f64));
            }
            for i in (0..=steps).rev() {
                pts.push(pt(i as f64 * 0.05, 1.0));
            }
            let pts: Vec<Point> = pts.iter().map(|q| g.points[g.nearest(q).1]).collect();
            let slack = is_chain(&s, &pts, 10.0).unwrap().max_slack();
            fam.push(Chain::new(pts, slack * 1.01));
        }
        let sched = RefinementSchedule::standard(s.diam, 3);
        let err = hausdorff_project(&s, &fam, &sched).unwrap_err();
        assert!(matches!(err, NestingError::ScheduleExhausted { level: 2, .. }), "{err:?}");
        let out = prune_loop(&s, &fam, &sched, 16, 0.025);
        assert!(!out.converged);
    }

    #[test]
    fn text_round_trip() {
        let s = SystemDef::halving();
        let fam = orbit_family(&s, 1.0, 0.0, &[3, 5, 8]);
        let nf = NestedFamily::new(fam).unwrap();
        let back = NestedFamily::from_text(&nf.to_text()).unwrap();
        assert_eq!(back, nf);
        assert!(NestedFamily::from_text("nope").is_err());
        let json = serde_json::to_string(&nf).unwrap();
        let again: NestedFamily = serde_json::from_str(&json).unwrap();
        assert_eq!(again, nf);
    }

    #[test]
    fn first_occurrence_ranks() {
        let c = Chain::new(vec![p(0.0), p(0.3), p(0.2), p(0.3), p(0.1), p(1.0)], 1.0);
        assert_eq!(first_occurrence_order(&c).points, vec![p(0.3), p(0.2), p(0.1)]);
    }

    #[test]
    fn flipped_pairs_are_unstable() {
        let a = Chain::new(vec![p(0.0), p(0.2), p(0.4), p(1.0)], 1.0);
        let b = Chain::new(vec![p(0.0), p(0.4), p(0.2), p(0.6), p(1.0)], 1.0);
        let c = Chain::new(vec![p(0.0), p(0.4), p(0.2), p(0.6), p(1.0)], 1.0);
        let nf = NestedFamily::new(vec![a.clone(), b.clone()]).unwrap();
        let so = stabilized_order(&nf, 3);
        assert_eq!(so.relation(&p(0.2), &p(0.4)), PairOrder::Unstable);
        assert_eq!(so.relation(&p(0.4), &p(0.6)), PairOrder::Before);
        assert!(!verify_ordinately_nested(&nf, 3).passed());
        let nf = NestedFamily::new(vec![a, b, c]).unwrap();
        let so = stabilized_order(&nf, 2);
        assert!(so.fully_decided());
        assert_eq!(so.relation(&p(0.4), &p(0.2)), PairOrder::Before);
    }

    #[test]
    fn identity_ladder_is_ordinately_nested() {
        let s = SystemDef::identity_interval();
        let g = sample(&s, 0.01).unwrap();
        let sched = RefinementSchedule::for_grid(1.0, 14, g.spacing);
        let l = graph_ladder(&g, &sched, 20, 80, None).unwrap();
        assert_eq!(l.stalled_at, None);
        assert_eq!(l.family.len(), sched.len());
        let cert = verify_ordinately_nested(&l.family, 3);
        assert!(cert.passed(), "{cert:?}");
    }

    /// Naive pairwise definition of the stabilized relation.
    fn naive_unstable(nf: &NestedFamily, window: usize) -> HashSet<(Point, Point)> {
        let w = &nf.chains[nf.len() - window.min(nf.len())..];
        let orders: Vec<HashMap<Point, usize>> = w.iter().map(|c| first_occurrence_order(c).rank()).collect();
        let mut pts: Vec<Point> = Vec::new();
        for o in &orders {
            for q in o.keys() {
                if !pts.contains(q) {
                    pts.push(*q);
                }
            }
        }
        let mut out = HashSet::new();
        for a in &pts {
            for b in &pts {
                if a == b {
                    continue;
                }
                let dirs: Vec<bool> = orders.iter().filter_map(|o| Some(o.get(a)? < o.get(b)?)).collect();
                if dirs.is_empty() || dirs.iter().any(|d| *d != dirs[0]) {
                    out.insert((*a, *b));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn stabilized_order_matches_naive(perms in prop::collection::vec(prop::collection::vec(0usize..8, 1..10), 1..5), window in 1usize..4) {
            // chains over a shared point pool with arbitrary orders and repeats
            let chains: Vec<Chain> = perms.iter().map(|v| {
                let mut pts = vec![p(0.0)];
                pts.extend(v.iter().map(|&i| p(0.1 + i as f64 / 10.0)));
                pts.push(p(1.0));
                Chain::new(pts, 10.0)
            }).collect();
            let nf = NestedFamily::new(chains).unwrap();
            let so = stabilized_order(&nf, window);
            let naive = naive_unstable(&nf, window);
            for a in &so.support {
                for b in &so.support {
                    if a == b { continue; }
                    let got = so.relation(a, b);
                    let naive_bad = naive.contains(&(*a, *b));
                    prop_assert_eq!(got == PairOrder::Unstable, naive_bad, "{:?} {:?}", a, b);
                }
            }
        }

        #[test]
        fn projection_is_nested_valid_and_monotone(n_pts in 3usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = SystemDef::identity_interval();
            // a random skeleton walk with tiny per-level jitter
            let res = 0.01;
            let mut skel = vec![p(0.0)];
            for _ in 0..n_pts {
                let last = skel.last().unwrap().x();
                let step = rng.gen_range(0..3) as f64 * res * 0.9;
                skel.push(p((last + step).min(1.0)));
            }
            let y = *skel.last().unwrap();
            let fam: Vec<Chain> = (0..6).map(|k| {
                let jit = res * 2f64.powi(-(k as i32)) / 16.0;
                let pts: Vec<Point> = skel.iter().enumerate().map(|(i, q)| {
                    if i == 0 || *q == y || q.x() == 0.0 { *q } else { p(q.x() - jit * ((i * 7 % 5) as f64 / 5.0)) }
                }).collect();
                let sl = is_chain(&s, &pts, 10.0).unwrap().max_slack();
                Chain::new(pts, sl + 1e-9)
            }).collect();
            let sched = RefinementSchedule::standard(1.0, 14);
            let depth = feasible_depth(&s, &fam, &sched);
            let sched = sched.truncated(depth);
            if let Ok(pr) = hausdorff_project(&s, &fam, &sched) {
                prop_assert!(pr.family.is_nested());
                let lim = FiniteSet::new(pr.limit.points.clone());
                let mut prev = f64::INFINITY;
                for (c, &e) in pr.family.chains.iter().zip(&sched.epsilons) {
                    prop_assert!(is_chain(&s, &c.points, e).unwrap().valid);
                    let d = hausdorff_distance(&support_set(c), &lim, &s.metric).unwrap();
                    prop_assert!(d <= prev);
                    prev = d;
                }
            }
        }
    }
}
