//! Attractor-repeller pairs on a grid, and nested families that cross from
//! a repeller into an attractor's basin along one exact orbit.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::epsgraph::{scc, Chain, EpsilonGraph, RefinementSchedule};
use crate::geometry::{Point, SpaceKind};
use crate::nesting::{stabilized_order, NestedFamily};
use crate::ordertypes::{detect_signature, OrderTypeTerm, MIN_SIGNATURE_LEVELS};
use crate::systems::{SampleGrid, SystemDef};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorPair {
    pub epsilon: f64,
    /// Forward-closed neighbourhood (grid indices, ascending).
    pub neighbourhood: Vec<usize>,
    /// Stable image of the neighbourhood under the graph.
    pub attractor: Vec<usize>,
    /// Grid points whose snapped orbit enters the neighbourhood.
    pub basin: Vec<bool>,
    /// Complement of the basin.
    pub repeller: Vec<usize>,
}

impl AttractorPair {
    fn near(grid: &SampleGrid, p: &Point) -> Option<usize> {
        let (d, i) = grid.nearest(p);
        (d <= grid.spacing).then_some(i)
    }

    pub fn in_attractor(&self, grid: &SampleGrid, p: &Point) -> bool {
        Self::near(grid, p).is_some_and(|i| self.attractor.binary_search(&i).is_ok())
    }

    pub fn in_basin(&self, grid: &SampleGrid, p: &Point) -> bool {
        Self::near(grid, p).is_some_and(|i| self.basin[i])
    }

    pub fn in_repeller(&self, grid: &SampleGrid, p: &Point) -> bool {
        Self::near(grid, p).is_some_and(|i| !self.basin[i])
    }
}

const ATTRACTOR_ITER_CAP: usize = 10_000;

/// Index of the grid point nearest to `f(z)` for every grid point.
pub fn snapped_map(grid: &SampleGrid) -> Vec<usize> {
    grid.images.iter().map(|q| grid.nearest(q).1).collect()
}

/// One pair per distinct forward-closed neighbourhood of an SCC at scale
/// `eps`, smallest first. Pairs whose neighbourhood is the whole grid are dropped.
pub fn find_attractors(grid: &SampleGrid, eps: f64) -> Vec<AttractorPair> {
    let g = EpsilonGraph::build(grid, eps);
    let n = g.len();
    let next = snapped_map(grid);
    let mut preimages: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (z, &v) in next.iter().enumerate() {
        preimages[v].push(z);
    }
    let comps = scc(&g);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    for members in &comps.components {
        let dist = g.bfs(members);
        let u: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX).collect();
        if u.len() == n || !seen.insert(u.clone()) {
            continue;
        }
        let in_u: Vec<bool> = (0..n).map(|v| dist[v] != usize::MAX).collect();
        let mut a = u.clone();
        for _ in 0..ATTRACTOR_ITER_CAP {
            let mut mark = vec![false; n];
            for &v in &a {
                for &w in g.out(v) {
                    if in_u[w as usize] {
                        mark[w as usize] = true;
                    }
                }
            }
            let nxt: Vec<usize> = (0..n).filter(|&v| mark[v]).collect();
            if nxt == a {
                break;
            }
            a = nxt;
        }
        // the snapped image is an edge of the graph, so the basin contains U
        let mut basin = in_u.clone();
        let mut stack: Vec<usize> = u.clone();
        while let Some(v) = stack.pop() {
            for &z in &preimages[v] {
                if !basin[z] {
                    basin[z] = true;
                    stack.push(z);
                }
            }
        }
        let repeller = (0..n).filter(|&v| !basin[v]).collect();
        out.push(AttractorPair { epsilon: eps, neighbourhood: u, attractor: a, basin, repeller });
    }
    out.sort_by_key(|p| (p.neighbourhood.len(), p.neighbourhood.first().copied()));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingFamily {
    pub family: NestedFamily,
    pub pair: AttractorPair,
    /// Last repeller point on the finest chain.
    pub gate: usize,
    /// Start of the crossing orbit, a tiny step from the gate into the basin.
    pub u0: Point,
    pub orbit: Vec<Point>,
    /// Per level: length of the repeller part (ending at the gate).
    pub repeller_len: Vec<usize>,
    /// Per level: inclusive orbit index range used.
    pub orbit_range: Vec<(usize, usize)>,
}

pub const CROSSING_OFFSET: f64 = 1.0 / (1u64 << 40) as f64;
pub const CROSSING_ORBIT_BUDGET: usize = 100_000;

/// Nested family from `x` (in a repeller) to `y` (in the matching basin).
/// Each level is the repeller ladder from `x` to the gate, followed by a
/// window of one exact orbit leaving the gate, then `y`.
pub fn crossing_family(
    sys: &SystemDef,
    grid: &SampleGrid,
    sched: &RefinementSchedule,
    xi: usize,
    y: &Point,
) -> Result<CrossingFamily, String> {
    let m = &sys.metric;
    let fine = sched.finest();
    let pairs = find_attractors(grid, fine);
    let x = grid.points[xi];
    let pair = pairs
        .into_iter()
        .find(|p| !p.basin[xi] && p.in_basin(grid, y))
        .ok_or("no attractor whose basin holds y but not x")?;
    let yi = grid.nearest(y).1;
    let g = EpsilonGraph::build(grid, fine);
    let path = crate::epsgraph::find_path(&g, &g.reversed(), xi, yi).ok_or("x does not chain to y")?;
    let gate_pos = path.iter().rposition(|&v| !pair.basin[v]).ok_or("chain never visits the repeller")?;
    let gate = path[gate_pos];
    let gp = grid.points[gate];
    let nb = (0..grid.len())
        .filter(|&v| pair.basin[v])
        .min_by(|&a, &b| m.dist(&grid.points[a], &gp).total_cmp(&m.dist(&grid.points[b], &gp)))
        .ok_or("empty basin")?;
    let nbp = grid.points[nb];
    // u0 = g + 2^-40 (nb - g), in lifted coordinates
    let u0 = if gp.kind().dim() == 1 && nbp.tag == gp.tag {
        gp.with_coords([gp.x() + CROSSING_OFFSET * (nbp.x() - gp.x()), 0.0])
    } else {
        nbp
    };
    let mut orbit = vec![u0];
    let mut c = u0;
    for _ in 0..CROSSING_ORBIT_BUDGET {
        let n = sys.apply(&c);
        if n == *y || n == c {
            break;
        }
        orbit.push(n);
        c = n;
    }
    let rparts = descent_family(sys, sched, &x, &gp)?;
    for (c, &e) in rparts.iter().zip(&sched.epsilons) {
        if c.iter().any(|p| pair.in_basin(grid, p) && grid.index_of(p) != Some(gate)) {
            return Err("descent to the gate leaves the repeller".into());
        }
        let _ = e;
    }
    let fg = sys.apply(&gp);
    let mut chains = Vec::new();
    let mut repeller_len = Vec::new();
    let mut orbit_range = Vec::new();
    // raw windows: end of the initial run near f(gate), first step landing near y
    let mut raw = Vec::with_capacity(sched.len());
    for (lvl, &e) in sched.epsilons.iter().enumerate() {
        let run = orbit.iter().take_while(|p| m.dist(&fg, p) < e).count();
        let a = run.checked_sub(1).ok_or(format!("orbit starts outside {e} of f(gate)"))?;
        let b = (0..orbit.len())
            .find(|&t| m.dist(&sys.apply(&orbit[t]), y) < e)
            .ok_or(format!("orbit does not reach y at level {}", lvl + 1))?;
        raw.push((a, b));
    }
    // coarse levels where the two ends overlap reuse the first proper window
    let n0 = raw.iter().position(|&(a, b)| a <= b).ok_or("orbit windows never separate")?;
    let first = raw[n0];
    for w in raw.iter_mut().take(n0) {
        *w = first;
    }
    for (lvl, &e) in sched.epsilons.iter().enumerate() {
        let (a, b) = raw[lvl];
        let mut pts = rparts[lvl].clone();
        repeller_len.push(pts.len());
        pts.extend_from_slice(&orbit[a..=b]);
        pts.push(*y);
        orbit_range.push((a, b));
        chains.push(Chain::new(pts, e));
    }
    let family = NestedFamily::new(chains).map_err(|e| e.to_string())?;
    Ok(CrossingFamily { family, pair, gate, u0, orbit, repeller_len, orbit_range })
}

fn step_towards(p: &Point, to: &Point, delta: f64) -> Point {
    match p.kind() {
        SpaceKind::Circle => {
            let d = to.x() - p.x();
            let d = d - d.round();
            Point::circle(p.x() + delta * d.signum())
        }
        _ => p.with_coords([p.x() + delta * (to.x() - p.x()).signum(), p.coords[1]]),
    }
}

pub const DESCENT_LAYERS: usize = 64;

/// Chains from `x` to `g` made of exact orbit segments: jump a small step
/// towards `g`, follow the orbit until it settles, repeat from where it
/// settled. Level `n` keeps the layers needed before its last step can land
/// within `ε_n` of `g`, so later levels extend earlier ones.
pub fn descent_family(sys: &SystemDef, sched: &RefinementSchedule, x: &Point, g: &Point) -> Result<Vec<Vec<Point>>, String> {
    let m = &sys.metric;
    let fine = sched.finest();
    let delta = fine / 4.0;
    // landing[k] is where the chain stands after k layers
    let mut landing = vec![sys.apply(x)];
    let mut layers: Vec<Vec<Point>> = Vec::new();
    let mut c = *x;
    while m.dist(landing.last().expect("landing"), g) >= fine {
        if layers.len() >= DESCENT_LAYERS {
            return Err("descent did not approach the gate".into());
        }
        let start = step_towards(&c, g, delta);
        let mut seg = vec![start];
        let mut p = start;
        for _ in 0..CROSSING_ORBIT_BUDGET {
            let n = sys.apply(&p);
            if m.dist(&n, &p) < delta / 8.0 {
                break;
            }
            seg.push(n);
            p = n;
        }
        c = sys.apply(&p);
        landing.push(c);
        layers.push(seg);
    }
    let mut out = Vec::with_capacity(sched.len());
    for &e in &sched.epsilons {
        let k = landing.iter().position(|q| m.dist(q, g) < e).expect("finest level closes");
        let mut pts = vec![*x];
        for seg in &layers[..k] {
            pts.extend_from_slice(seg);
        }
        pts.push(*g);
        if !crate::epsgraph::is_chain(sys, &pts, e).map_err(|e| e.to_string())?.valid {
            return Err(format!("descent chain invalid at scale {e}"));
        }
        out.push(pts);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArDecomposition {
    /// Per level, the parts in the repeller, the attractor, and between.
    pub s_r: Vec<Vec<Point>>,
    pub s_a: Vec<Vec<Point>>,
    pub s_prime: Vec<Vec<Point>>,
    /// Consecutive middle points are exact images of each other.
    pub orbit_structure: bool,
    pub left_growth: bool,
    /// The last step of the finest chain still has positive slack.
    pub right_open: bool,
    pub middle: Option<OrderTypeTerm>,
    pub beta: Vec<OrderTypeTerm>,
    pub beta_prime: Vec<OrderTypeTerm>,
}

/// Split each crossing chain into repeller, middle and attractor parts and
/// classify the middle order.
pub fn ar_decompose(sys: &SystemDef, grid: &SampleGrid, cf: &CrossingFamily) -> ArDecomposition {
    let mut s_r = Vec::new();
    let mut s_a = Vec::new();
    let mut s_prime = Vec::new();
    for (c, &rl) in cf.family.chains.iter().zip(&cf.repeller_len) {
        let body = &c.points[..c.points.len() - 1];
        let (r, rest) = body.split_at(rl);
        s_r.push(r.to_vec());
        let (mid, att): (Vec<Point>, Vec<Point>) = rest.iter().partition(|p| grid.index_of(p).is_none() || !cf.pair.in_attractor(grid, p));
        s_prime.push(mid);
        let mut att = att;
        att.push(c.end());
        s_a.push(att);
    }
    let orbit_structure = s_prime.iter().all(|s| s.windows(2).all(|w| sys.apply(&w[0]) == w[1]));
    let transitions: Vec<bool> = s_prime
        .windows(2)
        .map(|w| {
            let old: HashSet<Point> = w[0].iter().copied().collect();
            w[1].first().is_some_and(|p| !old.contains(p))
        })
        .collect();
    let late = &transitions[transitions.len() / 2..];
    let left_growth = !late.is_empty() && late.iter().filter(|b| **b).count() * 2 >= late.len();
    let last = cf.family.last();
    let n = last.points.len();
    let right_open = n >= 2 && sys.metric.dist(&sys.apply(&last.points[n - 2]), &last.end()) > 0.0;
    let middle = match (left_growth, right_open) {
        (true, true) => Some(OrderTypeTerm::Zeta),
        (true, false) => Some(OrderTypeTerm::OmegaStar),
        _ => None,
    };
    let sig = |parts: &[Vec<Point>], end: Point, start: Point| -> Vec<OrderTypeTerm> {
        let chains: Vec<Chain> = parts
            .iter()
            .zip(&cf.family.chains)
            .map(|(p, c)| {
                let mut pts = vec![start];
                pts.extend(p.iter().copied().filter(|q| *q != start && *q != end));
                pts.push(end);
                Chain::new(pts, c.epsilon)
            })
            .collect();
        match NestedFamily::new(chains) {
            Ok(f) if f.len() >= MIN_SIGNATURE_LEVELS => {
                let so = stabilized_order(&f, 3);
                detect_signature(&f, &so).verdict.into_iter().map(|(t, _)| t).collect()
            }
            _ => vec![],
        }
    };
    let gp = grid.points[cf.gate];
    let beta = sig(&s_r, gp, cf.family.x);
    let beta_prime = sig(&s_a, cf.family.y, cf.family.y);
    ArDecomposition { s_r, s_a, s_prime, orbit_structure, left_growth, right_open, middle, beta, beta_prime }
}
