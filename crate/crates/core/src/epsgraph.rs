//! ε-transition graphs over a sample grid.
//!
//! Vertex `i` has an edge to `j` iff `d(f(p_i), p_j) < ε` (or `<=` for the
//! inclusive variant). Paths are ε-chains, mutual reachability gives the
//! per-level chain components, and intersecting over a refinement schedule
//! approximates the chain relation and the Conley order.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::systems::{SampleGrid, SystemDef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpsGraphError {
    #[error("refinement schedule is empty")]
    EmptySchedule,
    #[error("refinement schedule must be positive and strictly decreasing: {0}")]
    BadSchedule(String),
    #[error("chain needs at least two points")]
    ShortChain,
    #[error("Conley order is not antisymmetric between components {0} and {1}")]
    Antisymmetry(usize, usize),
    #[error("Conley order is not transitive at ({0}, {1}, {2})")]
    Transitivity(usize, usize, usize),
    #[error("vertex {0} is not in the grid")]
    BadVertex(usize),
}

/// A strictly decreasing list of scales `ε_1 > ε_2 > ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementSchedule {
    pub epsilons: Vec<f64>,
}

/// Levels finer than this multiple of the grid spacing are dropped by
/// [`RefinementSchedule::for_grid`]: below it the grid graph of the identity
/// map disconnects and chains stop existing for sampling reasons alone.
pub const SPACING_FLOOR: f64 = 1.5;

impl RefinementSchedule {
    /// `ε_n = 4 diam / 2^n` for `n = 1..=depth`.
    pub fn standard(diam: f64, depth: usize) -> Self {
        RefinementSchedule { epsilons: (1..=depth).map(|n| 4.0 * diam / 2f64.powi(n as i32)).collect() }
    }

    /// [`Self::standard`] truncated to the levels the grid can resolve.
    pub fn for_grid(diam: f64, depth: usize, spacing: f64) -> Self {
        let mut s = Self::standard(diam, depth);
        s.clamp_to_spacing(spacing);
        s
    }

    /// `ε_n = start * ratio^(n-1)` for `n = 1..=depth`.
    pub fn geometric(start: f64, ratio: f64, depth: usize) -> Result<Self, EpsGraphError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(EpsGraphError::BadSchedule(format!("ratio {ratio} must lie in (0, 1)")));
        }
        Self::from_list((0..depth).map(|n| start * ratio.powi(n as i32)).collect())
    }

    pub fn from_list(epsilons: Vec<f64>) -> Result<Self, EpsGraphError> {
        if epsilons.is_empty() {
            return Err(EpsGraphError::EmptySchedule);
        }
        if epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(EpsGraphError::BadSchedule("non-positive level".into()));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(EpsGraphError::BadSchedule("levels must strictly decrease".into()));
        }
        Ok(RefinementSchedule { epsilons })
    }

    /// Drop levels at or below `SPACING_FLOOR * spacing`, keeping at least one.
    pub fn clamp_to_spacing(&mut self, spacing: f64) {
        let keep = self.epsilons.iter().take_while(|e| **e > SPACING_FLOOR * spacing).count().max(1);
        self.epsilons.truncate(keep);
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    pub fn finest(&self) -> f64 {
        *self.epsilons.last().expect("non-empty schedule")
    }

    pub fn truncated(&self, depth: usize) -> Self {
        RefinementSchedule { epsilons: self.epsilons[..depth.clamp(1, self.len())].to_vec() }
    }
}

/// Compressed adjacency of the ε-graph. Neighbour lists are ascending.
#[derive(Clone, Debug)]
pub struct EpsilonGraph {
    pub epsilon: f64,
    pub inclusive: bool,
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl EpsilonGraph {
    pub fn build(grid: &SampleGrid, epsilon: f64) -> Self {
        Self::build_with(grid, epsilon, false)
    }

    pub fn build_with(grid: &SampleGrid, epsilon: f64, inclusive: bool) -> Self {
        let lists: Vec<Vec<u32>> = grid
            .images
            .par_iter()
            .map_init(Vec::new, |buf, img| {
                grid.ball_into(img, epsilon, inclusive, buf);
                buf.iter().map(|&j| j as u32).collect()
            })
            .collect();
        Self::from_lists(epsilon, inclusive, lists)
    }

    fn from_lists(epsilon: f64, inclusive: bool, lists: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut targets = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for l in lists {
            targets.extend_from_slice(&l);
            offsets.push(targets.len());
        }
        EpsilonGraph { epsilon, inclusive, offsets, targets }
    }

    /// Graph with explicit adjacency lists (sorted and deduplicated here).
    pub fn from_adjacency(epsilon: f64, mut lists: Vec<Vec<u32>>) -> Self {
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Self::from_lists(epsilon, false, lists)
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    pub fn out(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out(i).binary_search(&(j as u32)).is_ok()
    }

    pub fn reversed(&self) -> EpsilonGraph {
        let n = self.len();
        let mut counts = vec![0usize; n + 1];
        for &t in &self.targets {
            counts[t as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut targets = vec![0u32; self.targets.len()];
        // sources are visited in ascending order, so each list comes out sorted
        for i in 0..n {
            for &t in self.out(i) {
                targets[fill[t as usize]] = i as u32;
                fill[t as usize] += 1;
            }
        }
        EpsilonGraph { epsilon: self.epsilon, inclusive: self.inclusive, offsets: counts, targets }
    }

    /// BFS distances from a set of sources (`usize::MAX` when unreachable).
    pub fn bfs(&self, sources: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut q = VecDeque::new();
        for &s in sources {
            if dist[s] == usize::MAX {
                dist[s] = 0;
                q.push_back(s);
            }
        }
        while let Some(u) = q.pop_front() {
            for &v in self.out(u) {
                let v = v as usize;
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Vertices reachable by a path of length at least one from `sources`.
    pub fn reach_strict(&self, sources: &[usize]) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = Vec::new();
        for &s in sources {
            for &v in self.out(s) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push(v as usize);
                }
            }
        }
        while let Some(u) = stack.pop() {
            for &v in self.out(u) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push(v as usize);
                }
            }
        }
        seen
    }

    /// One `i j` line per edge.
    pub fn adjacency_dump(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            for &j in self.out(i) {
                s.push_str(&format!("{i} {j}\n"));
            }
        }
        s
    }

    pub fn to_dot(&self, grid: &SampleGrid) -> String {
        let mut s = format!("digraph eps {{\n  label=\"eps={}\";\n", self.epsilon);
        for (i, p) in grid.points.iter().enumerate().take(self.len()) {
            s.push_str(&format!("  n{i} [label=\"{p}\"];\n"));
        }
        for i in 0..self.len() {
            for &j in self.out(i) {
                s.push_str(&format!("  n{i} -> n{j};\n"));
            }
        }
        s.push_str("}\n");
        s
    }
}

/// A finite sequence `x = x_0, ..., x_m = y` with nominal scale `epsilon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub points: Vec<Point>,
    pub epsilon: f64,
    /// Grid indices, when every point is a grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

impl Chain {
    pub fn new(points: Vec<Point>, epsilon: f64) -> Self {
        Chain { points, epsilon, indices: None }
    }

    pub fn from_indices(grid: &SampleGrid, idx: Vec<usize>, epsilon: f64) -> Self {
        Chain { points: idx.iter().map(|&i| grid.points[i]).collect(), epsilon, indices: Some(idx) }
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        *self.points.last().expect("non-empty chain")
    }

    /// Number of steps `m`.
    pub fn steps(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn interior(&self) -> &[Point] {
        let n = self.points.len();
        if n <= 2 {
            &[]
        } else {
            &self.points[1..n - 1]
        }
    }

    /// Whether no interior point repeats or equals an endpoint.
    pub fn is_acyclic(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        seen.insert(self.start());
        seen.insert(self.end());
        self.interior().iter().all(|p| seen.insert(*p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub valid: bool,
    /// `d(f(x_i), x_{i+1})` for each step.
    pub slacks: Vec<f64>,
    pub first_violation: Option<usize>,
}

impl ChainCheck {
    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().copied().fold(0.0, f64::max)
    }
}

/// Check that every step satisfies `d(f(x_i), x_{i+1}) < ε`.
pub fn is_chain(sys: &SystemDef, seq: &[Point], epsilon: f64) -> Result<ChainCheck, EpsGraphError> {
    check_steps(sys, seq, |d| d < epsilon)
}

/// As [`is_chain`] with `<=`.
pub fn is_chain_inclusive(sys: &SystemDef, seq: &[Point], epsilon: f64) -> Result<ChainCheck, EpsGraphError> {
    check_steps(sys, seq, |d| d <= epsilon)
}

fn check_steps(sys: &SystemDef, seq: &[Point], ok: impl Fn(f64) -> bool) -> Result<ChainCheck, EpsGraphError> {
    if seq.len() < 2 {
        return Err(EpsGraphError::ShortChain);
    }
    let slacks: Vec<f64> = seq.windows(2).map(|w| sys.metric.dist(&sys.apply(&w[0]), &w[1])).collect();
    let first_violation = slacks.iter().position(|&d| !ok(d));
    Ok(ChainCheck { valid: first_violation.is_none(), slacks, first_violation })
}

/// Shortest path from `x` to `y` with at least one step, lexicographically
/// smallest in vertex indices among the shortest ones.
pub fn find_path(g: &EpsilonGraph, rev: &EpsilonGraph, x: usize, y: usize) -> Option<Vec<usize>> {
    let to_y = rev.bfs(&[y]);
    let best = g.out(x).iter().map(|&v| to_y[v as usize]).min()?;
    if best == usize::MAX {
        return None;
    }
    let len = best + 1;
    let mut path = vec![x];
    let mut u = x;
    for t in 1..=len {
        let want = len - t;
        u = g.out(u).iter().map(|&v| v as usize).find(|&v| to_y[v] == want)?;
        path.push(u);
    }
    Some(path)
}

/// A shortest path from `x` to `y` that, at every step, moves to the
/// successor closest to the current image among those still on a shortest
/// route. Its slack tracks the map rather than the scale wherever the route
/// allows, so the paths of successive levels converge.
pub fn find_tight_path(g: &EpsilonGraph, rev: &EpsilonGraph, grid: &SampleGrid, x: usize, y: usize) -> Option<Vec<usize>> {
    let to_y = rev.bfs(&[y]);
    let best = g.out(x).iter().map(|&v| to_y[v as usize]).min()?;
    if best == usize::MAX {
        return None;
    }
    let len = best + 1;
    let mut path = vec![x];
    let mut u = x;
    for t in 1..=len {
        let want = len - t;
        let img = grid.images[u];
        u = g
            .out(u)
            .iter()
            .map(|&v| v as usize)
            .filter(|&v| to_y[v] == want)
            .map(|v| (grid.metric.dist(&img, &grid.points[v]), v))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))?
            .1;
        path.push(u);
    }
    Some(path)
}

/// [`find_path`] as a [`Chain`] of grid points.
pub fn find_chain(g: &EpsilonGraph, grid: &SampleGrid, x: usize, y: usize) -> Option<Chain> {
    let rev = g.reversed();
    find_path(g, &rev, x, y).map(|p| Chain::from_indices(grid, p, g.epsilon))
}

/// Cut the segment between the first repeated pair until none is left.
/// For a loop (`x = y`) the pair formed by the two endpoints is kept.
pub fn remove_cycles(c: &Chain) -> Chain {
    let mut pts = c.points.clone();
    let mut idx = c.indices.clone();
    let closed = pts.first() == pts.last();
    loop {
        let m = pts.len() - 1;
        let mut first: HashMap<Point, usize> = HashMap::new();
        let mut cut = None;
        for (j, p) in pts.iter().enumerate() {
            if let Some(&i) = first.get(p) {
                if !(closed && i == 0 && j == m) {
                    cut = Some((i, j));
                    break;
                }
            } else {
                first.insert(*p, j);
            }
        }
        let Some((i, j)) = cut else { break };
        pts.drain(i + 1..=j);
        if let Some(ix) = idx.as_mut() {
            ix.drain(i + 1..=j);
        }
    }
    Chain { points: pts, epsilon: c.epsilon, indices: idx }
}

/// All levels of a schedule built once.
pub struct GraphLadder {
    pub levels: Vec<EpsilonGraph>,
    reversed: Vec<EpsilonGraph>,
}

impl GraphLadder {
    pub fn new(grid: &SampleGrid, sched: &RefinementSchedule) -> Self {
        let levels: Vec<EpsilonGraph> = sched.epsilons.iter().map(|&e| EpsilonGraph::build(grid, e)).collect();
        let reversed = levels.iter().map(|g| g.reversed()).collect();
        GraphLadder { levels, reversed }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn reversed(&self, level: usize) -> &EpsilonGraph {
        &self.reversed[level]
    }

    pub fn finest(&self) -> &EpsilonGraph {
        self.levels.last().expect("non-empty ladder")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRelation {
    pub related: bool,
    /// One shortest chain per level, `None` from the first level without one.
    pub certificates: Vec<Option<Chain>>,
    pub first_failure: Option<usize>,
}

pub fn chain_related(
    grid: &SampleGrid,
    sys: &SystemDef,
    sched: &RefinementSchedule,
    x: usize,
    y: usize,
) -> Result<ChainRelation, EpsGraphError> {
    let _ = sys;
    if sched.is_empty() {
        return Err(EpsGraphError::EmptySchedule);
    }
    for v in [x, y] {
        if v >= grid.len() {
            return Err(EpsGraphError::BadVertex(v));
        }
    }
    let mut certificates = Vec::with_capacity(sched.len());
    let mut first_failure = None;
    for (n, &e) in sched.epsilons.iter().enumerate() {
        if first_failure.is_some() {
            certificates.push(None);
            continue;
        }
        let g = EpsilonGraph::build(grid, e);
        let c = find_chain(&g, grid, x, y);
        if c.is_none() {
            first_failure = Some(n);
        }
        certificates.push(c);
    }
    Ok(ChainRelation { related: first_failure.is_none(), certificates, first_failure })
}

/// [`chain_related`] over prebuilt graphs.
pub fn chain_related_in(ladder: &GraphLadder, grid: &SampleGrid, x: usize, y: usize) -> ChainRelation {
    let mut certificates = Vec::with_capacity(ladder.len());
    let mut first_failure = None;
    for n in 0..ladder.len() {
        let c = if first_failure.is_none() {
            find_path(&ladder.levels[n], ladder.reversed(n), x, y)
                .map(|p| Chain::from_indices(grid, p, ladder.levels[n].epsilon))
        } else {
            None
        };
        if c.is_none() && first_failure.is_none() {
            first_failure = Some(n);
        }
        certificates.push(c);
    }
    ChainRelation { related: first_failure.is_none(), certificates, first_failure }
}

/// Strongly connected components restricted to vertices lying on a cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SccResult {
    /// Component position of each vertex, `None` for vertices on no cycle.
    pub comp_of: Vec<Option<usize>>,
    /// Members, ascending; components sorted by smallest member.
    pub components: Vec<Vec<usize>>,
}

pub fn scc(g: &EpsilonGraph) -> SccResult {
    let n = g.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut raw: Vec<Vec<usize>> = Vec::new();
    let mut next = 0usize;
    // explicit call stack of (vertex, next neighbour position)
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (u, ref mut pos)) = call.last_mut() {
            let out = g.out(u);
            if *pos < out.len() {
                let v = out[*pos] as usize;
                *pos += 1;
                if index[v] == usize::MAX {
                    index[v] = next;
                    low[v] = next;
                    next += 1;
                    stack.push(v);
                    on_stack[v] = true;
                    call.push((v, 0));
                } else if on_stack[v] {
                    low[u] = low[u].min(index[v]);
                }
            } else {
                call.pop();
                if let Some(&(p, _)) = call.last() {
                    low[p] = low[p].min(low[u]);
                }
                if low[u] == index[u] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == u {
                            break;
                        }
                    }
                    raw.push(comp);
                }
            }
        }
    }
    let mut components: Vec<Vec<usize>> = raw
        .into_iter()
        .filter(|c| c.len() > 1 || g.has_edge(c[0], c[0]))
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    components.sort_by_key(|c| c[0]);
    let mut comp_of = vec![None; n];
    for (k, c) in components.iter().enumerate() {
        for &v in c {
            comp_of[v] = Some(k);
        }
    }
    SccResult { comp_of, components }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainComponent {
    /// Smallest member index.
    pub label: usize,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainComponentSet {
    pub components: Vec<ChainComponent>,
    /// Position in `components` of each grid vertex.
    pub member_of: Vec<Option<usize>>,
    pub epsilons: Vec<f64>,
}

impl ChainComponentSet {
    pub fn component_of(&self, v: usize) -> Option<&ChainComponent> {
        self.member_of.get(v).copied().flatten().map(|k| &self.components[k])
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

pub fn chain_components(
    grid: &SampleGrid,
    sys: &SystemDef,
    sched: &RefinementSchedule,
) -> Result<ChainComponentSet, EpsGraphError> {
    let _ = sys;
    if sched.is_empty() {
        return Err(EpsGraphError::EmptySchedule);
    }
    let levels: Vec<SccResult> =
        sched.epsilons.iter().map(|&e| scc(&EpsilonGraph::build(grid, e))).collect();
    Ok(components_from_levels(&levels, grid.len(), sched.epsilons.clone()))
}

pub fn chain_components_in(ladder: &GraphLadder, n: usize) -> ChainComponentSet {
    let levels: Vec<SccResult> = ladder.levels.iter().map(scc).collect();
    components_from_levels(&levels, n, ladder.levels.iter().map(|g| g.epsilon).collect())
}

fn components_from_levels(levels: &[SccResult], n: usize, epsilons: Vec<f64>) -> ChainComponentSet {
    // refine the partition level by level
    let mut class: Vec<Option<usize>> = (0..n).map(|v| levels[0].comp_of[v]).collect();
    for lvl in &levels[1..] {
        let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
        for v in 0..n {
            class[v] = match (class[v], lvl.comp_of[v]) {
                (Some(a), Some(b)) => {
                    let k = ids.len();
                    Some(*ids.entry((a, b)).or_insert(k))
                }
                _ => None,
            };
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (v, c) in class.iter().enumerate() {
        if let Some(c) = c {
            groups.entry(*c).or_default().push(v);
        }
    }
    let mut components: Vec<ChainComponent> =
        groups.into_values().map(|members| ChainComponent { label: members[0], members }).collect();
    components.sort_by_key(|c| c.label);
    let mut member_of = vec![None; n];
    for (k, c) in components.iter().enumerate() {
        for &v in &c.members {
            member_of[v] = Some(k);
        }
    }
    ChainComponentSet { components, member_of, epsilons }
}

/// Conley order on chain components: `K <= K'` iff `K'` chain-reaches `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConleyDiagram {
    pub labels: Vec<usize>,
    /// Pairs `(a, b)` of component positions with `K_a <= K_b`, reflexive pairs included.
    pub order_pairs: Vec<(usize, usize)>,
    /// A finest-level chain from a point of `K_b` to a point of `K_a` for each strict pair.
    pub certificates: Vec<((usize, usize), Chain)>,
}

impl ConleyDiagram {
    pub fn le(&self, a: usize, b: usize) -> bool {
        self.order_pairs.binary_search(&(a, b)).is_ok()
    }

    /// Covering pairs of the strict order, for drawing.
    pub fn hasse(&self) -> Vec<(usize, usize)> {
        let strict: Vec<(usize, usize)> = self.order_pairs.iter().copied().filter(|(a, b)| a != b).collect();
        strict
            .iter()
            .copied()
            .filter(|&(a, b)| !strict.iter().any(|&(c, d)| c == a && d != b && self.le(d, b) && d != a))
            .collect()
    }

    /// DOT with edges pointing up the order.
    pub fn to_dot(&self, grid: &SampleGrid) -> String {
        let mut s = String::from("digraph conley {\n  rankdir=BT;\n");
        for (k, &l) in self.labels.iter().enumerate() {
            s.push_str(&format!("  K{k} [label=\"K{k} @ {}\"];\n", grid.points[l]));
        }
        for (a, b) in self.hasse() {
            s.push_str(&format!("  K{a} -> K{b};\n"));
        }
        s.push_str("}\n");
        s
    }
}

pub fn conley_order(
    cc: &ChainComponentSet,
    grid: &SampleGrid,
    sys: &SystemDef,
    sched: &RefinementSchedule,
) -> Result<ConleyDiagram, EpsGraphError> {
    let _ = sys;
    if sched.is_empty() {
        return Err(EpsGraphError::EmptySchedule);
    }
    let graphs: Vec<EpsilonGraph> = sched.epsilons.iter().map(|&e| EpsilonGraph::build(grid, e)).collect();
    conley_from_graphs(cc, grid, &graphs)
}

pub fn conley_order_in(cc: &ChainComponentSet, grid: &SampleGrid, ladder: &GraphLadder) -> Result<ConleyDiagram, EpsGraphError> {
    conley_from_graphs(cc, grid, &ladder.levels)
}

fn conley_from_graphs(cc: &ChainComponentSet, grid: &SampleGrid, graphs: &[EpsilonGraph]) -> Result<ConleyDiagram, EpsGraphError> {
    let k = cc.len();
    let mut le = vec![vec![true; k]; k];
    for g in graphs {
        for b in 0..k {
            let reach = g.bfs(&cc.components[b].members);
            for (a, row) in le.iter_mut().enumerate() {
                if row[b] && cc.components[a].members.iter().all(|&v| reach[v] == usize::MAX) {
                    row[b] = false;
                }
            }
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            if le[a][b] && le[b][a] {
                return Err(EpsGraphError::Antisymmetry(a, b));
            }
        }
    }
    for a in 0..k {
        for b in 0..k {
            if !le[a][b] {
                continue;
            }
            for c in 0..k {
                if le[b][c] && !le[a][c] {
                    return Err(EpsGraphError::Transitivity(a, b, c));
                }
            }
        }
    }
    let mut order_pairs = Vec::new();
    for (a, row) in le.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if v {
                order_pairs.push((a, b));
            }
        }
    }
    let finest = graphs.last().expect("non-empty schedule");
    let mut certificates = Vec::new();
    for &(a, b) in &order_pairs {
        if a == b {
            continue;
        }
        if let Some(c) = multi_source_chain(finest, grid, &cc.components[b].members, &cc.components[a].members) {
            certificates.push(((a, b), c));
        }
    }
    Ok(ConleyDiagram { labels: cc.components.iter().map(|c| c.label).collect(), order_pairs, certificates })
}

/// A shortest chain from any source to any target.
fn multi_source_chain(g: &EpsilonGraph, grid: &SampleGrid, sources: &[usize], targets: &[usize]) -> Option<Chain> {
    let n = g.len();
    let mut parent = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut is_target = vec![false; n];
    for &t in targets {
        is_target[t] = true;
    }
    let mut q = VecDeque::new();
    for &s in sources {
        seen[s] = true;
        q.push_back(s);
    }
    while let Some(u) = q.pop_front() {
        for &v in g.out(u) {
            let v = v as usize;
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                if is_target[v] {
                    let mut path = vec![v];
                    let mut w = v;
                    while parent[w] != usize::MAX {
                        w = parent[w];
                        path.push(w);
                    }
                    path.reverse();
                    return Some(Chain::from_indices(grid, path, g.epsilon));
                }
                q.push_back(v);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sample, zoo_system, SystemDef};
    use proptest::prelude::*;

    fn identity_grid() -> (SystemDef, SampleGrid) {
        let s = SystemDef::identity_interval();
        let g = sample(&s, 0.01).unwrap();
        (s, g)
    }

    #[test]
    fn identity_chain_with_tiny_steps() {
        let (s, g) = identity_grid();
        let e = EpsilonGraph::build(&g, 0.015);
        let c = find_chain(&e, &g, 20, 30).unwrap();
        assert_eq!(c.indices.as_ref().unwrap(), &(20..=30).collect::<Vec<_>>());
        assert!(is_chain(&s, &c.points, 0.015).unwrap().valid);
        let back = find_chain(&e, &g, 30, 20).unwrap();
        assert_eq!(back.steps(), 10);
    }

    #[test]
    fn no_chain_across_a_gap() {
        let s = SystemDef::identity_two_intervals();
        let g = sample(&s, 0.01).unwrap();
        let e = EpsilonGraph::build(&g, 0.5);
        assert!(find_chain(&e, &g, 50, 150).is_none());
        assert!(find_tight_path(&e, &e.reversed(), &g, 50, 150).is_none());
        let e = EpsilonGraph::build(&g, 1.5);
        assert!(find_chain(&e, &g, 50, 150).is_some());
    }

    #[test]
    fn tight_path_follows_the_orbit() {
        let s = SystemDef::halving();
        let g = sample(&s, 0.01).unwrap();
        let e = EpsilonGraph::build(&g, 0.1);
        let rev = e.reversed();
        let tight = find_tight_path(&e, &rev, &g, 100, 0).unwrap();
        let plain = find_path(&e, &rev, 100, 0).unwrap();
        assert_eq!(tight.len(), plain.len());
        // three steps are needed; from 0.5 the successor must lie in (0.15, 0.2)
        // to reach 0 next, and 0.19 is the closest to the image 0.25
        assert_eq!(tight, vec![100, 50, 19, 0]);
        let pts: Vec<Point> = tight.iter().map(|&i| g.points[i]).collect();
        let chk = is_chain(&s, &pts, 0.1).unwrap();
        assert!(chk.valid);
        assert_eq!(chk.slacks[0], 0.0);
    }

    #[test]
    fn loops_need_a_step() {
        let (_, g) = identity_grid();
        let e = EpsilonGraph::build(&g, 0.015);
        let c = find_chain(&e, &g, 40, 40).unwrap();
        assert_eq!(c.indices.unwrap(), vec![40, 40]);
    }

    #[test]
    fn halving_chain_slacks() {
        let s = SystemDef::halving();
        let pts = [Point::line(1.0), Point::line(0.5), Point::line(0.26)];
        let chk = is_chain(&s, &pts, 0.05).unwrap();
        assert!(chk.valid);
        assert_eq!(chk.slacks[0], 0.0);
        assert!((chk.slacks[1] - 0.01).abs() < 1e-12);
        assert!(!is_chain(&s, &pts, 0.01).unwrap().valid);
        assert!(is_chain_inclusive(&s, &[Point::line(1.0), Point::line(0.75)], 0.25).unwrap().valid);
        assert!(!is_chain(&s, &[Point::line(1.0), Point::line(0.75)], 0.25).unwrap().valid);
    }

    #[test]
    fn cycles_are_cut() {
        let p = |x: f64| Point::line(x);
        let c = Chain::new(vec![p(0.1), p(0.2), p(0.1), p(0.3)], 1.0);
        assert_eq!(remove_cycles(&c).points, vec![p(0.1), p(0.3)]);
        let c = Chain::new(vec![p(0.1), p(0.2), p(0.2), p(0.3)], 1.0);
        assert_eq!(remove_cycles(&c).points, vec![p(0.1), p(0.2), p(0.3)]);
        let c = Chain::new(vec![p(0.1), p(0.5), p(0.1)], 1.0);
        assert_eq!(remove_cycles(&c).points, c.points);
        let c = Chain::new(vec![p(0.1), p(0.5), p(0.1), p(0.6), p(0.1)], 1.0);
        assert_eq!(remove_cycles(&c).points, vec![p(0.1), p(0.6), p(0.1)]);
    }

    #[test]
    fn identity_is_one_component() {
        let (s, g) = identity_grid();
        let sched = RefinementSchedule::for_grid(s.diam, 14, g.spacing);
        let cc = chain_components(&g, &s, &sched).unwrap();
        assert_eq!(cc.len(), 1);
        assert_eq!(cc.components[0].members.len(), 101);
        assert!(chain_related(&g, &s, &sched, 10, 90).unwrap().related);
    }

    #[test]
    fn schedule_shapes() {
        let s = RefinementSchedule::standard(1.0, 14);
        assert_eq!(s.len(), 14);
        assert_eq!(s.epsilons[0], 2.0);
        assert_eq!(s.finest(), 4.0 / 16384.0);
        let c = RefinementSchedule::for_grid(1.0, 14, 0.001);
        assert_eq!(c.len(), 11);
        assert!(RefinementSchedule::from_list(vec![1.0, 1.0]).is_err());
        assert!(RefinementSchedule::from_list(vec![]).is_err());
        assert!(RefinementSchedule::geometric(1.0, 0.6, 5).is_ok());
    }

    #[test]
    fn halving_components_and_order() {
        let s = SystemDef::halving();
        let g = sample(&s, 0.01).unwrap();
        let sched = RefinementSchedule::for_grid(s.diam, 6, g.spacing);
        let cc = chain_components(&g, &s, &sched).unwrap();
        // the recurrent blob around 0, plus boundary points that only see themselves
        assert_eq!(cc.components[0].label, 0);
        assert!(cc.components[0].members.len() > 5);
        assert!(cc.components[1..].iter().all(|c| c.members.len() == 1));
        let cd = conley_order(&cc, &g, &s, &sched).unwrap();
        for k in 1..cc.len() {
            assert!(cd.le(0, k) && !cd.le(k, 0));
        }
    }

    #[test]
    fn bistable_conley_order() {
        let s = SystemDef::bistable(0.5);
        let g = sample(&s, 0.01).unwrap();
        let sched = RefinementSchedule::for_grid(s.diam, 6, g.spacing);
        let cc = chain_components(&g, &s, &sched).unwrap();
        let mid = cc.member_of[50].unwrap();
        let lo = cc.member_of[0].unwrap();
        let hi = cc.member_of[100].unwrap();
        let cd = conley_order(&cc, &g, &s, &sched).unwrap();
        assert!(cd.le(lo, mid) && cd.le(hi, mid));
        assert!(!cd.le(mid, lo) && !cd.le(lo, hi) && !cd.le(hi, lo));
        assert_ne!(lo, hi);
        assert!(cd.certificates.iter().any(|(p, _)| *p == (lo, mid)));
        assert!(cd.to_dot(&g).contains("->"));
    }

    #[test]
    fn rotation_eighth_components_are_orbits() {
        let s = zoo_system("rotation-eighth").unwrap();
        let g = sample(&s, 0.005).unwrap();
        let e = EpsilonGraph::build(&g, 0.001);
        let r = scc(&e);
        assert_eq!(r.components.len(), 25);
        assert!(r.components.iter().all(|c| c.len() == 8));
    }

    #[test]
    fn dump_formats() {
        let (_, g) = identity_grid();
        let e = EpsilonGraph::build(&g, 0.005);
        assert_eq!(e.adjacency_dump().lines().count(), 101);
        assert!(e.adjacency_dump().starts_with("0 0\n"));
    }

    fn random_graph(n: usize, edges: &[(usize, usize)]) -> EpsilonGraph {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in edges {
            lists[a % n].push((b % n) as u32);
        }
        EpsilonGraph::from_adjacency(1.0, lists)
    }

    fn floyd(n: usize, g: &EpsilonGraph) -> Vec<Vec<bool>> {
        let mut r = vec![vec![false; n]; n];
        for i in 0..n {
            for &j in g.out(i) {
                r[i][j as usize] = true;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        r
    }

    proptest! {
        #[test]
        fn scc_matches_closure(n in 1usize..14, edges in prop::collection::vec((0usize..14, 0usize..14), 0..40)) {
            let g = random_graph(n, &edges);
            let r = floyd(n, &g);
            let s = scc(&g);
            for i in 0..n {
                prop_assert_eq!(s.comp_of[i].is_some(), r[i][i]);
                for j in 0..n {
                    let same = s.comp_of[i].is_some() && s.comp_of[i] == s.comp_of[j];
                    prop_assert_eq!(same, r[i][i] && r[i][j] && r[j][i]);
                }
            }
        }

        #[test]
        fn paths_are_shortest_and_lexicographic(n in 1usize..12, edges in prop::collection::vec((0usize..12, 0usize..12), 0..40), x in 0usize..12, y in 0usize..12) {
            let g = random_graph(n, &edges);
            let (x, y) = (x % n, y % n);
            let rev = g.reversed();
            let p = find_path(&g, &rev, x, y);
            let r = floyd(n, &g);
            prop_assert_eq!(p.is_some(), r[x][y]);
            if let Some(p) = p {
                prop_assert_eq!(p[0], x);
                prop_assert_eq!(*p.last().unwrap(), y);
                prop_assert!(p.windows(2).all(|w| g.has_edge(w[0], w[1])));
                // brute force: enumerate all walks of the same length, keep the smallest
                let len = p.len() - 1;
                let mut best: Option<Vec<usize>> = None;
                let mut stack = vec![vec![x]];
                while let Some(w) = stack.pop() {
                    if w.len() == len + 1 {
                        if *w.last().unwrap() == y && best.as_ref().is_none_or(|b| w < *b) {
                            best = Some(w);
                        }
                        continue;
                    }
                    for &v in g.out(*w.last().unwrap()) {
                        let mut nw = w.clone();
                        nw.push(v as usize);
                        stack.push(nw);
                    }
                }
                prop_assert_eq!(Some(p), best);
                // no shorter walk exists
                let mut frontier = vec![x];
                for _ in 1..len {
                    let mut next: Vec<usize> = frontier.iter().flat_map(|&u| g.out(u).iter().map(|&v| v as usize)).collect();
                    next.sort_unstable();
                    next.dedup();
                    prop_assert!(!next.contains(&y));
                    frontier = next;
                }
            }
        }

        #[test]
        fn remove_cycles_keeps_a_valid_acyclic_chain(steps in prop::collection::vec(0usize..6, 1..30)) {
            let s = SystemDef::identity_interval();
            let pts: Vec<Point> = steps.iter().map(|&k| Point::line(k as f64 / 10.0)).collect();
            let mut all = vec![Point::line(0.0)];
            all.extend(pts);
            all.push(Point::line(0.9));
            let c = Chain::new(all, 10.0);
            let r = remove_cycles(&c);
            prop_assert!(r.is_acyclic());
            prop_assert_eq!(r.start(), c.start());
            prop_assert_eq!(r.end(), c.end());
            prop_assert!(is_chain(&s, &r.points, 10.0).unwrap().valid);
            let max_in = is_chain(&s, &c.points, 10.0).unwrap().max_slack();
            prop_assert!(is_chain(&s, &r.points, 10.0).unwrap().max_slack() <= max_in);
        }
    }
}
