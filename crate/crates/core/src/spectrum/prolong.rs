//! Transfinite prolongations `J_α` on a grid.
//!
//! `J_1(w)` collects thickened forward orbits of points near `w` at the inner
//! scale `r`. Higher levels close `J_{α-1}` under chaining at each outer scale
//! `ε >= 4r` and intersect over those scales. Rows are bitsets; unions over
//! runs of consecutive grid indices go through a sparse table.

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epsgraph::RefinementSchedule;
use crate::systems::{SampleGrid, SystemDef};

pub const PROLONG_ORBIT_STEPS: usize = 2000;
pub const SATURATION_BUDGET: usize = 64;
/// Outer scales must exceed the inner one by this factor.
pub const SCALE_SEPARATION: f64 = 4.0;

/// OR of rows over any index range in two row operations.
struct RangeOr {
    table: Vec<Vec<FixedBitSet>>,
}

impl RangeOr {
    fn new(rows: Vec<FixedBitSet>) -> Self {
        let n = rows.len();
        let mut table = vec![rows];
        let mut k = 1;
        while (1 << k) <= n {
            let prev = &table[k - 1];
            let half = 1 << (k - 1);
            let lvl: Vec<FixedBitSet> = (0..=n - (1 << k))
                .into_par_iter()
                .map(|i| {
                    let mut r = prev[i].clone();
                    r.union_with(&prev[i + half]);
                    r
                })
                .collect();
            table.push(lvl);
            k += 1;
        }
        RangeOr { table }
    }

    fn or_into(&self, a: usize, b: usize, out: &mut FixedBitSet) {
        let len = b - a + 1;
        let k = usize::BITS as usize - 1 - len.leading_zeros() as usize;
        out.union_with(&self.table[k][a]);
        out.union_with(&self.table[k][b + 1 - (1 << k)]);
    }
}

/// Grid geometry needed for set operations: runs of consecutive indices in
/// one component, and balls.
struct Geo<'a> {
    grid: &'a SampleGrid,
    /// `comp[i] == comp[i+1]` iff indices `i` and `i+1` are neighbours in space.
    comp: Vec<u16>,
}

impl<'a> Geo<'a> {
    fn new(grid: &'a SampleGrid) -> Self {
        let comp = grid.points.iter().map(|p| p.tag.component).collect();
        Geo { grid, comp }
    }

    fn runs(&self, s: &FixedBitSet) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for i in s.ones() {
            match out.last_mut() {
                Some((_, b)) if *b + 1 == i && self.comp[i] == self.comp[*b] => *b = i,
                _ => out.push((i, i)),
            }
        }
        out
    }

    fn ball_into(&self, i: usize, r: f64, out: &mut FixedBitSet) {
        for j in self.grid.ball(&self.grid.points[i], r, false) {
            out.insert(j);
        }
    }

    /// Grid points within `r` of `s`.
    fn thicken(&self, s: &FixedBitSet, r: f64) -> FixedBitSet {
        let mut out = s.clone();
        for (a, b) in self.runs(s) {
            self.ball_into(a, r, &mut out);
            if b != a {
                self.ball_into(b, r, &mut out);
            }
        }
        out
    }
}

fn first_level(sys: &SystemDef, grid: &SampleGrid, geo: &Geo, r: f64) -> Vec<FixedBitSet> {
    let n = grid.len();
    // thickened forward orbits of single grid points
    let orbits: Vec<FixedBitSet> = (0..n)
        .into_par_iter()
        .map(|z| {
            let mut row = FixedBitSet::with_capacity(n);
            let mut c = grid.points[z];
            for _ in 0..PROLONG_ORBIT_STEPS {
                let nx = sys.apply(&c);
                for j in grid.ball(&nx, r, false) {
                    row.insert(j);
                }
                if nx == c {
                    break;
                }
                c = nx;
            }
            let _ = geo;
            row
        })
        .collect();
    let ro = RangeOr::new(orbits);
    (0..n)
        .into_par_iter()
        .map(|w| {
            let mut ball = FixedBitSet::with_capacity(n);
            geo.ball_into(w, r, &mut ball);
            let mut row = FixedBitSet::with_capacity(n);
            for (a, b) in geo.runs(&ball) {
                ro.or_into(a, b, &mut row);
            }
            row
        })
        .collect()
}

/// Chain closure of `rows` from `B_ε(w)`, stopped once a layer adds nothing
/// beyond `ε/2` of what is already reached. Returns the set and whether the
/// budget ran out first.
fn saturating_reach(geo: &Geo, ro: &RangeOr, n: usize, w: usize, eps: f64) -> (FixedBitSet, bool) {
    let mut frontier = FixedBitSet::with_capacity(n);
    geo.ball_into(w, eps, &mut frontier);
    let mut reach = FixedBitSet::with_capacity(n);
    for _ in 0..SATURATION_BUDGET {
        let mut new = FixedBitSet::with_capacity(n);
        for (a, b) in geo.runs(&frontier) {
            ro.or_into(a, b, &mut new);
        }
        new.difference_with(&reach);
        let settled = reach.count_ones(..) > 0 && new.is_subset(&geo.thicken(&reach, eps / 2.0));
        reach.union_with(&new);
        if settled || new.count_ones(..) == 0 {
            return (reach, false);
        }
        frontier = new;
    }
    (reach, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProlongationTable {
    pub x: usize,
    pub point: crate::geometry::Point,
    /// `levels[α-1]` holds `J_α(x)` as ascending grid indices.
    pub levels: Vec<Vec<usize>>,
    /// Some saturation ran out of budget: the levels are lower bounds.
    pub lower_bound: bool,
    pub inner_epsilon: f64,
    pub outer_epsilons: Vec<f64>,
    /// Before the union with the previous level, the intersection over
    /// outer scales already contained it.
    pub monotone: bool,
}

impl ProlongationTable {
    /// Smallest `α` with `v ∈ J_α(x)`.
    pub fn first_level(&self, v: usize) -> Option<usize> {
        self.levels.iter().position(|l| l.binary_search(&v).is_ok()).map(|k| k + 1)
    }

    pub fn to_csv(&self, grid: &SampleGrid) -> String {
        let mut s = String::from("index,coordinate,first_level\n");
        for (i, p) in grid.points.iter().enumerate() {
            let f = self.first_level(i).map(|k| k.to_string()).unwrap_or_default();
            s.push_str(&format!("{i},{},{f}\n", p.x()));
        }
        s
    }

    /// One node per level, labelled with the coordinate range it adds.
    pub fn to_dot(&self, grid: &SampleGrid) -> String {
        let mut s = String::from("digraph prolongation {\n");
        s.push_str(&format!("  x [label=\"x = {}\"];\n", self.point));
        let mut prev = "x".to_string();
        for (k, l) in self.levels.iter().enumerate() {
            let added: Vec<f64> = l
                .iter()
                .filter(|&&v| k == 0 || self.levels[k - 1].binary_search(&v).is_err())
                .map(|&v| grid.points[v].x())
                .collect();
            let (lo, hi) = added.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let name = format!("J{}", k + 1);
            if added.is_empty() {
                s.push_str(&format!("  {name} [label=\"J{} adds nothing\"];\n", k + 1));
            } else {
                s.push_str(&format!("  {name} [label=\"J{} adds {} points in [{lo:.4}, {hi:.4}]\"];\n", k + 1, added.len()));
            }
            s.push_str(&format!("  {prev} -> {name};\n"));
            prev = name;
        }
        s.push_str("}\n");
        s
    }
}

/// `J_1(x), ..., J_{max_alpha}(x)`. The inner scale is the finest schedule
/// level; outer scales are the schedule levels at least four times coarser.
pub fn prolongation(
    sys: &SystemDef,
    grid: &SampleGrid,
    sched: &RefinementSchedule,
    x: usize,
    max_alpha: usize,
) -> ProlongationTable {
    let n = grid.len();
    let r = sched.finest();
    let outer: Vec<f64> = sched.epsilons.iter().copied().filter(|&e| e >= SCALE_SEPARATION * r).collect();
    let geo = Geo::new(grid);
    let mut rows = first_level(sys, grid, &geo, r);
    let to_vec = |b: &FixedBitSet| b.ones().collect::<Vec<usize>>();
    let mut levels = vec![to_vec(&rows[x])];
    let mut lower_bound = false;
    let mut monotone = true;
    for _alpha in 2..=max_alpha.max(1) {
        if outer.is_empty() {
            break;
        }
        let ro = RangeOr::new(rows.clone());
        let next: Vec<(FixedBitSet, bool, bool)> = (0..n)
            .into_par_iter()
            .map(|w| {
                let mut acc: Option<FixedBitSet> = None;
                let mut lb = false;
                for &e in &outer {
                    let (reach, exhausted) = saturating_reach(&geo, &ro, n, w, e);
                    lb |= exhausted;
                    let t = geo.thicken(&reach, e);
                    acc = Some(match acc {
                        None => t,
                        Some(mut a) => {
                            a.intersect_with(&t);
                            a
                        }
                    });
                }
                let mut row = acc.unwrap_or_else(|| FixedBitSet::with_capacity(n));
                let mono = rows[w].is_subset(&row);
                row.union_with(&rows[w]);
                (row, lb, mono)
            })
            .collect();
        lower_bound |= next.iter().any(|t| t.1);
        monotone &= next[x].2;
        rows = next.into_iter().map(|t| t.0).collect();
        levels.push(to_vec(&rows[x]));
    }
    ProlongationTable { x, point: grid.points[x], levels, lower_bound, inner_epsilon: r, outer_epsilons: outer, monotone }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::sample;

    #[test]
    fn range_or_matches_naive() {
        let n = 37;
        let rows: Vec<FixedBitSet> = (0..n)
            .map(|i| {
                let mut b = FixedBitSet::with_capacity(n);
                b.insert((i * 7) % n);
                b.insert((i * i) % n);
                b
            })
            .collect();
        let ro = RangeOr::new(rows.clone());
        for a in 0..n {
            for b in a..n {
                let mut got = FixedBitSet::with_capacity(n);
                ro.or_into(a, b, &mut got);
                let mut want = FixedBitSet::with_capacity(n);
                for r in &rows[a..=b] {
                    want.union_with(r);
                }
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn halving_levels_are_monotone() {
        let s = SystemDef::halving();
        let g = sample(&s, 1e-2).unwrap();
        let sched = RefinementSchedule::for_grid(s.diam, 8, g.spacing);
        let x = g.nearest(&s.point(1.0)).1;
        let t = prolongation(&s, &g, &sched, x, 3);
        let zero = g.nearest(&s.point(0.0)).1;
        assert_eq!(t.first_level(zero), Some(1));
        let near_one = g.nearest(&s.point(0.9)).1;
        assert_eq!(t.first_level(near_one), None);
        for w in t.levels.windows(2) {
            assert!(w[0].iter().all(|v| w[1].binary_search(v).is_ok()));
        }
        assert!(!t.lower_bound);
        assert!(t.to_csv(&g).lines().count() == g.len() + 1);
    }

    #[test]
    fn cascade_needs_second_level() {
        let s = SystemDef::cascade();
        let g = sample(&s, 1e-3).unwrap();
        let sched = RefinementSchedule::for_grid(s.diam, 10, g.spacing);
        let x = g.nearest(&s.point(1.0)).1;
        let zero = g.nearest(&s.point(0.0)).1;
        let t = prolongation(&s, &g, &sched, x, 3);
        assert_eq!(t.first_level(zero), Some(2), "{:?}", (t.inner_epsilon, &t.outer_epsilons));
    }
}
