//! Decomposition of a stabilized order into chain-component blocks and the
//! check that the block order agrees with the Conley order.

use serde::{Deserialize, Serialize};

use crate::epsgraph::{ChainComponentSet, ConleyDiagram};
use crate::nesting::StabilizedOrder;
use crate::systems::SampleGrid;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    /// A run of positions inside one chain component.
    Component { component: usize, positions: Vec<usize> },
    /// A run of positions lying in no chain component.
    Transit { positions: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockFailure {
    /// The component's positions are interrupted by another block.
    NotConvex { component: usize, first: usize, last: usize, intruder: usize },
    /// Induced order lists `earlier` before `later`, but the Conley order does not put `later` below `earlier`.
    Disagrees { earlier: usize, later: usize },
    /// Positions whose pair with another support point is undecided.
    Undecided { position: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub blocks: Vec<Block>,
    /// Components in order of first appearance.
    pub induced_order: Vec<usize>,
    pub convex: bool,
    pub order_total: bool,
    pub agrees_with_conley: bool,
    pub failures: Vec<BlockFailure>,
}

impl BlockDecomposition {
    /// One node per block, in chain order.
    pub fn to_dot(&self, so: &StabilizedOrder) -> String {
        let mut s = String::from("digraph blocks {\n  rankdir=LR;\n");
        for (i, b) in self.blocks.iter().enumerate() {
            let (label, pos, shape) = match b {
                Block::Component { component, positions } => (format!("K{component}"), positions, "box"),
                Block::Transit { positions } => ("transit".to_string(), positions, "ellipse"),
            };
            let (lo, hi) = (so.support[pos[0]], so.support[pos[pos.len() - 1]]);
            s.push_str(&format!("  b{i} [shape={shape}, label=\"{label}\\n{} points\\n{lo} .. {hi}\"];\n", pos.len()));
            if i > 0 {
                s.push_str(&format!("  b{} -> b{i};\n", i - 1));
            }
        }
        s.push_str("}\n");
        s
    }

    /// `position,point,block,component` rows; the component is empty on transits.
    pub fn to_csv(&self, so: &StabilizedOrder) -> String {
        let mut s = String::from("position,point,block,component\n");
        for (i, b) in self.blocks.iter().enumerate() {
            let (pos, comp) = match b {
                Block::Component { component, positions } => (positions, component.to_string()),
                Block::Transit { positions } => (positions, String::new()),
            };
            for &p in pos {
                s.push_str(&format!("{p},{},{i},{comp}\n", so.support[p]));
            }
        }
        s
    }
}

pub fn conley_blocks(so: &StabilizedOrder, grid: &SampleGrid, cc: &ChainComponentSet, cd: &ConleyDiagram) -> BlockDecomposition {
    let label: Vec<Option<usize>> = so
        .support
        .iter()
        .map(|p| grid.index_of(p).and_then(|v| cc.member_of[v]))
        .collect();
    let mut blocks: Vec<Block> = Vec::new();
    for (pos, l) in label.iter().enumerate() {
        match (l, blocks.last_mut()) {
            (Some(c), Some(Block::Component { component, positions })) if component == c => positions.push(pos),
            (None, Some(Block::Transit { positions })) => positions.push(pos),
            (Some(c), _) => blocks.push(Block::Component { component: *c, positions: vec![pos] }),
            (None, _) => blocks.push(Block::Transit { positions: vec![pos] }),
        }
    }
    let mut failures = Vec::new();
    let mut induced_order: Vec<usize> = Vec::new();
    for l in label.iter().flatten() {
        if !induced_order.contains(l) {
            induced_order.push(*l);
        }
    }
    for &c in &induced_order {
        let first = label.iter().position(|l| *l == Some(c)).expect("present");
        let last = label.iter().rposition(|l| *l == Some(c)).expect("present");
        if let Some(intruder) = (first..=last).find(|&p| label[p] != Some(c)) {
            failures.push(BlockFailure::NotConvex { component: c, first, last, intruder });
        }
    }
    let convex = failures.is_empty();
    let mut undecided: Vec<usize> = so.unstable.iter().flat_map(|&(a, b)| [a, b]).collect();
    undecided.sort_unstable();
    undecided.dedup();
    failures.extend(undecided.into_iter().map(|position| BlockFailure::Undecided { position }));
    let order_total = so.fully_decided();
    let mut agrees = true;
    for i in 0..induced_order.len() {
        for j in i + 1..induced_order.len() {
            let (a, b) = (induced_order[i], induced_order[j]);
            // earlier components sit higher: K_b <= K_a
            if !cd.le(b, a) {
                agrees = false;
                failures.push(BlockFailure::Disagrees { earlier: a, later: b });
            }
        }
    }
    BlockDecomposition { blocks, induced_order, convex, order_total, agrees_with_conley: agrees, failures }
}
