//! Spectra `Ω(x, y)`: theorem-backed oracle entries, the empirical ladder
//! signature, and their cross-checks.

pub mod attractors;
pub mod blocks;
pub mod detectors;
pub mod prolong;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epsgraph::{chain_components_in, chain_related_in, ChainComponentSet, GraphLadder, RefinementSchedule};
use crate::geometry::Point;
use crate::nesting::{graph_ladder, prune_loop, stabilized_order, verify_ordinately_nested, OrdinateCertificate};
use crate::ordertypes::{detect_signature, equal_normalized, normalize, Confidence, OrderTypeTerm, SignatureReport};
use crate::systems::{SampleGrid, SystemDef};

pub use attractors::*;
pub use blocks::*;
pub use detectors::*;
pub use prolong::*;

/// A grid, its schedule and the prebuilt graphs, shared by many queries.
pub struct Context<'a> {
    pub sys: &'a SystemDef,
    pub grid: &'a SampleGrid,
    pub sched: &'a RefinementSchedule,
    pub ladder: GraphLadder,
    pub components: ChainComponentSet,
}

impl<'a> Context<'a> {
    pub fn new(sys: &'a SystemDef, grid: &'a SampleGrid, sched: &'a RefinementSchedule) -> Self {
        let ladder = GraphLadder::new(grid, sched);
        let components = chain_components_in(&ladder, grid.len());
        Context { sys, grid, sched, ladder, components }
    }
}

/// Nearest grid index and the distance moved.
pub fn snap(grid: &SampleGrid, p: &Point) -> (usize, f64) {
    let (d, i) = grid.nearest(p);
    (i, d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub kmax: usize,
    pub omega_budget: usize,
    pub finite_tol: f64,
    pub max_period: usize,
    pub witness: Option<Point>,
    pub window: usize,
    pub prune_budget: usize,
    pub empirical: bool,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            kmax: 10_000,
            omega_budget: DEFAULT_OMEGA_BUDGET,
            finite_tol: 0.0,
            max_period: 64,
            witness: None,
            window: 3,
            prune_budget: 16,
            empirical: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub term: OrderTypeTerm,
    pub confidence: Confidence,
    pub evidence: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: String,
    pub detail: String,
}

/// The limit-set test against the orbit-recurrence characterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceCheck {
    pub in_limit_set: bool,
    /// The orbit enters every schedule ball around `y` at least once.
    pub recurrent: bool,
    pub orbit_related: bool,
    pub agrees: bool,
    /// `x` lands exactly on a periodic `y`: `y` is in the limit set while
    /// being on the orbit, the one case where the characterization fails
    /// (`x = y` periodic included).
    pub preperiodic_exception: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub certificate: OrdinateCertificate,
    pub signature: SignatureReport,
    pub levels: usize,
    pub stalled_at: Option<usize>,
    /// Distinct chain components touched by each level.
    pub components_crossed: Vec<usize>,
    pub prune_converged: bool,
    pub verdict: Vec<OrderTypeTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub x: Point,
    pub y: Point,
    pub chain_related: bool,
    pub first_failure: Option<usize>,
    pub entries: Vec<SpectrumEntry>,
    pub omega: OmegaDetection,
    pub periodic: Option<PeriodicEvidence>,
    pub periodic_refusal: Option<String>,
    pub eta: EtaEvidence,
    pub identity: Option<Vec<OrderTypeTerm>>,
    pub recurrence: RecurrenceCheck,
    pub zeta: Option<ZetaCheck>,
    pub empirical: Option<EmpiricalReport>,
    pub conflicts: Vec<Conflict>,
    pub notes: Vec<String>,
}

impl Spectrum {
    /// Oracle-grade terms only.
    pub fn oracle_terms(&self) -> Vec<OrderTypeTerm> {
        self.entries.iter().filter(|e| e.confidence == Confidence::OracleGrade).map(|e| e.term.clone()).collect()
    }

    pub fn terms(&self) -> Vec<OrderTypeTerm> {
        self.entries.iter().map(|e| e.term.clone()).collect()
    }

    /// Whether the oracle-grade part equals `expected` as a set, up to normalization.
    pub fn oracle_set_eq(&self, expected: &[OrderTypeTerm]) -> bool {
        set_eq(&self.oracle_terms(), expected)
    }
}

pub fn set_eq(a: &[OrderTypeTerm], b: &[OrderTypeTerm]) -> bool {
    let na: Vec<OrderTypeTerm> = a.iter().map(normalize).collect();
    let nb: Vec<OrderTypeTerm> = b.iter().map(normalize).collect();
    na.iter().all(|t| nb.contains(t)) && nb.iter().all(|t| na.contains(t))
}

fn add_entry(entries: &mut Vec<SpectrumEntry>, term: OrderTypeTerm, confidence: Confidence, why: &str) {
    if let Some(e) = entries.iter_mut().find(|e| equal_normalized(&e.term, &term)) {
        if !e.evidence.iter().any(|w| w == why) {
            e.evidence.push(why.to_string());
        }
        if confidence == Confidence::OracleGrade {
            e.confidence = Confidence::OracleGrade;
        }
        return;
    }
    entries.push(SpectrumEntry { term, confidence, evidence: vec![why.to_string()] });
}

/// Exact spectrum of the identity map: `{0, η}` on the diagonal, `{η}`
/// within a chain component, empty otherwise.
pub fn identity_spectrum(ctx: &Context, xi: usize, yi: usize) -> Vec<OrderTypeTerm> {
    let cc = &ctx.components;
    match (cc.member_of[xi], cc.member_of[yi]) {
        _ if xi == yi => vec![OrderTypeTerm::Fin(0), OrderTypeTerm::Eta],
        (Some(a), Some(b)) if a == b => vec![OrderTypeTerm::Eta],
        _ => vec![],
    }
}

fn recurrence_check(sys: &SystemDef, sched: &RefinementSchedule, x: &Point, y: &Point, om: &OmegaDetection, budget: usize) -> RecurrenceCheck {
    let m = &sys.metric;
    let mut c = *x;
    let mut best = f64::INFINITY;
    for _ in 0..budget.min(om.steps.max(1)) {
        c = sys.apply(&c);
        best = best.min(m.dist(&c, y));
        if best == 0.0 {
            break;
        }
    }
    let recurrent = best < sched.finest();
    let orbit_related = om.exact_hit.is_some();
    let rhs = recurrent && !orbit_related;
    let lhs = om.y_in_limit_set;
    let y_periodic = om.cycle.is_some() && om.tail_distance == 0.0;
    let preperiodic_exception = lhs && orbit_related && y_periodic;
    RecurrenceCheck { in_limit_set: lhs, recurrent, orbit_related, agrees: lhs == rhs, preperiodic_exception }
}

/// Full analysis of one pair of grid points.
pub fn spectrum(ctx: &Context, xi: usize, yi: usize, opts: &SpectrumOptions) -> Spectrum {
    let (sys, grid, sched) = (ctx.sys, ctx.grid, ctx.sched);
    let (x, y) = (grid.points[xi], grid.points[yi]);
    let rel = chain_related_in(&ctx.ladder, grid, xi, yi);
    let mut entries = Vec::new();
    let mut conflicts = Vec::new();
    let mut notes = Vec::new();
    let oracle = Confidence::OracleGrade;

    let finite = detect_finite(sys, &x, &y, opts.kmax, opts.finite_tol);
    if let Some(t) = &finite {
        add_entry(&mut entries, t.clone(), oracle, "finite-orbit");
        if !rel.related {
            conflicts.push(Conflict {
                kind: "finite-without-chain".into(),
                detail: format!("{} present but no chain at level {:?}", t.pretty(), rel.first_failure.map(|n| n + 1)),
            });
        }
    }
    let omega = detect_omega(sys, sched, &x, &y, opts.omega_budget);
    if omega.present {
        add_entry(&mut entries, OrderTypeTerm::Omega, oracle, "recurrence");
    } else if omega.inconclusive {
        notes.push(format!("omega detection inconclusive after {} steps", omega.steps));
    }
    let recurrence = recurrence_check(sys, sched, &x, &y, &omega, opts.omega_budget);
    if !recurrence.agrees {
        if recurrence.preperiodic_exception {
            notes.push("x lands exactly on periodic y: limit-set membership without recurrence-minus-orbit".into());
        } else if recurrence.in_limit_set {
            conflicts.push(Conflict {
                kind: "limit-set-mismatch".into(),
                detail: "y is in the limit set but the recurrence test disagrees".into(),
            });
        } else {
            notes.push(format!("orbit passes within the finest scale of y without accumulating (tail {:.3e})", omega.tail_distance));
        }
    }

    let (periodic, periodic_refusal) = match detect_periodic_attractor_spectrum(sys, sched, &x, &y, opts.max_period, opts.omega_budget) {
        Ok(ev) => (Some(ev), None),
        Err(e) => (None, Some(e)),
    };
    if let Some(ev) = &periodic {
        for t in &ev.terms {
            add_entry(&mut entries, t.clone(), oracle, "periodic-attractor");
        }
        if !omega.present {
            conflicts.push(Conflict { kind: "periodic-without-omega".into(), detail: format!("period {} but omega absent", ev.period) });
        }
    }

    let witness = opts.witness.or(sys.meta.witness);
    let eta = if rel.related { detect_eta(sys, grid, sched, &x, &y, witness) } else { detect_eta(sys, grid, sched, &x, &y, None) };
    if eta.present {
        add_entry(&mut entries, OrderTypeTerm::Eta, oracle, "transitivity");
    }

    let identity = sys.is_identity().then(|| identity_spectrum(ctx, xi, yi));
    if let Some(ids) = &identity {
        for t in ids {
            add_entry(&mut entries, t.clone(), oracle, "identity");
        }
    }

    // exact sets: any other oracle term outside them is a conflict
    for (name, exact) in [("periodic", periodic.as_ref().map(|p| p.terms.clone())), ("identity", identity.clone())] {
        let Some(exact) = exact else { continue };
        for e in entries.iter().filter(|e| e.confidence == oracle) {
            if !exact.iter().any(|t| equal_normalized(t, &e.term)) {
                conflicts.push(Conflict {
                    kind: format!("outside-{name}-set"),
                    detail: format!("{} ({}) is not in the exact {name} spectrum", e.term.pretty(), e.evidence.join(",")),
                });
            }
        }
    }

    let empirical = if opts.empirical && rel.related { empirical_part(ctx, xi, yi, opts, &mut notes) } else { None };
    if let Some(emp) = &empirical {
        for t in &emp.verdict {
            add_entry(&mut entries, t.clone(), Confidence::Heuristic, "ladder-signature");
        }
    }
    let zeta_asserted = entries.iter().any(|e| equal_normalized(&e.term, &OrderTypeTerm::Zeta));
    let zeta = zeta_asserted.then(|| zeta_nonwandering_check(sys, grid, sched, &x, &y, true));
    if let Some(z) = &zeta {
        if z.contradiction {
            conflicts.push(Conflict { kind: "zeta-wandering".into(), detail: "zeta asserted for a pair that is not nonwandering-related".into() });
        }
    }
    if !rel.related && !entries.is_empty() && finite.is_none() {
        notes.push("entries found although the grid graphs disconnect the pair".into());
    }

    Spectrum {
        x,
        y,
        chain_related: rel.related,
        first_failure: rel.first_failure,
        entries,
        omega,
        periodic,
        periodic_refusal,
        eta,
        identity,
        recurrence,
        zeta,
        empirical,
        conflicts,
        notes,
    }
}

fn empirical_part(ctx: &Context, xi: usize, yi: usize, opts: &SpectrumOptions, notes: &mut Vec<String>) -> Option<EmpiricalReport> {
    let lad = graph_ladder(ctx.grid, ctx.sched, xi, yi, None)?;
    let fam = &lad.family;
    let certificate = verify_ordinately_nested(fam, opts.window);
    let so = stabilized_order(fam, opts.window);
    let signature = detect_signature(fam, &so);
    let prune = prune_loop(ctx.sys, &fam.chains, &ctx.sched.truncated(fam.len()), opts.prune_budget, ctx.grid.spacing);
    if !prune.converged {
        notes.push(format!(
            "prune loop did not converge in {} rounds{}; signature read from the ladder",
            prune.rounds,
            prune.failure.as_ref().map(|f| format!(" ({f})")).unwrap_or_default()
        ));
    }
    let cc = &ctx.components;
    let components_crossed: Vec<usize> = lad
        .indices
        .iter()
        .map(|ix| ix.iter().filter_map(|&v| cc.member_of[v]).collect::<HashSet<_>>().len())
        .collect();
    let last = *components_crossed.last().unwrap_or(&0);
    let tail = &components_crossed[components_crossed.len() / 2..];
    let crossing_grows = tail.windows(2).all(|w| w[1] >= w[0]) && tail.first() < tail.last();
    let verdict: Vec<OrderTypeTerm> = if crossing_grows {
        notes.push(format!("ladder crosses a growing number of chain components ({tail:?})"));
        vec![OrderTypeTerm::prod(OrderTypeTerm::Zeta, OrderTypeTerm::Omega)]
    } else if last <= 1 {
        signature.verdict.iter().map(|(t, _)| t.clone()).collect()
    } else {
        notes.push(format!("ladder touches {last} chain components; signature not used"));
        vec![]
    };
    Some(EmpiricalReport {
        certificate,
        signature,
        levels: fam.len(),
        stalled_at: lad.stalled_at,
        components_crossed,
        prune_converged: prune.converged,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiEntry {
    pub y: usize,
    pub terms: Vec<OrderTypeTerm>,
}

/// Points chain-reachable from `x`, with their spectra, computed in parallel.
pub fn xi_class(ctx: &Context, xi: usize, opts: &SpectrumOptions, oracle_only: bool) -> Vec<XiEntry> {
    let reach = ctx.ladder.finest().bfs(&[xi]);
    let o = SpectrumOptions { empirical: opts.empirical && !oracle_only, ..opts.clone() };
    let targets: Vec<usize> = (0..ctx.grid.len()).filter(|&v| reach[v] != usize::MAX).collect();
    targets
        .par_iter()
        .filter_map(|&v| {
            let s = spectrum(ctx, xi, v, &o);
            if !s.chain_related {
                return None;
            }
            let terms = if oracle_only { s.oracle_terms() } else { s.terms() };
            Some(XiEntry { y: v, terms })
        })
        .collect()
}
