//! Command implementations. Each returns a [`Bundle`] plus export files; the
//! caller decides where they go.

use anyhow::{bail, Result};
use chainspec::epsgraph::{chain_related_in, find_tight_path, Chain, ChainRelation, RefinementSchedule};
use chainspec::geometry::Point;
use chainspec::nesting::{
    feasible_depth, graph_ladder, prune_loop, stabilized_order, verify_ordinately_nested, OrdinateCertificate,
};
use chainspec::ordertypes::{Confidence, OrderTypeTerm};
use chainspec::spectrum::{
    conley_blocks, prolongation, spectrum, Conflict, Context, EmpiricalReport, OmegaDetection, PeriodicEvidence,
    RecurrenceCheck, SpectrumOptions, ZetaCheck,
};
use chainspec::systems::{builtin_zoo, sample, self_test, Domain, SampleGrid, SystemDef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{self, AnalysisConfig};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFLICT: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NONCONVERGENCE: u8 = 3;

#[derive(Serialize)]
pub struct ConfigEcho {
    /// The config file, verbatim.
    pub text: Option<String>,
    pub effective: AnalysisConfig,
}

#[derive(Serialize)]
pub struct SystemInfo {
    pub name: String,
    pub domain: String,
    pub diam: f64,
}

#[derive(Serialize)]
pub struct GridInfo {
    pub points: usize,
    pub resolution: f64,
    pub spacing: f64,
}

#[derive(Serialize)]
pub struct PointInfo {
    pub requested: [f64; 2],
    pub snapped: [f64; 2],
    pub snap_distance: f64,
    pub index: usize,
}

#[derive(Serialize)]
pub struct EntryInfo {
    pub term: String,
    pub confidence: Confidence,
    pub evidence: Vec<String>,
}

#[derive(Serialize)]
pub struct EtaSummary {
    pub present: bool,
    pub witness: Option<Point>,
    pub orbit_length: usize,
    pub max_gap: f64,
    pub family_levels: Option<usize>,
    pub certificate: Option<OrdinateCertificate>,
    pub note: Option<String>,
}

#[derive(Serialize)]
pub struct SpectrumSummary {
    pub terms: Vec<String>,
    pub oracle_terms: Vec<String>,
    pub entries: Vec<EntryInfo>,
    pub omega: OmegaDetection,
    pub periodic: Option<PeriodicEvidence>,
    pub periodic_refusal: Option<String>,
    pub eta: EtaSummary,
    pub identity: Option<Vec<String>>,
    pub recurrence: RecurrenceCheck,
    pub zeta: Option<ZetaCheck>,
    pub empirical: Option<EmpiricalReport>,
    pub conflicts: Vec<Conflict>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
pub struct FamilyReport {
    /// Levels with a chain before truncation.
    pub input_levels: usize,
    /// Levels kept after the a-priori projection bound.
    pub depth: usize,
    pub converged: bool,
    pub rounds: usize,
    pub levels: usize,
    pub residual: Option<f64>,
    pub certificate: Option<OrdinateCertificate>,
    pub failure: Option<String>,
    pub obstruction: Option<String>,
    /// Line-oriented dump of the output family.
    pub text: Option<String>,
}

#[derive(Serialize)]
pub struct BlocksSummary {
    pub blocks: usize,
    pub induced_order: Vec<usize>,
    pub convex: bool,
    pub order_total: bool,
    pub agrees_with_conley: bool,
    pub failures: usize,
}

#[derive(Serialize)]
pub struct ProlongSummary {
    pub level_sizes: Vec<usize>,
    pub y_first_level: Option<usize>,
    pub lower_bound: bool,
    pub monotone: bool,
    pub inner_epsilon: f64,
    pub outer_epsilons: Vec<f64>,
}

#[derive(Serialize, Default)]
pub struct PairReport {
    pub x: Option<PointInfo>,
    pub y: Option<PointInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_related: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<BlocksSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prolongation: Option<ProlongSummary>,
}

#[derive(Serialize)]
pub struct ComponentInfo {
    pub index: usize,
    pub size: usize,
    pub first: Point,
    pub last: Point,
}

#[derive(Serialize)]
pub struct ConleyInfo {
    pub components: Vec<ComponentInfo>,
    /// Covering pairs `(a, b)` with `K_a < K_b`.
    pub hasse: Vec<(usize, usize)>,
    pub total: bool,
}

#[derive(Serialize)]
pub struct Status {
    pub exit_code: u8,
    pub conflicts: usize,
    pub non_converged: usize,
}

#[derive(Serialize)]
pub struct Bundle {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ConfigEcho,
    pub system: SystemInfo,
    pub grid: GridInfo,
    pub schedule: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conley: Option<ConleyInfo>,
    pub pairs: Vec<PairReport>,
    pub status: Status,
}

pub struct Output {
    pub bundle: Bundle,
    /// Export files: name and contents.
    pub files: Vec<(String, String)>,
    /// One line per pair for people.
    pub summary: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl Output {
    pub fn exit_code(&self) -> u8 {
        self.bundle.status.exit_code
    }
}

pub fn domain_name(d: &Domain) -> &'static str {
    match d {
        Domain::Interval { .. } => "interval",
        Domain::Intervals(_) => "intervals",
        Domain::Circle => "circle",
        Domain::Finite(_) => "finite",
        Domain::Comb { .. } => "comb",
    }
}

#[derive(Serialize)]
pub struct SystemListing {
    pub name: String,
    pub domain: String,
    pub diam: f64,
    pub lipschitz: Option<f64>,
    pub fixed_points: usize,
    pub period: Option<u32>,
    pub attracting_period: Option<usize>,
    pub self_test: bool,
    pub failed_checks: Vec<String>,
}

pub fn systems_list() -> Vec<SystemListing> {
    builtin_zoo()
        .iter()
        .map(|s| {
            let rep = self_test(s);
            SystemListing {
                name: s.name.clone(),
                domain: domain_name(&s.domain).into(),
                diam: s.diam,
                lipschitz: s.lipschitz,
                fixed_points: s.meta.fixed_points.len(),
                period: s.meta.period,
                attracting_period: s.meta.attracting_orbit.as_ref().map(|o| o.len()),
                self_test: rep.passed(),
                failed_checks: rep.checks.iter().filter(|c| !c.1).map(|c| c.0.clone()).collect(),
            }
        })
        .collect()
}

pub fn systems_table(list: &[SystemListing]) -> String {
    let mut s = format!("{:<24} {:<10} {:>6} {:>6} {:>7}  {}\n", "name", "domain", "diam", "fixed", "period", "self-test");
    for l in list {
        let period = l.period.map(|p| p.to_string()).or(l.attracting_period.map(|p| format!("att {p}"))).unwrap_or_default();
        let st = if l.self_test { "pass".to_string() } else { format!("FAIL ({})", l.failed_checks.join("; ")) };
        s.push_str(&format!("{:<24} {:<10} {:>6} {:>6} {:>7}  {st}\n", l.name, l.domain, l.diam, l.fixed_points, period));
    }
    s
}

struct Pair {
    x: usize,
    y: Option<usize>,
    report: PairReport,
}

fn point_info(grid: &SampleGrid, p: &Point) -> (usize, PointInfo) {
    let (d, i) = grid.nearest(p);
    (i, PointInfo { requested: p.coords, snapped: grid.points[i].coords, snap_distance: d, index: i })
}

fn select_pairs(cfg: &AnalysisConfig, sys: &SystemDef, grid: &SampleGrid, need_y: bool) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    for s in &cfg.pairs {
        let (x, y) = config::parse_pair(sys, s)?;
        if need_y && y.is_none() {
            bail!("pair {s:?} needs two points, written \"x;y\"");
        }
        let (xi, xinfo) = point_info(grid, &x);
        let yy = y.map(|p| point_info(grid, &p));
        out.push(Pair {
            x: xi,
            y: yy.as_ref().map(|t| t.0),
            report: PairReport { x: Some(xinfo), y: yy.map(|t| t.1), ..Default::default() },
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds);
    for _ in 0..cfg.random_pairs {
        let (a, b) = (rng.gen_range(0..grid.len()), rng.gen_range(0..grid.len()));
        let (xi, xinfo) = point_info(grid, &grid.points[a]);
        let (yi, yinfo) = point_info(grid, &grid.points[b]);
        out.push(Pair { x: xi, y: Some(yi), report: PairReport { x: Some(xinfo), y: Some(yinfo), ..Default::default() } });
    }
    Ok(out)
}

pub struct Setup {
    pub cfg: AnalysisConfig,
    pub text: Option<String>,
    pub sys: SystemDef,
    pub grid: SampleGrid,
    pub sched: RefinementSchedule,
}

pub fn setup(cfg: AnalysisConfig, text: Option<String>) -> Result<Setup> {
    let sys = config::system(&cfg)?;
    let grid = sample(&sys, cfg.resolution).map_err(|e| anyhow::anyhow!("{e}"))?;
    let sched = config::schedule(&cfg, &sys, grid.spacing)?;
    Ok(Setup { cfg, text, sys, grid, sched })
}

fn bundle(st: &Setup, command: &str, conley: Option<ConleyInfo>, pairs: Vec<PairReport>) -> Bundle {
    let conflicts = pairs.iter().filter_map(|p| p.spectrum.as_ref()).map(|s| s.conflicts.len()).sum();
    let non_converged = pairs
        .iter()
        .filter(|p| p.chain_related != Some(false) && p.family.as_ref().is_some_and(|f| !f.converged) || p.prolongation.as_ref().is_some_and(|t| t.lower_bound))
        .count();
    let exit_code = if conflicts > 0 {
        EXIT_CONFLICT
    } else if non_converged > 0 {
        EXIT_NONCONVERGENCE
    } else {
        EXIT_OK
    };
    Bundle {
        schema_version: SCHEMA_VERSION,
        tool: "chainspec".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: ConfigEcho { text: st.text.clone(), effective: st.cfg.clone() },
        system: SystemInfo { name: st.sys.name.clone(), domain: domain_name(&st.sys.domain).into(), diam: st.sys.diam },
        grid: GridInfo { points: st.grid.len(), resolution: st.grid.resolution, spacing: st.grid.spacing },
        schedule: st.sched.epsilons.clone(),
        conley,
        pairs,
        status: Status { exit_code, conflicts, non_converged },
    }
}

fn options(st: &Setup) -> SpectrumOptions {
    let witness = st.cfg.witness.map(|w| st.sys.point(w)).or(st.sys.meta.witness);
    SpectrumOptions { witness, window: st.cfg.stabilization_window, prune_budget: st.cfg.prune_budget, ..Default::default() }
}

fn spectrum_summary(ctx: &Context, x: usize, y: usize, opts: &SpectrumOptions) -> SpectrumSummary {
    let sp = spectrum(ctx, x, y, opts);
    let pretty = |v: Vec<OrderTypeTerm>| v.iter().map(|t| t.pretty()).collect::<Vec<_>>();
    SpectrumSummary {
        terms: pretty(sp.terms()),
        oracle_terms: pretty(sp.oracle_terms()),
        entries: sp
            .entries
            .iter()
            .map(|e| EntryInfo { term: e.term.pretty(), confidence: e.confidence, evidence: e.evidence.clone() })
            .collect(),
        eta: EtaSummary {
            present: sp.eta.present,
            witness: sp.eta.witness,
            orbit_length: sp.eta.orbit_length,
            max_gap: sp.eta.max_gap,
            family_levels: sp.eta.family.as_ref().map(|f| f.len()),
            certificate: sp.eta.certificate.clone(),
            note: sp.eta.note.clone(),
        },
        identity: sp.identity.clone().map(pretty),
        omega: sp.omega,
        periodic: sp.periodic,
        periodic_refusal: sp.periodic_refusal,
        recurrence: sp.recurrence,
        zeta: sp.zeta,
        empirical: sp.empirical,
        conflicts: sp.conflicts,
        notes: sp.notes,
    }
}

/// Points of `c` whose open `eps`-ball meets the grid only in themselves.
fn isolated(grid: &SampleGrid, c: &Chain, eps: f64) -> Vec<Point> {
    let mut v: Vec<Point> = c.points.iter().copied().filter(|p| grid.ball(p, eps, false).len() <= 1).collect();
    v.dedup();
    v
}

fn obstruction_text(pts: &[Point], eps: f64, level: usize) -> Option<String> {
    let first = pts.first()?;
    Some(format!(
        "isolated-point obstruction at level {level}: B_d(z) meets the space only in z for {} chain points (first z = {first}, d = {eps})",
        pts.len()
    ))
}

fn empty_family() -> FamilyReport {
    FamilyReport {
        input_levels: 0,
        depth: 0,
        converged: false,
        rounds: 0,
        levels: 0,
        residual: None,
        certificate: None,
        failure: None,
        obstruction: None,
        text: None,
    }
}

/// Per-level tight shortest chains, truncated to the depth the projection
/// can support, then pruned and re-projected until the limit settles.
fn family_report(st: &Setup, ctx: &Context, x: usize, y: usize) -> FamilyReport {
    let mut rep = empty_family();
    let lad = &ctx.ladder;
    let chains: Vec<Chain> = (0..lad.len())
        .map_while(|n| find_tight_path(&lad.levels[n], lad.reversed(n), &st.grid, x, y))
        .zip(&st.sched.epsilons)
        .map(|(p, &e)| Chain::from_indices(&st.grid, p, e))
        .collect();
    rep.input_levels = chains.len();
    let depth = feasible_depth(&st.sys, &chains, &st.sched);
    rep.depth = depth;
    if depth == 0 {
        rep.failure = Some("no schedule level is compatible with the chains' Hausdorff limit".into());
        return rep;
    }
    let sched = st.sched.truncated(depth);
    let out = prune_loop(&st.sys, &chains, &sched, st.cfg.prune_budget, st.cfg.resolution / 2.0);
    rep.rounds = out.rounds;
    rep.converged = out.converged;
    if let Some(f) = &out.failure {
        rep.failure = Some(f.to_string());
    }
    if let Some(pr) = &out.result {
        let cert = verify_ordinately_nested(&pr.family, st.cfg.stabilization_window);
        rep.levels = pr.family.len();
        rep.residual = Some(pr.limit.residual);
        if !cert.passed() {
            rep.converged = false;
            rep.failure.get_or_insert_with(|| "output family fails the ordinate-nesting certificate".into());
        }
        rep.certificate = Some(cert);
        rep.text = Some(pr.family.to_text());
    }
    rep
}

/// For a pair that loses its chains at level `l` (1-based): the last chain
/// found, and the points of it that are isolated at the failing scale.
fn unrelated_report(st: &Setup, rel: &ChainRelation, l: usize) -> FamilyReport {
    let mut rep = empty_family();
    rep.input_levels = l - 1;
    rep.failure = Some(format!("pair is not chain related: no chain at level {l}"));
    let eps = st.sched.epsilons[l - 1];
    if let Some(Some(c)) = l.checked_sub(2).and_then(|i| rel.certificates.get(i)) {
        rep.obstruction = obstruction_text(&isolated(&st.grid, c, eps), eps, l);
    }
    rep
}

fn conley_info(ctx: &Context, grid: &SampleGrid) -> Result<(ConleyInfo, String)> {
    let cc = &ctx.components;
    let cd = chainspec::epsgraph::conley_order_in(cc, grid, &ctx.ladder).map_err(|e| anyhow::anyhow!("{e}"))?;
    let components = cc
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| ComponentInfo {
            index: i,
            size: c.members.len(),
            first: grid.points[c.members[0]],
            last: grid.points[*c.members.last().expect("non-empty")],
        })
        .collect();
    let k = cc.len();
    let total = (0..k).all(|a| (0..k).all(|b| cd.le(a, b) || cd.le(b, a)));
    let dot = cd.to_dot(grid);
    Ok((ConleyInfo { components, hasse: cd.hasse(), total }, dot))
}

fn related(ctx: &Context, p: &mut Pair) -> Option<ChainRelation> {
    let y = p.y?;
    let r = chain_related_in(&ctx.ladder, ctx.grid, p.x, y);
    p.report.chain_related = Some(r.related);
    p.report.first_failure = r.first_failure.map(|l| l + 1);
    Some(r)
}

fn describe(p: &PairReport) -> String {
    let pt = |i: &Option<PointInfo>| match i {
        Some(i) if i.requested[1] != 0.0 || i.snapped[1] != 0.0 => format!("({}, {})", i.snapped[0], i.snapped[1]),
        Some(i) => format!("{}", i.snapped[0]),
        None => "-".into(),
    };
    let mut s = format!("x = {}", pt(&p.x));
    if p.y.is_some() {
        s.push_str(&format!(", y = {}", pt(&p.y)));
    }
    if let Some(r) = p.chain_related {
        s.push_str(&format!(": chain related {r}"));
        if let Some(l) = p.first_failure {
            s.push_str(&format!(" (absent from level {l})"));
        }
    }
    if let Some(sp) = &p.spectrum {
        s.push_str(&format!("; spectrum {{{}}}", sp.terms.join(", ")));
        if !sp.conflicts.is_empty() {
            s.push_str(&format!("; {} conflicts", sp.conflicts.len()));
        }
    }
    if let Some(f) = p.family.as_ref().filter(|_| p.chain_related != Some(false)) {
        s.push_str(&format!("; family converged {} ({} levels)", f.converged, f.levels));
    }
    if let Some(f) = &p.family {
        if let Some(o) = &f.obstruction {
            s.push_str(&format!("; {o}"));
        }
    }
    if let Some(b) = &p.blocks {
        s.push_str(&format!("; {} blocks, convex {}, agrees {}", b.blocks, b.convex, b.agrees_with_conley));
    }
    if let Some(t) = &p.prolongation {
        s.push_str(&format!("; J sizes {:?}", t.level_sizes));
        if let Some(l) = t.y_first_level {
            s.push_str(&format!(", y enters at level {l}"));
        }
    }
    s
}

fn diagnostics(pairs: &[PairReport]) -> Vec<String> {
    let mut d = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if let Some(sp) = &p.spectrum {
            for c in &sp.conflicts {
                d.push(format!("pair {i}: detector conflict {}: {}", c.kind, c.detail));
            }
        }
        if let Some(f) = &p.family {
            if !f.converged && p.chain_related != Some(false) {
                d.push(format!("pair {i}: no converged family: {}", f.failure.as_deref().unwrap_or("unknown")));
            }
        }
        if p.prolongation.as_ref().is_some_and(|t| t.lower_bound) {
            d.push(format!("pair {i}: prolongation saturation ran out of budget; levels are lower bounds"));
        }
    }
    d
}

fn finish(st: &Setup, command: &str, conley: Option<ConleyInfo>, pairs: Vec<Pair>, files: Vec<(String, String)>) -> Output {
    let reports: Vec<PairReport> = pairs.into_iter().map(|p| p.report).collect();
    let summary = reports.iter().map(describe).collect();
    let diagnostics = diagnostics(&reports);
    Output { bundle: bundle(st, command, conley, reports), files, summary, diagnostics }
}

pub fn cmd_spectrum(st: &Setup) -> Result<Output> {
    let mut pairs = select_pairs(&st.cfg, &st.sys, &st.grid, true)?;
    let ctx = Context::new(&st.sys, &st.grid, &st.sched);
    let opts = options(st);
    for p in &mut pairs {
        related(&ctx, p);
        let y = p.y.expect("checked");
        p.report.spectrum = Some(spectrum_summary(&ctx, p.x, y, &opts));
    }
    Ok(finish(st, "spectrum", None, pairs, vec![]))
}

pub fn cmd_chains(st: &Setup) -> Result<Output> {
    let mut pairs = select_pairs(&st.cfg, &st.sys, &st.grid, true)?;
    let ctx = Context::new(&st.sys, &st.grid, &st.sched);
    let mut files = Vec::new();
    for (i, p) in pairs.iter_mut().enumerate() {
        let rel = related(&ctx, p).expect("pairs have two points");
        let f = match rel.first_failure {
            None => family_report(st, &ctx, p.x, p.y.expect("two points")),
            Some(l) => unrelated_report(st, &rel, l + 1),
        };
        if let Some(t) = &f.text {
            files.push((format!("pair{i}_family.txt"), t.clone()));
        }
        p.report.family = Some(f);
    }
    Ok(finish(st, "chains", None, pairs, files))
}

pub fn cmd_conley(st: &Setup) -> Result<Output> {
    let mut pairs = select_pairs(&st.cfg, &st.sys, &st.grid, true)?;
    let ctx = Context::new(&st.sys, &st.grid, &st.sched);
    let (info, dot) = conley_info(&ctx, &st.grid)?;
    let mut files = vec![("conley.dot".to_string(), dot)];
    let cd = chainspec::epsgraph::conley_order_in(&ctx.components, &st.grid, &ctx.ladder).map_err(|e| anyhow::anyhow!("{e}"))?;
    for (i, p) in pairs.iter_mut().enumerate() {
        let Some(y) = related(&ctx, p).filter(|r| r.related).and(p.y) else { continue };
        let Some(lad) = graph_ladder(&st.grid, &st.sched, p.x, y, None) else { continue };
        let so = stabilized_order(&lad.family, st.cfg.stabilization_window);
        let bd = conley_blocks(&so, &st.grid, &ctx.components, &cd);
        files.push((format!("pair{i}_blocks.dot"), bd.to_dot(&so)));
        files.push((format!("pair{i}_blocks.csv"), bd.to_csv(&so)));
        p.report.blocks = Some(BlocksSummary {
            blocks: bd.blocks.len(),
            induced_order: bd.induced_order.clone(),
            convex: bd.convex,
            order_total: bd.order_total,
            agrees_with_conley: bd.agrees_with_conley,
            failures: bd.failures.len(),
        });
    }
    Ok(finish(st, "conley", Some(info), pairs, files))
}

fn prolong_pair(st: &Setup, p: &mut Pair, i: usize, files: &mut Vec<(String, String)>) {
    let t = prolongation(&st.sys, &st.grid, &st.sched, p.x, st.cfg.alpha_max);
    files.push((format!("pair{i}_prolong.csv"), t.to_csv(&st.grid)));
    files.push((format!("pair{i}_prolong.dot"), t.to_dot(&st.grid)));
    p.report.prolongation = Some(ProlongSummary {
        level_sizes: t.levels.iter().map(|l| l.len()).collect(),
        y_first_level: p.y.and_then(|y| t.first_level(y)),
        lower_bound: t.lower_bound,
        monotone: t.monotone,
        inner_epsilon: t.inner_epsilon,
        outer_epsilons: t.outer_epsilons.clone(),
    });
}

pub fn cmd_prolong(st: &Setup) -> Result<Output> {
    let mut pairs = select_pairs(&st.cfg, &st.sys, &st.grid, false)?;
    let mut files = Vec::new();
    for (i, p) in pairs.iter_mut().enumerate() {
        prolong_pair(st, p, i, &mut files);
    }
    Ok(finish(st, "prolong", None, pairs, files))
}

/// Sample, graphs, components, Conley order, then every configured pair:
/// spectrum, nested family and prolongation.
pub fn cmd_analyze(st: &Setup) -> Result<Output> {
    let mut pairs = select_pairs(&st.cfg, &st.sys, &st.grid, true)?;
    let ctx = Context::new(&st.sys, &st.grid, &st.sched);
    let (info, dot) = conley_info(&ctx, &st.grid)?;
    let mut files = vec![("conley.dot".to_string(), dot)];
    let opts = options(st);
    for (i, p) in pairs.iter_mut().enumerate() {
        let rel = related(&ctx, p).expect("pairs have two points");
        let y = p.y.expect("checked");
        p.report.spectrum = Some(spectrum_summary(&ctx, p.x, y, &opts));
        if rel.related {
            let f = family_report(st, &ctx, p.x, y);
            if let Some(t) = &f.text {
                files.push((format!("pair{i}_family.txt"), t.clone()));
            }
            p.report.family = Some(f);
        }
        prolong_pair(st, p, i, &mut files);
    }
    Ok(finish(st, "analyze", Some(info), pairs, files))
}
