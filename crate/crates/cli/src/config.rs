//! Analysis configuration: TOML (or JSON) files, command-line overrides,
//! validation, and pair parsing.
//!
//! ```toml
//! system = "cascade"          # zoo name, or a table of system parameters
//! resolution = 1e-3
//! schedule = "default"        # or a strictly decreasing list of epsilons
//! schedule_depth = 10
//! prune_budget = 16
//! stabilization_window = 3
//! seeds = 0                   # seed for random pairs
//! random_pairs = 0
//! pairs = ["1;0"]
//! output_dir = "chainspec-out"
//! ```
//!
//! A system table takes the keys of [`SystemSpec`]: `map` (a zoo name or one
//! of `rotation`, `circle-periodic`, `bistable`, `denjoy`, `comb`) and the
//! numeric parameters `alpha`, `k`, `a`, `n_max`, `c`, `k_max`,
//! `metric_warp`, `conjugate`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chainspec::epsgraph::RefinementSchedule;
use chainspec::geometry::{Point, SpaceKind};
use chainspec::systems::{SystemDef, SystemSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemRef {
    Name(String),
    Spec(SystemSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    /// `"default"`: the standard ladder clamped to the grid spacing.
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub system: SystemRef,
    pub resolution: f64,
    pub schedule: ScheduleSpec,
    pub schedule_depth: usize,
    pub prune_budget: usize,
    pub stabilization_window: usize,
    pub seeds: u64,
    pub random_pairs: usize,
    pub pairs: Vec<String>,
    pub output_dir: Option<PathBuf>,
    /// Highest prolongation level.
    pub alpha_max: usize,
    /// Witness of a dense orbit, for transitive systems.
    pub witness: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            system: SystemRef::Name("cascade".into()),
            resolution: 1e-2,
            schedule: ScheduleSpec::Named("default".into()),
            schedule_depth: 10,
            prune_budget: 16,
            stabilization_window: 3,
            seeds: 0,
            random_pairs: 0,
            pairs: Vec::new(),
            output_dir: None,
            alpha_max: 3,
            witness: None,
        }
    }
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub system: Option<String>,
    pub resolution: Option<f64>,
    pub depth: Option<usize>,
    pub pairs: Vec<String>,
    pub out: Option<PathBuf>,
    pub alpha_max: Option<usize>,
}

fn parse_text(text: &str, path: &Path) -> Result<AnalysisConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn system_file(path: &Path) -> Result<SystemSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

/// The config and, when read from a file, its text verbatim.
pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<(AnalysisConfig, Option<String>)> {
    let (mut cfg, text) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            (parse_text(&text, p)?, Some(text))
        }
        None => (AnalysisConfig::default(), None),
    };
    if let Some(s) = &ov.system {
        let p = Path::new(s);
        cfg.system = if p.is_file() { SystemRef::Spec(system_file(p)?) } else { SystemRef::Name(s.clone()) };
    }
    if let Some(r) = ov.resolution {
        cfg.resolution = r;
    }
    if let Some(d) = ov.depth {
        cfg.schedule_depth = d;
    }
    if !ov.pairs.is_empty() {
        cfg.pairs = ov.pairs.clone();
    }
    if let Some(o) = &ov.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(a) = ov.alpha_max {
        cfg.alpha_max = a;
    }
    validate(&cfg)?;
    Ok((cfg, text))
}

pub fn validate(cfg: &AnalysisConfig) -> Result<()> {
    if !(cfg.resolution.is_finite() && cfg.resolution > 0.0) {
        bail!("resolution must be positive, got {}", cfg.resolution);
    }
    for (name, v) in [
        ("schedule_depth", cfg.schedule_depth),
        ("prune_budget", cfg.prune_budget),
        ("stabilization_window", cfg.stabilization_window),
        ("alpha_max", cfg.alpha_max),
    ] {
        if v == 0 {
            bail!("{name} must be positive");
        }
    }
    match &cfg.schedule {
        ScheduleSpec::Named(n) if n == "default" => {}
        ScheduleSpec::Named(n) => bail!("unknown schedule {n:?} (use \"default\" or a list)"),
        ScheduleSpec::Explicit(v) => {
            if v.is_empty() || v.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                bail!("explicit schedule needs positive epsilons");
            }
            if v.windows(2).any(|w| w[1] >= w[0]) {
                bail!("explicit schedule must be strictly decreasing");
            }
        }
    }
    Ok(())
}

pub fn system(cfg: &AnalysisConfig) -> Result<SystemDef> {
    let spec = match &cfg.system {
        SystemRef::Name(n) => SystemSpec { map: n.clone(), ..Default::default() },
        SystemRef::Spec(s) => s.clone(),
    };
    SystemDef::from_spec(&spec).map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn schedule(cfg: &AnalysisConfig, sys: &SystemDef, spacing: f64) -> Result<RefinementSchedule> {
    match &cfg.schedule {
        ScheduleSpec::Explicit(v) => RefinementSchedule::from_list(v.clone()).map_err(|e| anyhow::anyhow!("{e}")),
        ScheduleSpec::Named(_) => Ok(RefinementSchedule::for_grid(sys.diam, cfg.schedule_depth, spacing)),
    }
}

/// One coordinate (`0.5`) or a plane point (`0.5,1`).
pub fn parse_point(sys: &SystemDef, s: &str) -> Result<Point> {
    let nums: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad coordinate {t:?}")))
        .collect::<Result<_>>()?;
    match (sys.metric.space(), nums.as_slice()) {
        (SpaceKind::Plane, [a, b]) => Ok(Point::plane(*a, *b)),
        (SpaceKind::Plane, _) => bail!("plane points are written \"a,b\", got {s:?}"),
        (_, [a]) if a.is_finite() => Ok(sys.point(*a)),
        _ => bail!("expected one coordinate, got {s:?}"),
    }
}

/// `"x;y"`, or just `"x"` where only one point is needed.
pub fn parse_pair(sys: &SystemDef, s: &str) -> Result<(Point, Option<Point>)> {
    let mut parts = s.split(';');
    let x = parse_point(sys, parts.next().unwrap_or(""))?;
    let y = parts.next().map(|t| parse_point(sys, t)).transpose()?;
    if parts.next().is_some() {
        bail!("a pair is written \"x;y\", got {s:?}");
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_validation() {
        let text = "system = \"halving\"\nresolution = 0.01\nschedule = [1.0, 0.5, 0.25]\npairs = [\"1;0\"]\n";
        let cfg: AnalysisConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.system, SystemRef::Name("halving".into()));
        assert_eq!(cfg.schedule, ScheduleSpec::Explicit(vec![1.0, 0.5, 0.25]));
        assert!(validate(&cfg).is_ok());
        let bad = AnalysisConfig { schedule: ScheduleSpec::Explicit(vec![0.5, 0.5]), ..cfg.clone() };
        assert!(validate(&bad).is_err());
        let zero = AnalysisConfig { resolution: 0.0, ..cfg };
        assert!(validate(&zero).is_err());
        assert!(toml::from_str::<AnalysisConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn system_tables() {
        let text = "[system]\nmap = \"circle-periodic\"\nk = 2\na = 0.5\n";
        let cfg: AnalysisConfig = toml::from_str(text).unwrap();
        assert_eq!(system(&cfg).unwrap().name, "circle-periodic-2");
    }

    #[test]
    fn pairs() {
        let s = SystemDef::cascade();
        let (x, y) = parse_pair(&s, "1;0").unwrap();
        assert_eq!((x.x(), y.unwrap().x()), (1.0, 0.0));
        assert!(parse_pair(&s, "1;0;2").is_err());
        assert!(parse_pair(&s, "a;0").is_err());
        let c = SystemDef::comb(4);
        assert_eq!(parse_point(&c, "1,0.5").unwrap().coords, [1.0, 0.5]);
        assert!(parse_point(&c, "1").is_err());
    }
}
