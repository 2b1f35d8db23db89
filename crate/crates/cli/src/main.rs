//! `chainspec`: chain-recurrence analysis of sampled dynamical systems.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::{Output, EXIT_USAGE};
use config::Overrides;

#[derive(Parser)]
#[command(name = "chainspec", version, about = "Chain spectra of sampled dynamical systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the built-in systems and their self-tests.
    SystemsList {
        #[arg(long)]
        json: bool,
    },
    /// Full pipeline: components, Conley order, spectra, families, prolongations.
    Analyze(Common),
    /// Chain relation and ordinately nested families for each pair.
    Chains(Common),
    /// Chain spectrum for each pair.
    Spectrum(Common),
    /// Chain components, Conley order and block decompositions.
    Conley(Common),
    /// Prolongation levels from each pair's first point.
    Prolong(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Zoo system name, or a file holding a system table.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    resolution: Option<f64>,
    /// Number of schedule levels.
    #[arg(long)]
    depth: Option<usize>,
    /// A pair "x;y" (repeatable).
    #[arg(long = "pair")]
    pairs: Vec<String>,
    /// Emit the report as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Directory for report.json and exports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Highest prolongation level.
    #[arg(long)]
    alpha: Option<usize>,
}

fn configure_threads() {
    if let Some(n) = std::env::var("CHAINSPEC_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // a second initialisation only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn write_out(dir: &Path, out: &Output) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_string_pretty(&out.bundle)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    for (name, body) in &out.files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn run_common(name: &str, c: Common) -> Result<u8, (u8, anyhow::Error)> {
    let ov = Overrides {
        system: c.system,
        resolution: c.resolution,
        depth: c.depth,
        pairs: c.pairs,
        out: c.out,
        alpha_max: c.alpha,
    };
    let usage = |e| (EXIT_USAGE, e);
    let (mut cfg, text) = config::load(c.config.as_deref(), &ov).map_err(usage)?;
    if name == "analyze" && cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from("chainspec-out"));
    }
    let st = commands::setup(cfg, text).map_err(usage)?;
    let out = match name {
        "analyze" => commands::cmd_analyze(&st),
        "chains" => commands::cmd_chains(&st),
        "spectrum" => commands::cmd_spectrum(&st),
        "conley" => commands::cmd_conley(&st),
        _ => commands::cmd_prolong(&st),
    }
    .map_err(usage)?;
    for d in &out.diagnostics {
        eprintln!("chainspec: {d}");
    }
    if let Some(dir) = &st.cfg.output_dir {
        write_out(dir, &out).map_err(|e| (EXIT_USAGE, e))?;
    }
    if c.json {
        println!("{}", serde_json::to_string_pretty(&out.bundle).expect("serializable"));
    } else {
        println!("system {} ({} grid points, spacing {:.3e})", out.bundle.system.name, out.bundle.grid.points, out.bundle.grid.spacing);
        if let Some(cn) = &out.bundle.conley {
            println!("{} chain components, Conley order total: {}", cn.components.len(), cn.total);
        }
        for s in &out.summary {
            println!("{s}");
        }
        // DOT goes to stdout for the conley command when nothing else asks for it
        if name == "conley" {
            if let Some((_, dot)) = out.files.iter().find(|f| f.0 == "conley.dot") {
                print!("{dot}");
            }
        }
    }
    Ok(out.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    let res = match cli.cmd {
        Cmd::SystemsList { json } => {
            let list = commands::systems_list();
            if json {
                println!("{}", serde_json::to_string_pretty(&list).expect("serializable"));
            } else {
                print!("{}", commands::systems_table(&list));
            }
            Ok(if list.iter().all(|l| l.self_test) { 0 } else { commands::EXIT_CONFLICT })
        }
        Cmd::Analyze(c) => run_common("analyze", c),
        Cmd::Chains(c) => run_common("chains", c),
        Cmd::Spectrum(c) => run_common("spectrum", c),
        Cmd::Conley(c) => run_common("conley", c),
        Cmd::Prolong(c) => run_common("prolong", c),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err((code, e)) => {
            eprintln!("chainspec: error: {e:#}");
            ExitCode::from(code)
        }
    }
}
