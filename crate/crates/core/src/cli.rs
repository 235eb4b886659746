//! Command-line front end.
//!
//! Exit status: 0 success, 1 internal error, 2 invalid input, 3 calibration
//! found no passing λ, 4 re-design check violated.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bounds::{
    assemble_surface, check_redesign, lower_surface, slack_attribution, surface_from_rows, AlphaTarget,
    BoundSurface, SurfaceKind, SurfaceMeta,
};
use crate::checkpoint::CheckpointWriter;
use crate::config::{BuiltDesign, RunConfig, SurfaceChoice};
use crate::domain::Grid;
use crate::engine::{simulate_grid, Event, SeedPolicy, SimOptions};
use crate::error::{Error, Result};
use crate::surface_io::{oracle_to_csv, parse_surface, surface_to_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CALIBRATION_FAILED: i32 = 3;
pub const EXIT_REDESIGN_VIOLATED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tilebound", version, about = "Type I Error upper-bound surfaces for adaptive designs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Resume from / append to this checkpoint file.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,

    /// Use the Wald interval instead of Clopper-Pearson for the rate term.
    #[arg(long, global = true)]
    pub non_regulatory_normal_approx: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate every null tile and write surface.csv.
    Verify,
    /// Pick the largest safe λ on the ladder and write its surface.
    Calibrate,
    /// Write exact Type I Error at tile centres (Gaussian design only).
    Oracle,
    /// Check g2+ <= g1- + alpha - g0+ on stored surfaces.
    RedesignCheck,
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain { .. }
        | Error::InvalidArgument(_)
        | Error::UnsupportedDimension { .. }
        | Error::Config(_)
        | Error::Checkpoint(_)
        | Error::Surface(_) => EXIT_INVALID,
        _ => EXIT_INTERNAL,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if cli.seed.is_some() {
        cfg.master_seed = cli.seed;
    }
    if cli.non_regulatory_normal_approx {
        cfg.normal_approx = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = load_config(cli)?;
    let design = cfg.build_design()?;
    let grid = cfg.build_grid(design.as_dyn())?;
    fs::create_dir_all(&cli.out)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(Error::Config("--threads must be at least 1".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Internal(e.to_string()))?
    };
    pool.install(|| match cli.command {
        Command::Verify => verify(cli, &cfg, &design, &grid),
        Command::Calibrate => calibrate(cli, &cfg, &design, &grid),
        Command::Oracle => oracle(cli, &design, &grid, cfg.lambda),
        Command::RedesignCheck => redesign(cli, &cfg, &design, &grid),
    })
}

fn meta(cfg: &RunConfig, design: &BuiltDesign, grid: &Grid) -> Result<SurfaceMeta> {
    Ok(SurfaceMeta {
        design_id: design.as_dyn().id().to_string(),
        master_seed: cfg.seed()?,
        grid: grid.describe(),
        delta: cfg.delta,
        lambda: cfg.lambda,
    })
}

fn verify(cli: &Cli, cfg: &RunConfig, design: &BuiltDesign, grid: &Grid) -> Result<i32> {
    let d = design.as_dyn();
    let seeds = SeedPolicy::new(cfg.seed()?);
    let event = match cfg.surface {
        SurfaceChoice::Upper => Event::FalseRejection,
        SurfaceChoice::Lower => Event::NoFalseRejection,
    };
    let opts = SimOptions {
        event,
        batch_size: cfg.batch_size,
    };
    let (writer, resumed) = match &cli.checkpoint {
        Some(p) => {
            let (w, r) = CheckpointWriter::resume(p, cfg.hash(), grid.dim())?;
            (Some(w), r)
        }
        None => (None, Vec::new()),
    };
    let summaries = simulate_grid(d, grid, cfg.n_sims, &seeds, opts, writer.as_ref(), &resumed)?;
    let bopts = cfg.bound_options();
    let m = meta(cfg, design, grid)?;
    let (surface, name) = match cfg.surface {
        SurfaceChoice::Upper => (assemble_surface(d, grid, &summaries, cfg.delta, &bopts, m)?, "surface.csv"),
        SurfaceChoice::Lower => (lower_surface(d, grid, &summaries, cfg.delta, &bopts, m)?, "surface_lower.csv"),
    };
    fs::write(cli.out.join(name), surface_to_csv(&surface))?;
    let report = report(cfg, design, &surface, None);
    fs::write(cli.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(EXIT_OK)
}

fn calibrate(cli: &Cli, cfg: &RunConfig, design: &BuiltDesign, grid: &Grid) -> Result<i32> {
    let ladder = cfg.ladder()?;
    let alpha = cfg.calibrate.as_ref().map(|c| c.alpha).unwrap_or_default();
    let cal = crate::bounds::calibrate(
        design.as_dyn(),
        grid,
        cfg.n_sims,
        &SeedPolicy::new(cfg.seed()?),
        &ladder,
        &AlphaTarget::Constant(alpha),
        cfg.delta,
        &cfg.bound_options(),
        meta(cfg, design, grid)?,
    )?;
    fs::write(cli.out.join("surface.csv"), surface_to_csv(&cal.surface))?;
    let mut audit = String::new();
    writeln!(audit, "target alpha: {alpha}").unwrap();
    writeln!(audit, "lambda_prime: {:.16e}", cal.lambda_prime).unwrap();
    writeln!(audit, "status: {}", if cal.failed { "FAILED (no ladder value passes)" } else { "ok" }).unwrap();
    writeln!(audit, "ladder (lambda, max_total, argmax_tile, passed):").unwrap();
    for s in &cal.audit {
        writeln!(audit, "  {:+.6e} {:.6e} {} {}", s.lambda, s.max_total, s.argmax_tile, s.passed).unwrap();
    }
    let full = format!("{}{}", report(cfg, design, &cal.surface, Some(cal.lambda_prime)), audit);
    fs::write(cli.out.join("report.txt"), &full)?;
    println!("lambda_prime = {:.16e}", cal.lambda_prime);
    if cal.failed {
        eprintln!("calibration failed: no ladder value keeps every tile under alpha = {alpha}");
        return Ok(EXIT_CALIBRATION_FAILED);
    }
    Ok(EXIT_OK)
}

fn oracle(cli: &Cli, design: &BuiltDesign, grid: &Grid, lambda: f64) -> Result<i32> {
    let BuiltDesign::Gaussian(g) = design else {
        return Err(Error::InvalidArgument(format!(
            "no closed-form oracle for design {}",
            design.as_dyn().id()
        )));
    };
    let rows: Vec<_> = grid
        .null_tiles()
        .map(|t| (t.index, t.center.clone(), g.exact_type_one_error(&t.center, t.null_signature, lambda)))
        .collect();
    fs::write(cli.out.join("oracle.csv"), oracle_to_csv(&rows))?;
    println!("wrote {} oracle rows", rows.len());
    Ok(EXIT_OK)
}

/// Load a surface CSV onto `grid`, checking that the tiles agree.
pub fn load_surface(path: &Path, grid: &Grid, kind: SurfaceKind, meta: SurfaceMeta) -> Result<BoundSurface> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Surface(format!("cannot read {}: {e}", path.display())))?;
    let rows = parse_surface(text.as_bytes())?;
    for r in &rows {
        let i = r.bound.tile_index as usize;
        let ok = i < grid.len() && {
            let t = grid.tile(i);
            t.center == r.center && t.half_widths == r.half_widths && t.null_signature == r.null_sig
        };
        if !ok {
            return Err(Error::Surface(format!(
                "{}: tile {i} does not match the configured grid",
                path.display()
            )));
        }
    }
    surface_from_rows(grid, rows.into_iter().map(|r| r.bound).collect(), kind, meta)
}

fn redesign(cli: &Cli, cfg: &RunConfig, design: &BuiltDesign, grid: &Grid) -> Result<i32> {
    let rc = cfg
        .redesign
        .as_ref()
        .ok_or_else(|| Error::Config("redesign-check needs a [redesign] section".into()))?;
    let m = meta(cfg, design, grid)?;
    let g2 = load_surface(&rc.g2_plus, grid, SurfaceKind::Upper, m.clone())?;
    let g1 = load_surface(&rc.g1_minus, grid, SurfaceKind::Lower, m.clone())?;
    let g0 = load_surface(&rc.g0_plus, grid, SurfaceKind::Upper, m)?;
    let r = check_redesign(&g2, &g1, &g0, rc.alpha)?;
    let mut out = String::new();
    writeln!(out, "passed: {}", r.passed).unwrap();
    writeln!(out, "min_margin: {:.16e}", r.min_margin).unwrap();
    writeln!(out, "confidence: {:.6}", r.confidence).unwrap();
    writeln!(out, "violations: {}", r.violations.len()).unwrap();
    for v in &r.violations {
        writeln!(out, "  tile {} margin {:.6e}", v.tile_index, v.margin).unwrap();
    }
    fs::write(cli.out.join("redesign.txt"), &out)?;
    print!("{out}");
    Ok(if r.passed { EXIT_OK } else { EXIT_REDESIGN_VIOLATED })
}

/// Free-form diagnostics. Deterministic: no timestamps or thread counts.
pub fn report(cfg: &RunConfig, design: &BuiltDesign, surface: &BoundSurface, lambda: Option<f64>) -> String {
    let mut out = String::new();
    let grid = surface.grid();
    let kind = match surface.kind {
        SurfaceKind::Upper => "upper",
        SurfaceKind::Lower => "lower (value = 1 - total)",
    };
    writeln!(out, "design: {}", surface.meta.design_id).unwrap();
    writeln!(out, "surface: {kind}").unwrap();
    writeln!(out, "master_seed: {}", surface.meta.master_seed).unwrap();
    writeln!(out, "grid: {}", grid.describe()).unwrap();
    writeln!(out, "tiles: {} total, {} bounded", grid.len(), surface.rows().count()).unwrap();
    writeln!(out, "n_sims per tile: {}", cfg.n_sims).unwrap();
    writeln!(out, "confidence: {} (pointwise)", surface.confidence()).unwrap();
    writeln!(out, "lambda: {}", lambda.unwrap_or(surface.meta.lambda)).unwrap();
    let mut totals: Vec<f64> = surface.rows().map(|(_, b)| b.total).collect();
    if let Some((i, v)) = surface.max_value() {
        let t = grid.tile(i as usize);
        writeln!(out, "max value: {v:.6e} at tile {i} center {:?}", t.center).unwrap();
        totals.sort_by(f64::total_cmp);
        writeln!(out, "median total: {:.6e}", totals[totals.len() / 2]).unwrap();
        let a = slack_attribution(surface);
        writeln!(
            out,
            "slack shares: rate estimate {:.1}%, linear term {:.1}%, second order {:.1}%",
            100.0 * a.rate_margin,
            100.0 * a.linear,
            100.0 * a.quadratic
        )
        .unwrap();
    }
    if let (BuiltDesign::Gaussian(g), SurfaceKind::Upper) = (design, surface.kind) {
        let mut slack = Vec::new();
        for (t, b) in surface.rows() {
            let f = g.exact_type_one_error(&t.center, t.null_signature, lambda.unwrap_or(surface.meta.lambda));
            slack.push(b.total - f);
        }
        if !slack.is_empty() {
            let below = slack.iter().filter(|s| **s < 0.0).count();
            slack.sort_by(f64::total_cmp);
            writeln!(
                out,
                "exact-oracle slack at centres: min {:.6e}, median {:.6e}, max {:.6e}, below truth {below}",
                slack[0],
                slack[slack.len() / 2],
                slack[slack.len() - 1]
            )
            .unwrap();
        }
    }
    out
}
