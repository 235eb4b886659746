use rayon::prelude::*;

use super::{BoundOptions, BoundSurface, SurfaceKind, SurfaceMeta, TileBound, TileConstants};
use crate::designs::TrialDesign;
use crate::domain::Grid;
use crate::engine::{simulate_grid_ladder, SeedPolicy, TileSummary, DEFAULT_BATCH_SIZE};
use crate::error::{invalid, Result};

/// Evenly spaced ladder of `n` values from `lo` to `hi` inclusive.
pub fn default_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Target level α(θ) the calibrated surface must stay under.
#[derive(Clone, Debug, PartialEq)]
pub enum AlphaTarget {
    Constant(f64),
    /// One value per tile index of the grid.
    PerTile(Vec<f64>),
}

impl AlphaTarget {
    fn at(&self, tile_index: u64) -> f64 {
        match self {
            AlphaTarget::Constant(a) => *a,
            AlphaTarget::PerTile(v) => v[tile_index as usize],
        }
    }
}

/// Audit line for one ladder value.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderStep {
    pub lambda: f64,
    pub max_total: f64,
    pub argmax_tile: u64,
    /// Every tile satisfies total ≤ α.
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct Calibration {
    /// Largest ladder value whose whole prefix passes, or the first ladder
    /// value when nothing passes.
    pub lambda_prime: f64,
    pub index: usize,
    /// True when not even the smallest ladder value passes.
    pub failed: bool,
    pub surface: BoundSurface,
    pub audit: Vec<LadderStep>,
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() {
        return Err(invalid("calibration ladder is empty"));
    }
    if ladder.iter().any(|l| !l.is_finite()) || ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("calibration ladder must be finite and strictly increasing"));
    }
    Ok(())
}

/// Simulate a frozen base once, then calibrate λ on it.
#[allow(clippy::too_many_arguments)]
pub fn calibrate(
    design: &dyn TrialDesign,
    grid: &Grid,
    n_sims: u64,
    seeds: &SeedPolicy,
    ladder: &[f64],
    alpha: &AlphaTarget,
    delta: f64,
    opts: &BoundOptions,
    meta: SurfaceMeta,
) -> Result<Calibration> {
    check_ladder(ladder)?;
    let base = simulate_grid_ladder(design, grid, n_sims, seeds, ladder, DEFAULT_BATCH_SIZE)?;
    calibrate_from_base(design, grid, &base, ladder, alpha, delta, opts, meta)
}

/// Calibrate on precomputed ladder summaries, `base[k][i]` being non-skipped
/// tile k (in index order) under `ladder[i]`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_from_base(
    design: &dyn TrialDesign,
    grid: &Grid,
    base: &[Vec<TileSummary>],
    ladder: &[f64],
    alpha: &AlphaTarget,
    delta: f64,
    opts: &BoundOptions,
    meta: SurfaceMeta,
) -> Result<Calibration> {
    check_ladder(ladder)?;
    if let AlphaTarget::PerTile(v) = alpha {
        if v.len() != grid.len() {
            return Err(invalid(format!("alpha target has {} values for {} tiles", v.len(), grid.len())));
        }
    }
    let tiles: Vec<_> = grid.null_tiles().collect();
    if base.len() != tiles.len() || base.iter().any(|b| b.len() != ladder.len()) {
        return Err(invalid("frozen base does not match the grid and ladder"));
    }
    let spec = design.spec();
    // per tile, per λ
    let table: Vec<Vec<TileBound>> = tiles
        .par_iter()
        .zip(base)
        .map(|(tile, sums)| {
            let consts = TileConstants::new(spec, tile, opts.corner_cap)?;
            sums.iter().map(|s| consts.bound(s, tile, delta, opts)).collect()
        })
        .collect::<Result<_>>()?;

    let audit: Vec<LadderStep> = ladder
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut step = LadderStep {
                lambda,
                max_total: f64::NEG_INFINITY,
                argmax_tile: 0,
                passed: true,
            };
            for row in &table {
                let b = &row[i];
                if b.total > step.max_total {
                    step.max_total = b.total;
                    step.argmax_tile = b.tile_index;
                }
                if b.total > alpha.at(b.tile_index) {
                    step.passed = false;
                }
            }
            step
        })
        .collect();

    let prefix = audit.iter().take_while(|s| s.passed).count();
    let (index, failed) = if prefix == 0 { (0, true) } else { (prefix - 1, false) };
    let mut bounds = vec![None; grid.len()];
    for row in &table {
        let b = row[index].clone();
        let i = b.tile_index as usize;
        bounds[i] = Some(b);
    }
    let surface = BoundSurface {
        kind: SurfaceKind::Upper,
        meta: SurfaceMeta {
            lambda: ladder[index],
            ..meta
        },
        grid: grid.clone(),
        bounds,
    };
    Ok(Calibration {
        lambda_prime: ladder[index],
        index,
        failed,
        surface,
        audit,
    })
}
