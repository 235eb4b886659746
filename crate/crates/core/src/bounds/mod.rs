//! Per-tile confidence bounds and the stitched bound surface.
//!
//! For a tile R_j centred at θ_j with corner offsets v_m:
//!
//! * δ_I is a Clopper–Pearson upper bound on f(θ_j) at tail budget δ/2;
//! * δ_II bounds sup_m v_mᵀ∇f(θ_j) by Cantelli's inequality at budget δ/2,
//!   using the variance bound vᵀ ∇²A_{τmax}(θ_j) v / n;
//! * δ_III bounds the quadratic remainder by ½ sup_m v_mᵀ M v_m, where M
//!   dominates ∇²A_{τmax} over the whole tile.

mod calibrate;
mod redesign;

use nalgebra::{DMatrix, DVector};

use crate::designs::{DesignSpec, TrialDesign};
use crate::domain::{corners, Grid, Tile, DEFAULT_CORNER_CAP};
use crate::engine::TileSummary;
use crate::error::{invalid, Error, Result};
use crate::special::{betainc_inv, normal_quantile};

pub use calibrate::{
    calibrate, calibrate_from_base, default_ladder, AlphaTarget, Calibration, LadderStep,
};
pub use redesign::{check_redesign, RedesignReport, Violation};

/// Upper confidence limit for a binomial proportion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RateBound {
    /// Exact Clopper–Pearson.
    #[default]
    ClopperPearson,
    /// Wald interval. Not exact; only for exploratory runs.
    NormalApprox,
}

/// Exact Clopper–Pearson upper limit: the p at which P(Bin(n, p) ≤ k) equals
/// `conf_tail`, i.e. the (1 − conf_tail) quantile of Beta(k + 1, n − k).
pub fn clopper_pearson_upper(k: u64, n: u64, conf_tail: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(invalid(format!("need 0 <= k <= n and n >= 1, got k={k} n={n}")));
    }
    if !(conf_tail > 0.0 && conf_tail < 1.0) {
        return Err(invalid(format!("conf_tail must be in (0, 1), got {conf_tail}")));
    }
    if k == n {
        return Ok(1.0);
    }
    if k == 0 {
        // closed form, avoids the root finder on the most common case
        return Ok(-(conf_tail.ln() / n as f64).exp_m1());
    }
    betainc_inv(1.0 - conf_tail, (k + 1) as f64, (n - k) as f64)
}

/// Wald upper limit p̂ + z·sqrt(p̂(1 − p̂)/n), clipped to [p̂, 1].
pub fn normal_approx_upper(k: u64, n: u64, conf_tail: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(invalid(format!("need 0 <= k <= n and n >= 1, got k={k} n={n}")));
    }
    let p = k as f64 / n as f64;
    let z = normal_quantile(1.0 - conf_tail);
    Ok((p + z * (p * (1.0 - p) / n as f64).sqrt()).clamp(p, 1.0))
}

pub fn delta_one(summary: &TileSummary, budget: f64, method: RateBound) -> Result<f64> {
    match method {
        RateBound::ClopperPearson => {
            clopper_pearson_upper(summary.false_rej_count, summary.n_sims, budget)
        }
        RateBound::NormalApprox => normal_approx_upper(summary.false_rej_count, summary.n_sims, budget),
    }
}

fn quad(v: &[f64], m: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(v);
    v.dot(&(m * &v))
}

/// Cantelli width sqrt(vᵀHv / n · (1/budget − 1)).
pub fn cantelli_width(v: &[f64], hess: &DMatrix<f64>, n_sims: u64, budget: f64) -> f64 {
    (quad(v, hess).max(0.0) / n_sims as f64 * (1.0 / budget - 1.0)).sqrt()
}

/// Rejects non-symmetric or indefinite matrices.
pub fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Internal("covariance bound is not square".into()));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Internal("covariance bound is not symmetric".into()));
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-12 * scale {
        return Err(Error::Internal(format!(
            "covariance bound is not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

fn block_diag(blocks: impl IntoIterator<Item = DMatrix<f64>>, dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    let mut at = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((at, at), (k, k)).copy_from(&b);
        at += k;
    }
    out
}

/// Σ_k τmax_k ∇²A_k at the tile centre, as a block-diagonal matrix.
pub fn hessian_at_center(spec: &DesignSpec, tile: &Tile) -> Result<DMatrix<f64>> {
    let blocks = spec
        .arm_families
        .iter()
        .zip(spec.arm_slices())
        .zip(&spec.tau_max)
        .map(|((fam, r), &t)| Ok(fam.hess_a(&tile.center[r])? * t as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(block_diag(blocks, spec.param_dim()))
}

/// Σ_k τmax_k · (tile-wise maximum of ∇²A_k), block-diagonal.
pub fn tile_max_hessian(spec: &DesignSpec, tile: &Tile) -> Result<DMatrix<f64>> {
    let (lo, hi) = (tile.lower(), tile.upper());
    let blocks = spec
        .arm_families
        .iter()
        .zip(spec.arm_slices())
        .zip(&spec.tau_max)
        .map(|((fam, r), &t)| Ok(fam.hess_a_tile_max(&lo[r.clone()], &hi[r])? * t as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(block_diag(blocks, spec.param_dim()))
}

/// Linear-term bound max(0, max_m min(Y_m + λ_m, cap_m)) with
/// Y_m = v_mᵀ score_sum / n.
pub fn delta_two(
    summary: &TileSummary,
    tile: &Tile,
    hess_at_center: &DMatrix<f64>,
    budget: f64,
    det_caps: Option<&[f64]>,
    corner_cap: usize,
) -> Result<f64> {
    check_psd(hess_at_center)?;
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(invalid(format!("confidence budget must be in (0, 1], got {budget}")));
    }
    let offsets = corners(tile, corner_cap)?;
    if let Some(caps) = det_caps {
        if caps.len() != offsets.len() {
            return Err(invalid(format!(
                "expected {} deterministic caps, got {}",
                offsets.len(),
                caps.len()
            )));
        }
    }
    let n = summary.n_sims;
    let mean: Vec<f64> = summary.score_sum().iter().map(|s| s / n as f64).collect();
    let mut best = 0.0_f64;
    for (m, v) in offsets.iter().enumerate() {
        let y: f64 = v.iter().zip(&mean).map(|(a, b)| a * b).sum();
        let mut c = y + cantelli_width(v, hess_at_center, n, budget);
        if let Some(caps) = det_caps {
            c = c.min(caps[m]);
        }
        best = best.max(c);
    }
    Ok(best)
}

/// Second-order remainder bound ½ max_m v_mᵀ M v_m.
pub fn delta_three(spec: &DesignSpec, tile: &Tile, corner_cap: usize) -> Result<f64> {
    let m = tile_max_hessian(spec, tile)?;
    check_psd(&m)?;
    Ok(corners(tile, corner_cap)?
        .iter()
        .map(|v| 0.5 * quad(v, &m))
        .fold(0.0, f64::max))
}

/// The three bound components for one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBound {
    pub tile_index: u64,
    pub n_sims: u64,
    pub false_rej: u64,
    pub delta_i: f64,
    pub delta_ii: f64,
    pub delta_iii: f64,
    /// min(1, δ_I + δ_II + δ_III).
    pub total: f64,
}

impl TileBound {
    pub fn new(summary: &TileSummary, delta_i: f64, delta_ii: f64, delta_iii: f64) -> Self {
        Self {
            tile_index: summary.tile_index,
            n_sims: summary.n_sims,
            false_rej: summary.false_rej_count,
            delta_i,
            delta_ii,
            delta_iii,
            total: (delta_i + delta_ii + delta_iii).min(1.0),
        }
    }
}

/// Knobs for bound assembly.
#[derive(Clone, Debug)]
pub struct BoundOptions {
    /// Share of δ spent on δ_I; the rest goes to δ_II.
    pub split: f64,
    pub rate_bound: RateBound,
    pub corner_cap: usize,
    /// Optional deterministic per-corner caps on the linear term.
    pub det_caps: Option<Vec<f64>>,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            split: 0.5,
            rate_bound: RateBound::ClopperPearson,
            corner_cap: DEFAULT_CORNER_CAP,
            det_caps: None,
        }
    }
}

impl BoundOptions {
    fn budgets(&self, delta: f64) -> Result<(f64, f64)> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta must be in (0, 1), got {delta}")));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(invalid(format!("budget split must be in (0, 1), got {}", self.split)));
        }
        Ok((delta * self.split, delta * (1.0 - self.split)))
    }
}

/// Everything about a tile's bound that does not depend on the simulations.
pub(crate) struct TileConstants {
    pub hess_center: DMatrix<f64>,
    pub delta_iii: f64,
}

impl TileConstants {
    pub fn new(spec: &DesignSpec, tile: &Tile, corner_cap: usize) -> Result<Self> {
        Ok(Self {
            hess_center: hessian_at_center(spec, tile)?,
            delta_iii: delta_three(spec, tile, corner_cap)?,
        })
    }

    pub fn bound(&self, summary: &TileSummary, tile: &Tile, delta: f64, opts: &BoundOptions) -> Result<TileBound> {
        let (b1, b2) = opts.budgets(delta)?;
        let d1 = delta_one(summary, b1, opts.rate_bound)?;
        let d2 = delta_two(
            summary,
            tile,
            &self.hess_center,
            b2,
            opts.det_caps.as_deref(),
            opts.corner_cap,
        )?;
        Ok(TileBound::new(summary, d1, d2, self.delta_iii))
    }
}

/// Bound for a single tile.
pub fn tile_bound(
    spec: &DesignSpec,
    tile: &Tile,
    summary: &TileSummary,
    delta: f64,
    opts: &BoundOptions,
) -> Result<TileBound> {
    if summary.tile_index != tile.index {
        return Err(invalid("summary belongs to a different tile"));
    }
    TileConstants::new(spec, tile, opts.corner_cap)?.bound(summary, tile, delta, opts)
}

/// Whether a surface bounds f from above or from below.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceKind {
    Upper,
    /// Stored tile bounds are upper bounds on the complement event; the
    /// surface value is 1 − total.
    Lower,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMeta {
    pub design_id: String,
    pub master_seed: u64,
    pub grid: String,
    pub delta: f64,
    /// λ the design was simulated with.
    pub lambda: f64,
}

/// Result of evaluating a surface at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evaluation {
    Bound(f64),
    /// Every tile containing the point is pure alternative.
    NotApplicable,
    Outside,
}

/// Tile-wise constant bound g(θ) over the region.
#[derive(Clone, Debug)]
pub struct BoundSurface {
    pub kind: SurfaceKind,
    pub meta: SurfaceMeta,
    grid: Grid,
    /// Indexed by tile index; `None` for skipped tiles.
    bounds: Vec<Option<TileBound>>,
}

impl BoundSurface {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bound(&self, tile_index: usize) -> Option<&TileBound> {
        self.bounds.get(tile_index)?.as_ref()
    }

    /// Bounds for every non-skipped tile in index order.
    pub fn rows(&self) -> impl Iterator<Item = (&Tile, &TileBound)> {
        self.grid
            .tiles()
            .iter()
            .zip(&self.bounds)
            .filter_map(|(t, b)| b.as_ref().map(|b| (t, b)))
    }

    pub fn confidence(&self) -> f64 {
        1.0 - self.meta.delta
    }

    /// Surface value on a tile: total for upper surfaces, 1 − total for lower.
    pub fn value(&self, tile_index: usize) -> Option<f64> {
        let b = self.bound(tile_index)?;
        Some(match self.kind {
            SurfaceKind::Upper => b.total,
            SurfaceKind::Lower => (1.0 - b.total).max(0.0),
        })
    }

    /// g(θ): the most conservative value over all tiles containing θ.
    pub fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let containing = self.grid.tiles_containing(theta);
        if containing.is_empty() {
            return Evaluation::Outside;
        }
        let values = containing.iter().filter_map(|&i| self.value(i));
        let best = match self.kind {
            SurfaceKind::Upper => values.fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v)))),
            SurfaceKind::Lower => values.fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v)))),
        };
        best.map_or(Evaluation::NotApplicable, Evaluation::Bound)
    }

    /// Tile index and value of the largest surface value.
    pub fn max_value(&self) -> Option<(u64, f64)> {
        self.rows()
            .map(|(t, _)| (t.index, self.value(t.index as usize).unwrap()))
            .fold(None, |best, (i, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            })
    }
}

fn assemble(
    design: &dyn TrialDesign,
    grid: &Grid,
    summaries: &[TileSummary],
    delta: f64,
    opts: &BoundOptions,
    meta: SurfaceMeta,
    kind: SurfaceKind,
) -> Result<BoundSurface> {
    opts.budgets(delta)?;
    let mut slot: Vec<Option<&TileSummary>> = vec![None; grid.len()];
    for s in summaries {
        let i = s.tile_index as usize;
        if i >= grid.len() {
            return Err(invalid(format!("summary for unknown tile {i}")));
        }
        if grid.tile(i).is_skippable() {
            return Err(invalid(format!("summary given for pure-alternative tile {i}")));
        }
        if slot[i].replace(s).is_some() {
            return Err(invalid(format!("duplicate summary for tile {i}")));
        }
    }
    let spec = design.spec();
    let mut bounds = Vec::with_capacity(grid.len());
    for (tile, s) in grid.tiles().iter().zip(slot) {
        if tile.is_skippable() {
            bounds.push(None);
            continue;
        }
        let s = s.ok_or_else(|| invalid(format!("missing summary for tile {}", tile.index)))?;
        bounds.push(Some(tile_bound(spec, tile, s, delta, opts)?));
    }
    Ok(BoundSurface {
        kind,
        meta,
        grid: grid.clone(),
        bounds,
    })
}

/// Stitch per-tile upper bounds into g⁺ with pointwise confidence 1 − δ.
pub fn assemble_surface(
    design: &dyn TrialDesign,
    grid: &Grid,
    summaries: &[TileSummary],
    delta: f64,
    opts: &BoundOptions,
    meta: SurfaceMeta,
) -> Result<BoundSurface> {
    assemble(design, grid, summaries, delta, opts, meta, SurfaceKind::Upper)
}

/// g⁻ = 1 − (upper bound on the no-false-rejection probability).
///
/// `summaries` must count [`crate::engine::Event::NoFalseRejection`].
pub fn lower_surface(
    design: &dyn TrialDesign,
    grid: &Grid,
    summaries: &[TileSummary],
    delta: f64,
    opts: &BoundOptions,
    meta: SurfaceMeta,
) -> Result<BoundSurface> {
    assemble(design, grid, summaries, delta, opts, meta, SurfaceKind::Lower)
}

/// Rebuild a surface from stored rows (CSV import).
pub fn surface_from_rows(
    grid: &Grid,
    rows: Vec<TileBound>,
    kind: SurfaceKind,
    meta: SurfaceMeta,
) -> Result<BoundSurface> {
    let mut bounds = vec![None; grid.len()];
    for b in rows {
        let i = b.tile_index as usize;
        if i >= grid.len() || grid.tile(i).is_skippable() {
            return Err(Error::Surface(format!("row for tile {i} does not match the grid")));
        }
        bounds[i] = Some(b);
    }
    Ok(BoundSurface {
        kind,
        meta,
        grid: grid.clone(),
        bounds,
    })
}

/// Share of the total bound each component contributes, summed over tiles.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlackAttribution {
    /// δ_I minus the empirical rate: sampling error in estimating f.
    pub rate_margin: f64,
    pub linear: f64,
    pub quadratic: f64,
}

pub fn slack_attribution(surface: &BoundSurface) -> SlackAttribution {
    let mut a = SlackAttribution::default();
    for (_, b) in surface.rows() {
        a.rate_margin += b.delta_i - b.false_rej as f64 / b.n_sims as f64;
        a.linear += b.delta_ii;
        a.quadratic += b.delta_iii;
    }
    let sum = a.rate_margin + a.linear + a.quadratic;
    if sum > 0.0 {
        a.rate_margin /= sum;
        a.linear /= sum;
        a.quadratic /= sum;
    }
    a
}
