//! Monte Carlo replication batches and per-tile accumulation.
//!
//! Replication `r` of tile `j` always draws from the substream
//! `(master_seed, j, r)`, so the summaries do not depend on how replications
//! are batched or how many workers run them. Score sums are accumulated in
//! 64.64 fixed point, which makes merging exact and order-independent.

use std::ops::Range;

use rayon::prelude::*;
use smallvec::SmallVec;

use crate::checkpoint::CheckpointWriter;
use crate::designs::{TrialDesign, TrialOutcome};
use crate::domain::{Grid, HypothesisMask, Tile};
use crate::error::{invalid, Error, Result};

pub use crate::stream::SeedPolicy;

/// Default replications per parallel task.
pub const DEFAULT_BATCH_SIZE: u64 = 4096;

const FIXED_SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Exact fixed-point accumulator with 64 fractional bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FixedSum(i128);

impl FixedSum {
    pub fn from_f64(x: f64) -> Self {
        FixedSum((x * FIXED_SCALE).round() as i128)
    }

    pub fn add(&mut self, x: f64) {
        self.0 += (x * FIXED_SCALE).round() as i128;
    }

    pub fn merge(&mut self, other: FixedSum) {
        self.0 += other.0;
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / FIXED_SCALE
    }
}

/// Which per-replication event a summary counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Event {
    /// At least one hypothesis in the tile's null signature was rejected.
    #[default]
    FalseRejection,
    /// The complement: no null hypothesis was rejected.
    NoFalseRejection,
}

impl Event {
    fn occurs(self, rejections: HypothesisMask, null: HypothesisMask) -> bool {
        let false_rejection = rejections.intersects(null);
        match self {
            Event::FalseRejection => false_rejection,
            Event::NoFalseRejection => !false_rejection,
        }
    }
}

/// Replication counts and event-restricted score sums for one tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileSummary {
    pub tile_index: u64,
    pub n_sims: u64,
    /// Replications in which the counted event occurred.
    pub false_rej_count: u64,
    score: Vec<FixedSum>,
}

impl TileSummary {
    pub fn empty(tile_index: u64, dim: usize) -> Self {
        Self {
            tile_index,
            n_sims: 0,
            false_rej_count: 0,
            score: vec![FixedSum::default(); dim],
        }
    }

    /// Rebuild a summary from stored fields (checkpoint resume).
    pub fn from_parts(tile_index: u64, n_sims: u64, false_rej_count: u64, score_sum: &[f64]) -> Self {
        Self {
            tile_index,
            n_sims,
            false_rej_count,
            score: score_sum.iter().map(|&x| FixedSum::from_f64(x)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.score.len()
    }

    /// Σ over counted replications of T(X_τ) − ∇A_τ(θ_j).
    pub fn score_sum(&self) -> Vec<f64> {
        self.score.iter().map(|s| s.to_f64()).collect()
    }

    /// Empirical event rate.
    pub fn rate(&self) -> f64 {
        self.false_rej_count as f64 / self.n_sims as f64
    }

    fn record(&mut self, counted: bool, score: &[f64]) {
        self.n_sims += 1;
        if counted {
            self.false_rej_count += 1;
            for (acc, s) in self.score.iter_mut().zip(score) {
                acc.add(*s);
            }
        }
    }

    /// Fieldwise addition of another summary of the same tile.
    pub fn merge(&mut self, other: &TileSummary) -> Result<()> {
        if other.tile_index != self.tile_index || other.dim() != self.dim() {
            return Err(invalid("merging summaries of different tiles"));
        }
        self.n_sims += other.n_sims;
        self.false_rej_count += other.false_rej_count;
        for (a, b) in self.score.iter_mut().zip(&other.score) {
            a.merge(*b);
        }
        Ok(())
    }
}

/// One replication's outcome at a tile centre.
#[derive(Clone, Debug)]
pub struct Replication {
    pub outcome: TrialOutcome,
    pub false_rejection: bool,
    pub score: SmallVec<[f64; 4]>,
}

/// Per-tile constants reused by every replication.
struct TileContext<'a> {
    design: &'a dyn TrialDesign,
    tile: &'a Tile,
    /// Per-arm ∇A at the tile centre, stacked.
    grad: SmallVec<[f64; 4]>,
    arm_of_coord: SmallVec<[usize; 4]>,
}

impl<'a> TileContext<'a> {
    fn new(design: &'a dyn TrialDesign, tile: &'a Tile) -> Result<Self> {
        let spec = design.spec();
        spec.check_domain(&tile.center)?;
        let ones: SmallVec<[u64; 4]> = smallvec::smallvec![1; spec.n_arms()];
        let grad = spec.stopped_grad_a(&ones, &tile.center)?;
        let mut arm_of_coord = SmallVec::new();
        for (k, r) in spec.arm_slices().into_iter().enumerate() {
            arm_of_coord.extend(r.map(|_| k));
        }
        Ok(Self {
            design,
            tile,
            grad,
            arm_of_coord,
        })
    }

    fn replicate(&self, seeds: &SeedPolicy, rep: u64) -> Result<Replication> {
        let mut stream = seeds.stream(self.tile.index, rep);
        let outcome = self.design.run_trial(&self.tile.center, &mut stream)?;
        let score = outcome
            .suff_stat
            .values()
            .iter()
            .enumerate()
            .map(|(i, t)| t - outcome.arm_counts[self.arm_of_coord[i]] as f64 * self.grad[i])
            .collect();
        let false_rejection = outcome.rejections.intersects(self.tile.null_signature);
        Ok(Replication {
            outcome,
            false_rejection,
            score,
        })
    }

    fn run_range(&self, seeds: &SeedPolicy, reps: Range<u64>, event: Event) -> Result<TileSummary> {
        let mut summary = TileSummary::empty(self.tile.index, self.grad.len());
        for rep in reps {
            let r = self.replicate(seeds, rep)?;
            summary.record(event.occurs(r.outcome.rejections, self.tile.null_signature), &r.score);
        }
        Ok(summary)
    }

    fn run_range_ladder(&self, seeds: &SeedPolicy, reps: Range<u64>, ladder: &[f64]) -> Result<Vec<TileSummary>> {
        let mut out = vec![TileSummary::empty(self.tile.index, self.grad.len()); ladder.len()];
        for rep in reps {
            let r = self.replicate(seeds, rep)?;
            for (summary, &lambda) in out.iter_mut().zip(ladder) {
                let rej = self.design.rejections_at(&r.outcome.evidence, lambda);
                summary.record(rej.intersects(self.tile.null_signature), &r.score);
            }
        }
        Ok(out)
    }
}

/// Simulate replication `rep` of `tile` and report its false-rejection status and score.
pub fn replicate(design: &dyn TrialDesign, tile: &Tile, seeds: &SeedPolicy, rep: u64) -> Result<Replication> {
    TileContext::new(design, tile)?.replicate(seeds, rep)
}

/// Run the replications in `reps` sequentially.
pub fn simulate_range(
    design: &dyn TrialDesign,
    tile: &Tile,
    seeds: &SeedPolicy,
    reps: Range<u64>,
    event: Event,
) -> Result<TileSummary> {
    TileContext::new(design, tile)?.run_range(seeds, reps, event)
}

fn batches(n_sims: u64, batch_size: u64) -> Vec<Range<u64>> {
    let b = batch_size.max(1);
    (0..n_sims.div_ceil(b)).map(|i| i * b..((i + 1) * b).min(n_sims)).collect()
}

/// Simulation knobs.
#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    pub event: Event,
    pub batch_size: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            event: Event::FalseRejection,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

/// Run `n_sims` replications at the centre of `tile`, batched across workers.
pub fn simulate_tile(
    design: &dyn TrialDesign,
    tile: &Tile,
    n_sims: u64,
    seeds: &SeedPolicy,
) -> Result<TileSummary> {
    simulate_tile_with(design, tile, n_sims, seeds, SimOptions::default())
}

pub fn simulate_tile_with(
    design: &dyn TrialDesign,
    tile: &Tile,
    n_sims: u64,
    seeds: &SeedPolicy,
    opts: SimOptions,
) -> Result<TileSummary> {
    if n_sims == 0 {
        return Err(invalid("n_sims must be at least 1"));
    }
    let ctx = TileContext::new(design, tile)?;
    let parts: Vec<TileSummary> = batches(n_sims, opts.batch_size)
        .into_par_iter()
        .map(|r| ctx.run_range(seeds, r, opts.event))
        .collect::<Result<_>>()?;
    let mut total = TileSummary::empty(tile.index, ctx.grad.len());
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}

/// Simulate once and count false rejections under every λ on `ladder`.
///
/// Sampling decisions are shared; only the rejection rule varies.
pub fn simulate_tile_ladder(
    design: &dyn TrialDesign,
    tile: &Tile,
    n_sims: u64,
    seeds: &SeedPolicy,
    ladder: &[f64],
    batch_size: u64,
) -> Result<Vec<TileSummary>> {
    if n_sims == 0 {
        return Err(invalid("n_sims must be at least 1"));
    }
    let ctx = TileContext::new(design, tile)?;
    let parts: Vec<Vec<TileSummary>> = batches(n_sims, batch_size)
        .into_par_iter()
        .map(|r| ctx.run_range_ladder(seeds, r, ladder))
        .collect::<Result<_>>()?;
    let mut total = vec![TileSummary::empty(tile.index, ctx.grad.len()); ladder.len()];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p)?;
        }
    }
    Ok(total)
}

/// Check that the whole region sits inside the design's parameter domain.
pub fn check_grid(design: &dyn TrialDesign, grid: &Grid) -> Result<()> {
    let spec = design.spec();
    if grid.dim() != spec.param_dim() {
        return Err(invalid(format!(
            "grid has dimension {}, design has {}",
            grid.dim(),
            spec.param_dim()
        )));
    }
    if grid.n_hypotheses() > spec.n_hypotheses {
        return Err(invalid("grid carries more hypotheses than the design rejects"));
    }
    spec.check_domain(grid.region().lower())?;
    spec.check_domain(grid.region().upper())?;
    Ok(())
}

/// Simulate every non-skipped tile of `grid`, in tile-index order.
///
/// Tiles already present in `resumed` are not re-simulated; every newly
/// finished tile is appended to `checkpoint` when one is given.
pub fn simulate_grid(
    design: &dyn TrialDesign,
    grid: &Grid,
    n_sims: u64,
    seeds: &SeedPolicy,
    opts: SimOptions,
    checkpoint: Option<&CheckpointWriter>,
    resumed: &[TileSummary],
) -> Result<Vec<TileSummary>> {
    check_grid(design, grid)?;
    let done: std::collections::BTreeMap<u64, &TileSummary> =
        resumed.iter().map(|s| (s.tile_index, s)).collect();
    grid.null_tiles()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|tile| {
            if let Some(s) = done.get(&tile.index) {
                if s.n_sims != n_sims {
                    return Err(Error::Checkpoint(format!(
                        "tile {} was checkpointed with {} sims, config asks for {n_sims}",
                        tile.index, s.n_sims
                    )));
                }
                return Ok((*s).clone());
            }
            let s = simulate_tile_with(design, tile, n_sims, seeds, opts)?;
            if let Some(ck) = checkpoint {
                ck.append(&s)?;
            }
            Ok(s)
        })
        .collect()
}

/// Ladder summaries for every non-skipped tile: `result[tile][λ]`.
pub fn simulate_grid_ladder(
    design: &dyn TrialDesign,
    grid: &Grid,
    n_sims: u64,
    seeds: &SeedPolicy,
    ladder: &[f64],
    batch_size: u64,
) -> Result<Vec<Vec<TileSummary>>> {
    check_grid(design, grid)?;
    grid.null_tiles()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|tile| simulate_tile_ladder(design, tile, n_sims, seeds, ladder, batch_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{score_vector, ParallelGaussianDesign};
    use crate::domain::HypothesisMask;

    fn tile(center: Vec<f64>, sig: HypothesisMask) -> Tile {
        Tile {
            index: 7,
            half_widths: vec![1.0 / 64.0; center.len()],
            center,
            null_signature: sig,
        }
    }

    #[test]
    fn fixed_sum_round_trip() {
        for &x in &[0.0, 1.5, -3.25e-7, 1_234.567_891_234, -0.1] {
            assert!((FixedSum::from_f64(x).to_f64() - x).abs() <= 1.0 / FIXED_SCALE);
        }
        let mut a = FixedSum::default();
        a.add(0.1);
        a.add(0.2);
        assert!((a.to_f64() - 0.3).abs() < 1e-16);
    }

    #[test]
    fn alternative_tile_never_counts() {
        let d = ParallelGaussianDesign::reference();
        let t = tile(vec![0.5, 0.5], HypothesisMask::EMPTY);
        let s = simulate_tile(&d, &t, 2000, &SeedPolicy::new(1)).unwrap();
        assert_eq!(s.false_rej_count, 0);
        assert!(s.score_sum().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn batching_is_exact() {
        let d = ParallelGaussianDesign::reference();
        let t = tile(vec![-0.05, 0.1], HypothesisMask::EMPTY.with(0));
        let seeds = SeedPolicy::new(99);
        let whole = simulate_range(&d, &t, &seeds, 0..3000, Event::FalseRejection).unwrap();
        let mut split = simulate_range(&d, &t, &seeds, 0..17, Event::FalseRejection).unwrap();
        split.merge(&simulate_range(&d, &t, &seeds, 17..2500, Event::FalseRejection).unwrap()).unwrap();
        split.merge(&simulate_range(&d, &t, &seeds, 2500..3000, Event::FalseRejection).unwrap()).unwrap();
        assert_eq!(whole, split);
        let opts = SimOptions { batch_size: 333, ..Default::default() };
        assert_eq!(whole, simulate_tile_with(&d, &t, 3000, &seeds, opts).unwrap());
    }

    #[test]
    fn inline_score_matches_score_vector() {
        let d = ParallelGaussianDesign::reference();
        let t = tile(vec![-0.3, 0.2], HypothesisMask::EMPTY.with(0));
        let seeds = SeedPolicy::new(3);
        for rep in 0..50 {
            let r = replicate(&d, &t, &seeds, rep).unwrap();
            let s = score_vector(d.spec(), &r.outcome, &t.center).unwrap();
            assert_eq!(r.score, s);
        }
    }

    #[test]
    fn complement_counts_add_up() {
        let d = ParallelGaussianDesign::reference();
        let t = tile(vec![0.0, 0.0], HypothesisMask::EMPTY.with(0).with(1));
        let seeds = SeedPolicy::new(5);
        let f = simulate_range(&d, &t, &seeds, 0..4000, Event::FalseRejection).unwrap();
        let c = simulate_range(&d, &t, &seeds, 0..4000, Event::NoFalseRejection).unwrap();
        assert_eq!(f.false_rej_count + c.false_rej_count, 4000);
    }

    #[test]
    fn ladder_matches_tuned_designs() {
        let base = ParallelGaussianDesign::reference();
        let t = tile(vec![-0.1, -0.2], HypothesisMask::EMPTY.with(0).with(1));
        let seeds = SeedPolicy::new(8);
        let ladder = [-0.3, 0.0, 0.25];
        let sums = simulate_tile_ladder(&base, &t, 2000, &seeds, &ladder, 512).unwrap();
        for (lambda, s) in ladder.iter().zip(&sums) {
            let tuned = base.clone().with_tuning(*lambda);
            let direct = simulate_tile(&tuned, &t, 2000, &seeds).unwrap();
            assert_eq!(&direct, s);
        }
    }

    #[test]
    fn zero_sims_rejected() {
        let d = ParallelGaussianDesign::reference();
        let t = tile(vec![0.0, 0.0], HypothesisMask::EMPTY.with(0));
        assert!(simulate_tile(&d, &t, 0, &SeedPolicy::new(0)).is_err());
    }
}
