//! Null-hypothesis bookkeeping and rectangular tiling of the bounded region.

use std::fmt;

use crate::error::{invalid, Error, Result};

/// Largest number of hypotheses a design may carry (one bit each).
pub const MAX_HYPOTHESES: usize = 64;

/// Default limit on the dimension for corner enumeration (2^12 corners).
pub const DEFAULT_CORNER_CAP: usize = 12;

/// A set of hypotheses, one bit per hypothesis index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct HypothesisMask(pub u64);

impl HypothesisMask {
    pub const EMPTY: HypothesisMask = HypothesisMask(0);

    pub fn with(self, index: usize) -> Self {
        HypothesisMask(self.0 | (1u64 << index))
    }

    pub fn contains(self, index: usize) -> bool {
        self.0 >> index & 1 == 1
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersects(self, other: HypothesisMask) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset_of(self, other: HypothesisMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    /// `'1'`/`'0'` per hypothesis, hypothesis 0 first.
    pub fn to_bit_string(self, n: usize) -> String {
        (0..n).map(|i| if self.contains(i) { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        if s.len() > MAX_HYPOTHESES {
            return Err(invalid("null signature longer than 64 hypotheses"));
        }
        s.chars().enumerate().try_fold(Self::EMPTY, |m, (i, c)| match c {
            '1' => Ok(m.with(i)),
            '0' => Ok(m),
            _ => Err(invalid(format!("bad null signature {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Null set {θ : θ[i] ≤ cutoff}.
    AtMost,
    /// Null set {θ : θ[i] ≥ cutoff}.
    AtLeast,
}

/// An axis-aligned half-space null hypothesis in canonical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hypothesis {
    pub coord_index: usize,
    pub cutoff: f64,
    pub direction: Direction,
}

impl Hypothesis {
    pub fn at_most(coord_index: usize, cutoff: f64) -> Self {
        Self {
            coord_index,
            cutoff,
            direction: Direction::AtMost,
        }
    }

    pub fn at_least(coord_index: usize, cutoff: f64) -> Self {
        Self {
            coord_index,
            cutoff,
            direction: Direction::AtLeast,
        }
    }

    pub fn is_null_at(&self, theta: &[f64]) -> bool {
        let x = theta[self.coord_index];
        match self.direction {
            Direction::AtMost => x <= self.cutoff,
            Direction::AtLeast => x >= self.cutoff,
        }
    }

    /// Null status throughout the closed box `[lo, hi]`.
    fn is_null_on_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        match self.direction {
            Direction::AtMost => hi[self.coord_index] <= self.cutoff,
            Direction::AtLeast => lo[self.coord_index] >= self.cutoff,
        }
    }
}

/// Pointwise null mask of `hypotheses` at `theta`.
pub fn null_mask_at(hypotheses: &[Hypothesis], theta: &[f64]) -> HypothesisMask {
    hypotheses
        .iter()
        .enumerate()
        .filter(|(_, h)| h.is_null_at(theta))
        .fold(HypothesisMask::EMPTY, |m, (i, _)| m.with(i))
}

/// The bounded box Θ₀ = [lower, upper].
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(invalid("region bounds must be non-empty and of equal length"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(invalid(format!("region is empty on coordinate {i}: [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| x >= l && x <= u)
    }
}

/// One hyperrectangle R_j of the tiling, centred at its simulation point θ_j.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub index: u64,
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    /// Hypotheses null throughout the tile.
    pub null_signature: HypothesisMask,
}

impl Tile {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_widths).map(|(c, h)| c - h).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_widths).map(|(c, h)| c + h).collect()
    }

    /// A pure-alternative tile: no hypothesis is null anywhere on it.
    pub fn is_skippable(&self) -> bool {
        self.null_signature.is_empty()
    }

    /// Closed-box membership.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.center.iter().zip(&self.half_widths))
            .all(|(x, (c, h))| *x >= c - h && *x <= c + h)
    }
}

/// Corner offsets v_m = corner − center. Bit i of m selects +h_i.
pub fn corners(tile: &Tile, cap: usize) -> Result<Vec<Vec<f64>>> {
    let d = tile.dim();
    if d > cap {
        return Err(Error::UnsupportedDimension { dim: d, cap });
    }
    Ok((0..1usize << d)
        .map(|m| {
            tile.half_widths
                .iter()
                .enumerate()
                .map(|(i, h)| if m >> i & 1 == 1 { *h } else { -*h })
                .collect()
        })
        .collect())
}

/// A boundary-aligned rectangular tiling of a region.
#[derive(Clone, Debug)]
pub struct Grid {
    region: Region,
    steps: Vec<usize>,
    hypotheses: Vec<Hypothesis>,
    axes: Vec<Vec<f64>>,
    tiles: Vec<Tile>,
}

impl Grid {
    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn n_hypotheses(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    /// Sorted breakpoints per axis, including both region bounds.
    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn tile(&self, index: usize) -> &Tile {
        &self.tiles[index]
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Tiles that carry at least one null hypothesis.
    pub fn null_tiles(&self) -> impl Iterator<Item = &Tile> {
        self.tiles.iter().filter(|t| !t.is_skippable())
    }

    /// Indices of every tile whose closed box contains `theta` (several on shared faces).
    pub fn tiles_containing(&self, theta: &[f64]) -> Vec<usize> {
        if !self.region.contains(theta) {
            return Vec::new();
        }
        let per_axis: Vec<Vec<usize>> = self
            .axes
            .iter()
            .zip(theta)
            .map(|(axis, &x)| {
                let cells = axis.len() - 1;
                // first breakpoint strictly greater than x
                let k = axis.partition_point(|b| *b <= x);
                let mut out = Vec::with_capacity(2);
                if k >= 1 && k - 1 < cells {
                    out.push(k - 1);
                }
                if k >= 2 && axis[k - 1] == x {
                    out.insert(0, k - 2);
                }
                if k == axis.len() {
                    out.push(cells - 1);
                }
                out.dedup();
                out
            })
            .collect();
        let shape: Vec<usize> = self.axes.iter().map(|a| a.len() - 1).collect();
        let mut result = vec![0usize];
        for (axis, cells) in per_axis.iter().enumerate() {
            let n = shape[axis];
            result = result
                .iter()
                .flat_map(|base| cells.iter().map(move |c| base * n + c))
                .collect();
        }
        result
    }

    /// Short human-readable grid description for metadata.
    pub fn describe(&self) -> String {
        format!(
            "lower={:?} upper={:?} steps={:?} cells={:?}",
            self.region.lower,
            self.region.upper,
            self.steps,
            self.axes.iter().map(|a| a.len() - 1).collect::<Vec<_>>()
        )
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Tile `region` into `steps[i]` equal cells per axis, then split any cell a
/// hypothesis cutoff falls strictly inside so every cutoff lies on a face.
///
/// Tiles are indexed row-major with the last coordinate varying fastest.
pub fn build_grid(region: Region, steps: &[usize], hypotheses: &[Hypothesis]) -> Result<Grid> {
    let d = region.dim();
    if steps.len() != d {
        return Err(invalid(format!("need {d} step counts, got {}", steps.len())));
    }
    if let Some(i) = steps.iter().position(|&s| s == 0) {
        return Err(invalid(format!("steps must be positive (coordinate {i})")));
    }
    if hypotheses.len() > MAX_HYPOTHESES {
        return Err(invalid("too many hypotheses"));
    }
    for (p, h) in hypotheses.iter().enumerate() {
        if h.coord_index >= d {
            return Err(invalid(format!("hypothesis {p} targets coordinate {} of {d}", h.coord_index)));
        }
        let (l, u) = (region.lower[h.coord_index], region.upper[h.coord_index]);
        if !(h.cutoff >= l && h.cutoff <= u) {
            return Err(invalid(format!(
                "hypothesis {p} cutoff {} outside region [{l}, {u}]",
                h.cutoff
            )));
        }
    }

    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let (l, u) = (region.lower[i], region.upper[i]);
            let width = u - l;
            let mut lines: Vec<f64> = (0..=steps[i])
                .map(|k| {
                    if k == steps[i] {
                        u
                    } else {
                        l + width * k as f64 / steps[i] as f64
                    }
                })
                .collect();
            for h in hypotheses.iter().filter(|h| h.coord_index == i) {
                let tol = 1e-12 * width;
                match lines.iter().position(|b| (b - h.cutoff).abs() <= tol) {
                    // snap the grid line onto the cutoff so alignment is exact
                    Some(k) => lines[k] = h.cutoff,
                    None => lines.push(h.cutoff),
                }
            }
            lines.sort_by(f64::total_cmp);
            lines.dedup();
            lines
        })
        .collect();

    let shape: Vec<usize> = axes.iter().map(|a| a.len() - 1).collect();
    let total: usize = shape.iter().product();
    let mut tiles = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for flat in 0..total {
        let lo: Vec<f64> = (0..d).map(|i| axes[i][idx[i]]).collect();
        let hi: Vec<f64> = (0..d).map(|i| axes[i][idx[i] + 1]).collect();
        let null_signature = hypotheses
            .iter()
            .enumerate()
            .filter(|(_, h)| h.is_null_on_box(&lo, &hi))
            .fold(HypothesisMask::EMPTY, |m, (p, _)| m.with(p));
        tiles.push(Tile {
            index: flat as u64,
            center: lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            half_widths: lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).collect(),
            null_signature,
        });
        for i in (0..d).rev() {
            idx[i] += 1;
            if idx[i] < shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }

    Ok(Grid {
        region,
        steps: steps.to_vec(),
        hypotheses: hypotheses.to_vec(),
        axes,
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tile() {
        let g = build_grid(Region::new(vec![0.0], vec![1.0]).unwrap(), &[1], &[]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.tile(0).center, vec![0.5]);
        assert_eq!(g.tile(0).half_widths, vec![0.5]);
        assert!(g.tile(0).is_skippable());
    }

    #[test]
    fn cutoff_on_grid_line() {
        let g = build_grid(
            Region::new(vec![-1.0], vec![1.0]).unwrap(),
            &[2],
            &[Hypothesis::at_most(0, 0.0)],
        )
        .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.tile(0).null_signature.to_bit_string(1), "1");
        assert_eq!(g.tile(1).null_signature.to_bit_string(1), "0");
        assert_eq!(g.tile(0).lower(), vec![-1.0]);
        assert_eq!(g.tile(0).upper(), vec![0.0]);
    }

    #[test]
    fn interior_cutoff_splits_a_cell() {
        let g = build_grid(
            Region::new(vec![0.0], vec![1.0]).unwrap(),
            &[4],
            &[Hypothesis::at_least(0, 0.3)],
        )
        .unwrap();
        assert_eq!(g.axes()[0], vec![0.0, 0.25, 0.3, 0.5, 0.75, 1.0]);
        let sigs: String = g.tiles().iter().map(|t| t.null_signature.to_bit_string(1)).collect();
        assert_eq!(sigs, "00111");
    }

    #[test]
    fn thompson_scale_grid() {
        let cut = (0.6_f64 / 0.4).ln();
        let g = build_grid(
            Region::new(vec![-0.5, -0.5], vec![1.5, 1.5]).unwrap(),
            &[128, 128],
            &[Hypothesis::at_most(0, cut), Hypothesis::at_most(1, cut)],
        )
        .unwrap();
        // one interior split per axis
        assert_eq!(g.axes()[0].len() - 1, 129);
        assert_eq!(g.len(), 129 * 129);
        let frac = g.null_tiles().count() as f64 / g.len() as f64;
        assert!(frac > 0.65 && frac < 0.8, "null fraction {frac}");
    }

    #[test]
    fn validation_errors() {
        let r = || Region::new(vec![0.0], vec![1.0]).unwrap();
        assert!(build_grid(r(), &[0], &[]).is_err());
        assert!(build_grid(r(), &[2], &[Hypothesis::at_most(0, 1.5)]).is_err());
        assert!(build_grid(r(), &[2], &[Hypothesis::at_most(1, 0.5)]).is_err());
        assert!(Region::new(vec![1.0], vec![1.0]).is_err());
        assert!(Region::new(vec![], vec![]).is_err());
    }

    #[test]
    fn corner_enumeration() {
        let t = Tile {
            index: 0,
            center: vec![0.0, 0.0],
            half_widths: vec![1.0 / 64.0, 1.0 / 64.0],
            null_signature: HypothesisMask::EMPTY,
        };
        let c = corners(&t, DEFAULT_CORNER_CAP).unwrap();
        assert_eq!(c.len(), 4);
        for v in &c {
            assert!(v.iter().all(|x| x.abs() == 1.0 / 64.0));
        }
        let t1 = Tile {
            center: vec![0.0],
            half_widths: vec![0.3],
            ..t.clone()
        };
        assert_eq!(corners(&t1, DEFAULT_CORNER_CAP).unwrap(), vec![vec![-0.3], vec![0.3]]);
        let big = |d: usize| Tile {
            center: vec![0.0; d],
            half_widths: vec![0.1; d],
            ..t.clone()
        };
        assert_eq!(corners(&big(12), DEFAULT_CORNER_CAP).unwrap().len(), 4096);
        assert!(matches!(
            corners(&big(13), DEFAULT_CORNER_CAP),
            Err(Error::UnsupportedDimension { dim: 13, cap: 12 })
        ));
    }

    #[test]
    fn containment_on_shared_faces() {
        let g = build_grid(Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(), &[2, 2], &[])
            .unwrap();
        let mut at_origin = g.tiles_containing(&[0.0, 0.0]);
        at_origin.sort();
        assert_eq!(at_origin, vec![0, 1, 2, 3]);
        assert_eq!(g.tiles_containing(&[-0.5, 0.5]), vec![1]);
        assert_eq!(g.tiles_containing(&[1.0, 1.0]), vec![3]);
        assert!(g.tiles_containing(&[1.5, 0.0]).is_empty());
    }

    #[test]
    fn mask_bit_strings() {
        let m = HypothesisMask::EMPTY.with(0).with(2);
        assert_eq!(m.to_bit_string(3), "101");
        assert_eq!(HypothesisMask::from_bit_string("101").unwrap(), m);
        assert!(HypothesisMask::from_bit_string("1x").is_err());
    }
}
