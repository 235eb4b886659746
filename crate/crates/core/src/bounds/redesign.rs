use super::{BoundSurface, SurfaceKind};
use crate::error::{invalid, Error, Result};

/// A tile where g₂⁺ ≤ g₁⁻ + α − g₀⁺ fails.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub tile_index: u64,
    /// g₁⁻ + α − g₀⁺ − g₂⁺; negative.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RedesignReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
    /// Smallest margin over all compared tiles.
    pub min_margin: f64,
    /// 1 − δ₀ − δ₁ − δ₂.
    pub confidence: f64,
}

fn same_tiling(a: &BoundSurface, b: &BoundSurface) -> bool {
    a.grid.len() == b.grid.len()
        && a.grid.tiles().iter().zip(b.grid.tiles()).all(|(s, t)| {
            s.center == t.center && s.half_widths == t.half_widths && s.null_signature == t.null_signature
        })
}

/// Check that a replacement design with upper surface g₂⁺ fits inside the
/// slack left by the original design: g₂⁺ ≤ g₁⁻ + α − g₀⁺ on every tile.
///
/// g₁⁻ is a lower surface for the conditional error of the original
/// remainder, g₀⁺ an upper surface for the error already spent.
pub fn check_redesign(
    g2_plus: &BoundSurface,
    g1_minus: &BoundSurface,
    g0_plus: &BoundSurface,
    alpha: f64,
) -> Result<RedesignReport> {
    if g2_plus.kind != SurfaceKind::Upper || g0_plus.kind != SurfaceKind::Upper {
        return Err(invalid("g2+ and g0+ must be upper surfaces"));
    }
    if g1_minus.kind != SurfaceKind::Lower {
        return Err(invalid("g1- must be a lower surface"));
    }
    if !same_tiling(g2_plus, g1_minus) || !same_tiling(g2_plus, g0_plus) {
        return Err(Error::Surface("surfaces are defined on different tilings".into()));
    }
    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    for (tile, _) in g2_plus.rows() {
        let i = tile.index as usize;
        let (Some(g2), Some(g1), Some(g0)) = (g2_plus.value(i), g1_minus.value(i), g0_plus.value(i)) else {
            return Err(Error::Surface(format!("tile {i} is missing from one of the surfaces")));
        };
        let margin = (g1 - g2) + (alpha - g0);
        min_margin = min_margin.min(margin);
        if margin < 0.0 {
            violations.push(Violation {
                tile_index: tile.index,
                margin,
            });
        }
    }
    Ok(RedesignReport {
        passed: violations.is_empty(),
        violations,
        min_margin,
        confidence: 1.0 - g0_plus.meta.delta - g1_minus.meta.delta - g2_plus.meta.delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{surface_from_rows, SurfaceMeta, TileBound};
    use crate::domain::{build_grid, Hypothesis, Region};

    fn surface(kind: SurfaceKind, totals: &[f64]) -> BoundSurface {
        let g = build_grid(
            Region::new(vec![-1.0], vec![0.0]).unwrap(),
            &[totals.len()],
            &[Hypothesis::at_most(0, 0.0)],
        )
        .unwrap();
        let rows = totals
            .iter()
            .enumerate()
            .map(|(i, &t)| TileBound {
                tile_index: i as u64,
                n_sims: 1,
                false_rej: 0,
                delta_i: t,
                delta_ii: 0.0,
                delta_iii: 0.0,
                total: t,
            })
            .collect();
        let meta = SurfaceMeta {
            design_id: "fixture".into(),
            master_seed: 0,
            grid: g.describe(),
            delta: 0.01,
            lambda: 0.0,
        };
        surface_from_rows(&g, rows, kind, meta).unwrap()
    }

    #[test]
    fn equality_passes_with_zero_margin() {
        let alpha = 0.025;
        let g2 = surface(SurfaceKind::Upper, &[0.01, 0.02, 0.005]);
        // lower surface value = 1 − total
        let g1 = surface(SurfaceKind::Lower, &[0.99, 0.98, 0.995]);
        let g0 = surface(SurfaceKind::Upper, &[alpha; 3]);
        let r = check_redesign(&g2, &g1, &g0, alpha).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.min_margin.abs() < 1e-15);
        assert!((r.confidence - 0.97).abs() < 1e-15);
    }

    #[test]
    fn constructed_violation_reported() {
        let alpha = 0.025;
        let g2 = surface(SurfaceKind::Upper, &[0.5, 0.5 + 1e-6, 0.5]);
        let g1 = surface(SurfaceKind::Lower, &[0.5, 0.5, 0.5]);
        let g0 = surface(SurfaceKind::Upper, &[alpha; 3]);
        let r = check_redesign(&g2, &g1, &g0, alpha).unwrap();
        assert!(!r.passed);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].tile_index, 1);
        assert!(r.violations[0].margin < 0.0);
    }

    #[test]
    fn mismatched_tilings_refused() {
        let g2 = surface(SurfaceKind::Upper, &[0.1, 0.1]);
        let g1 = surface(SurfaceKind::Lower, &[0.1, 0.1, 0.1]);
        assert!(check_redesign(&g2, &g1, &g2, 0.025).is_err());
        assert!(check_redesign(&g2, &g2, &g2, 0.025).is_err());
    }
}
