use proptest::prelude::*;
use statrs::distribution::{Beta, Binomial, ContinuousCDF, DiscreteCDF, Normal};
use statrs::function::beta::beta_reg;

use tilebound::bounds::{
    assemble_surface, cantelli_width, clopper_pearson_upper, delta_three, hessian_at_center,
    tile_max_hessian, BoundOptions, SurfaceKind, SurfaceMeta,
};
use tilebound::designs::{
    score_vector, thompson_allocate, ParallelGaussianDesign, ThompsonDesign, TieBreaker,
    TrialDesign,
};
use tilebound::domain::{build_grid, null_mask_at, Region};
use tilebound::engine::{simulate_grid, simulate_range, Event, SeedPolicy, SimOptions, TileSummary};
use tilebound::expfam::CanonicalFamily;
use tilebound::special::{betainc, normal_quantile};
use tilebound::stream::{CounterStream, DrawSource, RecordingSource, SplicedSource};
use tilebound::surface_io::{parse_surface, surface_to_csv};

fn families() -> Vec<CanonicalFamily> {
    vec![
        CanonicalFamily::Bernoulli,
        CanonicalFamily::Gaussian { sigma: 1.0 },
        CanonicalFamily::Gaussian { sigma: 0.3 },
        CanonicalFamily::GaussianUnknownVariance,
    ]
}

fn sample_theta(f: &CanonicalFamily, a: f64, b: f64) -> Vec<f64> {
    match f {
        CanonicalFamily::GaussianUnknownVariance => vec![a, -0.1 - b.abs()],
        _ => vec![a],
    }
}

fn quad(m: &nalgebra::DMatrix<f64>, v: &[f64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(v);
    (v.transpose() * m * &v)[(0, 0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn hessian_is_psd(a in -6.0f64..6.0, b in 0.0f64..4.0, v0 in -1.0f64..1.0, v1 in -1.0f64..1.0) {
        for f in families() {
            let th = sample_theta(&f, a, b);
            let h = f.hess_a(&th).unwrap();
            let v = &[v0, v1][..th.len()];
            prop_assert!(quad(&h, v) >= -1e-12);
        }
    }

    #[test]
    fn tile_max_dominates_pointwise(
        a in -4.0f64..4.0, w in 0.01f64..1.0, t in 0.0f64..1.0, b in 0.2f64..2.0, wb in 0.01f64..0.1,
        tb in 0.0f64..1.0, v0 in -1.0f64..1.0, v1 in -1.0f64..1.0,
    ) {
        for f in families() {
            let (lo, hi, th) = match f {
                CanonicalFamily::GaussianUnknownVariance => {
                    let lo = vec![a, -b - wb];
                    let hi = vec![a + w, -b];
                    let th = vec![a + t * w, -b - tb * wb];
                    (lo, hi, th)
                }
                _ => (vec![a], vec![a + w], vec![a + t * w]),
            };
            let m = f.hess_a_tile_max(&lo, &hi).unwrap();
            let h = f.hess_a(&th).unwrap();
            let v = &[v0, v1][..th.len()];
            prop_assert!(quad(&m, v) + 1e-12 >= quad(&h, v), "{:?} at {:?}", f, th);
        }
    }

    #[test]
    fn grid_covers_region_with_consistent_signatures(
        x in -1.0f64..=1.0, y in -1.0f64..=1.0, sx in 1usize..9, sy in 1usize..9,
    ) {
        let d = ParallelGaussianDesign::reference();
        let hyps = d.default_hypotheses();
        let g = build_grid(Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(), &[sx, sy], &hyps).unwrap();
        let hits = g.tiles_containing(&[x, y]);
        prop_assert!(!hits.is_empty());
        let mask = null_mask_at(&hyps, &[x, y]);
        for i in hits {
            let t = g.tile(i);
            prop_assert!(t.contains(&[x, y]));
            // nulls holding on the whole tile hold at every point of it
            prop_assert!(t.null_signature.is_subset_of(mask));
        }
    }

    #[test]
    fn rejections_monotone_in_lambda(
        e0 in -5.0f64..5.0, e1 in -5.0f64..5.0, l1 in -0.5f64..0.5, dl in 0.0f64..0.5,
        s0 in 0u64..60, f0 in 0u64..60, s1 in 0u64..60, f1 in 0u64..60,
    ) {
        let g = ParallelGaussianDesign::reference();
        let a = g.rejections_at(&[e0, e1], l1);
        let b = g.rejections_at(&[e0, e1], l1 + dl);
        prop_assert!(a.is_subset_of(b));

        let lo = tilebound::designs::thompson_reject(&[s0, s1], &[f0, f1], 0.6, 0.95, l1 / 10.0).unwrap();
        let hi = tilebound::designs::thompson_reject(&[s0, s1], &[f0, f1], 0.6, 0.95, (l1 + dl) / 10.0).unwrap();
        prop_assert!(lo.is_subset_of(hi));
    }

    #[test]
    fn summary_merge_is_order_free(cut in 1u64..199, seed in 0u64..1000) {
        let d = ParallelGaussianDesign::reference();
        let g = build_grid(Region::new(vec![-0.5, -0.5], vec![0.0, 0.0]).unwrap(), &[1, 1], &d.default_hypotheses()).unwrap();
        let tile = g.tile(0);
        let seeds = SeedPolicy::new(seed);
        let whole = simulate_range(&d, tile, &seeds, 0..200, Event::FalseRejection).unwrap();
        let mut left = simulate_range(&d, tile, &seeds, 0..cut, Event::FalseRejection).unwrap();
        let right = simulate_range(&d, tile, &seeds, cut..200, Event::FalseRejection).unwrap();
        let mut swapped = right.clone();
        swapped.merge(&left).unwrap();
        left.merge(&right).unwrap();
        prop_assert_eq!(&left, &whole);
        prop_assert_eq!(&swapped, &whole);
    }

    #[test]
    fn surface_csv_round_trips(vals in proptest::collection::vec((0u64..5000, 0.0f64..0.3, 0.0f64..0.3), 4)) {
        let d = ParallelGaussianDesign::reference();
        let g = build_grid(Region::new(vec![-1.0, -1.0], vec![0.0, 0.0]).unwrap(), &[2, 2], &d.default_hypotheses()).unwrap();
        let sums: Vec<TileSummary> = g
            .null_tiles()
            .zip(&vals)
            .map(|(t, &(k, s0, s1))| TileSummary::from_parts(t.index, 5000, k, &[s0 * 100.0, -s1 * 100.0]))
            .collect();
        let meta = SurfaceMeta { design_id: "parallel-gaussian".into(), master_seed: 1, grid: g.describe(), delta: 0.01, lambda: 0.0 };
        let s = assemble_surface(&d, &g, &sums, 0.01, &BoundOptions::default(), meta).unwrap();
        let rows = parse_surface(surface_to_csv(&s).as_bytes()).unwrap();
        let got: Vec<_> = rows.iter().map(|r| r.bound.clone()).collect();
        let want: Vec<_> = s.rows().map(|(_, b)| b.clone()).collect();
        prop_assert_eq!(got, want);
        for (r, (t, _)) in rows.iter().zip(s.rows()) {
            prop_assert_eq!(&r.center, &t.center);
            prop_assert_eq!(&r.half_widths, &t.half_widths);
            prop_assert_eq!(r.null_sig, t.null_signature);
        }
    }

    #[test]
    fn cantelli_width_scales(n in 10u64..1_000_000, b in 0.001f64..0.5, v0 in -0.1f64..0.1, v1 in -0.1f64..0.1, s in 0.1f64..3.0) {
        let h = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let w = cantelli_width(&[v0, v1], &h, n, b);
        let want = (quad(&h, &[v0, v1]) / n as f64 * (1.0 / b - 1.0)).sqrt();
        prop_assert!((w - want).abs() <= 1e-12 * want.max(1e-300));
        // the width is homogeneous of degree one in v
        let ws = cantelli_width(&[s * v0, s * v1], &h, n, b);
        prop_assert!((ws - s * w).abs() <= 1e-12 * (s * w).max(1e-300));
    }
}

#[test]
fn betainc_matches_statrs() {
    for &(a, b) in &[(0.5, 0.5), (1.0, 3.0), (2.5, 7.0), (30.0, 970.0), (201.0, 9800.0), (1e4, 2.0)] {
        for i in 1..40 {
            let x = i as f64 / 40.0;
            let ours = betainc(a, b, x).unwrap();
            let theirs = beta_reg(a, b, x);
            assert!((ours - theirs).abs() <= 1e-10 + 1e-8 * theirs, "I_{x}({a},{b}) {ours} vs {theirs}");
        }
    }
}

#[test]
fn normal_quantile_matches_statrs() {
    let n = Normal::new(0.0, 1.0).unwrap();
    for &p in &[1e-12, 1e-6, 0.001, 0.025, 0.2, 0.5, 0.77, 0.975, 0.999999] {
        let ours = normal_quantile(p);
        let theirs = n.inverse_cdf(p);
        assert!((ours - theirs).abs() < 1e-8, "p = {p}: {ours} vs {theirs}");
    }
}

/// Clopper–Pearson against both a Beta quantile and a bisection on the binomial CDF.
#[test]
fn clopper_pearson_two_routes() {
    for &(k, n) in &[(0u64, 50u64), (1, 50), (25, 1000), (300, 1000), (999, 1000), (40, 25000)] {
        for &tail in &[0.005, 0.025, 0.1] {
            let ours = clopper_pearson_upper(k, n, tail).unwrap();
            let beta = Beta::new(k as f64 + 1.0, (n - k) as f64).unwrap().inverse_cdf(1.0 - tail);
            assert!((ours - beta).abs() < 1e-7, "k={k} n={n}: {ours} vs beta {beta}");
            // P(Bin(n, p) <= k) = tail at the upper limit
            let (mut lo, mut hi) = (k as f64 / n as f64, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if Binomial::new(mid, n).unwrap().cdf(k) > tail {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((ours - lo).abs() < 1e-7, "k={k} n={n}: {ours} vs bisection {lo}");
        }
    }
    assert_eq!(clopper_pearson_upper(50, 50, 0.01).unwrap(), 1.0);
}

#[test]
fn clopper_pearson_is_conservative() {
    let tail = 0.025;
    for &p in &[0.01, 0.05, 0.2] {
        for &n in &[1000u64, 10_000] {
            let reps = 2000u64;
            let mut misses = 0u64;
            for r in 0..reps {
                let mut s = CounterStream::new(77, n, r);
                let k = (0..n).filter(|_| s.uniform() < p).count() as u64;
                if clopper_pearson_upper(k, n, tail).unwrap() < p {
                    misses += 1;
                }
            }
            let freq = misses as f64 / reps as f64;
            let se = (tail * (1.0 - tail) / reps as f64).sqrt();
            assert!(freq <= tail + 3.0 * se, "p={p} n={n}: miss rate {freq}");
        }
    }
}

#[test]
fn sufficient_statistic_moments_match_derivatives() {
    let m = 1_000_000usize;
    for f in families() {
        let th = sample_theta(&f, 0.4, 0.8);
        let grad = f.grad_a(&th).unwrap();
        let hess = f.hess_a(&th).unwrap();
        let d = grad.len();
        let mut s = CounterStream::new(5, 0, 0);
        let ts: Vec<Vec<f64>> = (0..m)
            .map(|_| f.suff_stat(&f.sample(&th, &[s.uniform()]).unwrap()).to_vec())
            .collect();
        let mean: Vec<f64> = (0..d).map(|i| ts.iter().map(|t| t[i]).sum::<f64>() / m as f64).collect();
        for i in 0..d {
            let var = ts.iter().map(|t| (t[i] - mean[i]).powi(2)).sum::<f64>() / m as f64;
            let se = (var / m as f64).sqrt();
            assert!((mean[i] - grad[i]).abs() < 5.0 * se, "{f:?} mean {i}: {} vs {}", mean[i], grad[i]);
            for j in 0..d {
                // sample covariance and the standard error of its summands
                let prods: Vec<f64> = ts.iter().map(|t| (t[i] - mean[i]) * (t[j] - mean[j])).collect();
                let cov = prods.iter().sum::<f64>() / m as f64;
                let v = prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / m as f64;
                let se = (v / m as f64).sqrt();
                assert!((cov - hess[(i, j)]).abs() < 5.0 * se, "{f:?} cov ({i},{j}): {cov} vs {}", hess[(i, j)]);
            }
        }
    }
}

#[test]
fn thompson_allocation_probabilities() {
    let mut ties = TieBreaker::new();
    let n = 20_000u64;
    let mut first = 0u64;
    for r in 0..n {
        let mut s = CounterStream::new(9, 0, r);
        if thompson_allocate(&[(100.0, 1.0), (1.0, 100.0)], &mut s, &mut ties).unwrap() == 0 {
            first += 1;
        }
    }
    assert!(first as f64 / n as f64 > 0.99);

    // P(Beta(2,1) > U) = 2/3
    let mut first = 0u64;
    for r in 0..n {
        let mut s = CounterStream::new(10, 0, r);
        if thompson_allocate(&[(2.0, 1.0), (1.0, 1.0)], &mut s, &mut ties).unwrap() == 0 {
            first += 1;
        }
    }
    let rate = first as f64 / n as f64;
    let se = (2.0 / 9.0 / n as f64).sqrt();
    assert!((rate - 2.0 / 3.0).abs() < 5.0 * se, "{rate}");
}

#[test]
fn posterior_tail_matches_sampling() {
    let exact = tilebound::designs::posterior_tail(70, 30, 0.6).unwrap();
    let n = 1_000_000u64;
    let mut s = CounterStream::new(3, 0, 0);
    let hits = (0..n).filter(|_| s.beta(71.0, 31.0) > 0.6).count();
    let rate = hits as f64 / n as f64;
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!((rate - exact).abs() < 5.0 * se, "{rate} vs {exact}");
}

/// Allocation only sees past data: replaying the recorded prefix of a trial and
/// then switching to unrelated randomness reproduces the trial exactly.
#[test]
fn thompson_is_non_anticipating() {
    let d = ThompsonDesign::reference();
    for r in 0..20 {
        let th = [0.3, -0.2];
        let mut rec = RecordingSource::new(CounterStream::new(1, 0, r));
        let a = d.run_trial(&th, &mut rec).unwrap();
        let log = rec.log.clone();
        let mut spliced = SplicedSource::new(log, CounterStream::new(999, 0, r));
        let b = d.run_trial(&th, &mut spliced).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn scores_are_centred() {
    let n = 20_000u64;
    let designs: Vec<(Box<dyn TrialDesign>, Vec<f64>)> = vec![
        (Box::new(ParallelGaussianDesign::reference()), vec![-0.1, 0.05]),
        (Box::new(ThompsonDesign::reference()), vec![0.2, 0.5]),
    ];
    for (d, th) in designs {
        let dim = th.len();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in 0..n {
            let mut s = CounterStream::new(21, 0, r);
            let out = d.run_trial(&th, &mut s).unwrap();
            for (i, x) in score_vector(d.spec(), &out, &th).unwrap().iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        for i in 0..dim {
            let mean = sum[i] / n as f64;
            let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(mean.abs() < 5.0 * se, "{} coord {i}: mean {mean}, se {se}", d.id());
        }
    }
}

#[test]
fn gaussian_second_order_term_is_translation_invariant() {
    let d = ParallelGaussianDesign::reference();
    let g = build_grid(Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(), &[16, 16], &d.default_hypotheses()).unwrap();
    let first = delta_three(d.spec(), g.null_tiles().next().unwrap(), 12).unwrap();
    for t in g.null_tiles() {
        assert_eq!(delta_three(d.spec(), t, 12).unwrap(), first);
        assert_eq!(hessian_at_center(d.spec(), t).unwrap(), tile_max_hessian(d.spec(), t).unwrap());
    }
}

#[test]
fn surface_dominates_its_components() {
    let d = ParallelGaussianDesign::reference();
    let g = build_grid(Region::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap(), &[4, 4], &d.default_hypotheses()).unwrap();
    let sums = simulate_grid(&d, &g, 2000, &SeedPolicy::new(2), SimOptions::default(), None, &[]).unwrap();
    let meta = SurfaceMeta { design_id: "parallel-gaussian".into(), master_seed: 2, grid: g.describe(), delta: 0.01, lambda: 0.0 };
    let s = assemble_surface(&d, &g, &sums, 0.01, &BoundOptions::default(), meta).unwrap();
    assert_eq!(s.kind, SurfaceKind::Upper);
    for (_, b) in s.rows() {
        assert!(b.total >= b.delta_i && b.delta_i >= b.false_rej as f64 / b.n_sims as f64);
        assert!(b.delta_ii >= 0.0 && b.delta_iii >= 0.0 && b.total <= 1.0);
        assert!((b.total - (b.delta_i + b.delta_ii + b.delta_iii).min(1.0)).abs() < 1e-15);
    }
}
