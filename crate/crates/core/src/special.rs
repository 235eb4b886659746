//! Special functions: log-gamma, the regularized incomplete beta function and
//! its inverse, and the standard normal CDF and quantile.

#![allow(clippy::excessive_precision)]

use crate::error::{invalid, Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    HALF_LN_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Stirling series remainder lnΓ(x) − [(x − ½)ln x − x + ½ln 2π], valid for x ≥ 10.
fn stirling_correction(x: f64) -> f64 {
    let x2 = x * x;
    (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x
}

/// ln B(a, b). Large arguments use a Stirling form that avoids cancelling
/// three large log-gamma values.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    if a.min(b) >= 10.0 {
        let s = a + b;
        HALF_LN_2PI + (a - 0.5) * (a / s).ln() + b * (b / s).ln() - 0.5 * b.ln()
            + stirling_correction(a)
            + stirling_correction(b)
            - stirling_correction(s)
    } else {
        ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
    }
}

const BETA_CF_MAX_ITER: usize = 20_000;
const TINY: f64 = 1e-300;

/// Regularized incomplete beta function I_x(a, b) for a, b > 0 and x in [0, 1].
pub fn betainc(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("betainc({a}, {b}, {x}) outside domain")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - betainc_cf(b, a, 1.0 - x)?)
    } else {
        betainc_cf(a, b, x)
    }
}

/// Upper tail 1 − I_x(a, b), computed without cancellation when the tail is small.
pub fn betainc_upper(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("betainc({a}, {b}, {x}) outside domain")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x == 1.0 {
        return Ok(0.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        betainc_cf(b, a, 1.0 - x)
    } else {
        Ok(1.0 - betainc_cf(a, b, x)?)
    }
}

/// Continued fraction for I_x(a, b) by the modified Lentz method.
fn betainc_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let ln_prefix = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let prefix = ln_prefix.exp() / a;
    if prefix == 0.0 {
        return Ok(0.0);
    }

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() <= 2.0 * f64::EPSILON {
            return Ok((prefix * h).clamp(0.0, 1.0));
        }
    }
    Err(Error::Convergence("incomplete beta continued fraction"))
}

/// Inverse of x ↦ I_x(a, b): the x in [0, 1] with I_x(a, b) = p.
///
/// Safeguarded Newton iteration inside a shrinking bisection bracket.
pub fn betainc_inv(p: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("betainc_inv({p}, {a}, {b}) outside domain")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let ln_b = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = a / (a + b);
    for _ in 0..1000 {
        let f = betainc(a, b, x)? - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_b;
        let pdf = ln_pdf.exp();
        let mut next = x - f / pdf;
        if !(pdf > 0.0 && next > lo && next < hi && next.is_finite()) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 4.0 * f64::EPSILON * x || hi - lo <= 2.0 * f64::EPSILON * hi {
            return Ok(x);
        }
    }
    Err(Error::Convergence("inverse incomplete beta"))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal upper tail 1 − Φ(x).
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

fn poly(coef: &[f64; 8], r: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * r + c)
}

const Q_A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const Q_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const Q_C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const Q_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const Q_E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const Q_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Standard normal quantile Φ⁻¹(p) (Wichura's AS 241, about 1e-16 relative).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&Q_A, r) / poly(&Q_B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&Q_C, r) / poly(&Q_D, r)
    } else {
        let r = r - 5.0;
        poly(&Q_E, r) / poly(&Q_F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Logistic function e^η / (1 + e^η).
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Log-odds log(p / (1 − p)).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..30 {
            if n > 1 {
                fact *= (n - 1) as f64;
            }
            let got = ln_gamma(n as f64);
            assert!((got - fact.ln()).abs() < 1e-12 * fact.ln().abs().max(1.0), "n={n}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn ln_beta_branches_agree() {
        for &(a, b) in &[(10.0, 10.0), (12.5, 40.0), (250.0, 17.0), (2470.0, 47531.0)] {
            let direct = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
            let stirling = ln_beta(a, b);
            assert!((direct - stirling).abs() < 1e-9 * direct.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn betainc_closed_forms() {
        // I_x(1, 1) = x
        assert!((betainc(1.0, 1.0, 0.3).unwrap() - 0.3).abs() < 1e-15);
        // I_x(n, 1) = x^n
        let v = betainc(101.0, 1.0, 0.6).unwrap();
        assert!((v - 0.6_f64.powi(101)).abs() < 1e-12 * 0.6_f64.powi(101));
        // I_x(1, n) = 1 - (1 - x)^n
        let v = betainc(1.0, 100.0, 0.01).unwrap();
        assert!((v - (1.0 - 0.99_f64.powi(100))).abs() < 1e-12);
    }

    #[test]
    fn betainc_rejects_bad_domain() {
        assert!(betainc(0.0, 1.0, 0.5).is_err());
        assert!(betainc(1.0, 1.0, 1.5).is_err());
        assert!(betainc_inv(1.2, 1.0, 1.0).is_err());
    }

    #[test]
    fn betainc_upper_is_complement() {
        for &(a, b, x) in &[(3.0, 7.0, 0.2), (71.0, 31.0, 0.6), (2.0, 2.0, 0.9)] {
            let lo = betainc(a, b, x).unwrap();
            let up = betainc_upper(a, b, x).unwrap();
            assert!((lo + up - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn betainc_inv_round_trips() {
        for &(p, a, b) in &[(0.995, 1.0, 100.0), (0.5, 3.0, 4.0), (0.995, 26.0, 975.0), (1e-6, 2.0, 5.0)] {
            let x = betainc_inv(p, a, b).unwrap();
            let back = betainc(a, b, x).unwrap();
            assert!((back - p).abs() < 1e-12, "p={p} a={a} b={b} got {back}");
        }
    }

    #[test]
    fn normal_quantile_round_trips() {
        for &p in &[1e-300, 1e-20, 1e-8, 0.001, 0.025, 0.3, 0.5, 0.7, 0.975, 0.999_999] {
            let x = normal_quantile(p);
            let back = normal_cdf(x);
            assert!(((back - p) / p).abs() < 1e-12, "p={p}");
        }
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-15);
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn logistic_and_logit_invert() {
        let eta = logit(0.6);
        assert!((logistic(eta) - 0.6).abs() < 1e-15);
        assert!((logistic(-40.0) - (-40.0_f64).exp() / (1.0 + (-40.0_f64).exp())).abs() < 1e-30);
    }
}
