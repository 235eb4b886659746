//! Canonical exponential families.
//!
//! Each family is parametrized by its natural parameter and exposes only what
//! the bound formulas consume: samples, the sufficient statistic T(x), the
//! log-partition A(θ) with its gradient and Hessian, and a tile-wise
//! dominating Hessian. The carrier h(x) never appears: it is free of θ and
//! cancels from every score and curvature term.

use std::ops::AddAssign;

use nalgebra::DMatrix;
use smallvec::SmallVec;

use crate::error::{invalid, Error, Result};
use crate::special::{logistic, normal_quantile};

/// Small per-arm vector (observation, T(x), ∇A). At most two entries per arm.
pub type ArmVec = SmallVec<[f64; 2]>;

/// A per-arm exponential family in canonical form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CanonicalFamily {
    /// Bernoulli with natural parameter η = log(p / (1 − p)); T(x) = x.
    Bernoulli,
    /// Gaussian with known standard deviation, parametrized by its mean μ.
    /// T(x) = x / σ², A(μ) = μ² / (2σ²).
    Gaussian { sigma: f64 },
    /// Gaussian with unknown mean and variance, natural parameter
    /// (η₁, η₂) = (μ/σ², −1/(2σ²)); T(x) = (x, x²).
    GaussianUnknownVariance,
}

impl CanonicalFamily {
    pub fn name(&self) -> &'static str {
        match self {
            CanonicalFamily::Bernoulli => "bernoulli",
            CanonicalFamily::Gaussian { .. } => "gaussian",
            CanonicalFamily::GaussianUnknownVariance => "gaussian-unknown-variance",
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            CanonicalFamily::GaussianUnknownVariance => 2,
            _ => 1,
        }
    }

    /// Dimension of T(x); equal to the natural-parameter dimension.
    pub fn suff_dim(&self) -> usize {
        self.param_dim()
    }

    /// Uniform draws consumed per observation.
    pub fn draws_per_observation(&self) -> usize {
        1
    }

    /// Open natural-parameter domain, one interval per coordinate.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match self {
            CanonicalFamily::GaussianUnknownVariance => {
                vec![(f64::NEG_INFINITY, f64::INFINITY), (f64::NEG_INFINITY, 0.0)]
            }
            _ => vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    pub fn check_domain(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(invalid(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.param_dim(),
                theta.len()
            )));
        }
        if let CanonicalFamily::Gaussian { sigma } = self {
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(invalid(format!("gaussian sigma must be positive, got {sigma}")));
            }
        }
        for (coord, (&value, (lo, hi))) in theta.iter().zip(self.domain()).enumerate() {
            if !(value > lo && value < hi) || value.is_nan() {
                return Err(Error::Domain {
                    family: self.name(),
                    coord,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Check a closed interval box `[lo, hi]` lies inside the open domain.
    pub fn check_interval(&self, lo: &[f64], hi: &[f64]) -> Result<()> {
        self.check_domain(lo)?;
        self.check_domain(hi)?;
        if lo.iter().zip(hi).any(|(a, b)| a > b) {
            return Err(invalid("interval lower bound exceeds upper bound"));
        }
        Ok(())
    }

    /// One observation at `theta`, a pure function of `theta` and `draws`.
    ///
    /// Bernoulli returns 1 iff `draws[0] < p`. The Gaussian families map the
    /// first draw through the normal quantile and apply a location-scale shift.
    pub fn sample(&self, theta: &[f64], draws: &[f64]) -> Result<ArmVec> {
        self.check_domain(theta)?;
        let u = *draws
            .first()
            .ok_or_else(|| invalid("sample needs one uniform draw"))?;
        if !(0.0..1.0).contains(&u) {
            return Err(invalid(format!("uniform draw {u} outside [0, 1)")));
        }
        Ok(match self {
            CanonicalFamily::Bernoulli => {
                let p = logistic(theta[0]);
                smallvec::smallvec![if u < p { 1.0 } else { 0.0 }]
            }
            CanonicalFamily::Gaussian { sigma } => {
                smallvec::smallvec![theta[0] + sigma * normal_quantile(u)]
            }
            CanonicalFamily::GaussianUnknownVariance => {
                let (mu, sd) = unknown_variance_moments(theta);
                smallvec::smallvec![mu + sd * normal_quantile(u)]
            }
        })
    }

    /// T(x) for one observation.
    pub fn suff_stat(&self, x: &[f64]) -> ArmVec {
        match self {
            CanonicalFamily::Bernoulli => smallvec::smallvec![x[0]],
            CanonicalFamily::Gaussian { sigma } => smallvec::smallvec![x[0] / (sigma * sigma)],
            CanonicalFamily::GaussianUnknownVariance => smallvec::smallvec![x[0], x[0] * x[0]],
        }
    }

    /// Per-sample log-partition A(θ).
    pub fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        self.check_domain(theta)?;
        Ok(match self {
            CanonicalFamily::Bernoulli => {
                let eta = theta[0];
                // log(1 + e^η) without overflow
                eta.max(0.0) + (-eta.abs()).exp().ln_1p()
            }
            CanonicalFamily::Gaussian { sigma } => theta[0] * theta[0] / (2.0 * sigma * sigma),
            CanonicalFamily::GaussianUnknownVariance => {
                let (e1, e2) = (theta[0], theta[1]);
                -e1 * e1 / (4.0 * e2) - 0.5 * (-2.0 * e2).ln()
            }
        })
    }

    /// Per-sample ∇A(θ) = E_θ[T(x)].
    pub fn grad_a(&self, theta: &[f64]) -> Result<ArmVec> {
        self.check_domain(theta)?;
        Ok(self.grad_a_unchecked(theta))
    }

    pub(crate) fn grad_a_unchecked(&self, theta: &[f64]) -> ArmVec {
        match self {
            CanonicalFamily::Bernoulli => smallvec::smallvec![logistic(theta[0])],
            CanonicalFamily::Gaussian { sigma } => smallvec::smallvec![theta[0] / (sigma * sigma)],
            CanonicalFamily::GaussianUnknownVariance => {
                let (e1, e2) = (theta[0], theta[1]);
                smallvec::smallvec![
                    -e1 / (2.0 * e2),
                    e1 * e1 / (4.0 * e2 * e2) - 1.0 / (2.0 * e2)
                ]
            }
        }
    }

    /// Per-sample ∇²A(θ) = Cov_θ(T(x)).
    pub fn hess_a(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(theta)?;
        Ok(match self {
            CanonicalFamily::Bernoulli => {
                let p = logistic(theta[0]);
                DMatrix::from_element(1, 1, p * (1.0 - p))
            }
            CanonicalFamily::Gaussian { sigma } => {
                DMatrix::from_element(1, 1, 1.0 / (sigma * sigma))
            }
            CanonicalFamily::GaussianUnknownVariance => {
                let (e1, e2) = (theta[0], theta[1]);
                let h11 = -1.0 / (2.0 * e2);
                let h12 = e1 / (2.0 * e2 * e2);
                let h22 = -e1 * e1 / (2.0 * e2 * e2 * e2) + 1.0 / (2.0 * e2 * e2);
                DMatrix::from_row_slice(2, 2, &[h11, h12, h12, h22])
            }
        })
    }

    /// A matrix M with ∇²A(θ) ≼ M for every θ in the box `[lo, hi]`.
    ///
    /// Bernoulli: p(1 − p) at the η in the box closest to 0 (never above 1/4).
    /// Known-variance Gaussian: the constant 1/σ².
    /// Unknown variance: entry-wise maxima over the box, with the largest
    /// off-diagonal magnitude folded onto the diagonal so that M − ∇²A(θ) is
    /// diagonally dominant.
    pub fn hess_a_tile_max(&self, lo: &[f64], hi: &[f64]) -> Result<DMatrix<f64>> {
        self.check_interval(lo, hi)?;
        Ok(match self {
            CanonicalFamily::Bernoulli => {
                let eta = 0.0_f64.clamp(lo[0], hi[0]);
                let p = logistic(eta);
                DMatrix::from_element(1, 1, (p * (1.0 - p)).min(0.25))
            }
            CanonicalFamily::Gaussian { sigma } => {
                DMatrix::from_element(1, 1, 1.0 / (sigma * sigma))
            }
            CanonicalFamily::GaussianUnknownVariance => {
                // s = −η₂ ∈ [s_min, s_max], s_min > 0
                let s_min = -hi[1];
                let e1_abs = lo[0].abs().max(hi[0].abs());
                let h11 = 1.0 / (2.0 * s_min);
                let h12 = e1_abs / (2.0 * s_min * s_min);
                let h22 = e1_abs * e1_abs / (2.0 * s_min.powi(3)) + 1.0 / (2.0 * s_min * s_min);
                DMatrix::from_row_slice(2, 2, &[h11 + h12, 0.0, 0.0, h22 + h12])
            }
        })
    }
}

fn unknown_variance_moments(theta: &[f64]) -> (f64, f64) {
    let var = -1.0 / (2.0 * theta[1]);
    (theta[0] * var, var.sqrt())
}

/// Running sum of T(x) stacked across arms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuffStat(pub SmallVec<[f64; 4]>);

impl SuffStat {
    pub fn zeros(dim: usize) -> Self {
        Self(smallvec::smallvec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Add one arm's T(x) at the arm's offset.
    pub fn add_at(&mut self, offset: usize, t: &[f64]) {
        for (slot, v) in self.0[offset..offset + t.len()].iter_mut().zip(t) {
            *slot += v;
        }
    }
}

impl AddAssign<&SuffStat> for SuffStat {
    fn add_assign(&mut self, rhs: &SuffStat) {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a += b;
        }
    }
}
