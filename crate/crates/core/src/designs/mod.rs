//! Adaptive trial designs simulable as stopped exponential-family processes.
//!
//! A design owns an adaptive allocation rule, a stopping rule and a rejection
//! rule. Rejection is expressed through a per-hypothesis evidence statistic so
//! that the λ-tuned family of rejection rules can be re-evaluated on stored
//! outcomes without re-simulating.

mod gaussian;
mod thompson;

use std::ops::Range;

use smallvec::SmallVec;

use crate::domain::{Hypothesis, HypothesisMask, MAX_HYPOTHESES};
use crate::error::{invalid, Error, Result};
use crate::expfam::{CanonicalFamily, SuffStat};
use crate::stream::DrawSource;

pub use gaussian::ParallelGaussianDesign;
pub use thompson::{posterior_tail, thompson_allocate, thompson_reject, ThompsonDesign, TieBreaker};

/// Arms, caps and tuning shared by every design.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignSpec {
    pub arm_families: Vec<CanonicalFamily>,
    pub n_hypotheses: usize,
    /// Hard per-arm cap on the number of observations.
    pub tau_max: Vec<u64>,
    /// Rejection tuning λ; larger λ rejects more.
    pub rejection_tuning: f64,
}

impl DesignSpec {
    pub fn new(
        arm_families: Vec<CanonicalFamily>,
        n_hypotheses: usize,
        tau_max: Vec<u64>,
        rejection_tuning: f64,
    ) -> Result<Self> {
        if arm_families.is_empty() || arm_families.len() != tau_max.len() {
            return Err(invalid("need one tau_max entry per arm"));
        }
        if n_hypotheses == 0 || n_hypotheses > MAX_HYPOTHESES {
            return Err(invalid(format!("n_hypotheses must be in 1..=64, got {n_hypotheses}")));
        }
        if tau_max.contains(&0) {
            return Err(invalid("tau_max entries must be positive"));
        }
        if !rejection_tuning.is_finite() {
            return Err(invalid("rejection tuning must be finite"));
        }
        Ok(Self {
            arm_families,
            n_hypotheses,
            tau_max,
            rejection_tuning,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.arm_families.len()
    }

    /// Total natural-parameter dimension d.
    pub fn param_dim(&self) -> usize {
        self.arm_families.iter().map(|f| f.param_dim()).sum()
    }

    /// Coordinate range of each arm inside the stacked parameter vector.
    pub fn arm_slices(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.arm_families
            .iter()
            .map(|f| {
                let r = start..start + f.param_dim();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn check_domain(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(invalid(format!(
                "design has {} parameters, got {}",
                self.param_dim(),
                theta.len()
            )));
        }
        for (fam, r) in self.arm_families.iter().zip(self.arm_slices()) {
            fam.check_domain(&theta[r])?;
        }
        Ok(())
    }

    /// Stacked ∇A_τ(θ) = Σ_k n_k ∇A_k(θ_k).
    pub fn stopped_grad_a(&self, arm_counts: &[u64], theta: &[f64]) -> Result<SmallVec<[f64; 4]>> {
        let mut out = SmallVec::with_capacity(self.param_dim());
        for ((fam, r), &n) in self.arm_families.iter().zip(self.arm_slices()).zip(arm_counts) {
            let g = fam.grad_a(&theta[r])?;
            out.extend(g.iter().map(|x| n as f64 * x));
        }
        Ok(out)
    }
}

/// One simulated trial run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub rejections: HypothesisMask,
    /// T(X_τ), stacked across arms.
    pub suff_stat: SuffStat,
    /// n_{τ,k}.
    pub arm_counts: SmallVec<[u64; 4]>,
    /// Per-hypothesis statistic the λ-family of rejection rules thresholds.
    pub evidence: SmallVec<[f64; 4]>,
}

/// The contract every simulable design satisfies.
///
/// Allocation and stopping may depend only on previously observed data and
/// allocation randomness drawn from the stream, never on θ directly.
pub trait TrialDesign: Send + Sync {
    fn id(&self) -> &'static str;

    fn spec(&self) -> &DesignSpec;

    /// Simulate one trial at `theta` consuming draws from `stream`.
    fn run_trial(&self, theta: &[f64], stream: &mut dyn DrawSource) -> Result<TrialOutcome>;

    /// Rejections implied by `evidence` under tuning `lambda`.
    ///
    /// Monotone: λ₁ < λ₂ implies the λ₁ rejections are a subset of the λ₂ ones.
    fn rejections_at(&self, evidence: &[f64], lambda: f64) -> HypothesisMask;

    /// The null hypotheses the design is built to test.
    fn default_hypotheses(&self) -> Vec<Hypothesis>;
}

/// Stopped score T(X_τ) − ∇A_τ(θ_j).
pub fn score_vector(
    spec: &DesignSpec,
    outcome: &TrialOutcome,
    theta_j: &[f64],
) -> Result<SmallVec<[f64; 4]>> {
    spec.check_domain(theta_j)?;
    let grad = spec.stopped_grad_a(&outcome.arm_counts, theta_j)?;
    if grad.len() != outcome.suff_stat.len() {
        return Err(Error::Internal("sufficient statistic dimension mismatch".into()));
    }
    Ok(outcome
        .suff_stat
        .values()
        .iter()
        .zip(&grad)
        .map(|(t, g)| t - g)
        .collect())
}

pub(crate) fn finish(
    stream: &dyn DrawSource,
    outcome: TrialOutcome,
) -> Result<TrialOutcome> {
    if stream.exhausted() {
        Err(Error::StreamExhausted)
    } else {
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_slices_and_dims() {
        let spec = DesignSpec::new(
            vec![CanonicalFamily::Bernoulli, CanonicalFamily::GaussianUnknownVariance],
            2,
            vec![5, 5],
            0.0,
        )
        .unwrap();
        assert_eq!(spec.param_dim(), 3);
        assert_eq!(spec.arm_slices(), vec![0..1, 1..3]);
        assert!(spec.check_domain(&[0.0, 0.0, -1.0]).is_ok());
        assert!(spec.check_domain(&[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(DesignSpec::new(vec![CanonicalFamily::Bernoulli], 1, vec![], 0.0).is_err());
        assert!(DesignSpec::new(vec![CanonicalFamily::Bernoulli], 0, vec![1], 0.0).is_err());
        assert!(DesignSpec::new(vec![CanonicalFamily::Bernoulli], 1, vec![0], 0.0).is_err());
    }

    #[test]
    fn score_examples() {
        let g = DesignSpec::new(vec![CanonicalFamily::Gaussian { sigma: 1.0 }], 1, vec![10], 0.0)
            .unwrap();
        let outcome = TrialOutcome {
            rejections: HypothesisMask::EMPTY,
            suff_stat: SuffStat(smallvec::smallvec![3.0]),
            arm_counts: smallvec::smallvec![10],
            evidence: smallvec::smallvec![0.0],
        };
        assert_eq!(score_vector(&g, &outcome, &[0.0]).unwrap().as_slice(), &[3.0]);

        let b = DesignSpec::new(vec![CanonicalFamily::Bernoulli], 1, vec![60], 0.0).unwrap();
        let outcome = TrialOutcome {
            suff_stat: SuffStat(smallvec::smallvec![40.0]),
            arm_counts: smallvec::smallvec![60],
            ..outcome
        };
        assert_eq!(score_vector(&b, &outcome, &[0.0]).unwrap().as_slice(), &[10.0]);
    }
}
