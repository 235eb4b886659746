use smallvec::SmallVec;

use super::{finish, DesignSpec, TrialDesign, TrialOutcome};
use crate::domain::{Hypothesis, HypothesisMask};
use crate::error::{invalid, Result};
use crate::expfam::{CanonicalFamily, SuffStat};
use crate::special::{normal_cdf, normal_quantile};
use crate::stream::DrawSource;

/// Independent one-sided z-tests run in parallel, one per arm.
///
/// Arm k enrolls `n_per_arm` Gaussian patients with known σ and rejects
/// H_k: μ_k ≤ μ₀ when (ȳ_k − μ₀)/(σ/√n) > z_{1−α} − λ.
///
/// The arm total is drawn directly as nμ + σ√n·Z from one standard normal,
/// which has exactly the law of a sum of n independent observations.
#[derive(Clone, Debug)]
pub struct ParallelGaussianDesign {
    spec: DesignSpec,
    n_per_arm: u64,
    sigma: f64,
    mu0: f64,
    alpha: f64,
    z_crit: f64,
}

impl ParallelGaussianDesign {
    pub fn new(n_arms: usize, n_per_arm: u64, sigma: f64, mu0: f64, alpha: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {sigma}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must be in (0, 1), got {alpha}")));
        }
        if n_per_arm == 0 {
            return Err(invalid("n_per_arm must be positive"));
        }
        if !mu0.is_finite() {
            return Err(invalid("mu0 must be finite"));
        }
        let spec = DesignSpec::new(
            vec![CanonicalFamily::Gaussian { sigma }; n_arms],
            n_arms,
            vec![n_per_arm; n_arms],
            0.0,
        )?;
        Ok(Self {
            spec,
            n_per_arm,
            sigma,
            mu0,
            alpha,
            z_crit: normal_quantile(1.0 - alpha),
        })
    }

    /// The two-arm n = 10, σ = 1, μ₀ = 0, α = 0.025 configuration.
    pub fn reference() -> Self {
        Self::new(2, 10, 1.0, 0.0, 0.025).expect("reference parameters are valid")
    }

    pub fn with_tuning(mut self, lambda: f64) -> Self {
        self.spec.rejection_tuning = lambda;
        self
    }

    pub fn n_per_arm(&self) -> u64 {
        self.n_per_arm
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn z_crit(&self) -> f64 {
        self.z_crit
    }

    /// Exact single-arm rejection probability f₁(μ) at tuning λ.
    pub fn arm_rejection_probability(&self, mu: f64, lambda: f64) -> f64 {
        let shift = (mu - self.mu0) * (self.n_per_arm as f64).sqrt() / self.sigma;
        normal_cdf(-(self.z_crit - lambda) + shift)
    }

    /// Exact Type I Error at θ counting only hypotheses in `null`:
    /// 1 − Π_{k ∈ null} (1 − f₁(θ_k)).
    pub fn exact_type_one_error(&self, theta: &[f64], null: HypothesisMask, lambda: f64) -> f64 {
        let keep: f64 = theta
            .iter()
            .enumerate()
            .filter(|(k, _)| null.contains(*k))
            .map(|(_, &mu)| {
                let shift = (mu - self.mu0) * (self.n_per_arm as f64).sqrt() / self.sigma;
                // 1 − f₁ computed directly to keep small error rates precise
                normal_cdf((self.z_crit - lambda) - shift)
            })
            .product();
        1.0 - keep
    }
}

impl TrialDesign for ParallelGaussianDesign {
    fn id(&self) -> &'static str {
        "parallel-gaussian"
    }

    fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    fn run_trial(&self, theta: &[f64], stream: &mut dyn DrawSource) -> Result<TrialOutcome> {
        self.spec.check_domain(theta)?;
        let n = self.n_per_arm as f64;
        let root_n = n.sqrt();
        let var = self.sigma * self.sigma;
        let mut suff = SuffStat::zeros(theta.len());
        let mut evidence: SmallVec<[f64; 4]> = SmallVec::with_capacity(theta.len());
        for (k, &mu) in theta.iter().enumerate() {
            let z = stream.std_normal();
            let total = n * mu + self.sigma * root_n * z;
            suff.0[k] = total / var;
            evidence.push((total / n - self.mu0) / (self.sigma / root_n));
        }
        let rejections = self.rejections_at(&evidence, self.spec.rejection_tuning);
        finish(
            stream,
            TrialOutcome {
                rejections,
                suff_stat: suff,
                arm_counts: smallvec::smallvec![self.n_per_arm; theta.len()],
                evidence,
            },
        )
    }

    fn rejections_at(&self, evidence: &[f64], lambda: f64) -> HypothesisMask {
        let cut = self.z_crit - lambda;
        evidence
            .iter()
            .enumerate()
            .filter(|(_, z)| **z > cut)
            .fold(HypothesisMask::EMPTY, |m, (k, _)| m.with(k))
    }

    fn default_hypotheses(&self) -> Vec<Hypothesis> {
        (0..self.spec.n_arms())
            .map(|k| Hypothesis::at_most(k, self.mu0))
            .collect()
    }
}
