use smallvec::SmallVec;

use super::{finish, DesignSpec, TrialDesign, TrialOutcome};
use crate::domain::{Hypothesis, HypothesisMask};
use crate::error::{invalid, Result};
use crate::expfam::{CanonicalFamily, SuffStat};
use crate::special::{betainc_upper, logistic, logit};
use crate::stream::DrawSource;

/// Alternation counter for exact ties between posterior draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TieBreaker {
    count: u64,
}

impl TieBreaker {
    pub fn new() -> Self {
        Self::default()
    }

    fn pick(&mut self, tied: &[usize]) -> usize {
        let arm = tied[(self.count % tied.len() as u64) as usize];
        self.count += 1;
        arm
    }
}

/// One Thompson-sampling allocation: draw once from each arm's Beta(a, b)
/// posterior and return the arm with the largest draw.
pub fn thompson_allocate(
    posteriors: &[(f64, f64)],
    stream: &mut dyn DrawSource,
    ties: &mut TieBreaker,
) -> Result<usize> {
    if posteriors.is_empty() {
        return Err(invalid("thompson_allocate needs at least one arm"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut tied: SmallVec<[usize; 4]> = SmallVec::new();
    for (k, &(a, b)) in posteriors.iter().enumerate() {
        if !(a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite()) {
            return Err(invalid(format!("invalid Beta({a}, {b}) posterior for arm {k}")));
        }
        let draw = stream.beta(a, b);
        if draw > best {
            best = draw;
            tied.clear();
            tied.push(k);
        } else if draw == best {
            tied.push(k);
        }
    }
    Ok(if tied.len() == 1 { tied[0] } else { ties.pick(&tied) })
}

/// Posterior tail mass P(p > p0) under a uniform prior after `s` successes
/// and `f` failures: 1 − I_{p0}(1 + s, 1 + f).
pub fn posterior_tail(successes: u64, failures: u64, p0: f64) -> Result<f64> {
    betainc_upper(1.0 + successes as f64, 1.0 + failures as f64, p0)
}

/// Reject hypothesis i iff its posterior tail mass reaches `threshold − λ`.
pub fn thompson_reject(
    successes: &[u64],
    failures: &[u64],
    p0: f64,
    threshold: f64,
    lambda: f64,
) -> Result<HypothesisMask> {
    if successes.len() != failures.len() {
        return Err(invalid("successes and failures differ in length"));
    }
    if !(p0 > 0.0 && p0 < 1.0) || !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid("p0 and threshold must lie in (0, 1)"));
    }
    let mut mask = HypothesisMask::EMPTY;
    for (i, (&s, &f)) in successes.iter().zip(failures).enumerate() {
        if posterior_tail(s, f, p0)? >= threshold - lambda {
            mask = mask.with(i);
        }
    }
    Ok(mask)
}

/// Bernoulli arms allocated by Thompson sampling over a fixed total enrollment.
///
/// Parameters are log-odds η_k. Priors are uniform on the success
/// probability; at the end, arm k's hypothesis p_k ≤ p₀ is rejected when its
/// posterior probability of exceeding p₀ is at least `threshold − λ`.
#[derive(Clone, Debug)]
pub struct ThompsonDesign {
    spec: DesignSpec,
    n_patients: u64,
    p0: f64,
    threshold: f64,
    /// Posterior tail masses indexed by (s, f) with s + f ≤ n_patients.
    tails: Vec<f64>,
}

impl ThompsonDesign {
    pub fn new(n_arms: usize, n_patients: u64, p0: f64, threshold: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(invalid(format!("p0 must be in (0, 1), got {p0}")));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid(format!("threshold must be in (0, 1), got {threshold}")));
        }
        if n_patients == 0 || n_patients > 100_000 {
            return Err(invalid("n_patients must be in 1..=100000"));
        }
        let spec = DesignSpec::new(
            vec![CanonicalFamily::Bernoulli; n_arms],
            n_arms,
            vec![n_patients; n_arms],
            0.0,
        )?;
        let n = n_patients as usize;
        let mut tails = Vec::with_capacity((n + 1) * (n + 2) / 2);
        for s in 0..=n {
            for f in 0..=(n - s) {
                tails.push(posterior_tail(s as u64, f as u64, p0)?);
            }
        }
        Ok(Self {
            spec,
            n_patients,
            p0,
            threshold,
            tails,
        })
    }

    /// Two arms, 100 patients, p₀ = 0.6, threshold 0.95.
    pub fn reference() -> Self {
        Self::new(2, 100, 0.6, 0.95).expect("reference parameters are valid")
    }

    pub fn with_tuning(mut self, lambda: f64) -> Self {
        self.spec.rejection_tuning = lambda;
        self
    }

    pub fn n_patients(&self) -> u64 {
        self.n_patients
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// The null boundary in log-odds, log(p₀ / (1 − p₀)).
    pub fn cutoff_eta(&self) -> f64 {
        logit(self.p0)
    }

    fn tail(&self, s: u64, f: u64) -> f64 {
        let (s, f, n) = (s as usize, f as usize, self.n_patients as usize);
        // row s starts after Σ_{r<s} (n + 1 − r) entries
        let row = s * (n + 1) - s * (s.saturating_sub(1)) / 2;
        self.tails[row + f]
    }
}

impl TrialDesign for ThompsonDesign {
    fn id(&self) -> &'static str {
        "thompson"
    }

    fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    fn run_trial(&self, theta: &[f64], stream: &mut dyn DrawSource) -> Result<TrialOutcome> {
        self.spec.check_domain(theta)?;
        let k = theta.len();
        let probs: SmallVec<[f64; 4]> = theta.iter().map(|&eta| logistic(eta)).collect();
        let mut succ: SmallVec<[u64; 4]> = smallvec::smallvec![0; k];
        let mut fail: SmallVec<[u64; 4]> = smallvec::smallvec![0; k];
        let mut posteriors: SmallVec<[(f64, f64); 4]> = smallvec::smallvec![(1.0, 1.0); k];
        let mut ties = TieBreaker::new();
        for _ in 0..self.n_patients {
            let arm = thompson_allocate(&posteriors, stream, &mut ties)?;
            // same threshold rule as CanonicalFamily::Bernoulli::sample
            if stream.uniform() < probs[arm] {
                succ[arm] += 1;
                posteriors[arm].0 += 1.0;
            } else {
                fail[arm] += 1;
                posteriors[arm].1 += 1.0;
            }
        }
        let evidence: SmallVec<[f64; 4]> =
            succ.iter().zip(&fail).map(|(&s, &f)| self.tail(s, f)).collect();
        let rejections = self.rejections_at(&evidence, self.spec.rejection_tuning);
        finish(
            stream,
            TrialOutcome {
                rejections,
                suff_stat: SuffStat(succ.iter().map(|&s| s as f64).collect()),
                arm_counts: succ.iter().zip(&fail).map(|(s, f)| s + f).collect(),
                evidence,
            },
        )
    }

    fn rejections_at(&self, evidence: &[f64], lambda: f64) -> HypothesisMask {
        let cut = self.threshold - lambda;
        evidence
            .iter()
            .enumerate()
            .filter(|(_, t)| **t >= cut)
            .fold(HypothesisMask::EMPTY, |m, (k, _)| m.with(k))
    }

    fn default_hypotheses(&self) -> Vec<Hypothesis> {
        let cut = self.cutoff_eta();
        (0..self.spec.n_arms()).map(|k| Hypothesis::at_most(k, cut)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::CounterStream;

    /// Forces posterior draws: gamma values cycle through `pattern`.
    struct ForcedGammas {
        pattern: Vec<f64>,
        pos: usize,
    }

    impl DrawSource for ForcedGammas {
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn gamma(&mut self, _shape: f64) -> f64 {
            let g = self.pattern[self.pos % self.pattern.len()];
            self.pos += 1;
            g
        }
    }

    #[test]
    fn tie_breaks_alternate() {
        let mut s = ForcedGammas { pattern: vec![1.0], pos: 0 };
        let mut ties = TieBreaker::new();
        let post = [(1.0, 1.0), (1.0, 1.0)];
        let picks: Vec<usize> =
            (0..4).map(|_| thompson_allocate(&post, &mut s, &mut ties).unwrap()).collect();
        assert_eq!(picks, vec![0, 1, 0, 1]);
    }

    #[test]
    fn forced_draws_send_everyone_to_arm_one() {
        let d = ThompsonDesign::reference();
        // arm 0 draws 2/(2+1), arm 1 draws 1/(1+2)
        let mut s = ForcedGammas { pattern: vec![2.0, 1.0, 1.0, 2.0], pos: 0 };
        let out = d.run_trial(&[0.0, 0.0], &mut s).unwrap();
        assert_eq!(out.arm_counts.as_slice(), &[100, 0]);
    }

    #[test]
    fn invalid_posterior_rejected() {
        let mut s = CounterStream::new(0, 0, 0);
        let mut ties = TieBreaker::new();
        assert!(thompson_allocate(&[(0.5, 1.0)], &mut s, &mut ties).is_err());
        assert!(thompson_allocate(&[], &mut s, &mut ties).is_err());
    }

    #[test]
    fn rejection_examples() {
        let none = thompson_reject(&[0], &[0], 0.6, 0.95, 0.0).unwrap();
        assert!(none.is_empty());
        assert!((posterior_tail(0, 0, 0.6).unwrap() - 0.4).abs() < 1e-15);
        let all = thompson_reject(&[100], &[0], 0.6, 0.95, 0.0).unwrap();
        assert!(all.contains(0));
        let tail = posterior_tail(100, 0, 0.6).unwrap();
        assert!((tail - (1.0 - 0.6_f64.powi(101))).abs() < 1e-15);
    }

    #[test]
    fn tail_table_matches_direct() {
        let d = ThompsonDesign::new(2, 12, 0.6, 0.95).unwrap();
        for s in 0..=12u64 {
            for f in 0..=(12 - s) {
                assert_eq!(d.tail(s, f), posterior_tail(s, f, 0.6).unwrap(), "s={s} f={f}");
            }
        }
    }

    #[test]
    fn counts_conserved() {
        let d = ThompsonDesign::reference();
        for rep in 0..200 {
            let mut s = CounterStream::new(11, 0, rep);
            let out = d.run_trial(&[0.3, -0.2], &mut s).unwrap();
            assert_eq!(out.arm_counts.iter().sum::<u64>(), 100);
            assert!(out.suff_stat.values().iter().zip(&out.arm_counts).all(|(s, n)| *s <= *n as f64));
        }
    }
}
