//! Chain configuration, seeded random streams, and the kernel abstraction the
//! exchangeable test runs on.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random stream type used throughout. ChaCha output is identical across
/// platforms, so a seed fully determines a run.
pub type ChainRng = ChaCha8Rng;

/// Independent stream `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Deterministic replay contract for a chain run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub seed: u64,
    /// Proposal half-width.
    pub eps: f64,
    /// Total number of transitions, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
}

impl ChainConfig {
    pub fn new(seed: u64, eps: f64, steps: usize, burn_in: usize, thin: usize) -> Result<Self> {
        let cfg = ChainConfig {
            seed,
            eps,
            steps,
            burn_in,
            thin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::InvalidInput(format!(
                "step size must be finite and nonnegative, got {}",
                self.eps
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidInput("thinning must be at least 1".into()));
        }
        if self.burn_in > self.steps {
            return Err(Error::InvalidInput(format!(
                "burn-in {} exceeds step count {}",
                self.burn_in, self.steps
            )));
        }
        Ok(())
    }

    /// Whether the state after transition `step` (1-based) is emitted.
    pub fn emits(&self, step: usize) -> bool {
        step > self.burn_in && (step - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn emitted_count(&self) -> usize {
        (self.steps - self.burn_in) / self.thin
    }
}

/// Why a proposal was not taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    /// Proposal left the chart domain (zero density).
    OutsideDomain,
    /// Proposal within tolerance of the fold where the chart Jacobian blows up.
    NearFold,
    ComplexRoots,
    OutOfBox,
    DegenerateJacobian,
    /// Solved coordinates failed the power-sum residual check.
    Residual,
    /// Valid proposal lost the accept/reject coin flip.
    Metropolis,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::OutsideDomain => "outside-domain",
            RejectionReason::NearFold => "near-fold",
            RejectionReason::ComplexRoots => "complex-roots",
            RejectionReason::OutOfBox => "out-of-box",
            RejectionReason::DegenerateJacobian => "degenerate-jacobian",
            RejectionReason::Residual => "residual",
            RejectionReason::Metropolis => "metropolis",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected(RejectionReason),
}

impl StepOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, StepOutcome::Accepted)
    }
}

/// Running tally of transitions by outcome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTally {
    pub accepted: u64,
    pub rejected: BTreeMap<String, u64>,
}

impl StepTally {
    pub fn record(&mut self, outcome: StepOutcome) {
        match outcome {
            StepOutcome::Accepted => self.accepted += 1,
            StepOutcome::Rejected(r) => *self.rejected.entry(r.to_string()).or_default() += 1,
        }
    }

    pub fn merge(&mut self, other: &StepTally) {
        self.accepted += other.accepted;
        for (k, v) in &other.rejected {
            *self.rejected.entry(k.clone()).or_default() += v;
        }
    }

    pub fn total(&self) -> u64 {
        self.accepted + self.rejected.values().sum::<u64>()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.accepted as f64 / total as f64
        }
    }
}

/// A Markov transition kernel on `State`.
pub trait MarkovKernel: Sync {
    type State: Clone + Send + Sync;

    fn step<R: Rng + ?Sized>(&self, state: &mut Self::State, rng: &mut R) -> Result<StepOutcome>;

    /// The time-reversed kernel. Kernels that do not know their reversal must
    /// leave the default so that the exchangeable test refuses to run on them.
    fn reversed(&self) -> Result<&Self> {
        Err(Error::NotReversible(
            "kernel does not provide its time reversal".into(),
        ))
    }

    /// Runs `steps` transitions in place.
    fn run<R: Rng + ?Sized>(
        &self,
        state: &mut Self::State,
        steps: usize,
        rng: &mut R,
        tally: &mut StepTally,
    ) -> Result<()> {
        for _ in 0..steps {
            tally.record(self.step(state, rng)?);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ChainConfig::new(1, 0.1, 100, 10, 1).is_ok());
        assert!(ChainConfig::new(1, -0.1, 100, 10, 1).is_err());
        assert!(ChainConfig::new(1, 0.1, 100, 10, 0).is_err());
        assert!(ChainConfig::new(1, 0.1, 5, 10, 1).is_err());
    }

    #[test]
    fn emission_schedule() {
        let cfg = ChainConfig::new(0, 0.1, 20, 5, 3).unwrap();
        let emitted: Vec<usize> = (1..=20).filter(|&s| cfg.emits(s)).collect();
        assert_eq!(emitted, vec![8, 11, 14, 17, 20]);
        assert_eq!(cfg.emitted_count(), 5);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream_rng(3, 0).random();
        let b: u64 = stream_rng(3, 1).random();
        let c: u64 = stream_rng(3, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn tally_merges() {
        let mut t = StepTally::default();
        t.record(StepOutcome::Accepted);
        t.record(StepOutcome::Rejected(RejectionReason::OutOfBox));
        let mut u = StepTally::default();
        u.record(StepOutcome::Rejected(RejectionReason::OutOfBox));
        t.merge(&u);
        assert_eq!(t.total(), 3);
        assert_eq!(t.rejected["out-of-box"], 2);
    }
}
