//! Goodness-of-fit utilities and the exchangeable serial test.
//!
//! The serial test runs a reversible chain `T` steps from the observed state to a
//! midpoint `y*`, then `B` independent `T`-step runs of the reversed chain from
//! `y*`. Under the null the observed state and the `B` replicates are
//! exchangeable, so the rank of the observed statistic is uniform and
//! `rank / (B + 1)` is an exact p-value, whether or not the chain is ergodic.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::chain::{stream_rng, MarkovKernel, StepOutcome, StepTally};
use crate::error::{Error, Result};

/// One-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // small-λ form of the Jacobi theta identity converges fast here
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (c * m * m).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-300 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// `sup |F̂ − F|` with its asymptotic p-value (Stephens' small-sample scaling).
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "KS test needs at least one sample".into(),
        ));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("NaN sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * statistic;
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_survival(lambda),
    })
}

/// Pearson chi-square result with `bins − 1` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    /// Bins whose expected count is below 5; the asymptotic p-value is shaky when nonzero.
    pub low_expected_bins: usize,
}

/// Chi-square test of observed counts against cell probabilities.
pub fn chi_square_counts(observed: &[u64], probabilities: &[f64]) -> Result<ChiSquareResult> {
    if observed.len() != probabilities.len() {
        return Err(Error::InvalidInput(format!(
            "{} counts but {} probabilities",
            observed.len(),
            probabilities.len()
        )));
    }
    if observed.len() < 2 {
        return Err(Error::InvalidInput("need at least two bins".into()));
    }
    if probabilities.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput(
            "bin probabilities must be positive".into(),
        ));
    }
    let total_p: f64 = probabilities.iter().sum();
    if (total_p - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "bin probabilities sum to {total_p}"
        )));
    }
    let n: u64 = observed.iter().sum();
    let n = n as f64;
    let mut statistic = 0.0;
    let mut low_expected_bins = 0;
    for (&o, &p) in observed.iter().zip(probabilities) {
        let e = n * p;
        if e < 5.0 {
            low_expected_bins += 1;
        }
        statistic += (o as f64 - e).powi(2) / e;
    }
    let dof = observed.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquareResult {
        statistic,
        p_value: dist.sf(statistic),
        dof,
        low_expected_bins,
    })
}

/// Bins `samples` on `edges` (half-open cells, last cell closed) and runs
/// [`chi_square_counts`].
pub fn chi_square_gof(
    samples: &[f64],
    edges: &[f64],
    probabilities: &[f64],
) -> Result<ChiSquareResult> {
    if edges.len() != probabilities.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} edges for {} bins",
            edges.len(),
            probabilities.len()
        )));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("bin edges must increase".into()));
    }
    let bins = probabilities.len();
    let mut counts = vec![0u64; bins];
    let (lo, hi) = (edges[0], edges[bins]);
    for &x in samples {
        if !(lo..=hi).contains(&x) {
            return Err(Error::InvalidInput(format!(
                "sample {x} outside [{lo}, {hi}]"
            )));
        }
        let idx = edges
            .partition_point(|&e| e <= x)
            .saturating_sub(1)
            .min(bins - 1);
        counts[idx] += 1;
    }
    chi_square_counts(&counts, probabilities)
}

/// Rank of `observed` among all `B + 1` values counted from the top, with ties
/// broken uniformly at random. Returns a value in `1..=B+1`.
pub fn upper_tail_rank<R: Rng + ?Sized>(observed: f64, replicates: &[f64], rng: &mut R) -> usize {
    let above = replicates.iter().filter(|&&s| s > observed).count();
    let tied = replicates.iter().filter(|&&s| s == observed).count();
    above + 1 + rng.random_range(0..=tied)
}

pub const TIE_POLICY: &str = "uniform-random";

/// Outcome of a rank-based Monte Carlo test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic_observed: f64,
    pub statistic_replicates: Vec<f64>,
    pub rank: usize,
    pub p_value: f64,
    pub tie_policy: String,
    pub tail: String,
    pub seed: u64,
    /// Steps per chain segment.
    pub steps: usize,
    pub replicates: usize,
    pub accepted: u64,
    pub rejection_counts: BTreeMap<String, u64>,
}

impl TestReport {
    /// Assembles a report from an observed statistic and its replicates.
    pub fn from_ranking<R: Rng + ?Sized>(
        statistic_observed: f64,
        statistic_replicates: Vec<f64>,
        seed: u64,
        steps: usize,
        tally: &StepTally,
        rng: &mut R,
    ) -> Result<Self> {
        let b = statistic_replicates.len();
        if b == 0 {
            return Err(Error::InvalidInput(
                "at least one replicate is required".into(),
            ));
        }
        if statistic_observed.is_nan() || statistic_replicates.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidInput("statistic evaluated to NaN".into()));
        }
        let rank = upper_tail_rank(statistic_observed, &statistic_replicates, rng);
        Ok(TestReport {
            statistic_observed,
            statistic_replicates,
            rank,
            p_value: rank as f64 / (b + 1) as f64,
            tie_policy: TIE_POLICY.to_string(),
            tail: "upper".to_string(),
            seed,
            steps,
            replicates: b,
            accepted: tally.accepted,
            rejection_counts: tally.rejected.clone(),
        })
    }
}

/// Exchangeable serial test.
///
/// Stream `0` of `seed` drives the forward run, stream `i` drives replicate `i`,
/// and stream `B + 1` breaks ties. Replicates run in parallel; the result does not
/// depend on the thread count.
pub fn besag_serial_test<K, S>(
    kernel: &K,
    observed: &K::State,
    steps: usize,
    replicates: usize,
    statistic: S,
    seed: u64,
) -> Result<TestReport>
where
    K: MarkovKernel,
    S: Fn(&K::State) -> f64 + Sync,
{
    if replicates == 0 {
        return Err(Error::InvalidInput(
            "at least one replicate is required".into(),
        ));
    }
    let reversed = kernel.reversed()?;

    let mut tally = StepTally::default();
    let mut midpoint = observed.clone();
    kernel.run(&mut midpoint, steps, &mut stream_rng(seed, 0), &mut tally)?;

    let runs: Vec<(f64, StepTally)> = (1..=replicates as u64)
        .into_par_iter()
        .map(|i| {
            let mut state = midpoint.clone();
            let mut local = StepTally::default();
            reversed.run(&mut state, steps, &mut stream_rng(seed, i), &mut local)?;
            Ok((statistic(&state), local))
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::with_capacity(replicates);
    for (s, t) in runs {
        values.push(s);
        tally.merge(&t);
    }
    let mut tie_rng = stream_rng(seed, replicates as u64 + 1);
    TestReport::from_ranking(
        statistic(observed),
        values,
        seed,
        steps,
        &tally,
        &mut tie_rng,
    )
}

/// Kernel that ignores its state and draws afresh from a fixed law given by its
/// quantile function. Trivially reversible; used to check calibration.
#[derive(Debug, Clone, Copy)]
pub struct IidKernel<F> {
    pub quantile: F,
}

impl<F: Fn(f64) -> f64 + Sync> MarkovKernel for IidKernel<F> {
    type State = f64;

    fn step<R: Rng + ?Sized>(&self, state: &mut f64, rng: &mut R) -> Result<StepOutcome> {
        *state = (self.quantile)(rng.random());
        Ok(StepOutcome::Accepted)
    }

    fn reversed(&self) -> Result<&Self> {
        Ok(self)
    }
}

/// Empirical total-variation distance between a histogram of `samples` on
/// `edges` and reference bin masses.
pub fn histogram_tv(samples: &[f64], edges: &[f64], masses: &[f64]) -> Result<f64> {
    if edges.len() != masses.len() + 1 {
        return Err(Error::InvalidInput("edges and masses disagree".into()));
    }
    let bins = masses.len();
    let mut counts = vec![0usize; bins];
    let mut outside = 0usize;
    for &x in samples {
        if x < edges[0] || x > edges[bins] {
            outside += 1;
            continue;
        }
        let idx = edges
            .partition_point(|&e| e <= x)
            .saturating_sub(1)
            .min(bins - 1);
        counts[idx] += 1;
    }
    let n = samples.len() as f64;
    let inside: f64 = counts
        .iter()
        .zip(masses)
        .map(|(&c, &m)| (c as f64 / n - m).abs())
        .sum();
    Ok(0.5 * (inside + outside as f64 / n))
}
