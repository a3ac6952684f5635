//! The sum/product manifold `{x > 0 : Σx = S, Πx = P}` behind exact
//! conditional goodness-of-fit tests for the Gamma family.
//!
//! The half `M⁺ = {x₁ ≥ x₂}` is charted by the last `n − 2` coordinates: with
//! `t = S − Σ free` and `p = Π free`, the first two coordinates are the roots of
//! `z² − t z + P/p`. The area density in the chart is `J_{n−2}f`, computed from
//! the two non-trivial rows of the derivative through a 2x2 determinant. The
//! conditional law of an iid Gamma sample given `(S, P)` has area density
//! `1 / J₂T̄` with `T̄ = (Σx, Σ log x)`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::digamma;

use crate::chain::{
    stream_rng, ChainConfig, MarkovKernel, RejectionReason, StepOutcome, StepTally,
};
use crate::error::{Error, Result};
use crate::geometry::{
    det_identity_reduce, metropolis_step, DerivativeMatrix, JacobianValue, Orientation,
};
use crate::validation::{besag_serial_test, TestReport};

/// Discriminants at or below `FOLD_TOL · t²` are treated as lying on the fold
/// `x₁ = x₂`, where the chart Jacobian diverges.
pub const FOLD_TOL: f64 = 1e-12;

/// `n` positive values with fixed sum `S` and product `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaConstraint {
    n: usize,
    sum: f64,
    product: f64,
}

impl GammaConstraint {
    pub fn new(n: usize, sum: f64, product: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidInput(format!("need n >= 3, got {n}")));
        }
        if !(sum.is_finite() && sum > 0.0 && product.is_finite() && product > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sum and product must be positive, got S={sum}, P={product}"
            )));
        }
        let geometric = product.powf(1.0 / n as f64);
        let arithmetic = sum / n as f64;
        if geometric > arithmetic * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "P^(1/n) = {geometric} exceeds S/n = {arithmetic}; the manifold is empty"
            )));
        }
        Ok(GammaConstraint { n, sum, product })
    }

    /// Constraint matched by a data vector.
    pub fn from_data(data: &[f64]) -> Result<Self> {
        if data.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("data must be strictly positive".into()));
        }
        let product = data.iter().map(|x| x.ln()).sum::<f64>().exp();
        Self::new(data.len(), data.iter().sum(), product)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn product(&self) -> f64 {
        self.product
    }

    /// True when the manifold collapses to the single point `(S/n, …, S/n)`.
    pub fn is_single_point(&self) -> bool {
        let geometric = self.product.powf(1.0 / self.n as f64);
        geometric >= (self.sum / self.n as f64) * (1.0 - 1e-12)
    }
}

/// A point of the chart domain with its lift onto `M⁺`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub free_coords: Vec<f64>,
    pub lifted: Vec<f64>,
    pub t: f64,
    pub p: f64,
    pub discriminant: f64,
}

impl ChartPoint {
    pub fn near_fold(&self) -> bool {
        self.discriminant <= FOLD_TOL * self.t * self.t
    }
}

/// Lifts `(x₃, …, xₙ)` to `(x₁, x₂, x₃, …, xₙ)` on `M⁺`.
pub fn lift_to_manifold(free_coords: &[f64], c: &GammaConstraint) -> Result<ChartPoint> {
    if free_coords.len() != c.n - 2 {
        return Err(Error::InvalidInput(format!(
            "expected {} free coordinates, got {}",
            c.n - 2,
            free_coords.len()
        )));
    }
    if let Some(x) = free_coords.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::OutOfDomain(format!(
            "free coordinate {x} is not positive"
        )));
    }
    let t = c.sum - free_coords.iter().sum::<f64>();
    if !(t > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "free coordinates sum past S (t = {t})"
        )));
    }
    let p: f64 = free_coords.iter().product();
    let pair_product = c.product / p;
    let discriminant = t * t - 4.0 * pair_product;
    if !(discriminant >= 0.0) {
        return Err(Error::OutOfDomain(format!(
            "negative discriminant {discriminant}"
        )));
    }
    let x1 = 0.5 * (t + discriminant.sqrt());
    // x₂ through the root product avoids cancellation when x₂ ≪ x₁
    let x2 = pair_product / x1;
    let mut lifted = Vec::with_capacity(c.n);
    lifted.push(x1);
    lifted.push(x2);
    lifted.extend_from_slice(free_coords);
    Ok(ChartPoint {
        free_coords: free_coords.to_vec(),
        lifted,
        t,
        p,
        discriminant,
    })
}

/// Partials of `x₁` and `x₂` with respect to the free coordinates.
fn solved_rows(point: &ChartPoint, c: &GammaConstraint) -> Result<(Vec<f64>, Vec<f64>)> {
    if point.near_fold() {
        return Err(Error::Degenerate(format!(
            "discriminant {} is on the fold x1 = x2",
            point.discriminant
        )));
    }
    let root = point.discriminant.sqrt();
    let (v, w) = point
        .free_coords
        .iter()
        .map(|&xj| {
            let common = (-point.t + 2.0 * c.product / (point.p * xj)) / (2.0 * root);
            (-0.5 + common, -0.5 - common)
        })
        .unzip();
    Ok((v, w))
}

/// Full `n x (n−2)` derivative of the chart.
pub fn chart_derivative(point: &ChartPoint, c: &GammaConstraint) -> Result<DerivativeMatrix> {
    let (v, w) = solved_rows(point, c)?;
    let m = c.n - 2;
    let mut entries = Vec::with_capacity(c.n * m);
    entries.extend_from_slice(&v);
    entries.extend_from_slice(&w);
    for i in 0..m {
        entries.extend((0..m).map(|j| if i == j { 1.0 } else { 0.0 }));
    }
    DerivativeMatrix::new(c.n, m, entries, Orientation::ParamsAsColumns)
}

/// Area density `J_{n−2}f` of the chart at `point`.
pub fn chart_jacobian(point: &ChartPoint, c: &GammaConstraint) -> Result<JacobianValue> {
    let (v, w) = solved_rows(point, c)?;
    let squared = det_identity_reduce(&v, &w)?;
    Ok(JacobianValue::from_squared(squared, 1.0))
}

/// `J₂T̄` for `T̄ = (Σx, Σ log x)`: `sqrt(Σ_{i<j} (1/xᵢ − 1/xⱼ)²)`.
pub fn jacobian_sufficient_gamma(x: &[f64]) -> Result<JacobianValue> {
    if let Some(v) = x.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "coordinate {v} is not positive"
        )));
    }
    let inv: Vec<f64> = x.iter().map(|v| 1.0 / v).collect();
    let mut squared = 0.0;
    for i in 0..inv.len() {
        for j in i + 1..inv.len() {
            let d = inv[i] - inv[j];
            squared += d * d;
        }
    }
    let scale = inv.len() as f64 * inv.iter().map(|a| a * a).sum::<f64>();
    Ok(JacobianValue::from_squared(squared, scale))
}

/// `log J_{n−2}f − log J₂T̄` at the lift of `point`: the chart density of the
/// conditional law given `(S, P)`, up to a constant.
pub fn gamma_conditional_logdensity(point: &ChartPoint, c: &GammaConstraint) -> Result<f64> {
    let chart = chart_jacobian(point, c)?;
    let sufficient = jacobian_sufficient_gamma(&point.lifted)?;
    if sufficient.degenerate {
        return Err(Error::Degenerate(
            "sufficient-statistic Jacobian vanishes near the diagonal".into(),
        ));
    }
    Ok(chart.ln() - sufficient.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaTarget {
    /// Normalized area measure on the manifold.
    #[default]
    Area,
    /// Conditional law of an iid Gamma sample given its sum and product.
    Conditional,
}

impl GammaTarget {
    fn log_density(&self, point: &ChartPoint, c: &GammaConstraint) -> Result<f64> {
        match self {
            GammaTarget::Area => Ok(chart_jacobian(point, c)?.ln()),
            GammaTarget::Conditional => gamma_conditional_logdensity(point, c),
        }
    }
}

/// Chain state: a chart point and its cached log target.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaState {
    pub point: ChartPoint,
    pub log_density: f64,
}

/// Random-walk Metropolis on the chart with uniform cube proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaKernel {
    pub constraint: GammaConstraint,
    pub target: GammaTarget,
    pub eps: f64,
    /// Probability of a coordinate-permutation move in place of a walk step.
    pub permute_prob: f64,
}

impl GammaKernel {
    pub fn new(constraint: GammaConstraint, target: GammaTarget, eps: f64) -> Self {
        GammaKernel {
            constraint,
            target,
            eps,
            permute_prob: 0.0,
        }
    }

    pub fn with_permutation_moves(mut self, prob: f64) -> Self {
        self.permute_prob = prob.clamp(0.0, 1.0);
        self
    }

    /// Evaluates the target at free coordinates, classifying zero-density points.
    fn evaluate(&self, free: &[f64]) -> std::result::Result<GammaState, RejectionReason> {
        let point =
            lift_to_manifold(free, &self.constraint).map_err(|_| RejectionReason::OutsideDomain)?;
        if point.near_fold() {
            return Err(RejectionReason::NearFold);
        }
        match self.target.log_density(&point, &self.constraint) {
            Ok(log_density) if log_density.is_finite() => Ok(GammaState { point, log_density }),
            _ => Err(RejectionReason::DegenerateJacobian),
        }
    }

    pub fn state_at(&self, free: &[f64]) -> Result<GammaState> {
        self.evaluate(free).map_err(|reason| {
            Error::InvalidInput(format!("start point has zero target density ({reason})"))
        })
    }

    fn permutation_move<R: Rng + ?Sized>(
        &self,
        state: &mut GammaState,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let mut x = state.point.lifted.clone();
        x.shuffle(rng);
        if x[0] < x[1] {
            x.swap(0, 1);
        }
        // Both targets are permutation invariant on the manifold, so the move is
        // always accepted once the re-charted point is valid.
        match self.evaluate(&x[2..]) {
            Ok(next) => {
                *state = next;
                Ok(StepOutcome::Accepted)
            }
            Err(reason) => Ok(StepOutcome::Rejected(reason)),
        }
    }
}

impl MarkovKernel for GammaKernel {
    type State = GammaState;

    fn step<R: Rng + ?Sized>(&self, state: &mut GammaState, rng: &mut R) -> Result<StepOutcome> {
        if self.permute_prob > 0.0 && rng.random::<f64>() < self.permute_prob {
            return self.permutation_move(state, rng);
        }
        let proposal: Vec<f64> = state
            .point
            .free_coords
            .iter()
            .map(|&x| x + self.eps * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let evaluated = self.evaluate(&proposal);
        let proposal_log = evaluated
            .as_ref()
            .map(|s| s.log_density)
            .unwrap_or(f64::NEG_INFINITY);
        let accept = metropolis_step(state.log_density, proposal_log, rng)?;
        match evaluated {
            Err(reason) => Ok(StepOutcome::Rejected(reason)),
            Ok(next) if accept => {
                *state = next;
                Ok(StepOutcome::Accepted)
            }
            Ok(_) => Ok(StepOutcome::Rejected(RejectionReason::Metropolis)),
        }
    }

    fn reversed(&self) -> Result<&Self> {
        Ok(self)
    }
}

/// Swaps `x₁, x₂` with probability 1/2, then permutes all coordinates uniformly.
pub fn randomize_symmetry<R: Rng + ?Sized>(point: &ChartPoint, rng: &mut R) -> Vec<f64> {
    let mut x = point.lifted.clone();
    if rng.random::<bool>() {
        x.swap(0, 1);
    }
    x.shuffle(rng);
    x
}

/// Default start: every free coordinate at `S/n`. By the AM–GM inequality the
/// discriminant there is `4 (S/n)² (1 − P/(S/n)ⁿ) ≥ 0`, zero only when the
/// manifold is a single point.
pub fn default_start(c: &GammaConstraint) -> Vec<f64> {
    vec![c.sum / c.n as f64; c.n - 2]
}

/// Default proposal half-width, `0.05 · S/n`.
pub fn default_eps(c: &GammaConstraint) -> f64 {
    0.05 * c.sum / c.n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaDraw {
    pub point: ChartPoint,
    /// Coordinates as emitted: symmetrized over `M` when requested, else the lift on `M⁺`.
    pub coords: Vec<f64>,
    pub log_density: f64,
    /// Whether the transition that produced this state was accepted.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaRun {
    pub draws: Vec<GammaDraw>,
    pub tally: StepTally,
    /// Set when the manifold is a single point and no chain was run.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GammaChainOptions {
    /// Apply [`randomize_symmetry`] at emission (from a stream independent of the chain).
    pub symmetrize: bool,
    pub permute_prob: f64,
    /// Starting free coordinates; [`default_start`] when absent.
    pub start: Option<Vec<f64>>,
}

/// Runs the chart chain and collects the post-burn-in, thinned states.
pub fn gamma_metropolis_chain(
    c: &GammaConstraint,
    cfg: &ChainConfig,
    target: GammaTarget,
    options: &GammaChainOptions,
) -> Result<GammaRun> {
    cfg.validate()?;
    if c.is_single_point() && options.start.is_none() {
        let x = vec![c.sum / c.n as f64; c.n];
        let point = ChartPoint {
            free_coords: x[2..].to_vec(),
            lifted: x.clone(),
            t: 2.0 * x[0],
            p: x[2..].iter().product(),
            discriminant: 0.0,
        };
        return Ok(GammaRun {
            draws: vec![GammaDraw {
                point,
                coords: x,
                log_density: f64::INFINITY,
                accepted: false,
            }],
            tally: StepTally::default(),
            warning: Some(
                "P^(1/n) = S/n: the manifold is the single point (S/n, ..., S/n); no chain was run"
                    .into(),
            ),
        });
    }
    let kernel = GammaKernel::new(*c, target, cfg.eps).with_permutation_moves(options.permute_prob);
    let start = options.start.clone().unwrap_or_else(|| default_start(c));
    let mut state = match kernel.evaluate(&start) {
        Ok(s) => s,
        Err(RejectionReason::OutsideDomain) => {
            return Err(Error::Infeasible(
                "start point lies outside the chart domain".into(),
            ))
        }
        Err(reason) => {
            return Err(Error::InvalidInput(format!(
                "degenerate start point ({reason})"
            )))
        }
    };

    let mut rng = stream_rng(cfg.seed, 0);
    let mut sym_rng = stream_rng(cfg.seed, 1);
    let mut tally = StepTally::default();
    let mut draws = Vec::with_capacity(cfg.emitted_count());
    for step in 1..=cfg.steps {
        let outcome = kernel.step(&mut state, &mut rng)?;
        tally.record(outcome);
        if cfg.emits(step) {
            let coords = if options.symmetrize {
                randomize_symmetry(&state.point, &mut sym_rng)
            } else {
                state.point.lifted.clone()
            };
            draws.push(GammaDraw {
                point: state.point.clone(),
                coords,
                log_density: state.log_density,
                accepted: outcome.accepted(),
            });
        }
    }
    Ok(GammaRun {
        draws,
        tally,
        warning: None,
    })
}

/// Maximum-likelihood Gamma fit `(shape, scale)`. Depends on the data only
/// through its sum and product.
pub fn fit_gamma_mle(data: &[f64]) -> Result<(f64, f64)> {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let mean_log = data.iter().map(|x| x.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if !(s > 0.0) {
        return Err(Error::Degenerate("all observations are equal".into()));
    }
    // ln a − ψ(a) decreases from +∞ to 0; bisect on ln a.
    let (mut lo, mut hi) = (-30.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let a = mid.exp();
        if a.ln() - digamma(a) > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shape = (0.5 * (lo + hi)).exp();
    Ok((shape, mean / shape))
}

/// Anderson–Darling `A²` of `x` against a fixed Gamma distribution.
pub fn anderson_darling_gamma(x: &[f64], shape: f64, scale: f64) -> f64 {
    let dist = Gamma::new(shape, 1.0 / scale).expect("positive Gamma parameters");
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let tiny = f64::MIN_POSITIVE;
    let sum: f64 = (0..n)
        .map(|i| {
            let lower = dist.cdf(sorted[i]).max(tiny).ln();
            let upper = dist.sf(sorted[n - 1 - i]).max(tiny).ln();
            (2 * i + 1) as f64 * (lower + upper)
        })
        .sum();
    -nf - sum / nf
}

/// Test statistic for the Gamma goodness-of-fit test; large values reject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaStatistic {
    /// Anderson–Darling distance to the maximum-likelihood Gamma fit.
    #[default]
    AndersonDarling,
    SumOfSquares,
}

/// Conditional goodness-of-fit test of the Gamma family given `(S, P)`.
///
/// Runs the conditional chain from the data, discards `cfg.burn_in` steps, then
/// records `replicates` states `cfg.thin` steps apart. `cfg.steps` is ignored.
pub fn gamma_gof_test(
    data: &[f64],
    cfg: &ChainConfig,
    replicates: usize,
    statistic: GammaStatistic,
) -> Result<TestReport> {
    if data.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 observations, got {}",
            data.len()
        )));
    }
    if replicates == 0 {
        return Err(Error::InvalidInput(
            "at least one replicate is required".into(),
        ));
    }
    if !(cfg.eps.is_finite() && cfg.eps >= 0.0) || cfg.thin == 0 {
        return Err(Error::InvalidInput("invalid chain configuration".into()));
    }
    let c = GammaConstraint::from_data(data)?;
    if data.iter().all(|&x| x == data[0]) || c.is_single_point() {
        return Err(Error::Degenerate("all observations are equal".into()));
    }

    let eval: Box<dyn Fn(&[f64]) -> f64> = match statistic {
        GammaStatistic::AndersonDarling => {
            let (shape, scale) = fit_gamma_mle(data)?;
            Box::new(move |x| anderson_darling_gamma(x, shape, scale))
        }
        GammaStatistic::SumOfSquares => Box::new(|x| x.iter().map(|v| v * v).sum()),
    };

    let (free, _) = chart_data(data);
    let kernel = GammaKernel::new(c, GammaTarget::Conditional, cfg.eps);
    let mut state = kernel.state_at(&free)?;

    let mut rng = stream_rng(cfg.seed, 0);
    let mut sym_rng = stream_rng(cfg.seed, 1);
    let mut tally = StepTally::default();
    kernel.run(&mut state, cfg.burn_in, &mut rng, &mut tally)?;
    let mut values = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        kernel.run(&mut state, cfg.thin, &mut rng, &mut tally)?;
        values.push(eval(&randomize_symmetry(&state.point, &mut sym_rng)));
    }
    TestReport::from_ranking(
        eval(data),
        values,
        cfg.seed,
        cfg.thin,
        &tally,
        &mut stream_rng(cfg.seed, 2),
    )
}

/// Exact-validity variant of [`gamma_gof_test`]: the exchangeable serial test
/// with `steps` transitions forward and `replicates` reversed runs of the same
/// length. Both built-in statistics are permutation invariant, so replicates
/// are evaluated on the lift directly.
pub fn gamma_besag_test(
    data: &[f64],
    eps: f64,
    steps: usize,
    replicates: usize,
    statistic: GammaStatistic,
    seed: u64,
) -> Result<TestReport> {
    if data.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 observations, got {}",
            data.len()
        )));
    }
    let c = GammaConstraint::from_data(data)?;
    if c.is_single_point() {
        return Err(Error::Degenerate("all observations are equal".into()));
    }
    let eval: Box<dyn Fn(&[f64]) -> f64 + Sync> = match statistic {
        GammaStatistic::AndersonDarling => {
            let (shape, scale) = fit_gamma_mle(data)?;
            Box::new(move |x| anderson_darling_gamma(x, shape, scale))
        }
        GammaStatistic::SumOfSquares => Box::new(|x| x.iter().map(|v| v * v).sum()),
    };
    let (free, _) = chart_data(data);
    let kernel = GammaKernel::new(c, GammaTarget::Conditional, eps);
    let start = kernel.state_at(&free)?;
    besag_serial_test(
        &kernel,
        &start,
        steps,
        replicates,
        |s: &GammaState| eval(&s.point.lifted),
        seed,
    )
}

/// Free coordinates charting `data` with its largest and smallest values as
/// the solved pair, and that pair.
fn chart_data(data: &[f64]) -> (Vec<f64>, (f64, f64)) {
    let imax = (0..data.len())
        .max_by(|&i, &j| data[i].total_cmp(&data[j]))
        .unwrap();
    let imin = (0..data.len())
        .filter(|&i| i != imax)
        .min_by(|&i, &j| data[i].total_cmp(&data[j]))
        .unwrap();
    let free = (0..data.len())
        .filter(|&i| i != imax && i != imin)
        .map(|i| data[i])
        .collect();
    (free, (data[imax], data[imin]))
}
