//! The moment manifold `{x ∈ [0,1]ⁿ : Σ xⱼⁱ = pᵢ, i = 1..4}` and the
//! Metropolis-within-Gibbs chain used to calibrate the Neyman smooth test.
//!
//! A move picks five coordinates, perturbs one of them, and re-solves the other
//! four from the local power sums: they are the roots of a quartic whose
//! coefficients come from Newton's identities.

use nalgebra::{Complex, DMatrix, Matrix4, Schur};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{MarkovKernel, RejectionReason, StepOutcome};
use crate::dd::DoubleDouble;
use crate::error::{Error, Result};
use crate::geometry::{metropolis_step, psd_determinant, JacobianValue};
use crate::validation::{besag_serial_test, TestReport};

/// Coordinates touched by one curve move.
pub const CURVE_ARITY: usize = 5;
/// Steps between full recomputations of the cached power sums.
pub const REFRESH_INTERVAL: usize = 10_000;
/// Tolerance on local power sums after a move.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Attempts at finding a non-degenerate 5-subset before giving up.
pub const DEGENERATE_RETRY_CAP: usize = 100;
const CLUSTER_TOL: f64 = 1e-9;

/// Power sums `p_0..=p_max` in double-double, `p_0` being the count.
pub(crate) fn power_sums_dd(x: &[f64], max: usize) -> Vec<DoubleDouble> {
    let mut sums = vec![DoubleDouble::ZERO; max + 1];
    for &v in x {
        let mut pow = DoubleDouble::ONE;
        for s in sums.iter_mut() {
            *s = *s + pow;
            pow = pow * DoubleDouble::new(v);
        }
    }
    sums
}

/// `(p_1, …, p_m)` with `p_i = Σ xⱼⁱ`, accumulated in extended precision.
pub fn power_sums(x: &[f64], m: usize) -> Vec<f64> {
    power_sums_dd(x, m)[1..]
        .iter()
        .map(|s| s.to_f64())
        .collect()
}

/// Elementary symmetric polynomials of four values from their power sums.
pub fn newton_to_elementary(p: [f64; 4]) -> [f64; 4] {
    let e1 = p[0];
    let e2 = (e1 * p[0] - p[1]) / 2.0;
    let e3 = (e2 * p[0] - e1 * p[1] + p[2]) / 3.0;
    let e4 = (e3 * p[0] - e2 * p[1] + e1 * p[2] - p[3]) / 4.0;
    [e1, e2, e3, e4]
}

/// Coefficients of `t⁴ − e₁t³ + e₂t² − e₃t + e₄`, lowest degree first.
fn quartic_coefficients(e: [f64; 4]) -> [f64; 5] {
    [e[3], -e[2], e[1], -e[0], 1.0]
}

fn horner(c: &[f64; 5], z: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
    let mut value = Complex::new(c[4], 0.0);
    let mut deriv = Complex::new(0.0, 0.0);
    for &a in c[..4].iter().rev() {
        deriv = deriv * z + value;
        value = value * z + a;
    }
    (value, deriv)
}

/// Simultaneous Aberth iteration, used when the QR iteration stalls.
fn aberth(c: &[f64; 5]) -> [Complex<f64>; 4] {
    let radius = 1.0 + c[..4].iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    let mut z: [Complex<f64>; 4] = std::array::from_fn(|k| {
        Complex::from_polar(0.5 * radius, 0.4 + k as f64 * std::f64::consts::FRAC_PI_2)
    });
    for _ in 0..500 {
        let mut largest = 0.0_f64;
        for i in 0..4 {
            let (value, deriv) = horner(c, z[i]);
            if value.norm() == 0.0 {
                continue;
            }
            let ratio = value / deriv;
            let repulsion: Complex<f64> = (0..4)
                .filter(|&j| j != i)
                .map(|j| (z[i] - z[j]).inv())
                .sum();
            let w = ratio / (Complex::new(1.0, 0.0) - ratio * repulsion);
            z[i] -= w;
            largest = largest.max(w.norm() / (1.0 + z[i].norm()));
        }
        if largest < 1e-16 {
            break;
        }
    }
    z
}

/// All four complex roots of the monic quartic, from the companion matrix and
/// then polished by Newton steps that are kept only when they shrink the residual.
pub fn quartic_roots(e: [f64; 4]) -> Result<[Complex<f64>; 4]> {
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite quartic coefficient".into()));
    }
    let c = quartic_coefficients(e);
    #[rustfmt::skip]
    let companion = Matrix4::new(
        0.0, 0.0, 0.0, -c[0],
        1.0, 0.0, 0.0, -c[1],
        0.0, 1.0, 0.0, -c[2],
        0.0, 0.0, 1.0, -c[3],
    );
    let mut roots = match Schur::try_new(companion, f64::EPSILON, 10_000) {
        Some(schur) => {
            let eig = schur.complex_eigenvalues();
            [eig[0], eig[1], eig[2], eig[3]]
        }
        None => aberth(&c),
    };
    for z in roots.iter_mut() {
        for _ in 0..4 {
            let (value, deriv) = horner(&c, *z);
            if deriv.norm() == 0.0 {
                break;
            }
            let next = *z - value / deriv;
            if horner(&c, next).0.norm() < value.norm() {
                *z = next;
            } else {
                break;
            }
        }
    }
    Ok(roots)
}

/// Real roots of `t⁴ − e₁t³ + e₂t² − e₃t + e₄` in ascending order when all four
/// are real and inside `[0, 1]`.
///
/// A root counts as real when its imaginary part is below
/// `1e-9 · max(1, |e|∞)`, or when the quartic nearly vanishes at its real part
/// (clusters of repeated roots split into complex pairs of size `ε^{1/k}`).
pub fn solve_quartic_in_box(e: [f64; 4]) -> std::result::Result<[f64; 4], RejectionReason> {
    let roots = quartic_roots(e).map_err(|_| RejectionReason::ComplexRoots)?;
    let c = quartic_coefficients(e);
    let tol_root = 1e-9 * e.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut real = [0.0; 4];
    for (out, z) in real.iter_mut().zip(roots.iter()) {
        if z.im.abs() > tol_root {
            let r = z.re;
            let value = horner(&c, Complex::new(r, 0.0)).0.re.abs();
            let scale: f64 = c
                .iter()
                .enumerate()
                .map(|(k, a)| a.abs() * r.abs().powi(k as i32))
                .sum();
            if value > 1e-12 * scale {
                return Err(RejectionReason::ComplexRoots);
            }
        }
        *out = z.re;
    }
    real.sort_by(f64::total_cmp);
    if real.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(RejectionReason::OutOfBox);
    }
    Ok(real)
}

/// Gram matrix of the derivative of `y ↦ (Σy, Σy², …, Σyᵐ)`, entry
/// `(i, j) = i·j·p̄_{i+j−2}` with `p̄₀ = len(y)`, and its determinant `J_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGram {
    pub m: usize,
    /// Row-major `m x m`.
    pub matrix: Vec<f64>,
    pub determinant: f64,
    pub jacobian: JacobianValue,
}

pub fn gram_moment_matrix(y: &[f64], m: usize) -> Result<MomentGram> {
    if m == 0 {
        return Err(Error::InvalidInput("order must be at least 1".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    let sums = power_sums_dd(y, 2 * m - 2);
    let mut g = vec![DoubleDouble::ZERO; m * m];
    for i in 0..m {
        for j in 0..m {
            g[i * m + j] = DoubleDouble::new(((i + 1) * (j + 1)) as f64) * sums[i + j];
        }
    }
    let matrix: Vec<f64> = g.iter().map(|v| v.to_f64()).collect();
    let scale: f64 = (0..m).map(|i| matrix[i * m + i]).product();
    let determinant = psd_determinant(&mut g, m).to_f64().max(0.0);
    Ok(MomentGram {
        m,
        matrix,
        determinant,
        jacobian: JacobianValue::from_squared(determinant, scale),
    })
}

/// Point of the moment manifold with cached power sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub x: Vec<f64>,
    pub m: usize,
    pub p: Vec<f64>,
    /// Position in the systematic subset sweep.
    pub cursor: u64,
    steps_since_refresh: usize,
}

impl MomentState {
    pub fn new(x: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("order must be at least 1".into()));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "coordinate {v} lies outside [0, 1]"
            )));
        }
        let p = power_sums(&x, m);
        Ok(MomentState {
            x,
            m,
            p,
            cursor: 0,
            steps_since_refresh: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Largest gap between the cached and recomputed power sums.
    pub fn drift(&self) -> f64 {
        power_sums(&self.x, self.m)
            .iter()
            .zip(&self.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn refresh(&mut self) {
        self.p = power_sums(&self.x, self.m);
        self.steps_since_refresh = 0;
    }

    fn local(&self, indices: &[usize; CURVE_ARITY]) -> [f64; CURVE_ARITY] {
        indices.map(|i| self.x[i])
    }
}

/// Outcome of one attempted curve move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMoveRecord {
    pub indices: [usize; CURVE_ARITY],
    /// Which of the five positions was perturbed.
    pub pivot: usize,
    /// `p̄₁..p̄₄` of the five current values.
    pub local_sums: [f64; 4],
    pub proposal: Option<[f64; CURVE_ARITY]>,
    pub rejection: Option<RejectionReason>,
    pub accepted: bool,
}

/// Proposes new values for the five coordinates at `indices` on the curve of
/// constant local power sums. Never fails: solver problems become rejections.
pub fn curve_move<R: Rng + ?Sized>(
    state: &MomentState,
    indices: [usize; CURVE_ARITY],
    eps: f64,
    rng: &mut R,
) -> CurveMoveRecord {
    let current = state.local(&indices);
    let sums = power_sums_dd(&current, 4);
    let local_sums = [
        sums[1].to_f64(),
        sums[2].to_f64(),
        sums[3].to_f64(),
        sums[4].to_f64(),
    ];
    let pivot = rng.random_range(0..CURVE_ARITY);
    let y1 = current[pivot] + eps * (2.0 * rng.random::<f64>() - 1.0);
    let mut record = CurveMoveRecord {
        indices,
        pivot,
        local_sums,
        proposal: None,
        rejection: None,
        accepted: false,
    };
    if !(0.0..=1.0).contains(&y1) {
        record.rejection = Some(RejectionReason::OutOfBox);
        return record;
    }

    let mut residual = [0.0; 4];
    let mut pow = DoubleDouble::ONE;
    for (i, q) in residual.iter_mut().enumerate() {
        pow = pow * DoubleDouble::new(y1);
        *q = (sums[i + 1] - pow).to_f64();
    }
    let mut roots = match solve_quartic_in_box(newton_to_elementary(residual)) {
        Ok(r) => r,
        Err(reason) => {
            record.rejection = Some(reason);
            return record;
        }
    };
    roots.shuffle(rng);

    let mut proposal = [0.0; CURVE_ARITY];
    let mut next = roots.iter();
    for (k, slot) in proposal.iter_mut().enumerate() {
        *slot = if k == pivot {
            y1
        } else {
            *next.next().unwrap()
        };
    }
    let check = power_sums(&proposal, 4);
    if check
        .iter()
        .zip(&local_sums)
        .any(|(a, b)| (a - b).abs() > RESIDUAL_TOL)
    {
        record.rejection = Some(RejectionReason::Residual);
        return record;
    }
    record.proposal = Some(proposal);
    record
}

/// Acceptance rule for curve-move proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptanceRule {
    /// Accept with probability `min(1, √(J₄(x)/J₄(y)))`.
    #[default]
    SquareRoot,
    /// The same ratio times the Hastings correction for drawing the pivot
    /// coordinate uniformly rather than arc length.
    Hastings,
}

/// Order in which 5-subsets are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexSchedule {
    #[default]
    Uniform,
    /// Revolving-door Gray-code sweep: consecutive subsets differ in one element.
    GrayCode,
}

/// `min(1, √(J₄(x)/J₄(y)))` acceptance with one uniform draw.
pub fn sqrt_jacobian_acceptance<R: Rng + ?Sized>(
    j4_current: f64,
    j4_proposal: f64,
    rng: &mut R,
) -> Result<bool> {
    if !(j4_current > 0.0 && j4_proposal > 0.0) {
        return Err(Error::Degenerate(
            "acceptance needs positive Jacobians".into(),
        ));
    }
    metropolis_step(0.5 * j4_proposal.ln(), 0.5 * j4_current.ln(), rng)
}

/// Unit tangent magnitudes of the local curve: proportional to the divided
/// difference weights `1 / Π_{j≠k}(y_k − y_j)`.
fn tangent_weights(y: &[f64; CURVE_ARITY]) -> [f64; CURVE_ARITY] {
    let mut w = [0.0; CURVE_ARITY];
    for k in 0..CURVE_ARITY {
        let mut log = 0.0;
        for j in 0..CURVE_ARITY {
            if j != k {
                log -= (y[k] - y[j]).abs().ln();
            }
        }
        w[k] = log;
    }
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w = w.map(|l| (l - max).exp());
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    w
}

fn log_hastings_correction(x: &[f64; CURVE_ARITY], y: &[f64; CURVE_ARITY], eps: f64) -> f64 {
    let tx = tangent_weights(x);
    let ty = tangent_weights(y);
    let (mut sx, mut sy) = (0.0, 0.0);
    for k in 0..CURVE_ARITY {
        if (x[k] - y[k]).abs() <= eps {
            sx += tx[k];
            sy += ty[k];
        }
    }
    sx.ln() - sy.ln()
}

/// `C(n, k)` in `u64`; saturates rather than overflowing.
fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// The `rank`-th `k`-subset of `0..n` in revolving-door order.
pub fn revolving_door_unrank(rank: u64, n: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    let mut r = rank;
    let mut x = n as u64;
    for i in (1..=k).rev() {
        while binomial(x, i as u64) > r {
            x -= 1;
        }
        out[i - 1] = x as usize;
        r = binomial(x + 1, i as u64) - r - 1;
    }
    out
}

/// Curve-move chain on the moment manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeymanKernel {
    pub eps: f64,
    pub rule: AcceptanceRule,
    pub schedule: IndexSchedule,
}

impl NeymanKernel {
    pub fn new(eps: f64) -> Self {
        NeymanKernel {
            eps,
            rule: AcceptanceRule::default(),
            schedule: IndexSchedule::default(),
        }
    }

    fn choose_indices<R: Rng + ?Sized>(
        &self,
        state: &mut MomentState,
        rng: &mut R,
    ) -> [usize; CURVE_ARITY] {
        let n = state.n();
        let chosen: Vec<usize> = match self.schedule {
            IndexSchedule::Uniform => index::sample(rng, n, CURVE_ARITY).into_vec(),
            IndexSchedule::GrayCode => {
                let total = binomial(n as u64, CURVE_ARITY as u64);
                let rank = state.cursor % total;
                state.cursor = state.cursor.wrapping_add(1);
                revolving_door_unrank(rank, n, CURVE_ARITY)
            }
        };
        let mut out = [0; CURVE_ARITY];
        out.copy_from_slice(&chosen);
        out
    }
}

/// One chain transition. Returns the move record; `state` is updated in place.
pub fn neyman_chain_step<R: Rng + ?Sized>(
    state: &mut MomentState,
    kernel: &NeymanKernel,
    rng: &mut R,
) -> Result<CurveMoveRecord> {
    if state.m != 4 {
        return Err(Error::Precondition(format!(
            "curve moves are implemented for order 4 only, got {}",
            state.m
        )));
    }
    if state.n() <= CURVE_ARITY {
        return Err(Error::Precondition(format!(
            "need more than {CURVE_ARITY} coordinates, got {}",
            state.n()
        )));
    }
    if !(kernel.eps.is_finite() && kernel.eps >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "invalid step size {}",
            kernel.eps
        )));
    }

    let mut attempt = 0;
    let (indices, current_gram) = loop {
        let indices = kernel.choose_indices(state, rng);
        let gram = gram_moment_matrix(&state.local(&indices), 4)?;
        if !gram.jacobian.degenerate {
            break (indices, gram);
        }
        attempt += 1;
        if attempt >= DEGENERATE_RETRY_CAP {
            return Err(Error::Degenerate(format!(
                "no non-degenerate 5-subset found in {DEGENERATE_RETRY_CAP} draws"
            )));
        }
    };

    let mut record = curve_move(state, indices, kernel.eps, rng);
    let proposal = match record.proposal {
        Some(p) => p,
        None => return Ok(record),
    };
    let proposal_gram = gram_moment_matrix(&proposal, 4)?;
    if proposal_gram.jacobian.degenerate {
        record.rejection = Some(RejectionReason::DegenerateJacobian);
        return Ok(record);
    }
    let (jx, jy) = (current_gram.determinant, proposal_gram.determinant);
    let mut log_current = 0.5 * jy.ln();
    let log_proposal = 0.5 * jx.ln();
    if kernel.rule == AcceptanceRule::Hastings {
        log_current -= log_hastings_correction(&state.local(&indices), &proposal, kernel.eps);
    }
    if !metropolis_step(log_current, log_proposal, rng)? {
        record.rejection = Some(RejectionReason::Metropolis);
        return Ok(record);
    }

    let before = power_sums_dd(&state.local(&indices), 4);
    let after = power_sums_dd(&proposal, 4);
    for (i, p) in state.p.iter_mut().enumerate() {
        *p += (after[i + 1] - before[i + 1]).to_f64();
    }
    for (slot, v) in indices.iter().zip(proposal) {
        state.x[*slot] = v;
    }
    record.accepted = true;
    state.steps_since_refresh += 1;
    if state.steps_since_refresh >= REFRESH_INTERVAL {
        state.refresh();
    }
    Ok(record)
}

impl MarkovKernel for NeymanKernel {
    type State = MomentState;

    fn step<R: Rng + ?Sized>(&self, state: &mut MomentState, rng: &mut R) -> Result<StepOutcome> {
        let record = neyman_chain_step(state, self, rng)?;
        Ok(match record.rejection {
            None => StepOutcome::Accepted,
            Some(reason) => StepOutcome::Rejected(reason),
        })
    }

    fn reversed(&self) -> Result<&Self> {
        match self.schedule {
            IndexSchedule::Uniform => Ok(self),
            IndexSchedule::GrayCode => Err(Error::NotReversible(
                "a systematic subset sweep is not reversible".into(),
            )),
        }
    }
}

/// Numerical rank and degeneracy summary of a point of the moment manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankDiagnostic {
    /// Rank of the `4 x n` matrix with rows `1, x, x², x³`.
    pub rank: usize,
    pub distinct_count: usize,
    /// Two coordinates coincide or one touches the box boundary.
    pub near_diagonal: bool,
}

pub fn rank_diagnostic(x: &[f64]) -> RankDiagnostic {
    let n = x.len();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct_count = if n == 0 {
        0
    } else {
        1 + sorted
            .windows(2)
            .filter(|w| w[1] - w[0] > CLUSTER_TOL)
            .count()
    };
    let near_diagonal = distinct_count < n
        || sorted
            .iter()
            .any(|&v| v.abs() <= CLUSTER_TOL || (1.0 - v).abs() <= CLUSTER_TOL);
    let rank = if n == 0 {
        0
    } else {
        let d = DMatrix::from_fn(4, n, |i, j| x[j].powi(i as i32));
        let sv = d.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > 1e-9 * max).count()
    };
    RankDiagnostic {
        rank,
        distinct_count,
        near_diagonal,
    }
}

/// Polynomial exponential family `f_θ(y) = z⁻¹ exp(Σ θᵢ yⁱ)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeymanModel {
    pub theta: Vec<f64>,
    pub z: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    let floor = 4.0 * f64::EPSILON * (left + right).abs();
    if depth == 0 || delta.abs() <= 15.0 * tol.max(floor) {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `∫ₐᵇ f` by adaptive Simpson to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 50)
}

impl NeymanModel {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite natural parameter".into()));
        }
        let mut model = NeymanModel { theta, z: 1.0 };
        // the integrand is bounded below by exp(−Σ|θ|), which sets the scale
        let floor = (-model.theta.iter().map(|t| t.abs()).sum::<f64>()).exp();
        model.z = integrate(|y| model.unnormalized(y), 0.0, 1.0, 1e-14 * floor);
        Ok(model)
    }

    fn exponent(&self, y: f64) -> f64 {
        self.theta.iter().rev().fold(0.0, |acc, t| (acc + t) * y)
    }

    fn unnormalized(&self, y: f64) -> f64 {
        self.exponent(y).exp()
    }

    /// Draws `n` values by rejection from the uniform density.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        // grid maximum plus a Lipschitz margin bounds the exponent on [0, 1]
        let grid = 4096;
        let lipschitz: f64 = self
            .theta
            .iter()
            .enumerate()
            .map(|(i, t)| (i + 1) as f64 * t.abs())
            .sum();
        let peak = (0..=grid)
            .map(|k| self.exponent(k as f64 / grid as f64))
            .fold(f64::NEG_INFINITY, f64::max)
            + lipschitz / (2 * grid) as f64;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let y: f64 = rng.random();
            if rng.random::<f64>().ln() <= self.exponent(y) - peak {
                out.push(y);
            }
        }
        out
    }
}

/// Normalized density of the model at `y ∈ [0, 1]`.
pub fn neyman_density(y: f64, model: &NeymanModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidInput(format!("{y} lies outside [0, 1]")));
    }
    Ok(model.unnormalized(y) / model.z)
}

/// Orthonormal shifted Legendre polynomial of degree `k` on `[0, 1]`.
pub fn shifted_legendre(k: usize, x: f64) -> f64 {
    let u = 2.0 * x - 1.0;
    let (mut prev, mut cur) = (1.0, u);
    if k == 0 {
        return 1.0;
    }
    for j in 1..k {
        let next = ((2 * j + 1) as f64 * u * cur - j as f64 * prev) / (j + 1) as f64;
        prev = cur;
        cur = next;
    }
    ((2 * k + 1) as f64).sqrt() * cur
}

/// Statistic for the Neyman smooth test: `(Σ φ_k(xᵢ))² / n` with `φ_k` the
/// orthonormal shifted Legendre polynomial of degree `k ≥ 5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeymanStatistic {
    #[default]
    Legendre5,
    Legendre(usize),
}

impl NeymanStatistic {
    pub fn degree(&self) -> usize {
        match self {
            NeymanStatistic::Legendre5 => 5,
            NeymanStatistic::Legendre(k) => *k,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let k = self.degree();
        let s: f64 = x.iter().map(|&v| shifted_legendre(k, v)).sum();
        s * s / x.len() as f64
    }
}

/// Conditional smooth test of uniformity given the first four power sums.
///
/// Each of the `replicates` reversed runs, and the forward run, is `steps`
/// transitions of `kernel` long.
pub fn neyman_smooth_gof(
    data: &[f64],
    kernel: &NeymanKernel,
    seed: u64,
    replicates: usize,
    steps: usize,
    statistic: NeymanStatistic,
) -> Result<TestReport> {
    if data.len() < CURVE_ARITY + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} observations, got {}",
            CURVE_ARITY + 1,
            data.len()
        )));
    }
    if replicates == 0 {
        return Err(Error::InvalidInput(
            "at least one replicate is required".into(),
        ));
    }
    if statistic.degree() < 5 {
        return Err(Error::InvalidInput(format!(
            "statistic degree must be at least 5, got {}",
            statistic.degree()
        )));
    }
    let state = MomentState::new(data.to_vec(), 4)?;
    let diag = rank_diagnostic(data);
    if diag.distinct_count < 4 || diag.rank < 4 {
        return Err(Error::Degenerate(format!(
            "data has {} distinct values; at least 4 are required",
            diag.distinct_count
        )));
    }
    besag_serial_test(
        kernel,
        &state,
        steps,
        replicates,
        |s: &MomentState| statistic.evaluate(&s.x),
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::stream_rng;

    fn vandermonde_oracle(y: &[f64]) -> f64 {
        let n = y.len();
        let mut total = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    for d in c + 1..n {
                        let s = [y[a], y[b], y[c], y[d]];
                        let mut v = 1.0;
                        for i in 0..4 {
                            for j in i + 1..4 {
                                v *= s[i] - s[j];
                            }
                        }
                        total += v * v;
                    }
                }
            }
        }
        576.0 * total
    }

    #[test]
    fn power_sum_example() {
        let p = power_sums(&[0.1, 0.2, 0.3, 0.4, 0.5], 4);
        let expect = [1.5, 0.55, 0.225, 0.0979];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(power_sums(&[0.0; 6], 3), vec![0.0; 3]);
        assert_eq!(
            power_sums(&[0.5, 0.1, 0.3, 0.2, 0.4], 4),
            power_sums(&[0.1, 0.2, 0.3, 0.4, 0.5], 4)
        );
    }

    #[test]
    fn newton_identities() {
        let e = newton_to_elementary([1.0, 0.30, 0.100, 0.0354]);
        for (a, b) in e.iter().zip([1.0, 0.35, 0.05, 0.0024]) {
            assert!((a - b).abs() < 1e-14);
        }
        let c = 0.3_f64;
        let e = newton_to_elementary([4.0 * c, 4.0 * c * c, 4.0 * c.powi(3), 4.0 * c.powi(4)]);
        for (a, b) in e
            .iter()
            .zip([4.0 * c, 6.0 * c * c, 4.0 * c.powi(3), c.powi(4)])
        {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(newton_to_elementary([0.0; 4]), [0.0; 4]);
    }

    #[test]
    fn quartic_round_trip() {
        let roots = solve_quartic_in_box([1.0, 0.35, 0.05, 0.0024]).unwrap();
        for (a, b) in roots.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn quadruple_root() {
        let roots = solve_quartic_in_box([1.0, 0.375, 0.0625, 0.00390625]).unwrap();
        for r in roots {
            assert!((r - 0.25).abs() < 1e-4);
        }
    }

    #[test]
    fn complex_and_out_of_box() {
        // t⁴ + 1 has no real roots
        assert_eq!(
            solve_quartic_in_box([0.0, 0.0, 0.0, 1.0]),
            Err(RejectionReason::ComplexRoots)
        );
        // (t−0.5)²(t²+0.01): a real double root and a complex pair
        let e = newton_to_elementary(power_sums_complex_pair());
        assert_eq!(solve_quartic_in_box(e), Err(RejectionReason::ComplexRoots));
        // roots 0.5, 0.6, 0.7, 1.5
        let p = power_sums(&[0.5, 0.6, 0.7, 1.5], 4);
        assert_eq!(
            solve_quartic_in_box(newton_to_elementary([p[0], p[1], p[2], p[3]])),
            Err(RejectionReason::OutOfBox)
        );
    }

    fn power_sums_complex_pair() -> [f64; 4] {
        // values 0.5, 0.5, ±0.1i
        let z: [Complex<f64>; 4] = [
            Complex::new(0.5, 0.0),
            Complex::new(0.5, 0.0),
            Complex::new(0.0, 0.1),
            Complex::new(0.0, -0.1),
        ];
        let mut p = [0.0; 4];
        for (k, slot) in p.iter_mut().enumerate() {
            *slot = z.iter().map(|v| v.powi(k as i32 + 1).re).sum();
        }
        p
    }

    #[test]
    fn gram_matches_vandermonde() {
        let y = [0.1, 0.2, 0.3, 0.4, 0.5];
        let g = gram_moment_matrix(&y, 4).unwrap();
        let oracle = vandermonde_oracle(&y);
        assert!((g.determinant - oracle).abs() <= 1e-10 * oracle);
        assert_eq!(g.matrix[0], 5.0);
        let p6: f64 = y.iter().map(|v| v.powi(6)).sum();
        assert!((g.matrix[15] - 16.0 * p6).abs() < 1e-15);
    }

    #[test]
    fn gram_vanishes_with_three_distinct_values() {
        let g = gram_moment_matrix(&[0.2, 0.2, 0.5, 0.5, 0.9], 4).unwrap();
        assert!(g.jacobian.degenerate);
        assert!(g.determinant < 1e-20);
    }

    #[test]
    fn rank_examples() {
        let d = rank_diagnostic(&[0.1, 0.1, 0.2, 0.3, 0.3, 0.4]);
        assert_eq!((d.rank, d.distinct_count), (4, 4));
        assert!(d.near_diagonal);
        let d = rank_diagnostic(&[0.4; 7]);
        assert_eq!(d.rank, 1);
        assert!(d.near_diagonal);
        let d = rank_diagnostic(&[0.1, 0.25, 0.5, 0.6, 0.9]);
        assert_eq!(d.rank, 4);
        assert!(!d.near_diagonal);
    }

    #[test]
    fn curve_move_with_zero_step_is_identity() {
        let state = MomentState::new(vec![0.1, 0.25, 0.4, 0.6, 0.85, 0.5], 4).unwrap();
        let mut rng = stream_rng(3, 0);
        let rec = curve_move(&state, [0, 1, 2, 3, 4], 0.0, &mut rng);
        let mut got = rec.proposal.unwrap().to_vec();
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip([0.1, 0.25, 0.4, 0.6, 0.85]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn curve_move_rejects_infeasible_pivot() {
        // four values near 0.5 leave little room: pushing the fifth far breaks realness
        let state = MomentState::new(vec![0.49, 0.5, 0.51, 0.52, 0.02, 0.3], 4).unwrap();
        let mut rng = stream_rng(5, 0);
        let mut reasons = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let rec = curve_move(&state, [0, 1, 2, 3, 4], 0.4, &mut rng);
            if let Some(r) = rec.rejection {
                reasons.insert(r);
            }
        }
        assert!(reasons.contains(&RejectionReason::ComplexRoots));
    }

    #[test]
    fn acceptance_rule_edges() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            assert!(sqrt_jacobian_acceptance(2.0, 2.0, &mut rng).unwrap());
            assert!(sqrt_jacobian_acceptance(3.0, 1.0, &mut rng).unwrap());
        }
        assert!(sqrt_jacobian_acceptance(0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn chain_preserves_sums_and_box() {
        let x = vec![0.05, 0.15, 0.3, 0.45, 0.6, 0.72, 0.8, 0.93];
        let mut state = MomentState::new(x.clone(), 4).unwrap();
        let p0 = power_sums(&x, 4);
        let kernel = NeymanKernel::new(0.1);
        let mut rng = stream_rng(11, 0);
        let mut accepted = 0;
        for _ in 0..5000 {
            let rec = neyman_chain_step(&mut state, &kernel, &mut rng).unwrap();
            accepted += rec.accepted as usize;
            assert!(state.x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(accepted > 100);
        let p = power_sums(&state.x, 4);
        for (a, b) in p.iter().zip(&p0) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(state.drift() < 1e-12);
    }

    #[test]
    fn gray_code_neighbors_differ_by_one_element() {
        let n = 8;
        let total = binomial(n as u64, 5);
        let mut seen = std::collections::BTreeSet::new();
        let mut prev = revolving_door_unrank(0, n, 5);
        seen.insert(prev.clone());
        for r in 1..total {
            let cur = revolving_door_unrank(r, n, 5);
            assert!(cur.iter().all(|&i| i < n));
            let common = cur.iter().filter(|i| prev.contains(i)).count();
            assert_eq!(common, 4, "ranks {} and {r}", r - 1);
            seen.insert(cur.clone());
            prev = cur;
        }
        assert_eq!(seen.len() as u64, total);
    }

    #[test]
    fn gray_schedule_is_not_reversible() {
        let k = NeymanKernel {
            schedule: IndexSchedule::GrayCode,
            ..NeymanKernel::new(0.1)
        };
        assert!(matches!(k.reversed(), Err(Error::NotReversible(_))));
        let mut state = MomentState::new(vec![0.1, 0.2, 0.35, 0.5, 0.7, 0.9], 4).unwrap();
        let mut rng = stream_rng(2, 0);
        for _ in 0..50 {
            neyman_chain_step(&mut state, &k, &mut rng).unwrap();
        }
        assert_eq!(state.cursor, 50);
    }

    #[test]
    fn order_must_be_four() {
        let mut state = MomentState::new(vec![0.1, 0.2, 0.35, 0.5, 0.7, 0.9], 3).unwrap();
        let mut rng = stream_rng(2, 0);
        assert!(neyman_chain_step(&mut state, &NeymanKernel::new(0.1), &mut rng).is_err());
    }

    #[test]
    fn density_examples() {
        let flat = NeymanModel::new(vec![0.0; 4]).unwrap();
        assert!((neyman_density(0.3, &flat).unwrap() - 1.0).abs() < 1e-12);
        let tilted = NeymanModel::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((tilted.z - (e - 1.0)).abs() < 1e-12 * (e - 1.0));
        assert!((neyman_density(0.0, &tilted).unwrap() - 0.58198).abs() < 1e-5);
        assert!(neyman_density(1.5, &tilted).is_err());
        let model = NeymanModel::new(vec![0.5, -2.0, 1.5, 3.0]).unwrap();
        let total = integrate(|y| neyman_density(y, &model).unwrap(), 0.0, 1.0, 1e-13);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn legendre_is_orthonormal() {
        for (j, k) in [(5, 5), (5, 3), (6, 6), (2, 5)] {
            let v = integrate(
                |x| shifted_legendre(j, x) * shifted_legendre(k, x),
                0.0,
                1.0,
                1e-13,
            );
            let expect = if j == k { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-9, "({j},{k}) -> {v}");
        }
    }

    #[test]
    fn gof_validation() {
        let k = NeymanKernel::new(0.1);
        let data = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        assert!(neyman_smooth_gof(&data, &k, 1, 0, 10, NeymanStatistic::default()).is_err());
        assert!(neyman_smooth_gof(&data[..5], &k, 1, 5, 10, NeymanStatistic::default()).is_err());
        assert!(matches!(
            neyman_smooth_gof(
                &[0.1, 0.1, 0.2, 0.2, 0.3, 0.3],
                &k,
                1,
                5,
                10,
                NeymanStatistic::default()
            ),
            Err(Error::Degenerate(_))
        ));
        let r = neyman_smooth_gof(&data, &k, 1, 9, 20, NeymanStatistic::default()).unwrap();
        assert_eq!(r.statistic_replicates.len(), 9);
        assert!((r.p_value - r.rank as f64 / 10.0).abs() < 1e-15);
    }
}
