//! Jacobians of derivative matrices, the Metropolis accept step and the co-area
//! conditional density kernel shared by every sampler in the crate.
//!
//! The `k`-dimensional Jacobian of a derivative matrix `D` is the square root of
//! the determinant of its Gram product, taken on the small side so that the
//! result is `k x k` with `k = min(rows, cols)`. Equivalently (Cauchy–Binet) it
//! is the root-sum-of-squares of all `k x k` minors. Both routes are provided;
//! the minor enumeration exists to check the factorization.

use rand::Rng;

use crate::dd::DoubleDouble;
use crate::error::{Error, Result};

/// Relative threshold under which a Gram determinant counts as zero. It is
/// applied against the product of the Gram diagonal (the Hadamard bound).
pub const TOL_DEGENERATE: f64 = 1e-14;

/// Which side of a [`DerivativeMatrix`] indexes the chart parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// One column per parameter, one row per ambient coordinate (or constraint).
    ParamsAsColumns,
    /// One row per parameter.
    ParamsAsRows,
}

/// Dense real matrix of partial derivatives, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    orientation: Orientation,
}

impl DerivativeMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        entries: Vec<f64>,
        orientation: Orientation,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(
                "derivative matrix must have at least one row and column".into(),
            ));
        }
        if entries.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite derivative entry at ({}, {})",
                bad / cols,
                bad % cols
            )));
        }
        Ok(DerivativeMatrix {
            rows,
            cols,
            entries,
            orientation,
        })
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], orientation: Orientation) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let entries = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(rows.len(), cols, entries, orientation)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    /// Number of parameters, per the declared orientation.
    pub fn parameter_count(&self) -> usize {
        match self.orientation {
            Orientation::ParamsAsColumns => self.cols,
            Orientation::ParamsAsRows => self.rows,
        }
    }

    /// Side length of the Gram product.
    pub fn gram_side(&self) -> usize {
        self.rows.min(self.cols)
    }

    /// Right-multiplies by a `cols x cols` matrix given row-major.
    pub fn mul_right(&self, m: &[f64]) -> Result<Self> {
        if m.len() != self.cols * self.cols {
            return Err(Error::InvalidInput("multiplier has the wrong shape".into()));
        }
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[i * self.cols + j] = (0..self.cols)
                    .map(|l| self.get(i, l) * m[l * self.cols + j])
                    .sum();
            }
        }
        Self::new(self.rows, self.cols, out, self.orientation)
    }
}

/// A `k`-dimensional Jacobian together with its square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianValue {
    pub value: f64,
    pub squared: f64,
    pub degenerate: bool,
}

impl JacobianValue {
    /// Wraps a squared Jacobian. `scale` is the magnitude the degeneracy
    /// threshold is measured against; negative round-off is clamped to zero.
    pub fn from_squared(squared: f64, scale: f64) -> Self {
        let squared = if squared.is_nan() || squared < 0.0 {
            0.0
        } else {
            squared
        };
        let tol = TOL_DEGENERATE * scale.abs();
        JacobianValue {
            value: squared.sqrt(),
            squared,
            degenerate: squared <= tol,
        }
    }

    pub fn ln(&self) -> f64 {
        0.5 * self.squared.ln()
    }
}

/// Determinant of a symmetric positive semidefinite matrix by LDLᵀ with
/// diagonal pivoting, in double-double precision. `a` is row-major `k x k` and is
/// overwritten. A non-positive pivot means the matrix is singular to working
/// precision and the determinant is returned as zero.
pub(crate) fn psd_determinant(a: &mut [DoubleDouble], k: usize) -> DoubleDouble {
    debug_assert_eq!(a.len(), k * k);
    let mut det = DoubleDouble::ONE;
    for s in 0..k {
        let mut p = s;
        for i in s + 1..k {
            if a[i * k + i] > a[p * k + p] {
                p = i;
            }
        }
        if p != s {
            for j in 0..k {
                a.swap(s * k + j, p * k + j);
            }
            for i in 0..k {
                a.swap(i * k + s, i * k + p);
            }
        }
        let pivot = a[s * k + s];
        if pivot.hi() <= 0.0 || !pivot.is_finite() {
            return DoubleDouble::ZERO;
        }
        det = det * pivot;
        for i in s + 1..k {
            let factor = a[i * k + s] / pivot;
            if factor.hi() == 0.0 {
                continue;
            }
            for j in s + 1..k {
                a[i * k + j] = a[i * k + j] - factor * a[s * k + j];
            }
        }
    }
    det
}

/// Gram product of the small side, accumulated with exact products.
fn gram_product(d: &DerivativeMatrix) -> (Vec<DoubleDouble>, usize) {
    let k = d.gram_side();
    let mut g = vec![DoubleDouble::ZERO; k * k];
    let tall = d.rows >= d.cols;
    let len = if tall { d.rows } else { d.cols };
    for i in 0..k {
        for j in i..k {
            let mut acc = DoubleDouble::ZERO;
            for l in 0..len {
                let (a, b) = if tall {
                    (d.get(l, i), d.get(l, j))
                } else {
                    (d.get(i, l), d.get(j, l))
                };
                acc = acc + DoubleDouble::from_product(a, b);
            }
            g[i * k + j] = acc;
            g[j * k + i] = acc;
        }
    }
    (g, k)
}

/// `J_k D = sqrt(det(Gram(D)))` with `k = min(rows, cols)`.
pub fn gram_jacobian(d: &DerivativeMatrix) -> Result<JacobianValue> {
    let (mut g, k) = gram_product(d);
    let scale: f64 = (0..k).map(|i| g[i * k + i].to_f64()).product();
    let det = psd_determinant(&mut g, k).to_f64();
    Ok(JacobianValue::from_squared(det, scale))
}

/// Largest Gram side the minor enumeration accepts.
pub const CAUCHY_BINET_MAX_SIDE: usize = 8;
const CAUCHY_BINET_MAX_MINORS: u64 = 1_000_000;

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

/// Determinant by Gaussian elimination with partial pivoting (plain `f64`).
fn lu_determinant(mut a: Vec<f64>, k: usize) -> f64 {
    let mut det = 1.0;
    for s in 0..k {
        let p = (s..k)
            .max_by(|&x, &y| a[x * k + s].abs().total_cmp(&a[y * k + s].abs()))
            .unwrap_or(s);
        if a[p * k + s] == 0.0 {
            return 0.0;
        }
        if p != s {
            for j in 0..k {
                a.swap(s * k + j, p * k + j);
            }
            det = -det;
        }
        let pivot = a[s * k + s];
        det *= pivot;
        for i in s + 1..k {
            let f = a[i * k + s] / pivot;
            for j in s + 1..k {
                a[i * k + j] -= f * a[s * k + j];
            }
        }
    }
    det
}

/// Root-sum-of-squares of every `k x k` minor of `d`.
pub fn cauchy_binet_oracle(d: &DerivativeMatrix) -> Result<f64> {
    let k = d.gram_side();
    let long = d.rows.max(d.cols);
    if k > CAUCHY_BINET_MAX_SIDE {
        return Err(Error::Capacity(format!(
            "minor enumeration supports at most {CAUCHY_BINET_MAX_SIDE} columns, got {k}"
        )));
    }
    let count = binomial(long, k);
    if count > CAUCHY_BINET_MAX_MINORS {
        return Err(Error::Capacity(format!("{count} minors to enumerate")));
    }
    let tall = d.rows >= d.cols;
    let mut subset: Vec<usize> = (0..k).collect();
    let mut total = 0.0;
    loop {
        let mut minor = Vec::with_capacity(k * k);
        for &r in &subset {
            for c in 0..k {
                minor.push(if tall { d.get(r, c) } else { d.get(c, r) });
            }
        }
        let det = lu_determinant(minor, k);
        total += det * det;

        // next k-subset of 0..long in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(total.sqrt());
            }
            i -= 1;
            if subset[i] < long - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// `det(I_q + V Vᵀ + W Wᵀ)` through the 2x2 reduction
/// `det(I_p + BC) = det(I_m + CB)` with `B = [V W]`, `C = Bᵀ`.
pub fn det_identity_reduce(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "vector lengths differ: {} vs {}",
            v.len(),
            w.len()
        )));
    }
    if v.iter().chain(w).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry".into()));
    }
    let vv: f64 = v.iter().map(|a| a * a).sum();
    let ww: f64 = w.iter().map(|a| a * a).sum();
    let vw: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    // (1+vv)(1+ww) - vw^2 = 1 + vv + ww + (vv*ww - vw^2); the bracket is >= 0
    // by Cauchy–Schwarz and is evaluated as a Gram determinant.
    let cross = (vv * ww - vw * vw).max(0.0);
    Ok(1.0 + vv + ww + cross)
}

/// One Metropolis accept/reject decision on log targets.
///
/// Consumes exactly one uniform draw whatever the outcome.
pub fn metropolis_step<R: Rng + ?Sized>(
    current_log_target: f64,
    proposal_log_target: f64,
    rng: &mut R,
) -> Result<bool> {
    let u: f64 = rng.random();
    if !current_log_target.is_finite() {
        return Err(Error::InvalidState(format!(
            "current log target is {current_log_target}"
        )));
    }
    if proposal_log_target.is_nan() || proposal_log_target == f64::INFINITY {
        return Err(Error::InvalidInput(format!(
            "proposal log target is {proposal_log_target}"
        )));
    }
    let delta = proposal_log_target - current_log_target;
    Ok(delta >= 0.0 || u < delta.exp())
}

/// Unnormalized conditional density on a fiber `Φ⁻¹(y)` with respect to area
/// measure: `p(x) / J_N Φ(x)`.
pub fn coarea_conditional_unnormalized(p_value: f64, jacobian: &JacobianValue) -> Result<f64> {
    if !(p_value >= 0.0) || !p_value.is_finite() {
        return Err(Error::InvalidInput(format!("density value {p_value}")));
    }
    if p_value == 0.0 {
        return Ok(0.0);
    }
    if jacobian.degenerate {
        return Err(Error::Precondition(
            "co-area Jacobian vanishes where the density is positive".into(),
        ));
    }
    Ok(p_value / jacobian.value)
}

/// Marginal density `m(y)` of a discretized fiber: the sum of `p/J` times the
/// arc-length (or area) weight of each cell. `cells` yields `(p, J, weight)`.
pub fn fiber_mass<I>(cells: I) -> Result<f64>
where
    I: IntoIterator<Item = (f64, JacobianValue, f64)>,
{
    let mut total = 0.0;
    for (p, jac, weight) in cells {
        total += coarea_conditional_unnormalized(p, &jac)? * weight;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn torus_df(theta: f64, psi: f64, big_r: f64, r: f64) -> DerivativeMatrix {
        let ring = big_r + r * theta.cos();
        DerivativeMatrix::from_rows(
            &[
                [-r * theta.sin() * psi.cos(), -ring * psi.sin()],
                [-r * theta.sin() * psi.sin(), ring * psi.cos()],
                [r * theta.cos(), 0.0],
            ],
            Orientation::ParamsAsColumns,
        )
        .unwrap()
    }

    #[test]
    fn torus_jacobian_at_outer_equator() {
        let j = gram_jacobian(&torus_df(0.0, 1.234, 1.0, 0.9)).unwrap();
        assert!((j.value - 1.71).abs() < 1e-12);
        assert!(!j.degenerate);
    }

    #[test]
    fn torus_jacobian_everywhere_matches_closed_form() {
        for i in 0..50 {
            let theta = i as f64 * 0.13;
            let psi = i as f64 * 0.71;
            let d = torus_df(theta, psi, 1.0, 0.9);
            let expect = 0.9 * (1.0 + 0.9 * theta.cos());
            assert!((cauchy_binet_oracle(&d).unwrap() - expect).abs() < 1e-12);
            assert!((gram_jacobian(&d).unwrap().value - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_has_unit_jacobian() {
        for k in 1..6 {
            let mut e = vec![0.0; k * k];
            for i in 0..k {
                e[i * k + i] = 1.0;
            }
            let d = DerivativeMatrix::new(k, k, e, Orientation::ParamsAsColumns).unwrap();
            assert_eq!(gram_jacobian(&d).unwrap().value, 1.0);
        }
    }

    #[test]
    fn single_column_is_its_norm() {
        let d = DerivativeMatrix::from_rows(&[[3.0], [4.0]], Orientation::ParamsAsColumns).unwrap();
        assert_eq!(cauchy_binet_oracle(&d).unwrap(), 5.0);
        assert_eq!(gram_jacobian(&d).unwrap().value, 5.0);
    }

    #[test]
    fn wide_and_tall_give_the_same_jacobian() {
        let d = DerivativeMatrix::from_rows(
            &[[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]],
            Orientation::ParamsAsColumns,
        )
        .unwrap();
        let mut t = Vec::new();
        for j in 0..2 {
            for i in 0..3 {
                t.push(d.get(i, j));
            }
        }
        let dt = DerivativeMatrix::new(2, 3, t, Orientation::ParamsAsRows).unwrap();
        let a = gram_jacobian(&d).unwrap().value;
        let b = gram_jacobian(&dt).unwrap().value;
        assert!((a - b).abs() < 1e-14 * a);
    }

    #[test]
    fn rank_deficient_is_degenerate() {
        let d = DerivativeMatrix::from_rows(
            &[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]],
            Orientation::ParamsAsColumns,
        )
        .unwrap();
        let j = gram_jacobian(&d).unwrap();
        assert!(j.degenerate);
        assert_eq!(j.value, 0.0);
    }

    #[test]
    fn rejects_non_finite_entries() {
        let err = DerivativeMatrix::new(1, 2, vec![1.0, f64::NAN], Orientation::ParamsAsColumns);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn oracle_refuses_large_sides() {
        let d = DerivativeMatrix::new(9, 9, vec![1.0; 81], Orientation::ParamsAsColumns).unwrap();
        assert!(matches!(cauchy_binet_oracle(&d), Err(Error::Capacity(_))));
    }

    #[test]
    fn det_identity_examples() {
        assert_eq!(det_identity_reduce(&[0.0; 4], &[0.0; 4]).unwrap(), 1.0);
        assert_eq!(
            det_identity_reduce(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(),
            4.0
        );
        assert!(det_identity_reduce(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn metropolis_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(metropolis_step(0.3, 0.3, &mut rng).unwrap());
            assert!(!metropolis_step(0.3, f64::NEG_INFINITY, &mut rng).unwrap());
        }
        assert!(matches!(
            metropolis_step(f64::NEG_INFINITY, 0.0, &mut rng),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn metropolis_consumes_one_draw() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        metropolis_step(0.0, 10.0, &mut a).unwrap();
        let _: f64 = b.random();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn metropolis_acceptance_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let ratio: f64 = 0.3;
        let accepted = (0..trials)
            .filter(|_| metropolis_step(0.0, ratio.ln(), &mut rng).unwrap())
            .count();
        let freq = accepted as f64 / trials as f64;
        assert!((freq - 0.3).abs() < 0.005, "{freq}");
    }

    #[test]
    fn coarea_zero_density_and_degenerate() {
        let degenerate = JacobianValue::from_squared(0.0, 1.0);
        assert_eq!(
            coarea_conditional_unnormalized(0.0, &degenerate).unwrap(),
            0.0
        );
        assert!(matches!(
            coarea_conditional_unnormalized(1.0, &degenerate),
            Err(Error::Precondition(_))
        ));
    }

    /// Region `{0 < y < |x|^{-1/2}, |x| < 1}` has area 4 but its slice at `x = 0`
    /// is unbounded, so the discretized `m(0)` grows without bound.
    #[test]
    fn infinite_fiber_mass_diverges_under_refinement() {
        let density = 0.25;
        let unit = JacobianValue::from_squared(1.0, 1.0);
        let mass_at = |x: f64, cells: usize| {
            let height = x.abs().powf(-0.5);
            let dy = height / cells as f64;
            fiber_mass((0..cells).map(|_| (density, unit, dy))).unwrap()
        };
        let mut prev = 0.0;
        for k in 1..8 {
            let x = 10f64.powi(-2 * k);
            let m = mass_at(x, 1000);
            assert!((m - 0.25 * 10f64.powi(k)).abs() < 1e-9 * m);
            assert!(m > 5.0 * prev);
            prev = m;
        }
        // a slice away from the cusp stays finite
        assert!((mass_at(0.25, 1000) - 0.5).abs() < 1e-12);
    }
}
