//! Finite-state illustration of a tempting but biased sampler: jumping to a
//! neighbor drawn from `π` restricted to the current neighborhood. The chain is
//! reversible, but with respect to `σ(x) ∝ π(N_x) π(x)` rather than `π`; a
//! Metropolis correction restores `π`.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POWER_TOL: f64 = 1e-14;
pub const POWER_MAX_ITER: usize = 1_000_000;
const ROW_TOL: f64 = 1e-12;

/// Target law and symmetric neighborhoods on `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSystem {
    pi: Vec<f64>,
    neighborhoods: Vec<Vec<usize>>,
}

impl NeighborhoodSystem {
    /// Neighborhood lists are sorted and deduplicated on construction.
    pub fn new(pi: Vec<f64>, mut neighborhoods: Vec<Vec<usize>>) -> Result<Self> {
        let n = pi.len();
        if n == 0 || neighborhoods.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} target weights for {} neighborhoods",
                n,
                neighborhoods.len()
            )));
        }
        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(
                "target weights must be positive".into(),
            ));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "target sums to {total}, not 1"
            )));
        }
        for (x, nx) in neighborhoods.iter_mut().enumerate() {
            nx.sort_unstable();
            nx.dedup();
            if nx.is_empty() {
                return Err(Error::InvalidInput(format!("vertex {x} has no neighbors")));
            }
            if let Some(&y) = nx.iter().find(|&&y| y >= n) {
                return Err(Error::InvalidInput(format!("vertex {y} out of range")));
            }
        }
        for x in 0..n {
            for &y in &neighborhoods[x] {
                if neighborhoods[y].binary_search(&x).is_err() {
                    return Err(Error::InvalidInput(format!(
                        "{y} is a neighbor of {x} but not conversely"
                    )));
                }
            }
        }
        Ok(NeighborhoodSystem { pi, neighborhoods })
    }

    /// Builds neighborhoods from an undirected edge list; `closed` adds `x ∈ N_x`.
    pub fn from_edges(pi: Vec<f64>, edges: &[(usize, usize)], closed: bool) -> Result<Self> {
        let n = pi.len();
        let mut nb = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) out of range")));
            }
            nb[a].push(b);
            nb[b].push(a);
        }
        if closed {
            for (x, nx) in nb.iter_mut().enumerate() {
                nx.push(x);
            }
        }
        Self::new(pi, nb)
    }

    /// Path on three vertices, uniform target, closed 1-balls.
    pub fn path3() -> Self {
        Self::from_edges(vec![1.0 / 3.0; 3], &[(0, 1), (1, 2)], true).expect("valid demo")
    }

    /// Random connected graph with a random target. Open-neighborhood systems
    /// are redrawn until they contain an odd cycle, so the kernel is aperiodic.
    pub fn random<R: Rng + ?Sized>(n: usize, closed: bool, rng: &mut R) -> Result<Self> {
        if n < 2 || (!closed && n < 3) {
            return Err(Error::InvalidInput(format!("too few vertices: {n}")));
        }
        loop {
            let mut edges = Vec::new();
            for v in 1..n {
                edges.push((rng.random_range(0..v), v));
            }
            let extra = rng.random_range(0..=n);
            for _ in 0..extra {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                if a != b {
                    edges.push((a, b));
                }
            }
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            let pi = w.iter().map(|v| v / total).collect();
            let sys = Self::from_edges(pi, &edges, closed)?;
            if closed || is_aperiodic(&sys.kernel_support()) {
                return Ok(sys);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn neighborhood(&self, x: usize) -> &[usize] {
        &self.neighborhoods[x]
    }

    /// `π(N_x)` for every vertex.
    pub fn neighborhood_masses(&self) -> Vec<f64> {
        self.neighborhoods
            .iter()
            .map(|nx| nx.iter().map(|&y| self.pi[y]).sum())
            .collect()
    }

    fn kernel_support(&self) -> Vec<Vec<usize>> {
        self.neighborhoods.clone()
    }
}

/// Row-stochastic square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "{} entries for a {n} x {n} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("entries must be nonnegative".into()));
        }
        for i in 0..n {
            let s: f64 = entries[i * n..(i + 1) * n].iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidInput(format!("row {i} sums to {s}")));
            }
        }
        Ok(KernelMatrix { n, entries })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    fn support(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|i| (0..self.n).filter(|&j| self.get(i, j) > 0.0).collect())
            .collect()
    }

    /// `σ K`.
    pub fn apply_left(&self, sigma: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &s) in sigma.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for (o, &k) in out.iter_mut().zip(self.row(i)) {
                *o += s * k;
            }
        }
        out
    }

    /// `max |σ(x)K(x,y) − σ(y)K(y,x)|`.
    pub fn detailed_balance_error(&self, sigma: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for x in 0..self.n {
            for y in x + 1..self.n {
                worst = worst.max((sigma[x] * self.get(x, y) - sigma[y] * self.get(y, x)).abs());
            }
        }
        worst
    }
}

/// `K(x, y) = π(y) / π(N_x)` for `y ∈ N_x`.
pub fn neighborhood_kernel(sys: &NeighborhoodSystem) -> KernelMatrix {
    let n = sys.len();
    let masses = sys.neighborhood_masses();
    let mut entries = vec![0.0; n * n];
    for x in 0..n {
        for &y in sys.neighborhood(x) {
            entries[x * n + y] = sys.pi[y] / masses[x];
        }
    }
    KernelMatrix { n, entries }
}

/// `M(x, y) = π(y) min(1/π(N_x), 1/π(N_y))` off the diagonal, residual on it.
pub fn metropolized_neighborhood_kernel(sys: &NeighborhoodSystem) -> KernelMatrix {
    let n = sys.len();
    let masses = sys.neighborhood_masses();
    let mut entries = vec![0.0; n * n];
    for x in 0..n {
        let mut off = 0.0;
        for &y in sys.neighborhood(x) {
            if y != x {
                let v = sys.pi[y] * (1.0 / masses[x]).min(1.0 / masses[y]);
                entries[x * n + y] = v;
                off += v;
            }
        }
        assert!(off <= 1.0 + 1e-12, "off-diagonal mass {off} exceeds one");
        entries[x * n + x] = (1.0 - off).max(0.0);
    }
    KernelMatrix { n, entries }
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn is_irreducible(adj: &[Vec<usize>]) -> bool {
    let mut reverse = vec![Vec::new(); adj.len()];
    for (u, vs) in adj.iter().enumerate() {
        for &v in vs {
            reverse[v].push(u);
        }
    }
    reachable(adj, 0).iter().all(Option::is_some)
        && reachable(&reverse, 0).iter().all(Option::is_some)
}

/// Period of an irreducible chain is the gcd of `level(u) + 1 − level(v)` over edges.
fn is_aperiodic(adj: &[Vec<usize>]) -> bool {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let level = reachable(adj, 0);
    let mut g = 0;
    for (u, vs) in adj.iter().enumerate() {
        let Some(lu) = level[u] else { continue };
        for &v in vs {
            if let Some(lv) = level[v] {
                g = gcd(g, (lu + 1).abs_diff(lv));
            }
        }
    }
    g == 1
}

/// Left fixed probability vector of an irreducible aperiodic kernel.
pub fn stationary_distribution(k: &KernelMatrix) -> Result<Vec<f64>> {
    let adj = k.support();
    if !is_irreducible(&adj) {
        return Err(Error::Structure("kernel is reducible".into()));
    }
    if !is_aperiodic(&adj) {
        return Err(Error::Structure("kernel is periodic".into()));
    }
    let n = k.size();
    let mut sigma = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let mut next = k.apply_left(&sigma);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = next.iter().zip(&sigma).map(|(a, b)| (a - b).abs()).sum();
        sigma = next;
        if residual < POWER_TOL {
            break;
        }
    }
    let residual_final: f64 = k
        .apply_left(&sigma)
        .iter()
        .zip(&sigma)
        .map(|(a, b)| (a - b).abs())
        .sum();
    if residual_final.min(residual) >= 1e-12 {
        return Err(Error::InvalidState(format!(
            "power iteration stalled at residual {residual_final:e}"
        )));
    }
    Ok(sigma)
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitfallReport {
    pub pi: Vec<f64>,
    pub neighborhood_masses: Vec<f64>,
    /// `π(N_x) π(x)`, normalized.
    pub sigma_formula: Vec<f64>,
    /// Stationary law of the neighborhood kernel by power iteration.
    pub sigma_empirical: Vec<f64>,
    pub formula_error: f64,
    pub detailed_balance_error: f64,
    /// `‖σ − π‖₁`.
    pub bias: f64,
    pub constant_neighborhood_mass: bool,
    pub metropolized_stationary: Option<Vec<f64>>,
    pub metropolized_error: Option<f64>,
    pub metropolized_ok: bool,
}

pub fn verify_pitfall(sys: &NeighborhoodSystem) -> Result<PitfallReport> {
    let k = neighborhood_kernel(sys);
    let sigma_empirical = stationary_distribution(&k)?;
    let masses = sys.neighborhood_masses();
    let weights: Vec<f64> = masses.iter().zip(&sys.pi).map(|(m, p)| m * p).collect();
    let z: f64 = weights.iter().sum();
    let sigma_formula: Vec<f64> = weights.iter().map(|w| w / z).collect();
    let m0 = masses[0];
    let constant_neighborhood_mass = masses.iter().all(|m| (m - m0).abs() <= 1e-12);

    let m = metropolized_neighborhood_kernel(sys);
    let metropolized_stationary = stationary_distribution(&m).ok();
    let metropolized_error = metropolized_stationary
        .as_ref()
        .map(|s| l1_distance(s, &sys.pi));
    let metropolized_ok =
        metropolized_error.is_some_and(|e| e < 1e-10) && m.detailed_balance_error(&sys.pi) < 1e-12;

    Ok(PitfallReport {
        pi: sys.pi.clone(),
        neighborhood_masses: masses,
        formula_error: l1_distance(&sigma_empirical, &sigma_formula),
        detailed_balance_error: k.detailed_balance_error(&sigma_formula),
        bias: l1_distance(&sigma_empirical, &sys.pi),
        sigma_formula,
        sigma_empirical,
        constant_neighborhood_mass,
        metropolized_stationary,
        metropolized_error,
        metropolized_ok,
    })
}
