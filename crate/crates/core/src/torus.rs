//! Area-measure and naive samplers on the curved torus
//! `((R + r cos θ) cos ψ, (R + r cos θ) sin ψ, r sin θ)`.
//!
//! Area measure in the `(θ, ψ)` chart has density proportional to the Jacobian
//! `r (R + r cos θ)`, so `ψ` is uniform and `θ` has marginal
//! `g₁(θ) = (1 + (r/R) cos θ) / 2π`. Drawing both angles uniformly (the naive
//! sampler) over-weights the inner side of the torus.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    coarea_conditional_unnormalized, gram_jacobian, DerivativeMatrix, JacobianValue, Orientation,
};

/// Major and minor radius, `R > r > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusParams {
    major: f64,
    minor: f64,
}

impl TorusParams {
    pub fn new(major: f64, minor: f64) -> Result<Self> {
        if !(major.is_finite() && minor.is_finite() && minor > 0.0 && major > minor) {
            return Err(Error::InvalidInput(format!(
                "torus radii must satisfy R > r > 0, got R={major}, r={minor}"
            )));
        }
        Ok(TorusParams { major, minor })
    }

    pub fn major(&self) -> f64 {
        self.major
    }

    pub fn minor(&self) -> f64 {
        self.minor
    }

    fn ratio(&self) -> f64 {
        self.minor / self.major
    }

    /// Surface area `4π² R r`.
    pub fn surface_area(&self) -> f64 {
        4.0 * PI * PI * self.major * self.minor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMethod {
    Area,
    Naive,
}

impl SampleMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleMethod::Area => "area",
            SampleMethod::Naive => "naive",
        }
    }
}

/// Height of the constant rejection envelope for `g₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    /// Constant `1/π`; accepts half of all proposals.
    Loose,
    /// `(1 + r/R) / 2π`, the maximum of `g₁`.
    #[default]
    Tight,
}

impl Envelope {
    pub fn height(&self, params: &TorusParams) -> f64 {
        match self {
            Envelope::Loose => 1.0 / PI,
            Envelope::Tight => (1.0 + params.ratio()) / TAU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusSample {
    pub theta: f64,
    pub psi: f64,
    pub point: [f64; 3],
    pub method: SampleMethod,
}

/// Samples plus the number of `(θ, η)` proposals the rejection step consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionRun {
    pub samples: Vec<TorusSample>,
    pub proposals: u64,
}

impl RejectionRun {
    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.proposals as f64
    }
}

fn reduce_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn torus_embed(theta: f64, psi: f64, params: &TorusParams) -> [f64; 3] {
    let theta = reduce_angle(theta);
    let psi = reduce_angle(psi);
    let ring = params.major + params.minor * theta.cos();
    [
        ring * psi.cos(),
        ring * psi.sin(),
        params.minor * theta.sin(),
    ]
}

/// Derivative of the embedding, one column per angle.
pub fn torus_derivative(theta: f64, psi: f64, params: &TorusParams) -> DerivativeMatrix {
    let (r, ring) = (params.minor, params.major + params.minor * theta.cos());
    DerivativeMatrix::from_rows(
        &[
            [-r * theta.sin() * psi.cos(), -ring * psi.sin()],
            [-r * theta.sin() * psi.sin(), ring * psi.cos()],
            [r * theta.cos(), 0.0],
        ],
        Orientation::ParamsAsColumns,
    )
    .expect("torus derivative is finite")
}

/// Marginal density of `θ` under normalized area measure.
pub fn theta_density(theta: f64, params: &TorusParams) -> f64 {
    (1.0 + params.ratio() * theta.cos()) / TAU
}

/// `F(θ) = (θ + (r/R) sin θ) / 2π` on `[0, 2π]`.
pub fn theta_cdf(theta: f64, params: &TorusParams) -> Result<f64> {
    if !(0.0..=TAU).contains(&theta) {
        return Err(Error::InvalidInput(format!(
            "theta must lie in [0, 2π], got {theta}"
        )));
    }
    Ok(((theta + params.ratio() * theta.sin()) / TAU).clamp(0.0, 1.0))
}

/// Exact area-measure samples: `ψ` uniform, `θ` by rejection from `g₁`.
pub fn sample_torus_area<R: Rng + ?Sized>(
    n: usize,
    params: &TorusParams,
    envelope: Envelope,
    rng: &mut R,
) -> RejectionRun {
    let height = envelope.height(params);
    let mut samples = Vec::with_capacity(n);
    let mut proposals = 0u64;
    for _ in 0..n {
        let psi = rng.random::<f64>() * TAU;
        let theta = loop {
            proposals += 1;
            let theta = rng.random::<f64>() * TAU;
            let eta = rng.random::<f64>() * height;
            if eta < theta_density(theta, params) {
                break theta;
            }
        };
        samples.push(TorusSample {
            theta,
            psi,
            point: torus_embed(theta, psi, params),
            method: SampleMethod::Area,
        });
    }
    RejectionRun { samples, proposals }
}

/// Both angles uniform, mapped through the embedding.
pub fn sample_torus_naive<R: Rng + ?Sized>(
    n: usize,
    params: &TorusParams,
    rng: &mut R,
) -> Vec<TorusSample> {
    (0..n)
        .map(|_| {
            let theta = rng.random::<f64>() * TAU;
            let psi = rng.random::<f64>() * TAU;
            TorusSample {
                theta,
                psi,
                point: torus_embed(theta, psi, params),
                method: SampleMethod::Naive,
            }
        })
        .collect()
}

/// Jacobian of `Φ(θ, ψ) = (R + r cos θ) cos ψ`, the ambient `x` coordinate.
pub fn x_coordinate_jacobian(theta: f64, psi: f64, params: &TorusParams) -> JacobianValue {
    let d = DerivativeMatrix::from_rows(
        &[[
            -params.minor * theta.sin() * psi.cos(),
            -(params.major + params.minor * theta.cos()) * psi.sin(),
        ]],
        Orientation::ParamsAsRows,
    )
    .expect("finite derivative");
    gram_jacobian(&d).expect("finite derivative")
}

/// Conditional law on the slice `x = 0`, evaluated on a `θ` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub grid: usize,
    /// Largest `|c(θ)/mean − 1|` over both branches, `c = p/JΦ`.
    pub max_relative_deviation: f64,
    /// Conditional mass on `ψ = π/2` and `ψ = 3π/2`.
    pub branch_masses: [f64; 2],
    /// Largest `|JΦ(θ, ψ) − (R + r cos θ)|` on the slice.
    pub max_jacobian_error: f64,
}

/// Checks that the co-area conditional density on `Φ⁻¹(0)` is flat in `θ` and
/// splits its mass evenly between the two branches.
pub fn conditional_slice_check(params: &TorusParams, grid: usize) -> Result<SliceReport> {
    if grid < 2 {
        return Err(Error::InvalidInput("grid needs at least two points".into()));
    }
    let h = TAU / grid as f64;
    let mut values = Vec::with_capacity(2 * grid);
    let mut masses = [0.0; 2];
    let mut max_jacobian_error: f64 = 0.0;
    for (b, psi) in [FRAC_PI_2, 3.0 * FRAC_PI_2].into_iter().enumerate() {
        for i in 0..grid {
            let theta = (i as f64 + 0.5) * h;
            let jac = x_coordinate_jacobian(theta, psi, params);
            let expect = params.major + params.minor * theta.cos();
            max_jacobian_error = max_jacobian_error.max((jac.value - expect).abs());
            let c = coarea_conditional_unnormalized(theta_density(theta, params), &jac)?;
            masses[b] += c * h;
            values.push(c);
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max_relative_deviation = values
        .iter()
        .map(|c| (c / mean - 1.0).abs())
        .fold(0.0, f64::max);
    let total = masses[0] + masses[1];
    Ok(SliceReport {
        grid,
        max_relative_deviation,
        branch_masses: [masses[0] / total, masses[1] / total],
        max_jacobian_error,
    })
}
