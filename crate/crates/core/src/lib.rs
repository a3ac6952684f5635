//! Sampling from densities on embedded submanifolds of Euclidean space.
//!
//! Samplers work in a chart and weight by the area Jacobian of the chart, so
//! the induced law on the manifold is the intended one. Included are a torus
//! sampler, Metropolis chains on the Gamma sum/product manifold and on the
//! four-moment manifold, conditional goodness-of-fit tests built on those chains,
//! and a finite-state example of a biased neighborhood sampler.

pub mod chain;
mod dd;
pub mod error;
pub mod gamma;
pub mod geometry;
pub mod moment;
pub mod pitfall;
pub mod torus;
pub mod validation;

pub use chain::{
    stream_rng, ChainConfig, ChainRng, MarkovKernel, RejectionReason, StepOutcome, StepTally,
};
pub use error::{Error, Result};
pub use gamma::{ChartPoint, GammaConstraint, GammaKernel, GammaStatistic, GammaTarget};
pub use geometry::{DerivativeMatrix, JacobianValue, Orientation};
pub use moment::{
    AcceptanceRule, CurveMoveRecord, IndexSchedule, MomentState, NeymanKernel, NeymanModel,
    NeymanStatistic,
};
pub use pitfall::{KernelMatrix, NeighborhoodSystem, PitfallReport};
pub use torus::{Envelope, SampleMethod, TorusParams, TorusSample};
pub use validation::TestReport;
