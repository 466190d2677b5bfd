//! Lp Wasserstein contraction of diffusion semigroups along synchronous
//! couplings: Monte Carlo contraction coefficients and Lyapunov exponents,
//! the Feynman-Kac spectral criterion in one dimension, the explicit hybrid
//! reflection/synchronous coupling with its closed-form constants, and the
//! analytic contraction certificates for elliptic, kinetic and colored-noise
//! models.

pub mod coupling;
pub mod expr;
pub mod fk;
pub mod mc;
pub mod model;
pub mod quad;
pub mod rng;
pub mod sde;

pub use expr::{ExprError, ScalarExpr};
pub use model::{
    kinetic_langevin, ornstein_uhlenbeck, overdamped_1d, BuiltinModel, ColoredNoiseModel,
    DriftModel, MetricChange, ModelError, StateDecomposition,
};
pub use rng::RngStream;
pub use sde::{em_step, integrate_pair, integrate_tangent, PathState, SdeError};
