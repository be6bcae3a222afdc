//! Image denoising by generalized edge-enhancing diffusion.
//!
//! The model couples a pluggable diffusion tensor `D(w)` — any continuous
//! map from images to pixel-wise SPD matrix fields — with a convex data
//! term. One application of the solution operator freezes the tensor at the
//! current iterate and minimizes the resulting convex energy; the outer
//! Picard loop drives that operator to a fixed point, which is a discrete
//! weak solution of the quasilinear Neumann problem. The residual of the
//! full equation, reassembled at the iterate itself, is the convergence
//! certificate.
//!
//! Modules:
//! - [`grid`]: fields, masks, discrete differential operators;
//! - [`mollify`]: boundary-renormalized Gaussian smoothing;
//! - [`tensor`]: the bank of diffusion-tensor constructors;
//! - [`solver`]: the frozen-tensor energy, its exact gradient, CG and
//!   damped-Newton minimizers;
//! - [`inpaint`]: the zero-Dirichlet inpainting operator used as a
//!   preconditioner;
//! - [`fixed_point`]: the certified outer iteration;
//! - [`oracle`]: independent dense reference solvers and the selftest
//!   suite.
//!
//! All field math is generic over the scalar type ([`Real`], `f32` or
//! `f64`); the aliases below fix the two concrete widths.

pub mod error;
pub mod fixed_point;
pub mod grid;
pub mod inpaint;
pub mod mollify;
pub mod oracle;
pub mod params;
pub mod scalar;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{default_eps_data, ModelParams, SolverOpts};
pub use scalar::Real;

/// f64 concrete types (the CLI default).
pub type ScalarField64 = grid::ScalarField<f64>;
pub type VectorField64 = grid::VectorField<f64>;
pub type TensorField64 = grid::TensorField<f64>;
pub type GaussianKernel64 = mollify::GaussianKernel<f64>;
pub type SolveReport64 = solver::SolveReport<f64>;
pub type EnergyProblem64 = solver::EnergyProblem<f64>;
pub type FixedPointConfig64 = fixed_point::FixedPointConfig<f64>;
pub type FixedPointTrace64 = fixed_point::FixedPointTrace<f64>;

/// f32 concrete types.
pub type ScalarField32 = grid::ScalarField<f32>;
pub type VectorField32 = grid::VectorField<f32>;
pub type TensorField32 = grid::TensorField<f32>;
pub type GaussianKernel32 = mollify::GaussianKernel<f32>;
pub type SolveReport32 = solver::SolveReport<f32>;
pub type EnergyProblem32 = solver::EnergyProblem<f32>;
