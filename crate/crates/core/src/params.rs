//! Model constants and inner-solver settings shared across the crate.

use crate::error::{Error, Result};
use crate::tensor::TensorParams;

/// Inner-solver knobs.
///
/// `tol_inner` is a gradient sup-norm tolerance for fields scaled to
/// `[0, 1]`; the effective stopping threshold is `tol_inner * max(1, lambda)`
/// because the data term scales every gradient entry by `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOpts {
    /// Gradient sup-norm tolerance (on [0,1]-scaled fields).
    pub tol_inner: f64,
    /// Relative residual target for conjugate-gradient solves.
    pub tol_cg: f64,
    /// Newton iteration cap.
    pub max_newton: usize,
    /// CG iteration cap as a multiple of the pixel count.
    pub cg_cap_factor: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            tol_inner: 1e-8,
            tol_cg: 1e-10,
            max_newton: 200,
            cg_cap_factor: 10,
        }
    }
}

impl SolverOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_inner > 0.0) || !(self.tol_cg > 0.0) {
            return Err(Error::InvalidParam(
                "solver tolerances must be positive".into(),
            ));
        }
        if self.max_newton == 0 || self.cg_cap_factor == 0 {
            return Err(Error::InvalidParam(
                "solver iteration caps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Default data-term smoothing: `|r|^t` is non-Lipschitz at 0 for t < 2, so
/// those exponents get a small floor; t >= 2 runs unsmoothed.
pub fn default_eps_data(t: f64) -> f64 {
    if t < 2.0 {
        1e-9
    } else {
        0.0
    }
}

/// The scalar model constants: data weight `lambda`, data exponent `t`,
/// mollification scale `sigma`, tensor exponent `mu`, second smoothing scale
/// `delta` with weight exponent `p_weight`, inpainting exponent `s` with its
/// own coupling `lambda_pre`, plus solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    pub t: f64,
    pub sigma: f64,
    pub mu: f64,
    pub delta: f64,
    pub p_weight: f64,
    pub eps_weight: f64,
    /// Inpainting-operator exponent (preconditioner tensors).
    pub s: f64,
    /// Coupling constant of the preconditioner solve; deliberately separate
    /// from the model `lambda`.
    pub lambda_pre: f64,
    /// Smoothing of `|.|^t`; must be positive when `t < 2`.
    pub eps_data: f64,
    pub solver: SolverOpts,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            t: 2.0,
            sigma: 1.0,
            mu: 1.0,
            delta: 1.0,
            p_weight: 2.0,
            eps_weight: 1e-6,
            s: 1.75,
            lambda_pre: 1.0,
            eps_data: 0.0,
            solver: SolverOpts::default(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParam(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.t > 1.0) {
            return Err(Error::InvalidParam(format!(
                "t must exceed 1, got {}",
                self.t
            )));
        }
        if self.t < 2.0 && !(self.eps_data > 0.0) {
            return Err(Error::InvalidParam(format!(
                "t = {} < 2 needs eps_data > 0 (default {})",
                self.t,
                default_eps_data(self.t)
            )));
        }
        if self.eps_data < 0.0 {
            return Err(Error::InvalidParam("eps_data must be nonnegative".into()));
        }
        if !(self.s > 1.0) {
            return Err(Error::InvalidParam(format!(
                "s must exceed 1, got {}",
                self.s
            )));
        }
        if !(self.lambda_pre > 0.0) {
            return Err(Error::InvalidParam(format!(
                "lambda_pre must be positive, got {}",
                self.lambda_pre
            )));
        }
        self.tensor_params()?;
        self.solver.validate()
    }

    /// The subset steering the tensor bank.
    pub fn tensor_params(&self) -> Result<TensorParams> {
        TensorParams::new(
            self.sigma,
            self.mu,
            self.delta,
            self.p_weight,
            self.eps_weight,
        )
    }
}
