//! The tensor bank: constructors mapping an image to a pixel-wise SPD
//! diffusion tensor field. Five families are provided — the explicit
//! edge-attenuating tensor, its gradient-weighted variant, a Galerkin
//! projection, and two preconditioned forms driven by the inpainting
//! operator — all continuous in the image argument, which is what the
//! fixed-point driver relies on.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{
    gradient_central, inner_product_l2, l2_norm, w12_norm, Grid, Mask, ScalarField, TensorField,
};
use crate::inpaint;
use crate::mollify::mollify;
use crate::params::{ModelParams, SolverOpts};
use crate::scalar::Real;

/// Scalar constants steering the tensor bank. Constructed through
/// [`TensorParams::new`] so every consumer can rely on the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorParams {
    sigma: f64,
    mu: f64,
    delta: f64,
    p_weight: f64,
    eps_weight: f64,
}

impl TensorParams {
    pub fn new(sigma: f64, mu: f64, delta: f64, p_weight: f64, eps_weight: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParam(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidParam("mu must be finite".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParam(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if !(p_weight > 1.0) || !p_weight.is_finite() {
            return Err(Error::InvalidParam(format!(
                "p_weight must exceed 1, got {p_weight}"
            )));
        }
        if !(eps_weight > 0.0) || !eps_weight.is_finite() {
            return Err(Error::InvalidParam(format!(
                "eps_weight must be positive, got {eps_weight}"
            )));
        }
        Ok(Self {
            sigma,
            mu,
            delta,
            p_weight,
            eps_weight,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn p_weight(&self) -> f64 {
        self.p_weight
    }

    pub fn eps_weight(&self) -> f64 {
        self.eps_weight
    }
}

impl Default for TensorParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            mu: 1.0,
            delta: 1.0,
            p_weight: 2.0,
            eps_weight: 1e-6,
        }
    }
}

/// The edge-attenuating matrix for gradient `g`: eigenvalue 1 along the
/// level line, `(1 + |g|^2)^(-mu/2)` across it, returned in Cartesian
/// coordinates. At `g = 0` the frame is undefined but the limit is the
/// identity for any `mu`, so the singularity is removable.
#[inline]
pub(crate) fn eed_entries<T: Real>(gx: T, gy: T, mu: T) -> (T, T, T) {
    let g2 = gx * gx + gy * gy;
    if g2 == T::zero() {
        return (T::one(), T::zero(), T::one());
    }
    let kappa = (T::one() + g2).powf(-mu * T::val(0.5));
    let a11 = (gy * gy + kappa * gx * gx) / g2;
    let a12 = (kappa - T::one()) * gx * gy / g2;
    let a22 = (gx * gx + kappa * gy * gy) / g2;
    (a11, a12, a22)
}

/// D1: edge-enhancing tensor of the mollified gradient. SPD for every `mu`
/// since both eigenvalues are positive powers.
pub fn eed_tensor<T: Real>(u: &ScalarField<T>, params: &TensorParams) -> TensorField<T> {
    let smooth = mollify(u, params.sigma).expect("sigma validated positive");
    let g = gradient_central(&smooth);
    let mu = T::val(params.mu);
    let n = u.grid().len();
    let mut a11 = Vec::with_capacity(n);
    let mut a12 = Vec::with_capacity(n);
    let mut a22 = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b, c) = eed_entries(g.x(k), g.y(k), mu);
        a11.push(a);
        a12.push(b);
        a22.push(c);
    }
    TensorField::from_entries(u.grid(), a11, a12, a22).expect("entries are finite")
}

/// D2: D1 scaled pixel-wise by `(eps_weight + |grad u_delta|^2)^(p/2)`.
/// The floor keeps the matrix SPD where the second-scale gradient
/// vanishes, where the unregularized weight would degenerate to zero.
pub fn weighted_eed_tensor<T: Real>(u: &ScalarField<T>, params: &TensorParams) -> TensorField<T> {
    let base = eed_tensor(u, params);
    let smooth = mollify(u, params.delta).expect("delta validated positive");
    let g = gradient_central(&smooth);
    let eps = T::val(params.eps_weight);
    let half_p = T::val(params.p_weight * 0.5);
    let scale: Vec<T> = (0..u.grid().len())
        .map(|k| (eps + g.norm_sq(k)).powf(half_p))
        .collect();
    base.scale_pixelwise(&scale)
}

/// Basis for the Galerkin-projected tensor D3: fixed fields `v_1..v_N` and
/// a generator turning the projected image into a tensor field.
pub struct GalerkinBasis<T: Real> {
    functions: Vec<ScalarField<T>>,
    generator: Box<dyn Fn(&ScalarField<T>) -> TensorField<T> + Send + Sync>,
}

impl<T: Real> fmt::Debug for GalerkinBasis<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GalerkinBasis")
            .field("functions", &self.functions.len())
            .finish()
    }
}

impl<T: Real> GalerkinBasis<T> {
    pub fn new(
        functions: Vec<ScalarField<T>>,
        generator: Box<dyn Fn(&ScalarField<T>) -> TensorField<T> + Send + Sync>,
    ) -> Result<Self> {
        let first = functions
            .first()
            .ok_or_else(|| Error::InvalidParam("Galerkin basis needs at least one field".into()))?;
        let grid = first.grid();
        if functions.iter().any(|v| v.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            functions,
            generator,
        })
    }

    /// Basis with the default generator: the edge-attenuating tensor of the
    /// projected field.
    pub fn with_eed_generator(functions: Vec<ScalarField<T>>, params: TensorParams) -> Result<Self> {
        Self::new(
            functions,
            Box::new(move |field| eed_tensor(field, &params)),
        )
    }

    /// Default basis: the first four products of half-period sines, zero on
    /// the boundary ring and L2-normalized. Needs at least one interior
    /// pixel in each direction.
    pub fn harmonic(grid: Grid, params: TensorParams) -> Result<Self> {
        if grid.width() < 3 || grid.height() < 3 {
            return Err(Error::InvalidParam(
                "harmonic Galerkin basis needs a grid of at least 3x3".into(),
            ));
        }
        let mut functions = Vec::new();
        for (kx, ky) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            let raw = ScalarField::from_fn(grid, |i, j| {
                let x = std::f64::consts::PI * kx as f64 * i as f64 / (grid.width() - 1) as f64;
                let y = std::f64::consts::PI * ky as f64 * j as f64 / (grid.height() - 1) as f64;
                T::val(x.sin() * y.sin())
            })?;
            let norm = l2_norm(&raw);
            functions.push(raw.scaled(T::one() / norm));
        }
        Self::with_eed_generator(functions, params)
    }

    pub fn functions(&self) -> &[ScalarField<T>] {
        &self.functions
    }
}

/// D3: projects `u` onto the basis in `L^2` and hands the projected field
/// to the generator. The generator output is required to be SPD.
pub fn galerkin_tensor<T: Real>(
    u: &ScalarField<T>,
    basis: &GalerkinBasis<T>,
) -> Result<TensorField<T>> {
    let grid = u.grid();
    if basis.functions[0].grid() != grid {
        return Err(Error::GridMismatch);
    }
    let mut projected = ScalarField::zeros(grid);
    for v in &basis.functions {
        let c = inner_product_l2(u, v)?;
        projected = projected.lin_comb(T::one(), v, c);
    }
    let tensor = (basis.generator)(&projected);
    if let Some(index) = tensor.spd_violation() {
        return Err(Error::NotSpd { index });
    }
    Ok(tensor)
}

/// Pixel-wise coefficient map `d(x, y, p)` for the preconditioned tensors:
/// position, preconditioned value, preconditioned gradient in, symmetric
/// matrix out.
pub enum CoefficientMap<T: Real> {
    /// Edge-attenuating form of the preconditioned gradient (the default;
    /// the prototype tensor applied without further mollification).
    EedForm { mu: f64 },
    Custom(Box<dyn Fn((f64, f64), T, (T, T)) -> (T, T, T) + Send + Sync>),
}

impl<T: Real> fmt::Debug for CoefficientMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EedForm { mu } => f.debug_struct("EedForm").field("mu", mu).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl<T: Real> CoefficientMap<T> {
    /// Wraps a user map after a spot check that it produces SPD matrices on
    /// a small deterministic argument sample.
    pub fn custom(
        map: Box<dyn Fn((f64, f64), T, (T, T)) -> (T, T, T) + Send + Sync>,
    ) -> Result<Self> {
        let positions = [(0.0, 0.0), (1.0, 0.5), (3.0, 2.0)];
        let values = [-1.0, 0.0, 0.7];
        let grads = [(0.0, 0.0), (1.0, 0.0), (0.3, -2.0)];
        for &x in &positions {
            for &y in &values {
                for &(px, py) in &grads {
                    let (a, b, c) = map(x, T::val(y), (T::val(px), T::val(py)));
                    if !(a > T::zero() && c > T::zero() && a * c - b * b > T::zero()) {
                        return Err(Error::NotSpd { index: 0 });
                    }
                }
            }
        }
        Ok(Self::Custom(map))
    }

    fn apply(&self, pos: (f64, f64), value: T, grad: (T, T)) -> (T, T, T) {
        match self {
            Self::EedForm { mu } => eed_entries(grad.0, grad.1, T::val(*mu)),
            Self::Custom(map) => map(pos, value, grad),
        }
    }
}

/// Shared body of D4 and D5: precondition `u` through the inpainting solve,
/// then evaluate the coefficient map on the result.
fn preconditioned_tensor<T: Real>(
    u: &ScalarField<T>,
    mask: &Mask,
    s: f64,
    lambda_pre: f64,
    coeff: &CoefficientMap<T>,
    opts: &SolverOpts,
) -> Result<TensorField<T>> {
    let report = inpaint::solve_i(u, s, lambda_pre, mask, opts)?;
    if !report.converged {
        return Err(Error::InnerSolveFailed {
            iterations: report.iterations,
            grad_norm: report.final_gradient_norm.to_f64().unwrap_or(f64::NAN),
        });
    }
    let hat = report.solution;
    let g = gradient_central(&hat);
    let grid = u.grid();
    let n = grid.len();
    let mut a11 = Vec::with_capacity(n);
    let mut a12 = Vec::with_capacity(n);
    let mut a22 = Vec::with_capacity(n);
    for j in 0..grid.height() {
        for i in 0..grid.width() {
            let k = grid.idx(i, j);
            let (a, b, c) = coeff.apply(grid.pos(i, j), hat.values()[k], (g.x(k), g.y(k)));
            a11.push(a);
            a12.push(b);
            a22.push(c);
        }
    }
    let tensor = TensorField::from_entries(grid, a11, a12, a22)?;
    if let Some(index) = tensor.spd_violation() {
        return Err(Error::NotSpd { index });
    }
    Ok(tensor)
}

/// D4: Whittaker-Tikhonov preconditioner — the quadratic inpainting solve
/// over the full domain feeds the coefficient map.
pub fn tikhonov_tensor<T: Real>(
    u: &ScalarField<T>,
    lambda_pre: f64,
    coeff: &CoefficientMap<T>,
    opts: &SolverOpts,
) -> Result<TensorField<T>> {
    preconditioned_tensor(u, &Mask::full(u.grid()), 2.0, lambda_pre, coeff, opts)
}

/// D5: inpainting preconditioner with the exponent gate `1 < s < 1 + t/2`.
/// With `s = 2` and a full mask this is bit-identical to [`tikhonov_tensor`]
/// on the same solver settings.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_tensor<T: Real>(
    u: &ScalarField<T>,
    mask: &Mask,
    s: f64,
    t: f64,
    lambda_pre: f64,
    coeff: &CoefficientMap<T>,
    opts: &SolverOpts,
) -> Result<TensorField<T>> {
    check_exponent_gate(s, t)?;
    preconditioned_tensor(u, mask, s, lambda_pre, coeff, opts)
}

/// The admissibility condition tying the inpainting exponent to the data
/// exponent: `1 < s < 1 + t/2`.
pub fn check_exponent_gate(s: f64, t: f64) -> Result<()> {
    if s > 1.0 && s < 1.0 + t / 2.0 {
        Ok(())
    } else {
        Err(Error::ExponentGate { s, t })
    }
}

/// A generalized diffusion tensor: any continuous map from images to
/// pixel-wise SPD tensor fields. The fixed-point driver and the probes are
/// generic over this.
pub trait DiffusionTensor<T: Real>: Send + Sync {
    fn tensor(&self, w: &ScalarField<T>) -> Result<TensorField<T>>;
}

pub struct EedTensor {
    pub params: TensorParams,
}

impl<T: Real> DiffusionTensor<T> for EedTensor {
    fn tensor(&self, w: &ScalarField<T>) -> Result<TensorField<T>> {
        Ok(eed_tensor(w, &self.params))
    }
}

pub struct WeightedEedTensor {
    pub params: TensorParams,
}

impl<T: Real> DiffusionTensor<T> for WeightedEedTensor {
    fn tensor(&self, w: &ScalarField<T>) -> Result<TensorField<T>> {
        Ok(weighted_eed_tensor(w, &self.params))
    }
}

pub struct GalerkinTensor<T: Real> {
    pub basis: GalerkinBasis<T>,
}

impl<T: Real> DiffusionTensor<T> for GalerkinTensor<T> {
    fn tensor(&self, w: &ScalarField<T>) -> Result<TensorField<T>> {
        galerkin_tensor(w, &self.basis)
    }
}

pub struct TikhonovTensor<T: Real> {
    pub lambda_pre: f64,
    pub coeff: CoefficientMap<T>,
    pub opts: SolverOpts,
}

impl<T: Real> DiffusionTensor<T> for TikhonovTensor<T> {
    fn tensor(&self, w: &ScalarField<T>) -> Result<TensorField<T>> {
        tikhonov_tensor(w, self.lambda_pre, &self.coeff, &self.opts)
    }
}

pub struct InpaintTensor<T: Real> {
    pub mask: Mask,
    pub s: f64,
    pub t: f64,
    pub lambda_pre: f64,
    pub coeff: CoefficientMap<T>,
    pub opts: SolverOpts,
}

impl<T: Real> DiffusionTensor<T> for InpaintTensor<T> {
    fn tensor(&self, w: &ScalarField<T>) -> Result<TensorField<T>> {
        inpaint_tensor(
            w,
            &self.mask,
            self.s,
            self.t,
            self.lambda_pre,
            &self.coeff,
            &self.opts,
        )
    }
}

/// The tensor families exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Eed,
    Weighted,
    Galerkin,
    Tikhonov,
    Inpaint,
}

impl std::str::FromStr for TensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eed" => Ok(Self::Eed),
            "weighted" => Ok(Self::Weighted),
            "galerkin" => Ok(Self::Galerkin),
            "tikhonov" => Ok(Self::Tikhonov),
            "inpaint" => Ok(Self::Inpaint),
            other => Err(Error::InvalidParam(format!(
                "unknown tensor kind '{other}' (expected eed | weighted | galerkin | tikhonov | inpaint)"
            ))),
        }
    }
}

impl fmt::Display for TensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Eed => "eed",
            Self::Weighted => "weighted",
            Self::Galerkin => "galerkin",
            Self::Tikhonov => "tikhonov",
            Self::Inpaint => "inpaint",
        })
    }
}

/// Builds the named constructor with the model defaults: harmonic basis for
/// the Galerkin family, edge-attenuating coefficient map for the
/// preconditioned families, exponent gate checked up front.
pub fn make_tensor<T: Real>(
    kind: TensorKind,
    params: &ModelParams,
    mask: &Mask,
) -> Result<Box<dyn DiffusionTensor<T>>> {
    let tp = params.tensor_params()?;
    Ok(match kind {
        TensorKind::Eed => Box::new(EedTensor { params: tp }),
        TensorKind::Weighted => Box::new(WeightedEedTensor { params: tp }),
        TensorKind::Galerkin => Box::new(GalerkinTensor {
            basis: GalerkinBasis::harmonic(mask.grid(), tp)?,
        }),
        TensorKind::Tikhonov => Box::new(TikhonovTensor {
            lambda_pre: params.lambda_pre,
            coeff: CoefficientMap::EedForm { mu: params.mu },
            opts: params.solver,
        }),
        TensorKind::Inpaint => {
            check_exponent_gate(params.s, params.t)?;
            Box::new(InpaintTensor {
                mask: mask.clone(),
                s: params.s,
                t: params.t,
                lambda_pre: params.lambda_pre,
                coeff: CoefficientMap::EedForm { mu: params.mu },
                opts: params.solver,
            })
        }
    })
}

/// Continuity probe for a tensor constructor: perturbs `u` by `n_trials`
/// random directions of `W^{1,2}` size `step` and records the worst
/// sup-norm tensor deviation, the numerical shadow of the continuity
/// assumption on the tensor map.
#[derive(Debug, Clone)]
pub struct TensorProbeReport {
    pub step: f64,
    pub trials: usize,
    pub max_deviation: f64,
    /// `max_deviation / step` — an empirical modulus-of-continuity slope,
    /// tracked as a regression baseline.
    pub ratio: f64,
}

pub fn tensor_continuity_probe<T: Real>(
    make: &dyn DiffusionTensor<T>,
    u: &ScalarField<T>,
    n_trials: usize,
    step: f64,
    seed: u64,
) -> Result<TensorProbeReport> {
    if step < 0.0 || !step.is_finite() {
        return Err(Error::InvalidParam("step must be nonnegative".into()));
    }
    let base = make.tensor(u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_deviation = 0.0f64;
    for _ in 0..n_trials {
        let raw = ScalarField::from_fn(u.grid(), |_, _| T::val(rng.gen_range(-1.0..1.0)))?;
        let norm = w12_norm(&raw);
        let delta = if step == 0.0 || norm == T::zero() {
            ScalarField::zeros(u.grid())
        } else {
            raw.scaled(T::val(step) / norm)
        };
        let moved = make.tensor(&u.lin_comb(T::one(), &delta, T::one()))?;
        let dev = tensor_sup_distance(&base, &moved);
        max_deviation = max_deviation.max(dev);
    }
    Ok(TensorProbeReport {
        step,
        trials: n_trials,
        max_deviation,
        ratio: if step > 0.0 {
            max_deviation / step
        } else {
            0.0
        },
    })
}

fn tensor_sup_distance<T: Real>(a: &TensorField<T>, b: &TensorField<T>) -> f64 {
    let mut worst = T::zero();
    for k in 0..a.grid().len() {
        let (a1, a2, a3) = a.entries(k);
        let (b1, b2, b3) = b.entries(k);
        worst = worst
            .max((a1 - b1).abs())
            .max((a2 - b2).abs())
            .max((a3 - b3).abs());
    }
    worst.to_f64().unwrap_or(f64::NAN)
}
