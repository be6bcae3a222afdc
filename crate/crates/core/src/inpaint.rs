//! The inpainting operator `I`: minimize
//! `h^2 sum |grad u|^2 + lambda h^2 sum_K phi_s(u - w)` over fields that
//! vanish on the boundary pixel ring (the discrete zero-Dirichlet class).
//! Used as the preconditioner inside the Tikhonov and inpainting tensors,
//! and probed for continuity and boundedness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{gradient_forward, w12_norm, Mask, ScalarField, TensorField};
use crate::params::{default_eps_data, SolverOpts};
use crate::scalar::{pairwise_map_sum, Real};
use crate::solver::{minimize, Boundary, EnergyProblem, SolveReport};

/// Ingredients of one inpainting solve.
#[derive(Debug, Clone)]
pub struct InpaintProblem<T: Real> {
    pub w: ScalarField<T>,
    pub mask: Mask,
    pub s: f64,
    pub lambda: f64,
    pub eps_data: f64,
}

impl<T: Real> InpaintProblem<T> {
    pub fn new(w: ScalarField<T>, mask: Mask, s: f64, lambda: f64) -> Result<Self> {
        Self::with_eps(w, mask, s, lambda, default_eps_data(s))
    }

    pub fn with_eps(
        w: ScalarField<T>,
        mask: Mask,
        s: f64,
        lambda: f64,
        eps_data: f64,
    ) -> Result<Self> {
        if w.grid() != mask.grid() {
            return Err(Error::GridMismatch);
        }
        if !(s > 1.0) || !s.is_finite() {
            return Err(Error::InvalidParam(format!("s must exceed 1, got {s}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            w,
            mask,
            s,
            lambda,
            eps_data,
        })
    }

    /// The equivalent frozen-tensor energy: a scaled identity tensor of
    /// weight 2 turns the solver's `1/2 A grad.grad` into `|grad|^2`.
    fn energy_problem(&self) -> Result<EnergyProblem<T>> {
        EnergyProblem::new(
            TensorField::scaled_identity(self.w.grid(), T::val(2.0)),
            self.w.clone(),
            self.mask.clone(),
            self.lambda,
            self.s,
            self.eps_data,
        )
    }
}

/// Applies the inpainting operator. The minimizer vanishes on the boundary
/// ring exactly; the iteration starts from the admissible zero field, so
/// the achieved energy never exceeds the energy of zero (the minimality
/// estimate used by the boundedness proof).
pub fn solve_i<T: Real>(
    w: &ScalarField<T>,
    s: f64,
    lambda: f64,
    mask: &Mask,
    opts: &SolverOpts,
) -> Result<SolveReport<T>> {
    let problem = InpaintProblem::new(w.clone(), mask.clone(), s, lambda)?;
    solve_problem(&problem, opts)
}

pub fn solve_problem<T: Real>(
    problem: &InpaintProblem<T>,
    opts: &SolverOpts,
) -> Result<SolveReport<T>> {
    let ep = problem.energy_problem()?;
    let start = ScalarField::zeros(problem.w.grid());
    minimize(&ep, &start, Boundary::DirichletRing, opts)
}

/// Scales a direction field to the requested discrete `W^{1,2}` norm.
fn scaled_direction<T: Real>(dir: &ScalarField<T>, target: f64) -> ScalarField<T> {
    let norm = w12_norm(dir);
    if target == 0.0 || norm == T::zero() {
        return ScalarField::zeros(dir.grid());
    }
    dir.scaled(T::val(target) / norm)
}

fn random_field<T: Real>(grid: crate::grid::Grid, rng: &mut ChaCha8Rng) -> ScalarField<T> {
    ScalarField::from_fn(grid, |_, _| T::val(rng.gen_range(-1.0..1.0)))
        .expect("bounded random values")
}

/// One row of the continuity probe: perturbation size and the deviation it
/// produced.
#[derive(Debug, Clone, Copy)]
pub struct ContinuityRow {
    pub step: f64,
    pub deviation: f64,
    /// deviation / step; constant across rows when the operator is linear.
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuityReport {
    pub rows: Vec<ContinuityRow>,
    /// Deviations are non-increasing as the steps decrease.
    pub monotone: bool,
}

/// Probes the continuity of `I` in `W^{1,2}`: one random direction is drawn
/// per seed and rescaled to each step, so the recorded deviations are
/// comparable across steps.
pub fn continuity_probe<T: Real>(
    w: &ScalarField<T>,
    steps: &[f64],
    s: f64,
    lambda: f64,
    mask: &Mask,
    opts: &SolverOpts,
    seed: u64,
) -> Result<ContinuityReport> {
    if steps.windows(2).any(|p| p[1] > p[0]) || steps.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParam(
            "steps must be nonnegative and non-increasing".into(),
        ));
    }
    let base = solve_i(w, s, lambda, mask, opts)?;
    ensure_converged(&base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = random_field::<T>(w.grid(), &mut rng);
    let mut rows = Vec::with_capacity(steps.len());
    for &step in steps {
        let wp = w.lin_comb(T::one(), &scaled_direction(&dir, step), T::one());
        let moved = solve_i(&wp, s, lambda, mask, opts)?;
        ensure_converged(&moved)?;
        let deviation = w12_norm(&moved.solution.lin_comb(T::one(), &base.solution, -T::one()));
        let deviation = deviation.to_f64().unwrap_or(f64::NAN);
        let ratio = if step > 0.0 { deviation / step } else { 0.0 };
        rows.push(ContinuityRow {
            step,
            deviation,
            ratio,
        });
    }
    let monotone = rows.windows(2).all(|p| p[1].deviation <= p[0].deviation);
    Ok(ContinuityReport { rows, monotone })
}

#[derive(Debug, Clone)]
pub struct BoundednessReport {
    /// `p = t / (s - 1)`, the exponent of the recorded second-difference norm.
    pub p: f64,
    /// Per-sample discrete `W^{2,p}` seminorms of `I(w)`.
    pub seminorms: Vec<f64>,
    pub max_seminorm: f64,
}

/// Regression-style proxy for the `W^{2,p}` boundedness of `I` on the data
/// ball: samples fields with `||w||_{L^t(K)} <= R` and records a discrete
/// second-difference `p`-norm of `I(w)`. The continuum constants are not
/// numerically assertable, so the report is a baseline, not a theorem.
#[allow(clippy::too_many_arguments)]
pub fn boundedness_probe<T: Real>(
    grid: crate::grid::Grid,
    mask: &Mask,
    r_bound: f64,
    t: f64,
    s: f64,
    lambda: f64,
    n_samples: usize,
    opts: &SolverOpts,
    seed: u64,
) -> Result<BoundednessReport> {
    if !(s > 1.0 && s < 1.0 + t / 2.0) {
        return Err(Error::ExponentGate { s, t });
    }
    if !(r_bound > 0.0) {
        return Err(Error::InvalidParam("R must be positive".into()));
    }
    let p = t / (s - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seminorms = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let raw = random_field::<T>(grid, &mut rng);
        let norm = lt_norm_on_mask(&raw, mask, t);
        let w = if norm > 0.0 {
            raw.scaled(T::val(r_bound / norm))
        } else {
            raw
        };
        let report = solve_i(&w, s, lambda, mask, opts)?;
        ensure_converged(&report)?;
        seminorms.push(second_difference_p_norm(&report.solution, p));
    }
    let max_seminorm = seminorms.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(BoundednessReport {
        p,
        seminorms,
        max_seminorm,
    })
}

fn ensure_converged<T: Real>(report: &SolveReport<T>) -> Result<()> {
    if report.converged {
        Ok(())
    } else {
        Err(Error::InnerSolveFailed {
            iterations: report.iterations,
            grad_norm: report.final_gradient_norm.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// `(h^2 sum_K |w|^t)^(1/t)`.
fn lt_norm_on_mask<T: Real>(w: &ScalarField<T>, mask: &Mask, t: f64) -> f64 {
    let h2 = w.grid().spacing() * w.grid().spacing();
    let vals = w.values();
    let total = pairwise_map_sum(vals.len(), &|k| {
        if mask.is_set(k) {
            T::val(vals[k].abs().to_f64().unwrap_or(0.0).powf(t))
        } else {
            T::zero()
        }
    });
    (h2 * total.to_f64().unwrap_or(0.0)).powf(1.0 / t)
}

/// Discrete second-difference `p`-norm over interior pixels:
/// `(h^2 sum |D2 u|^p)^(1/p)` with `|D2 u|^2 = uxx^2 + 2 uxy^2 + uyy^2`.
fn second_difference_p_norm<T: Real>(u: &ScalarField<T>, p: f64) -> f64 {
    let g = u.grid();
    let h = g.spacing();
    let mut total = 0.0f64;
    for j in 1..g.height() - 1 {
        for i in 1..g.width() - 1 {
            let c = u.get(i, j).to_f64().unwrap();
            let xx = (u.get(i + 1, j).to_f64().unwrap() - 2.0 * c
                + u.get(i - 1, j).to_f64().unwrap())
                / (h * h);
            let yy = (u.get(i, j + 1).to_f64().unwrap() - 2.0 * c
                + u.get(i, j - 1).to_f64().unwrap())
                / (h * h);
            let xy = (u.get(i + 1, j + 1).to_f64().unwrap()
                - u.get(i + 1, j - 1).to_f64().unwrap()
                - u.get(i - 1, j + 1).to_f64().unwrap()
                + u.get(i - 1, j - 1).to_f64().unwrap())
                / (4.0 * h * h);
            total += (xx * xx + 2.0 * xy * xy + yy * yy).sqrt().powf(p);
        }
    }
    (h * h * total).powf(1.0 / p)
}

/// Energy of the inpainting functional at `v` (for the minimality tests):
/// `h^2 sum |grad v|^2 + lambda h^2 sum_K phi_s(v - w)`.
pub fn inpaint_energy<T: Real>(problem: &InpaintProblem<T>, v: &ScalarField<T>) -> Result<T> {
    crate::solver::energy(&problem.energy_problem()?, v)
}

/// Dirichlet seminorm `h^2 sum |grad v|^2`.
pub fn dirichlet_energy<T: Real>(v: &ScalarField<T>) -> T {
    let g = gradient_forward(v);
    let h2 = T::val(v.grid().spacing() * v.grid().spacing());
    h2 * pairwise_map_sum(v.grid().len(), &|k| g.norm_sq(k))
}
