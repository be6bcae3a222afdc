//! The inner variational solve behind the solution operator: the discrete
//! energy with a frozen diffusion tensor, its exact algebraic gradient, and
//! two minimizers (linear conjugate gradients for the quadratic case,
//! damped Newton otherwise).
//!
//! The discrete operator is never assembled independently: it is defined as
//! the exact gradient of the discrete energy, which makes the Neumann
//! condition automatic and the finite-difference gradient check meaningful.

use crate::error::{Error, Result};
use crate::grid::{
    gradient_forward, gradient_forward_transpose, Mask, ScalarField, TensorField,
};
use crate::params::{ModelParams, SolverOpts};
use crate::scalar::{pairwise_map_sum, Real};
use crate::tensor::DiffusionTensor;

/// Smoothed data density `phi_t(r) = (r^2 + eps^2)^(t/2) - eps^t`.
/// Exact `|r|^t` when `eps = 0`; exact `r^2` on the fast path `t = 2`.
#[inline]
pub(crate) fn phi<T: Real>(r: T, t: T, eps: T) -> T {
    let two = T::val(2.0);
    if t == two && eps == T::zero() {
        return r * r;
    }
    let s = r * r + eps * eps;
    if s == T::zero() {
        return T::zero();
    }
    s.powf(t * T::val(0.5)) - eps.powf(t)
}

#[inline]
pub(crate) fn phi_prime<T: Real>(r: T, t: T, eps: T) -> T {
    let two = T::val(2.0);
    if t == two && eps == T::zero() {
        return two * r;
    }
    let s = r * r + eps * eps;
    if s == T::zero() {
        return T::zero();
    }
    t * r * s.powf((t - two) * T::val(0.5))
}

#[inline]
pub(crate) fn phi_second<T: Real>(r: T, t: T, eps: T) -> T {
    let two = T::val(2.0);
    if t == two && eps == T::zero() {
        return two;
    }
    let s = r * r + eps * eps;
    if s == T::zero() {
        // limit for t > 2; t < 2 with eps = 0 is rejected at construction
        return T::zero();
    }
    t * s.powf((t - T::val(4.0)) * T::val(0.5)) * ((t - T::one()) * r * r + eps * eps)
}

/// The ingredients of the frozen-tensor energy
/// `J(v) = 1/2 h^2 sum A grad v . grad v + lambda h^2 sum_K phi_t(v - f)`.
#[derive(Debug, Clone)]
pub struct EnergyProblem<T: Real> {
    pub tensor: TensorField<T>,
    pub f: ScalarField<T>,
    pub mask: Mask,
    pub lambda: T,
    pub t: T,
    pub eps_data: T,
}

impl<T: Real> EnergyProblem<T> {
    pub fn new(
        tensor: TensorField<T>,
        f: ScalarField<T>,
        mask: Mask,
        lambda: f64,
        t: f64,
        eps_data: f64,
    ) -> Result<Self> {
        if tensor.grid() != f.grid() || mask.grid() != f.grid() {
            return Err(Error::GridMismatch);
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(t > 1.0) || !t.is_finite() {
            return Err(Error::InvalidParam(format!("t must exceed 1, got {t}")));
        }
        if eps_data < 0.0 || !eps_data.is_finite() {
            return Err(Error::InvalidParam(
                "eps_data must be nonnegative".into(),
            ));
        }
        if t < 2.0 && eps_data == 0.0 {
            return Err(Error::InvalidParam(format!(
                "t = {t} < 2 needs eps_data > 0"
            )));
        }
        if let Some(index) = tensor.spd_violation() {
            return Err(Error::NotSpd { index });
        }
        Ok(Self {
            tensor,
            f,
            mask,
            lambda: T::val(lambda),
            t: T::val(t),
            eps_data: T::val(eps_data),
        })
    }

    pub fn grid(&self) -> crate::grid::Grid {
        self.f.grid()
    }

    fn h2(&self) -> T {
        let h = self.grid().spacing();
        T::val(h * h)
    }
}

/// Evaluates the discrete energy at `v`.
pub fn energy<T: Real>(problem: &EnergyProblem<T>, v: &ScalarField<T>) -> Result<T> {
    if v.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(energy_unchecked(problem, v))
}

fn energy_unchecked<T: Real>(problem: &EnergyProblem<T>, v: &ScalarField<T>) -> T {
    let n = problem.grid().len();
    let g = gradient_forward(v);
    let quad = pairwise_map_sum(n, &|k| {
        let (a, b, c) = problem.tensor.entries(k);
        let gx = g.x(k);
        let gy = g.y(k);
        a * gx * gx + (b + b) * gx * gy + c * gy * gy
    });
    let vv = v.values();
    let fv = problem.f.values();
    let data = pairwise_map_sum(n, &|k| {
        if problem.mask.is_set(k) {
            phi(vv[k] - fv[k], problem.t, problem.eps_data)
        } else {
            T::zero()
        }
    });
    let h2 = problem.h2();
    T::val(0.5) * h2 * quad + problem.lambda * h2 * data
}

/// Data-fitting part `E[K, v, f] = lambda h^2 sum_K phi_t(v - f)`.
pub fn data_term<T: Real>(problem: &EnergyProblem<T>, v: &ScalarField<T>) -> Result<T> {
    if v.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    let vv = v.values();
    let fv = problem.f.values();
    let data = pairwise_map_sum(vv.len(), &|k| {
        if problem.mask.is_set(k) {
            phi(vv[k] - fv[k], problem.t, problem.eps_data)
        } else {
            T::zero()
        }
    });
    Ok(problem.lambda * problem.h2() * data)
}

/// Exact algebraic gradient of the discrete energy. A zero of this field is
/// a discrete solution of the frozen-tensor Euler equation; the Neumann
/// condition is built in by construction.
pub fn energy_gradient<T: Real>(
    problem: &EnergyProblem<T>,
    v: &ScalarField<T>,
) -> Result<ScalarField<T>> {
    if v.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    let h2 = problem.h2();
    let flux = problem.tensor.apply(&gradient_forward(v));
    let mut out = gradient_forward_transpose(&flux);
    let fv = problem.f.values();
    let vv = v.values();
    for (k, o) in out.values_mut().iter_mut().enumerate() {
        *o = h2 * *o;
        if problem.mask.is_set(k) {
            *o += problem.lambda * h2 * phi_prime(vv[k] - fv[k], problem.t, problem.eps_data);
        }
    }
    Ok(out)
}

/// `E[K, 0, f] - E[K, T(w), f]`: slack in the data-ball inequality chain.
/// Nonnegative (up to solver tolerance) for every converged solve, which is
/// what confines the solution operator to the data ball.
pub fn data_ball_margin<T: Real>(problem: &EnergyProblem<T>, report: &SolveReport<T>) -> Result<T> {
    let zero = ScalarField::zeros(problem.grid());
    Ok(data_term(problem, &zero)? - data_term(problem, &report.solution)?)
}

/// Outcome of one inner minimization.
#[derive(Debug, Clone)]
pub struct SolveReport<T: Real> {
    pub solution: ScalarField<T>,
    pub iterations: usize,
    /// Sup-norm of the energy gradient at `solution`, recomputed after the
    /// iteration (not the recurrence residual).
    pub final_gradient_norm: T,
    pub final_energy: T,
    /// `true` implies `final_gradient_norm <= tolerance`.
    pub converged: bool,
    /// Effective gradient sup-norm tolerance of this run.
    pub tolerance: T,
    /// Energy after the start and after every accepted step; non-increasing.
    pub energy_history: Vec<T>,
}

impl<T: Real> SolveReport<T> {
    /// One CSV row per accepted step: `iteration,energy,gradient_norm` is
    /// not available per step (gradients are not stored), so the row is
    /// `iteration,energy`; the final row carries the recomputed gradient.
    pub fn csv_rows(&self) -> String {
        let mut out = String::from("iteration,energy,gradient_norm\n");
        for (i, e) in self.energy_history.iter().enumerate() {
            if i + 1 == self.energy_history.len() {
                out.push_str(&format!("{},{},{}\n", i, e, self.final_gradient_norm));
            } else {
                out.push_str(&format!("{},{},\n", i, e));
            }
        }
        out
    }
}

/// Which discrete class the minimization runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// All pixels are degrees of freedom; the Neumann condition is encoded
    /// by the forward-difference energy itself.
    Neumann,
    /// The outermost pixel ring is pinned to zero (discrete `W^{1,2}_0`).
    DirichletRing,
}

fn free_flags(grid: crate::grid::Grid, boundary: Boundary) -> Vec<bool> {
    match boundary {
        Boundary::Neumann => vec![true; grid.len()],
        Boundary::DirichletRing => {
            let mut flags = vec![false; grid.len()];
            for j in 0..grid.height() {
                for i in 0..grid.width() {
                    flags[grid.idx(i, j)] = !grid.on_boundary_ring(i, j);
                }
            }
            flags
        }
    }
}

fn project<T: Real>(values: &mut [T], free: &[bool]) {
    for (v, &ok) in values.iter_mut().zip(free) {
        if !ok {
            *v = T::zero();
        }
    }
}

fn sup<T: Real>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    pairwise_map_sum(a.len(), &|k| a[k] * b[k])
}

/// `curv[k] = lambda h^2 phi''(v[k] - f[k]) chi_K[k]`, the data-term
/// curvature entering the Hessian diagonal.
fn data_curvature<T: Real>(problem: &EnergyProblem<T>, v: &[T]) -> Vec<T> {
    let h2 = problem.h2();
    let fv = problem.f.values();
    (0..v.len())
        .map(|k| {
            if problem.mask.is_set(k) {
                problem.lambda * h2 * phi_second(v[k] - fv[k], problem.t, problem.eps_data)
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Applies `H + nu I` restricted to the free degrees of freedom, where
/// `H = h^2 G^T A G + diag(curv)`.
fn hessian_apply<T: Real>(
    problem: &EnergyProblem<T>,
    curv: &[T],
    nu: T,
    free: &[bool],
    x: &[T],
    out: &mut Vec<T>,
) {
    let grid = problem.grid();
    let h2 = problem.h2();
    let xf = ScalarField::from_vec_unchecked(grid, x.to_vec());
    let flux = problem.tensor.apply(&gradient_forward(&xf));
    let gt = gradient_forward_transpose(&flux);
    out.clear();
    out.extend(
        gt.values()
            .iter()
            .enumerate()
            .map(|(k, &g)| h2 * g + curv[k] * x[k] + nu * x[k]),
    );
    project(out, free);
}

/// Jacobi diagonal of the same operator.
fn hessian_diag<T: Real>(problem: &EnergyProblem<T>, curv: &[T], nu: T, free: &[bool]) -> Vec<T> {
    let grid = problem.grid();
    let (w, h) = (grid.width(), grid.height());
    let mut diag = vec![T::one(); grid.len()];
    for j in 0..h {
        for i in 0..w {
            let k = grid.idx(i, j);
            if !free[k] {
                continue;
            }
            let (a, b, c) = problem.tensor.entries(k);
            let mut d = T::zero();
            if i < w - 1 {
                d += a;
            }
            if j < h - 1 {
                d += c;
            }
            if i < w - 1 && j < h - 1 {
                d += b + b;
            }
            if i >= 1 {
                d += problem.tensor.entries(grid.idx(i - 1, j)).0;
            }
            if j >= 1 {
                d += problem.tensor.entries(grid.idx(i, j - 1)).2;
            }
            diag[k] = d + curv[k] + nu;
        }
    }
    diag
}

struct CgOutcome<T> {
    iterations: usize,
    breakdown: bool,
    _rel: T,
}

/// Jacobi-preconditioned conjugate gradients on the free dofs. `b` and `x`
/// must already vanish on pinned dofs. All reductions are pairwise, so the
/// run is bit-reproducible.
#[allow(clippy::too_many_arguments)]
fn pcg<T: Real>(
    problem: &EnergyProblem<T>,
    curv: &[T],
    nu: T,
    free: &[bool],
    b: &[T],
    x: &mut Vec<T>,
    tol_rel: T,
    sup_target: T,
    max_iter: usize,
    mut on_step: impl FnMut(&[T]),
) -> CgOutcome<T> {
    let n = b.len();
    let diag = hessian_diag(problem, curv, nu, free);
    let mut q = Vec::with_capacity(n);
    hessian_apply(problem, curv, nu, free, x, &mut q);
    let mut r: Vec<T> = (0..n).map(|k| b[k] - q[k]).collect();
    let bnorm = dot(b, b).sqrt();
    let r0norm = dot(&r, &r).sqrt();
    let denom = bnorm.max(r0norm).max(T::min_positive_value());

    let mut z: Vec<T> = (0..n).map(|k| r[k] / diag[k]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = r0norm / denom;
    let mut iterations = 0;

    while iterations < max_iter {
        if rel <= tol_rel && sup(&r) <= sup_target {
            break;
        }
        if rz == T::zero() {
            break; // exact solution reached
        }
        hessian_apply(problem, curv, nu, free, &p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > T::zero()) || !pq.is_finite() {
            return CgOutcome {
                iterations,
                breakdown: true,
                _rel: rel,
            };
        }
        let alpha = rz / pq;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        iterations += 1;
        on_step(x);
        rel = dot(&r, &r).sqrt() / denom;
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    CgOutcome {
        iterations,
        breakdown: false,
        _rel: rel,
    }
}

/// Minimizes the discrete energy over the chosen class, starting from
/// `start`. Dispatches to linear CG when the energy is quadratic
/// (`t = 2`, `eps_data = 0`) and to damped Newton otherwise. An exceeded
/// iteration cap is reported through `converged = false`, never silently.
pub fn minimize<T: Real>(
    problem: &EnergyProblem<T>,
    start: &ScalarField<T>,
    boundary: Boundary,
    opts: &SolverOpts,
) -> Result<SolveReport<T>> {
    if start.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    opts.validate()?;
    let grid = problem.grid();
    let free = free_flags(grid, boundary);
    let mut x = start.values().to_vec();
    project(&mut x, &free);

    let h2 = problem.h2();
    let tol_eff = T::val(opts.tol_inner) * h2 * problem.lambda.max(T::one());
    let cg_cap = opts.cg_cap_factor * grid.len();

    let quadratic = problem.t == T::val(2.0) && problem.eps_data == T::zero();
    let (iterations, mut history) = if quadratic {
        minimize_quadratic(problem, &free, &mut x, tol_eff, cg_cap, opts)
    } else {
        minimize_newton(problem, &free, &mut x, tol_eff, cg_cap, opts)?
    };

    let solution = ScalarField::from_vec_unchecked(grid, x);
    if let Some(index) = solution.non_finite_index() {
        return Err(Error::NonFinite { index });
    }
    // Recompute the certificate quantities from scratch.
    let mut g = energy_gradient(problem, &solution)?;
    project(g.values_mut(), &free);
    let final_gradient_norm = sup(g.values());
    let final_energy = energy_unchecked(problem, &solution);
    if history.is_empty() {
        history.push(final_energy);
    }
    let converged = final_gradient_norm <= tol_eff;
    Ok(SolveReport {
        solution,
        iterations,
        final_gradient_norm,
        final_energy,
        converged,
        tolerance: tol_eff,
        energy_history: history,
    })
}

fn minimize_quadratic<T: Real>(
    problem: &EnergyProblem<T>,
    free: &[bool],
    x: &mut Vec<T>,
    tol_eff: T,
    cg_cap: usize,
    opts: &SolverOpts,
) -> (usize, Vec<T>) {
    let h2 = problem.h2();
    let two = T::val(2.0);
    let n = x.len();
    // t = 2: constant curvature 2 lambda h^2 on K, rhs 2 lambda h^2 chi f.
    let curv: Vec<T> = (0..n)
        .map(|k| {
            if problem.mask.is_set(k) {
                two * problem.lambda * h2
            } else {
                T::zero()
            }
        })
        .collect();
    let mut b: Vec<T> = (0..n).map(|k| curv[k] * problem.f.values()[k]).collect();
    project(&mut b, free);

    let grid = problem.grid();
    let mut history = vec![energy_unchecked(
        problem,
        &ScalarField::from_vec_unchecked(grid, x.clone()),
    )];
    let outcome = pcg(
        problem,
        &curv,
        T::zero(),
        free,
        &b,
        x,
        T::val(opts.tol_cg),
        tol_eff,
        cg_cap,
        |xk| {
            history.push(energy_unchecked(
                problem,
                &ScalarField::from_vec_unchecked(grid, xk.to_vec()),
            ));
        },
    );
    (outcome.iterations, history)
}

fn minimize_newton<T: Real>(
    problem: &EnergyProblem<T>,
    free: &[bool],
    x: &mut Vec<T>,
    tol_eff: T,
    cg_cap: usize,
    opts: &SolverOpts,
) -> Result<(usize, Vec<T>)> {
    let grid = problem.grid();
    let n = x.len();
    let c1 = T::val(1e-4);

    let eval_energy = |v: &[T]| -> T {
        energy_unchecked(problem, &ScalarField::from_vec_unchecked(grid, v.to_vec()))
    };
    let eval_gradient = |v: &[T]| -> Result<Vec<T>> {
        let vf = ScalarField::from_vec_unchecked(grid, v.to_vec());
        let mut g = energy_gradient(problem, &vf)?;
        project(g.values_mut(), free);
        Ok(g.values().to_vec())
    };

    let mut history = vec![eval_energy(x)];
    let mut g = eval_gradient(x)?;
    let mut iterations = 0;

    'outer: while iterations < opts.max_newton {
        let gsup = sup(&g);
        if gsup <= tol_eff {
            break;
        }
        let curv = data_curvature(problem, x);
        let diag_scale = sup(&hessian_diag(problem, &curv, T::zero(), free)).max(T::one());
        let mut nu = T::zero();
        let mut escalations = 0;
        loop {
            let b: Vec<T> = g.iter().map(|&v| -v).collect();
            let mut d = vec![T::zero(); n];
            let cg = pcg(
                problem,
                &curv,
                nu,
                free,
                &b,
                &mut d,
                T::val(opts.tol_cg),
                T::infinity(),
                cg_cap,
                |_| {},
            );
            let gd = dot(&g, &d);
            let usable = !cg.breakdown && gd < T::zero() && gd.is_finite();
            if usable {
                // Armijo backtracking on the energy. Near the minimizer the
                // certified decrease drops below the energy's floating-point
                // resolution; resolution-flat steps are accepted when they
                // still strictly reduce the gradient.
                let e0 = *history.last().expect("history nonempty");
                let slack = T::epsilon() * e0.abs().max(T::one()) * T::val(4.0);
                let mut alpha = T::one();
                for _ in 0..60 {
                    let trial: Vec<T> = (0..n).map(|k| x[k] + alpha * d[k]).collect();
                    let et = eval_energy(&trial);
                    if et.is_finite() && et <= e0 + slack {
                        let armijo = et <= e0 + c1 * alpha * gd;
                        let g_try = eval_gradient(&trial)?;
                        if armijo || sup(&g_try) < gsup {
                            *x = trial;
                            history.push(et);
                            g = g_try;
                            iterations += 1;
                            continue 'outer;
                        }
                    }
                    alpha = alpha * T::val(0.5);
                }
            }
            // Hessian too degenerate for this step: regularize and retry.
            escalations += 1;
            if escalations > 20 {
                break 'outer;
            }
            nu = if nu == T::zero() {
                T::val(1e-10) * diag_scale
            } else {
                nu * T::val(100.0)
            };
        }
    }
    Ok((iterations, history))
}

/// Applies the solution operator: builds the diffusion tensor at `w`,
/// freezes it, and minimizes the energy with data `f` over the Neumann
/// class. Returns the unique minimizer with its convergence certificate.
pub fn solve_t<T: Real>(
    w: &ScalarField<T>,
    f: &ScalarField<T>,
    mask: &Mask,
    params: &ModelParams,
    tensor: &dyn DiffusionTensor<T>,
) -> Result<SolveReport<T>> {
    params.validate()?;
    let a = tensor.tensor(w)?;
    let problem = EnergyProblem::new(
        a,
        f.clone(),
        mask.clone(),
        params.lambda,
        params.t,
        params.eps_data,
    )?;
    minimize(&problem, f, Boundary::Neumann, &params.solver)
}
