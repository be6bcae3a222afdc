//! Property tests for the structural invariants: operator identities on the
//! grid, mollifier behavior, tensor eigenstructure and SPD certification,
//! gradient consistency, and the data-ball inequality.

use deed_core::grid::{
    gradient_central, gradient_forward, gradient_forward_transpose, inner_product_l2, l2_norm,
    mask_full, Grid, ScalarField, VectorField,
};
use deed_core::mollify::mollify;
use deed_core::solver::{
    data_ball_margin, energy, energy_gradient, minimize, Boundary, EnergyProblem,
};
use deed_core::tensor::{
    eed_tensor, galerkin_tensor, inpaint_tensor, tikhonov_tensor, weighted_eed_tensor,
    CoefficientMap, GalerkinBasis, TensorParams,
};
use deed_core::SolverOpts;
use proptest::prelude::*;

type Field = ScalarField<f64>;

prop_compose! {
    fn field()((w, h) in (2usize..8, 2usize..8))(
        vals in prop::collection::vec(-1.0..1.0f64, w * h),
        w in Just(w),
        h in Just(h),
    ) -> Field {
        Field::from_values(Grid::new(w, h).unwrap(), vals).unwrap()
    }
}

prop_compose! {
    fn field_pair()((w, h) in (2usize..8, 2usize..8))(
        a in prop::collection::vec(-1.0..1.0f64, w * h),
        b in prop::collection::vec(-1.0..1.0f64, w * h),
        w in Just(w),
        h in Just(h),
    ) -> (Field, Field) {
        let g = Grid::new(w, h).unwrap();
        (
            Field::from_values(g, a).unwrap(),
            Field::from_values(g, b).unwrap(),
        )
    }
}

prop_compose! {
    fn field_triple()((w, h) in (2usize..7, 2usize..7))(
        a in prop::collection::vec(-1.0..1.0f64, w * h),
        b in prop::collection::vec(-1.0..1.0f64, w * h),
        c in prop::collection::vec(-1.0..1.0f64, w * h),
        w in Just(w),
        h in Just(h),
    ) -> (Field, Field, Field) {
        let g = Grid::new(w, h).unwrap();
        (
            Field::from_values(g, a).unwrap(),
            Field::from_values(g, b).unwrap(),
            Field::from_values(g, c).unwrap(),
        )
    }
}

proptest! {
    #[test]
    fn inner_product_is_symmetric_and_bilinear(
        (u, v) in field_pair(),
        (a, b) in (-3.0..3.0f64, -3.0..3.0f64),
    ) {
        prop_assert_eq!(
            inner_product_l2(&u, &v).unwrap(),
            inner_product_l2(&v, &u).unwrap()
        );
        let w = u.lin_comb(a, &v, b);
        let lhs = inner_product_l2(&w, &u).unwrap();
        let rhs = a * inner_product_l2(&u, &u).unwrap() + b * inner_product_l2(&v, &u).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    #[test]
    fn gradients_vanish_on_constants(
        (w, h) in (2usize..9, 2usize..9),
        c in -5.0..5.0f64,
    ) {
        let g = Grid::new(w, h).unwrap();
        let u = Field::constant(g, c);
        let fwd = gradient_forward(&u);
        let cen = gradient_central(&u);
        prop_assert!(fwd.xs().iter().chain(fwd.ys()).all(|&v| v == 0.0));
        prop_assert!(cen.xs().iter().chain(cen.ys()).all(|&v| v == 0.0));
    }

    #[test]
    fn central_gradient_exact_on_affine_interiors(
        (w, h) in (3usize..9, 3usize..9),
        (alpha, beta, gamma) in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
    ) {
        let g = Grid::new(w, h).unwrap();
        let u = Field::from_fn(g, |i, j| alpha * i as f64 + beta * j as f64 + gamma).unwrap();
        let grad = gradient_central(&u);
        for j in 1..h - 1 {
            for i in 1..w - 1 {
                let k = g.idx(i, j);
                prop_assert!((grad.x(k) - alpha).abs() <= 1e-12);
                prop_assert!((grad.y(k) - beta).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn transpose_is_adjoint((u, fx_src) in field_pair(), fy_seed in -1.0..1.0f64) {
        let g = u.grid();
        let fy: Vec<f64> = fx_src.values().iter().map(|&v| v * fy_seed + 0.1).collect();
        let f = VectorField::from_components(g, fx_src.values().to_vec(), fy).unwrap();
        let gu = gradient_forward(&u);
        let gtf = gradient_forward_transpose(&f);
        let lhs: f64 = (0..g.len()).map(|k| gu.x(k) * f.x(k) + gu.y(k) * f.y(k)).sum();
        let rhs: f64 = (0..g.len()).map(|k| u.values()[k] * gtf.values()[k]).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn mollify_is_linear_and_stable(
        (u, v) in field_pair(),
        (a, b) in (-2.0..2.0f64, -2.0..2.0f64),
        sigma in 0.3..2.5f64,
    ) {
        // linearity
        let lin = mollify(&u.lin_comb(a, &v, b), sigma).unwrap();
        let sep = mollify(&u, sigma)
            .unwrap()
            .lin_comb(a, &mollify(&v, sigma).unwrap(), b);
        for (x, y) in lin.values().iter().zip(sep.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        // sup-norm non-expansive (convex combinations), range shrinks
        let mu = mollify(&u, sigma).unwrap();
        prop_assert!(mu.sup_norm() <= u.sup_norm() * (1.0 + 1e-12) + 1e-15);
        let (min, max) = u.values().iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &x| (lo.min(x), hi.max(x)),
        );
        let (mmin, mmax) = mu.values().iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &x| (lo.min(x), hi.max(x)),
        );
        prop_assert!(mmax - mmin <= (max - min) * (1.0 + 1e-12) + 1e-15);
        // perturbation stability in L2: renormalization makes the operator
        // slightly expansive near the boundary (norm just above 1), so the
        // bound carries a small allowance
        let moved = mollify(&u.lin_comb(1.0, &v, 1.0), sigma).unwrap();
        let dev = l2_norm(&moved.lin_comb(1.0, &mu, -1.0));
        prop_assert!(dev <= 1.02 * l2_norm(&v) + 1e-15);
    }

    #[test]
    fn eed_eigenstructure_identity(u in field(), mu in -2.5..3.5f64, sigma in 0.4..2.0f64) {
        let params = TensorParams::new(sigma, mu, 1.0, 2.0, 1e-6).unwrap();
        let d = eed_tensor(&u, &params);
        let g = gradient_central(&mollify(&u, sigma).unwrap());
        for k in 0..u.grid().len() {
            let g2 = g.norm_sq(k);
            let kappa = (1.0 + g2).powf(-mu / 2.0);
            let (lo, hi) = d.eigenvalues(k);
            let (e_lo, e_hi) = if kappa <= 1.0 { (kappa, 1.0) } else { (1.0, kappa) };
            prop_assert!((lo - e_lo).abs() <= 1e-12 * (1.0 + e_lo));
            prop_assert!((hi - e_hi).abs() <= 1e-12 * (1.0 + e_hi));
            // tangential direction is an eigenvector with eigenvalue 1
            if g2 > 0.0 {
                let norm = g2.sqrt();
                let (tx, ty) = (-g.y(k) / norm, g.x(k) / norm);
                let (a, b, c) = d.entries(k);
                prop_assert!((a * tx + b * ty - tx).abs() <= 1e-12);
                prop_assert!((b * tx + c * ty - ty).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn eed_commutes_with_quarter_turns(
        n in 4usize..8,
        seed in 0u64..1000,
        mu in -1.5..2.5f64,
    ) {
        let g = Grid::new(n, n).unwrap();
        let u = Field::from_fn(g, |i, j| {
            let x = (i as u64).wrapping_mul(2654435761).wrapping_add((j as u64) * 40503 + seed);
            ((x % 1000) as f64) / 1000.0
        }).unwrap();
        let params = TensorParams::new(1.0, mu, 1.0, 2.0, 1e-6).unwrap();
        let d = eed_tensor(&u, &params);
        // quarter turn: pixel (i, j) of the rotated image is source (n-1-j, i)
        let rot = Field::from_fn(g, |i, j| u.get(n - 1 - j, i)).unwrap();
        let d_rot = eed_tensor(&rot, &params);
        for j in 0..n {
            for i in 0..n {
                let src = g.idx(n - 1 - j, i);
                let dst = g.idx(i, j);
                let (a, b, c) = d.entries(src);
                let (ar, br, cr) = d_rot.entries(dst);
                // R D R^T with R the quarter turn swaps the diagonal and
                // flips the off-diagonal sign
                prop_assert!((ar - c).abs() <= 1e-12);
                prop_assert!((br + b).abs() <= 1e-12);
                prop_assert!((cr - a).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_random_problems(
        (w_field, f, v) in field_triple(),
        lambda in 0.5..5.0f64,
        which_t in 0usize..3,
        seed in 0u64..100,
    ) {
        let (t, eps) = [(2.0, 0.0), (3.0, 0.0), (1.5, 1e-6)][which_t];
        let g = f.grid();
        let tensor = eed_tensor(&w_field, &TensorParams::default());
        let problem = EnergyProblem::new(tensor, f, mask_full(g), lambda, t, eps).unwrap();
        let d = Field::from_fn(g, |i, j| {
            let x = (i as u64 * 31 + j as u64 * 17 + seed) % 97;
            (x as f64) / 97.0 - 0.5
        }).unwrap();
        let grad = energy_gradient(&problem, &v).unwrap();
        let gd: f64 = grad.values().iter().zip(d.values()).map(|(&a, &b)| a * b).sum();
        let tau = 1e-5;
        let ep = energy(&problem, &v.lin_comb(1.0, &d, tau)).unwrap();
        let em = energy(&problem, &v.lin_comb(1.0, &d, -tau)).unwrap();
        let fd = (ep - em) / (2.0 * tau);
        prop_assert!(
            (fd - gd).abs() <= 1e-6 * gd.abs().max(1e-10),
            "fd {} vs analytic {}", fd, gd
        );
    }
}

// Solver-backed properties run fewer cases.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn all_constructors_stay_spd(
        u in field(),
        mu in -2.5..3.5f64,
        p in 1.2..4.0f64,
    ) {
        let params = TensorParams::new(0.9, mu, 1.3, p, 1e-6).unwrap();
        prop_assert!(eed_tensor(&u, &params).spd_violation().is_none());
        prop_assert!(weighted_eed_tensor(&u, &params).spd_violation().is_none());
        let coeff = CoefficientMap::EedForm { mu };
        let opts = SolverOpts::default();
        let d4 = tikhonov_tensor(&u, 1.0, &coeff, &opts).unwrap();
        prop_assert!(d4.spd_violation().is_none());
        let mask = mask_full(u.grid());
        let d5 = inpaint_tensor(&u, &mask, 1.5, 2.0, 1.0, &coeff, &opts).unwrap();
        prop_assert!(d5.spd_violation().is_none());
        if u.grid().width() >= 3 && u.grid().height() >= 3 {
            let basis = GalerkinBasis::harmonic(u.grid(), params).unwrap();
            prop_assert!(galerkin_tensor(&u, &basis).unwrap().spd_violation().is_none());
        }
    }

    #[test]
    fn data_ball_margin_is_nonnegative(
        (w_field, f) in field_pair(),
        lambda in 0.5..10.0f64,
        which_t in 0usize..3,
    ) {
        let (t, eps) = [(2.0, 0.0), (3.0, 0.0), (1.5, 1e-6)][which_t];
        let g = f.grid();
        let tensor = eed_tensor(&w_field, &TensorParams::default());
        let problem = EnergyProblem::new(tensor, f.clone(), mask_full(g), lambda, t, eps).unwrap();
        let report = minimize(&problem, &f, Boundary::Neumann, &SolverOpts::default()).unwrap();
        prop_assert!(report.converged);
        let margin = data_ball_margin(&problem, &report).unwrap();
        prop_assert!(margin >= -1e-9, "margin {}", margin);
    }

    #[test]
    fn converged_solves_satisfy_euler_residual(
        (w_field, f) in field_pair(),
        lambda in 0.5..5.0f64,
    ) {
        let g = f.grid();
        let tensor = eed_tensor(&w_field, &TensorParams::default());
        let problem = EnergyProblem::new(tensor, f.clone(), mask_full(g), lambda, 2.0, 0.0).unwrap();
        let report = minimize(&problem, &f, Boundary::Neumann, &SolverOpts::default()).unwrap();
        prop_assert!(report.converged);
        let grad = energy_gradient(&problem, &report.solution).unwrap();
        prop_assert!(grad.sup_norm() <= report.tolerance);
    }
}
