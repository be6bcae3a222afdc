//! Pixel-grid domain: scalar/vector/tensor fields, masks, and the discrete
//! differential operators with Neumann-consistent boundary handling.
//!
//! The domain is the rectangle `[0, width*h] x [0, height*h]` sampled at
//! pixel centers, row-major storage. `x` runs along columns (width), `y`
//! along rows (height).

use crate::error::{Error, Result};
use crate::scalar::{pairwise_map_sum, Real};

/// Rectangular pixel grid with uniform spacing `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    spacing: f64,
}

impl Grid {
    /// Grid with unit spacing. Both dimensions must be at least 2 so that
    /// discrete gradients exist.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_spacing(width, height, 1.0)
    }

    pub fn with_spacing(width: usize, height: usize, spacing: f64) -> Result<Self> {
        if width < 2 || height < 2 || !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidGrid {
                width,
                height,
                spacing,
            });
        }
        Ok(Self {
            width,
            height,
            spacing,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false // width, height >= 2 by construction
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.width && j < self.height);
        j * self.width + i
    }

    /// Physical position of the pixel center.
    pub fn pos(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.spacing, j as f64 * self.spacing)
    }

    /// True for pixels on the outermost ring (the discrete boundary).
    pub fn on_boundary_ring(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.width - 1 || j == self.height - 1
    }
}

/// Real-valued function on the pixel grid (image `u`, data `f`, iterate `w`).
/// All values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T: Real> {
    grid: Grid,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn constant(grid: Grid, c: T) -> Self {
        debug_assert!(c.is_finite());
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn from_values(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    /// Wraps solver-internal buffers without the finiteness scan; outputs
    /// are re-checked before leaving the solver.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                values.push(f(i, j));
            }
        }
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// `a*self + b*other`, same grid required.
    pub fn lin_comb(&self, a: T, other: &Self, b: T) -> Self {
        assert_eq!(self.grid, other.grid, "lin_comb: grid mismatch");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&u| a * u).collect(),
        }
    }

    pub fn sup_norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn sup_dist(&self, other: &Self) -> T {
        assert_eq!(self.grid, other.grid, "sup_dist: grid mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&u, &v)| m.max((u - v).abs()))
    }

    /// Index of the first non-finite value, if any. Solver outputs are
    /// checked through this before they are wrapped into reports.
    pub fn non_finite_index(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// Per-pixel 2-vector (e.g. a mollified gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T: Real> {
    grid: Grid,
    xs: Vec<T>,
    ys: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            xs: vec![T::zero(); grid.len()],
            ys: vec![T::zero(); grid.len()],
        }
    }

    pub fn from_components(grid: Grid, xs: Vec<T>, ys: Vec<T>) -> Result<Self> {
        if xs.len() != grid.len() || ys.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: xs.len().max(ys.len()),
            });
        }
        if let Some(index) = xs
            .iter()
            .chain(ys.iter())
            .position(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                index: index % grid.len(),
            });
        }
        Ok(Self { grid, xs, ys })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn x(&self, k: usize) -> T {
        self.xs[k]
    }

    #[inline]
    pub fn y(&self, k: usize) -> T {
        self.ys[k]
    }

    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    /// `|v|^2` at pixel `k`.
    #[inline]
    pub fn norm_sq(&self, k: usize) -> T {
        self.xs[k] * self.xs[k] + self.ys[k] * self.ys[k]
    }
}

/// Per-pixel symmetric 2x2 matrix `(a11, a12, a22)`; symmetry is structural.
/// The positive-definiteness invariant (`a11 > 0`, `a22 > 0`,
/// `a11*a22 - a12^2 > 0` at every pixel) is checked via [`TensorField::spd_violation`].
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField<T: Real> {
    grid: Grid,
    a11: Vec<T>,
    a12: Vec<T>,
    a22: Vec<T>,
}

impl<T: Real> TensorField<T> {
    pub fn identity(grid: Grid) -> Self {
        Self::scaled_identity(grid, T::one())
    }

    pub fn scaled_identity(grid: Grid, c: T) -> Self {
        debug_assert!(c > T::zero());
        Self {
            grid,
            a11: vec![c; grid.len()],
            a12: vec![T::zero(); grid.len()],
            a22: vec![c; grid.len()],
        }
    }

    pub fn from_entries(grid: Grid, a11: Vec<T>, a12: Vec<T>, a22: Vec<T>) -> Result<Self> {
        for v in [&a11, &a12, &a22] {
            if v.len() != grid.len() {
                return Err(Error::LengthMismatch {
                    expected: grid.len(),
                    got: v.len(),
                });
            }
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self {
            grid,
            a11,
            a12,
            a22,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn entries(&self, k: usize) -> (T, T, T) {
        (self.a11[k], self.a12[k], self.a22[k])
    }

    pub fn a11(&self) -> &[T] {
        &self.a11
    }

    pub fn a12(&self) -> &[T] {
        &self.a12
    }

    pub fn a22(&self) -> &[T] {
        &self.a22
    }

    /// First pixel violating positive definiteness, if any.
    pub fn spd_violation(&self) -> Option<usize> {
        (0..self.grid.len()).find(|&k| {
            let (a, b, c) = self.entries(k);
            !(a > T::zero() && c > T::zero() && a * c - b * b > T::zero())
        })
    }

    /// Eigenvalues at pixel `k` from the closed 2x2 formula, (min, max).
    pub fn eigenvalues(&self, k: usize) -> (T, T) {
        let (a, b, c) = self.entries(k);
        let half = T::val(0.5);
        let mean = (a + c) * half;
        let d = ((a - c) * half * (a - c) * half + b * b).sqrt();
        (mean - d, mean + d)
    }

    pub fn min_eigenvalue(&self) -> T {
        (0..self.grid.len())
            .map(|k| self.eigenvalues(k).0)
            .fold(T::infinity(), |m, e| m.min(e))
    }

    /// Flux `F = A g`, pixel-wise.
    pub fn apply(&self, g: &VectorField<T>) -> VectorField<T> {
        assert_eq!(self.grid, g.grid(), "tensor apply: grid mismatch");
        let n = self.grid.len();
        let mut fx = Vec::with_capacity(n);
        let mut fy = Vec::with_capacity(n);
        for k in 0..n {
            let (a, b, c) = self.entries(k);
            fx.push(a * g.x(k) + b * g.y(k));
            fy.push(b * g.x(k) + c * g.y(k));
        }
        VectorField {
            grid: self.grid,
            xs: fx,
            ys: fy,
        }
    }

    /// Scales every matrix by the per-pixel factor `s[k]`.
    pub fn scale_pixelwise(&self, s: &[T]) -> Self {
        assert_eq!(s.len(), self.grid.len());
        Self {
            grid: self.grid,
            a11: self.a11.iter().zip(s).map(|(&a, &w)| a * w).collect(),
            a12: self.a12.iter().zip(s).map(|(&a, &w)| a * w).collect(),
            a22: self.a22.iter().zip(s).map(|(&a, &w)| a * w).collect(),
        }
    }
}

/// Per-pixel boolean, the characteristic function of the data set `K`.
/// At least one pixel is always set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: Grid,
    flags: Vec<bool>,
    count: usize,
}

impl Mask {
    pub fn full(grid: Grid) -> Self {
        Self {
            grid,
            flags: vec![true; grid.len()],
            count: grid.len(),
        }
    }

    pub fn from_flags(grid: Grid, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: flags.len(),
            });
        }
        let count = flags.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Self { grid, flags, count })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn is_set(&self, k: usize) -> bool {
        self.flags[k]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }
}

/// The all-of-`Omega` data set, `K = Omega`.
pub fn mask_full(grid: Grid) -> Mask {
    Mask::full(grid)
}

/// Forward-difference gradient with the zero row/column at the far
/// boundary. Dropping the last difference is what encodes the homogeneous
/// Neumann condition energetically: the discrete Euler equation of the
/// resulting energy satisfies it automatically.
pub fn gradient_forward<T: Real>(u: &ScalarField<T>) -> VectorField<T> {
    let g = u.grid();
    let (w, h) = (g.width(), g.height());
    let inv_h = T::val(1.0 / g.spacing());
    let mut xs = vec![T::zero(); g.len()];
    let mut ys = vec![T::zero(); g.len()];
    for j in 0..h {
        for i in 0..w {
            let k = g.idx(i, j);
            if i < w - 1 {
                xs[k] = (u.get(i + 1, j) - u.get(i, j)) * inv_h;
            }
            if j < h - 1 {
                ys[k] = (u.get(i, j + 1) - u.get(i, j)) * inv_h;
            }
        }
    }
    VectorField { grid: g, xs, ys }
}

/// Central-difference gradient with reflecting ghost cells
/// (`u(-1, j) := u(1, j)` etc.), consistent with a zero normal derivative
/// on the boundary. Used for the isotropic tensor argument.
pub fn gradient_central<T: Real>(u: &ScalarField<T>) -> VectorField<T> {
    let g = u.grid();
    let (w, h) = (g.width(), g.height());
    let half_inv_h = T::val(0.5 / g.spacing());
    let mut xs = vec![T::zero(); g.len()];
    let mut ys = vec![T::zero(); g.len()];
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    for j in 0..h {
        for i in 0..w {
            let k = g.idx(i, j);
            let ip = reflect(i as isize + 1, w);
            let im = reflect(i as isize - 1, w);
            let jp = reflect(j as isize + 1, h);
            let jm = reflect(j as isize - 1, h);
            xs[k] = (u.get(ip, j) - u.get(im, j)) * half_inv_h;
            ys[k] = (u.get(i, jp) - u.get(i, jm)) * half_inv_h;
        }
    }
    VectorField { grid: g, xs, ys }
}

/// Adjoint of [`gradient_forward`] under the plain (unweighted) pixel sum:
/// `<grad_forward(u), F> = <u, gradient_forward_transpose(F)>` for all `u`,
/// `F`. This is the negative discrete divergence entering the Euler
/// equation.
pub fn gradient_forward_transpose<T: Real>(f: &VectorField<T>) -> ScalarField<T> {
    let g = f.grid();
    let (w, h) = (g.width(), g.height());
    let inv_h = T::val(1.0 / g.spacing());
    let mut out = vec![T::zero(); g.len()];
    for j in 0..h {
        for i in 0..w {
            let k = g.idx(i, j);
            let mut acc = T::zero();
            if i < w - 1 {
                acc -= f.x(k);
            }
            if i >= 1 {
                acc += f.x(g.idx(i - 1, j));
            }
            if j < h - 1 {
                acc -= f.y(k);
            }
            if j >= 1 {
                acc += f.y(g.idx(i, j - 1));
            }
            out[k] = acc * inv_h;
        }
    }
    ScalarField {
        grid: g,
        values: out,
    }
}

/// `h^2 * sum(u * v)`, the discrete `L^2(Omega)` pairing. Pairwise
/// summation keeps the result bit-reproducible.
pub fn inner_product_l2<T: Real>(u: &ScalarField<T>, v: &ScalarField<T>) -> Result<T> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch);
    }
    let h2 = T::val(u.grid().spacing() * u.grid().spacing());
    let uv = u.values();
    let vv = v.values();
    Ok(h2 * pairwise_map_sum(uv.len(), &|k| uv[k] * vv[k]))
}

/// Discrete `L^2` norm, `sqrt(h^2 * sum(u^2))`.
pub fn l2_norm<T: Real>(u: &ScalarField<T>) -> T {
    let h2 = T::val(u.grid().spacing() * u.grid().spacing());
    let uv = u.values();
    (h2 * pairwise_map_sum(uv.len(), &|k| uv[k] * uv[k])).sqrt()
}

/// Discrete `W^{1,2}` norm: `sqrt(||u||_2^2 + ||grad_forward u||_2^2)`.
pub fn w12_norm<T: Real>(u: &ScalarField<T>) -> T {
    let h2 = T::val(u.grid().spacing() * u.grid().spacing());
    let g = gradient_forward(u);
    let uv = u.values();
    let val = pairwise_map_sum(uv.len(), &|k| uv[k] * uv[k] + g.norm_sq(k));
    (h2 * val).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> Grid {
        Grid::new(w, h).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_dimensions() {
        assert!(Grid::new(1, 2).is_err());
        assert!(Grid::new(2, 1).is_err());
        assert!(Grid::with_spacing(2, 2, 0.0).is_err());
        assert!(Grid::with_spacing(2, 2, -1.0).is_err());
        assert!(Grid::new(2, 2).is_ok());
    }

    #[test]
    fn scalar_field_rejects_non_finite() {
        let g = grid(2, 2);
        assert!(matches!(
            ScalarField::from_values(g, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(ScalarField::from_values(g, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gradient_forward_of_constant_is_zero() {
        let u = ScalarField::constant(grid(5, 4), 3.25f64);
        let g = gradient_forward(&u);
        assert!(g.xs().iter().chain(g.ys()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_forward_on_ramp() {
        // u(i,j) = i*h with h = 1: x-difference 1 except at the last column.
        let g = grid(4, 3);
        let u = ScalarField::from_fn(g, |i, _| i as f64).unwrap();
        let v = gradient_forward(&u);
        for j in 0..3 {
            for i in 0..4 {
                let k = g.idx(i, j);
                let expect = if i < 3 { 1.0 } else { 0.0 };
                assert_eq!(v.x(k), expect);
                assert_eq!(v.y(k), 0.0);
            }
        }
    }

    #[test]
    fn gradient_forward_hand_example_2x2() {
        // rows [[0,2],[1,5]]: pixel (0,0) maps to (2, 1), far edges zero.
        let g = grid(2, 2);
        let u = ScalarField::from_values(g, vec![0.0, 2.0, 1.0, 5.0]).unwrap();
        let v = gradient_forward(&u);
        assert_eq!((v.x(g.idx(0, 0)), v.y(g.idx(0, 0))), (2.0, 1.0));
        assert_eq!((v.x(g.idx(1, 0)), v.y(g.idx(1, 0))), (0.0, 3.0));
        assert_eq!((v.x(g.idx(0, 1)), v.y(g.idx(0, 1))), (4.0, 0.0));
        assert_eq!((v.x(g.idx(1, 1)), v.y(g.idx(1, 1))), (0.0, 0.0));
    }

    #[test]
    fn gradient_central_constant_and_ramp() {
        let g = grid(5, 4);
        let c = ScalarField::constant(g, -2.0f64);
        let vc = gradient_central(&c);
        assert!(vc.xs().iter().chain(vc.ys()).all(|&v| v == 0.0));

        let u = ScalarField::from_fn(g, |i, _| i as f64).unwrap();
        let v = gradient_central(&u);
        // interior: exact 1; boundary columns: reflection gives 0
        for j in 0..4 {
            assert_eq!(v.x(g.idx(0, j)), 0.0);
            assert_eq!(v.x(g.idx(4, j)), 0.0);
            for i in 1..4 {
                assert_eq!(v.x(g.idx(i, j)), 1.0);
            }
        }
    }

    #[test]
    fn transpose_is_adjoint_of_forward_gradient() {
        // <Gu, F> == <u, G^T F> with plain sums, random-ish fields
        let g = Grid::with_spacing(5, 4, 0.5).unwrap();
        let u = ScalarField::from_fn(g, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.37 - 1.0).unwrap();
        let fx: Vec<f64> = (0..g.len()).map(|k| ((k * 13) % 7) as f64 * 0.21 - 0.5).collect();
        let fy: Vec<f64> = (0..g.len()).map(|k| ((k * 5) % 9) as f64 * 0.11 - 0.4).collect();
        let f = VectorField::from_components(g, fx, fy).unwrap();

        let gu = gradient_forward(&u);
        let gtf = gradient_forward_transpose(&f);
        let lhs: f64 = (0..g.len()).map(|k| gu.x(k) * f.x(k) + gu.y(k) * f.y(k)).sum();
        let rhs: f64 = (0..g.len()).map(|k| u.values()[k] * gtf.values()[k]).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn inner_product_examples() {
        let g = grid(2, 2);
        let ones = ScalarField::constant(g, 1.0f64);
        assert_eq!(inner_product_l2(&ones, &ones).unwrap(), 4.0);

        let alt = ScalarField::from_values(g, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(inner_product_l2(&ones, &alt).unwrap(), 0.0);

        let u = ScalarField::from_values(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = ScalarField::from_values(g, vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(inner_product_l2(&u, &v).unwrap(), 20.0);
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let u = ScalarField::<f64>::zeros(grid(2, 2));
        let v = ScalarField::<f64>::zeros(grid(3, 2));
        assert!(matches!(
            inner_product_l2(&u, &v),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn mask_basics() {
        assert_eq!(mask_full(grid(3, 3)).count(), 9);
        assert_eq!(mask_full(grid(2, 2)).count(), 4);
        assert!(Grid::new(1, 2).is_err()); // 1x2 grids are rejected outright
        assert!(matches!(
            Mask::from_flags(grid(2, 2), vec![false; 4]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn tensor_spd_and_eigenvalues() {
        let g = grid(2, 2);
        let t = TensorField::from_entries(
            g,
            vec![2.0f64; 4],
            vec![0.5; 4],
            vec![1.0; 4],
        )
        .unwrap();
        assert!(t.spd_violation().is_none());
        let (lo, hi) = t.eigenvalues(0);
        // trace and determinant recover the entries
        assert!((lo + hi - 3.0).abs() < 1e-14);
        assert!((lo * hi - (2.0 - 0.25)).abs() < 1e-14);

        let bad = TensorField::from_entries(g, vec![1.0f64; 4], vec![2.0; 4], vec![1.0; 4]).unwrap();
        assert_eq!(bad.spd_violation(), Some(0));
    }
}
