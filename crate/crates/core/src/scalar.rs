//! Scalar abstraction: every field and solver in this crate is generic over
//! [`Real`], implemented for `f32` and `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar for grid math.
pub trait Real:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` model constant or tolerance into `Self`.
    fn val(x: f64) -> Self {
        Self::from_f64(x).expect("model constant must be representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sums `f(0) + f(1) + ... + f(len-1)` by pairwise splitting.
///
/// The reduction order is fixed by `len` alone, so results are
/// bit-reproducible regardless of caller context, and the rounding error
/// grows like O(log n) instead of O(n).
pub fn pairwise_map_sum<T: Real, F: Fn(usize) -> T>(len: usize, f: &F) -> T {
    fn go<T: Real, F: Fn(usize) -> T>(lo: usize, hi: usize, f: &F) -> T {
        if hi - lo <= 64 {
            let mut acc = T::zero();
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, len, f)
}

/// Pairwise sum of a slice.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    pairwise_map_sum(xs.len(), &|i| xs[i])
}
