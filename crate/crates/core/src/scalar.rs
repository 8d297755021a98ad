//! Floating-point scalar abstraction shared by the tensor engine and the PFN.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
///
/// Besides the usual arithmetic, each scalar supplies a strided GEMM kernel so
/// matrix products dispatch to an optimized implementation for its width.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    /// `c <- alpha * a * b + beta * c` for an `m x k` by `k x n` product.
    /// Strides are in elements; `(rs, cs)` is (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    /// Replaces every element by its exponential.
    fn exp_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = x.exp();
        }
    }

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every scalar")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path, $exp:path) => {
        impl Scalar for $t {
            fn exp_in_place(xs: &mut [Self]) {
                for x in xs {
                    *x = $exp(*x);
                }
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                assert!(a.len() >= extent(m, k, rsa, csa), "gemm: lhs buffer too short");
                assert!(b.len() >= extent(k, n, rsb, csb), "gemm: rhs buffer too short");
                assert!(c.len() >= extent(m, n, rsc, csc), "gemm: output buffer too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every strided access inside
                // the three slices, and `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, exp_f32);
impl_scalar!(f64, matrixmultiply::dgemm, f64::exp);

/// `e^x` to within about one ulp, written so that loops over it vectorize.
fn exp_f32(x: f32) -> f32 {
    const LOG2_E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const ROUND: f32 = 12_582_912.0;
    #[allow(clippy::manual_clamp)]
    let x = x.max(-87.0).min(88.0);
    let n = (x * LOG2_E + ROUND) - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 5040.0;
    for c in [1.0 / 720.0, 1.0 / 120.0, 1.0 / 24.0, 1.0 / 6.0, 0.5, 1.0, 1.0] {
        p = p * r + c;
    }
    // The low mantissa bits of `n + 127 + ROUND` hold the biased exponent.
    p * f32::from_bits((n + (127.0 + ROUND)).to_bits() << 23)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposed_rhs() {
        // [[1,2],[3,4]] * [[5,6],[7,8]]^T
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, (2, 1), &b, (1, 2), 0.0, &mut c, (2, 1));
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn fast_exp_matches_libm() {
        for i in -8700..=8800 {
            let x = i as f32 * 0.01;
            let (fast, reference) = (exp_f32(x), x.exp());
            assert!(((fast - reference) / reference).abs() < 4e-7, "exp({x}) = {fast}, expected {reference}");
        }
        let mut xs = [0.0f32, -1.0, 1.0];
        f32::exp_in_place(&mut xs);
        assert_eq!(xs[0], 1.0);
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [2.0f32];
        let b = [3.0f32];
        let mut c = [1.0f32];
        f32::gemm(1, 1, 1, 1.0, &a, (1, 1), &b, (1, 1), 1.0, &mut c, (1, 1));
        assert_eq!(c[0], 7.0);
    }
}
