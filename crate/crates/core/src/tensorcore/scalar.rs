use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors and volumes: `f32` or `f64`.
///
/// Matrix products are dispatched to the precision-specific kernel of the
/// `matrixmultiply` crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c = op(a) * op(b) + beta * c`, with `op(a)` of shape m×k and `op(b)` of
    /// shape k×n. A transposed operand is stored row-major in its transposed
    /// shape (k×m for `a`, n×k for `b`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite float conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn strides(trans_a: bool, trans_b: bool, m: usize, n: usize, k: usize) -> [isize; 4] {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    [rsa, csa, rsb, csb]
}

fn check_lengths(m: usize, n: usize, k: usize, a: usize, b: usize, c: usize) {
    assert!(a >= m * k, "gemm: lhs holds {a} elements, needs {}", m * k);
    assert!(b >= k * n, "gemm: rhs holds {b} elements, needs {}", k * n);
    assert!(c >= m * n, "gemm: output holds {c} elements, needs {}", m * n);
}

impl Scalar for f32 {
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        a: &[f32],
        b: &[f32],
        beta: f32,
        c: &mut [f32],
    ) {
        check_lengths(m, n, k, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        let [rsa, csa, rsb, csb] = strides(trans_a, trans_b, m, n, k);
        // SAFETY: the operand extents were checked against the slice lengths above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        a: &[f64],
        b: &[f64],
        beta: f64,
        c: &mut [f64],
    ) {
        check_lengths(m, n, k, a.len(), b.len(), c.len());
        if m == 0 || n == 0 {
            return;
        }
        let [rsa, csa, rsb, csb] = strides(trans_a, trans_b, m, n, k);
        // SAFETY: the operand extents were checked against the slice lengths above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
