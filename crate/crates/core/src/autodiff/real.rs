use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the graph engine can run on.
///
/// Models train in `f32`; the `f64` instantiation exists so finite-difference
/// checks are not swamped by single-precision rounding.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c = alpha * a·b + beta * c` for row/column strided operands.
    ///
    /// # Safety
    /// Pointers must address matrices of the stated shapes and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f32_lossy(v: f32) -> Self;

    fn to_f32_lossy(self) -> f32;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f32_lossy(v: f32) -> f32 {
        v
    }

    fn to_f32_lossy(self) -> f32 {
        self
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f32_lossy(v: f32) -> f64 {
        v as f64
    }

    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a, R> {
    pub data: &'a [R],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, R> MatRef<'a, R> {
    pub fn new(data: &'a [R], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// `out (+)= a · b` where `out` is row-major `[a.rows', b.cols']`.
pub fn matmul<R: Real>(a: MatRef<'_, R>, b: MatRef<'_, R>, out: &mut [R], accumulate: bool) {
    assert_eq!(a.data.len(), a.rows * a.cols, "lhs storage");
    assert_eq!(b.data.len(), b.rows * b.cols, "rhs storage");
    let (m, k, rsa, csa) = a.logical();
    let (k2, n, rsb, csb) = b.logical();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.len(), m * n, "output storage");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { R::one() } else { R::zero() };
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = R::zero());
        }
        return;
    }
    // SAFETY: shapes and strides were checked against slice lengths above.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            R::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    out[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let expect = naive(&a, &b, 2, 3, 4);
        let mut out = vec![0.0; 8];
        matmul(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 4), &mut out, false);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // (b^T)^T via a transposed copy
        let mut bt = vec![0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                bt[c * 3 + r] = b[r * 4 + c];
            }
        }
        let mut out2 = vec![1.0; 8];
        matmul(MatRef::new(&a, 2, 3), MatRef::new(&bt, 4, 3).t(), &mut out2, true);
        for (x, y) in out2.iter().zip(&expect) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }
}
