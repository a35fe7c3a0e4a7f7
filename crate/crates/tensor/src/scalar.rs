use std::fmt::{Debug, Display};

use num_traits::Float;

/// Floating point element type usable on a [`Tape`](crate::Tape).
///
/// Implemented for `f32` (training) and `f64` (numerical checks).
pub trait Scalar: Float + Default + Debug + Display + Send + Sync + 'static {
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    /// Conversion to `f64`.
    fn to_f64_lossless(self) -> f64;

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing `m x k`,
    /// `k x n` and `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }

    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }

    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
