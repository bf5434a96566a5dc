//! Scalar abstraction so the model runs in f32 for training and f64 for
//! gradient checking, plus a small row-major matrix with a GEMM backend.

use num_traits::Float;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

pub trait Real:
    Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static + std::iter::Sum
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// c = alpha * a@b + beta * c, with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(F::zero());
    }

    /// self (m,k) @ b (k,n) -> (m,n)
    pub fn matmul(&self, b: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, b.rows);
        let mut c = Mat::zeros(self.rows, b.cols);
        F::gemm(
            self.rows,
            self.cols,
            b.cols,
            F::one(),
            &self.data,
            self.cols as isize,
            1,
            &b.data,
            b.cols as isize,
            1,
            F::zero(),
            &mut c.data,
            b.cols as isize,
            1,
        );
        c
    }

    /// self (m,k) @ b^T, b is (n,k) -> (m,n)
    pub fn matmul_nt(&self, b: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, b.cols);
        let mut c = Mat::zeros(self.rows, b.rows);
        F::gemm(
            self.rows,
            self.cols,
            b.rows,
            F::one(),
            &self.data,
            self.cols as isize,
            1,
            &b.data,
            1,
            b.cols as isize,
            F::zero(),
            &mut c.data,
            b.rows as isize,
            1,
        );
        c
    }

    /// c += self @ b^T, b is (n,k), c is (m,n)
    pub fn matmul_nt_acc(&self, b: &Mat<F>, c: &mut Mat<F>) {
        assert_eq!(self.cols, b.cols);
        assert_eq!(c.rows, self.rows);
        assert_eq!(c.cols, b.rows);
        F::gemm(
            self.rows,
            self.cols,
            b.rows,
            F::one(),
            &self.data,
            self.cols as isize,
            1,
            &b.data,
            1,
            b.cols as isize,
            F::one(),
            &mut c.data,
            c.cols as isize,
            1,
        );
    }

    /// c += self^T @ b, self is (k,m), b is (k,n), c is (m,n)
    pub fn matmul_tn_acc(&self, b: &Mat<F>, c: &mut Mat<F>) {
        assert_eq!(self.rows, b.rows);
        assert_eq!(c.rows, self.cols);
        assert_eq!(c.cols, b.cols);
        F::gemm(
            self.cols,
            self.rows,
            b.cols,
            F::one(),
            &self.data,
            1,
            self.cols as isize,
            &b.data,
            b.cols as isize,
            1,
            F::one(),
            &mut c.data,
            c.cols as isize,
            1,
        );
    }
}

/// Standard normal draw via Box-Muller on ChaCha output; deterministic
/// given the rng state.
pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let u1 = u1.max(1e-300);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Mat::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_nt_matches_explicit_transpose() {
        let a = Mat::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.5, 0.5, 0.0]);
        let c = a.matmul_nt(&b);
        assert_eq!(c.rows, 2);
        assert_eq!(c.cols, 2);
        assert_eq!(c.data, vec![4.0, 1.5, 10.0, 4.5]);
    }

    #[test]
    fn matmul_tn_acc_accumulates() {
        let a = Mat::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = Mat::from_vec(2, 1, vec![1.0, 1.0]);
        let mut c = Mat::from_vec(2, 1, vec![10.0, 10.0]);
        a.matmul_tn_acc(&b, &mut c);
        assert_eq!(c.data, vec![14.0, 16.0]);
    }
}
