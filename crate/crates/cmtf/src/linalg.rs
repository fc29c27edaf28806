//! Pseudoinverse and least-squares kernels.
//!
//! The workhorse is [`stacked_kr_pinv_apply`], which applies the
//! pseudoinverse of a stacked matrix `[A ⊙ B; M]` to a right-hand side by
//! factoring only the small `F x F` Gram matrix
//! `A^T A ∗ B^T B + M^T M` instead of the tall stack itself.

use nalgebra::DMatrix;
use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::tensor::{hadamard, khatri_rao, Matrix};

/// Controls the singular-value cutoff of [`pinv`].
#[derive(Clone, Copy, Debug)]
pub struct PinvOptions {
    /// Singular values below `rank_tolerance * sigma_max` are treated as zero.
    pub rank_tolerance: f64,
}

impl Default for PinvOptions {
    fn default() -> Self {
        PinvOptions {
            rank_tolerance: 1e-10,
        }
    }
}

impl PinvOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rank_tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must be positive, got {}",
                self.rank_tolerance
            )));
        }
        Ok(())
    }
}

const SVD_MAX_ITERS: usize = 10_000;

/// Moore-Penrose pseudoinverse via SVD with relative thresholding of
/// singular values. Non-convergence of the SVD is surfaced as an error.
pub fn pinv(m: &Matrix, opts: &PinvOptions) -> Result<Matrix> {
    opts.validate()?;
    let (rows, cols) = m.dims();
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let dm = DMatrix::from_fn(rows, cols, |r, c| m[(r, c)]);
    let svd = nalgebra::linalg::SVD::try_new(dm, true, true, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or(Error::SvdNonConvergence { rows, cols })?;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = opts.rank_tolerance * sigma_max;

    // pinv = V * diag(1/sigma_i for sigma_i > cutoff) * U^T
    let rank_dim = svd.singular_values.len();
    let mut out = Array2::zeros((cols, rows));
    for r in 0..cols {
        for c in 0..rows {
            let mut acc = 0.0;
            for t in 0..rank_dim {
                let sv = svd.singular_values[t];
                if sv > cutoff && sv > 0.0 {
                    acc += vt[(t, r)] * u[(c, t)] / sv;
                }
            }
            out[(r, c)] = acc;
        }
    }
    Ok(Matrix::from_raw(out))
}

/// Applies `[A ⊙ B; M]†` to `rhs` as
/// `(A^T A ∗ B^T B + M^T M)† [ (A ⊙ B)^T, M^T ] rhs`.
///
/// The only factorization performed is the pseudoinverse of the `F x F` Gram
/// matrix; the tall stacked matrix is never pseudoinverted. `M` may have
/// zero rows, in which case this degenerates to `(A ⊙ B)† rhs`.
pub fn stacked_kr_pinv_apply(
    a: &Matrix,
    b: &Matrix,
    m: &Matrix,
    rhs: &Matrix,
    opts: &PinvOptions,
) -> Result<Matrix> {
    let f = a.cols();
    if b.cols() != f || m.cols() != f {
        return Err(Error::DimMismatch(format!(
            "factor column counts differ: a has {}, b has {}, m has {}",
            f,
            b.cols(),
            m.cols()
        )));
    }
    let kr_rows = a.rows() * b.rows();
    if rhs.rows() != kr_rows + m.rows() {
        return Err(Error::DimMismatch(format!(
            "rhs has {} rows, expected {} + {}",
            rhs.rows(),
            kr_rows,
            m.rows()
        )));
    }

    let gram_kr = hadamard(
        &a.transpose().dot(&a)?,
        &b.transpose().dot(&b)?,
    )?;
    // M^T M is an ordinary product; the Gram of the coupled block.
    let gram = Matrix::from_raw(gram_kr.as_array() + &m.as_array().t().dot(m.as_array()));

    let kr = khatri_rao(a, b)?;
    let rhs_arr = rhs.as_array();
    let top = kr
        .as_array()
        .t()
        .dot(&rhs_arr.slice(s![..kr_rows, ..]));
    let bottom = m.as_array().t().dot(&rhs_arr.slice(s![kr_rows.., ..]));

    pinv(&gram, opts)?.dot(&Matrix::from_raw(top + bottom))
}

/// Minimum-norm least-squares solution `pinv(a) * rhs`.
pub fn ls_solve(a: &Matrix, rhs: &Matrix, opts: &PinvOptions) -> Result<Matrix> {
    if a.rows() != rhs.rows() {
        return Err(Error::DimMismatch(format!(
            "lhs has {} rows, rhs has {}",
            a.rows(),
            rhs.rows()
        )));
    }
    pinv(a, opts)?.dot(rhs)
}
