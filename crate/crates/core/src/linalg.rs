//! Small dense linear-algebra helpers shared by the GP and posterior code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Number of tenfold jitter escalations attempted before giving up.
const MAX_ESCALATIONS: usize = 6;

/// Cholesky factorization of `a + jitter I`, escalating the jitter tenfold on
/// failure. Returns the factor and the jitter that succeeded.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jit = jitter;
    for _ in 0..=MAX_ESCALATIONS {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jit;
        }
        if let Some(ch) = Cholesky::new(m) {
            if ch.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((ch, jit));
            }
        }
        jit = if jit > 0.0 {
            jit * 10.0
        } else {
            1e-12 * mean_abs_diagonal(a).max(1e-300)
        };
    }
    Err(Error::numeric(format!(
        "Cholesky factorization failed for {}x{} matrix even with jitter {jit:e}",
        a.nrows(),
        a.ncols()
    )))
}

fn mean_abs_diagonal(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows().max(1);
    a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64
}

pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Zero-mean multivariate normal log-density from a Cholesky factor of the covariance.
pub fn mvn_log_density(ch: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let z = ch
        .l()
        .solve_lower_triangular(v)
        .expect("triangular solve on a valid factor");
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det(ch) + z.norm_squared())
}

/// `y = a x` into a preallocated slice.
#[inline]
pub fn matvec(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let (nr, nc) = a.shape();
    debug_assert_eq!(x.len(), nc);
    debug_assert_eq!(y.len(), nr);
    y.iter_mut().for_each(|v| *v = 0.0);
    // Column-major storage: accumulate column by column.
    for (j, col) in a.as_slice().chunks_exact(nr).enumerate() {
        let xj = x[j];
        if xj != 0.0 {
            for (yi, aij) in y.iter_mut().zip(col) {
                *yi += aij * xj;
            }
        }
    }
}

/// `y = a^T x` into a preallocated slice.
#[inline]
pub fn matvec_t(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let nr = a.nrows();
    debug_assert_eq!(x.len(), nr);
    for (yj, col) in y.iter_mut().zip(a.as_slice().chunks_exact(nr)) {
        *yj = col.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (ch, jit) = cholesky_with_jitter(&a, 0.0).unwrap();
        assert!(jit > 0.0);
        assert!(log_det(&ch).is_finite());
    }

    #[test]
    fn standard_normal_density_at_origin() {
        let a = DMatrix::identity(1, 1);
        let (ch, _) = cholesky_with_jitter(&a, 0.0).unwrap();
        let v = DVector::from_vec(vec![0.0]);
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((mvn_log_density(&ch, &v) - want).abs() < 1e-15);
    }

    #[test]
    fn matvec_matches_nalgebra() {
        let a = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 2.5);
        let x = [1.0, -2.0, 0.5];
        let mut y = [0.0; 4];
        matvec(&a, &x, &mut y);
        let want = &a * DVector::from_row_slice(&x);
        assert_eq!(y.as_slice(), want.as_slice());
        let xt = [0.3, 1.0, -1.0, 2.0];
        let mut yt = [0.0; 3];
        matvec_t(&a, &xt, &mut yt);
        let want = a.transpose() * DVector::from_row_slice(&xt);
        for (a, b) in yt.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
