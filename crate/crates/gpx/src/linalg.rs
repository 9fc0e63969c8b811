//! Dense linear solve used by the ridge and kernel-ridge fits.

use crate::scalar::Real;
use crate::Error;

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n` and is consumed.
pub fn solve<F: Real>(mut a: Vec<Vec<F>>, mut b: Vec<F>) -> Result<Vec<F>, Error> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    let tiny = F::from_config(1e-12);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                a[i][col]
                    .abs()
                    .partial_cmp(&a[j][col].abs())
                    .expect("finite pivots")
            })
            .unwrap();
        if a[pivot_row][col].abs() <= tiny {
            return Err(Error::SingularSystem);
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor == F::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - factor * v;
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    let mut x = vec![F::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc = acc - a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}
