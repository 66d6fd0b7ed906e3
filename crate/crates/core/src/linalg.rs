//! Small dense linear solver used by the Newton-Raphson family and the DC
//! methods. Row-major Gaussian elimination with partial pivoting; the
//! systems in scope stay below a few hundred unknowns, so no sparsity or
//! external LAPACK is warranted.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinalgError {
    #[error("singular matrix (pivot below tolerance at column {column})")]
    Singular { column: usize },
    #[error("dimension mismatch: matrix is {rows}x{cols}, rhs has {rhs} entries")]
    Dimension {
        rows: usize,
        cols: usize,
        rhs: usize,
    },
}

/// Dense row-major square matrix with its right-hand side, solved in place.
///
/// `a` holds `n * n` entries; on success `b` contains the solution.
pub fn solve_in_place<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> Result<(), LinalgError> {
    if a.len() != n * n || b.len() != n {
        return Err(LinalgError::Dimension {
            rows: n,
            cols: a.len() / n.max(1),
            rhs: b.len(),
        });
    }
    // Scale reference for the singularity test.
    let mut scale = T::zero();
    for v in a.iter() {
        scale = scale.max(v.abs());
    }
    let tiny = T::epsilon() * scale.max(T::one()) * crate::scalar::cast::<T>(16.0);

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for row in (col + 1)..n {
            let v = a[row * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= tiny {
            return Err(LinalgError::Singular { column: col });
        }
        if pivot_row != col {
            for k in col..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let inv = T::one() / a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] * inv;
            if factor == T::zero() {
                continue;
            }
            for k in col..n {
                let upd = a[col * n + k] * factor;
                a[row * n + k] = a[row * n + k] - upd;
            }
            b[row] = b[row] - b[col] * factor;
        }
    }
    // Back substitution.
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc = acc - a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}

/// Convenience wrapper taking a nested-vec matrix.
pub fn solve<T: Real>(matrix: &[Vec<T>], rhs: &[T]) -> Result<Vec<T>, LinalgError> {
    let n = rhs.len();
    let mut flat = Vec::with_capacity(n * n);
    for row in matrix {
        if row.len() != n {
            return Err(LinalgError::Dimension {
                rows: matrix.len(),
                cols: row.len(),
                rhs: n,
            });
        }
        flat.extend_from_slice(row);
    }
    if matrix.len() != n {
        return Err(LinalgError::Dimension {
            rows: matrix.len(),
            cols: n,
            rhs: n,
        });
    }
    let mut x = rhs.to_vec();
    solve_in_place(&mut flat, &mut x, n)?;
    Ok(x)
}
