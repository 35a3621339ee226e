//! Small dense linear-algebra helpers.
//!
//! Every system in this crate is tiny (a GLM normal-equation matrix, at most
//! a few hundred columns), so hand-rolled factorizations on row-major
//! buffers keep the hot paths allocation-free.

use crate::error::{Error, Result};

/// Solve `A x = b` in place for symmetric positive-definite `A` (row-major,
/// `k` by `k`). On success `b` holds `x`. `A` is overwritten with its
/// Cholesky factor.
pub fn cholesky_solve_in_place(a: &mut [f64], b: &mut [f64], k: usize) -> Result<()> {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(b.len(), k);
    // Factor A = L L^T, lower triangle stored in place.
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SingularSystem);
        }
        let ljj = d.sqrt();
        a[j * k + j] = ljj;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / ljj;
        }
    }
    // Forward solve L y = b.
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    // Back solve L^T x = y.
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in (i + 1)..k {
            s -= a[p * k + i] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    Ok(())
}

/// Solve `A x = b` for general square `A` (row-major) via partial-pivot LU.
/// `A` and `b` are copied internally; returns `x`.
pub fn lu_solve(a: &[f64], b: &[f64], k: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(b.len(), k);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..k {
        // Pivot.
        let mut piv = col;
        let mut best = m[col * k + col].abs();
        for r in (col + 1)..k {
            let v = m[r * k + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-12 || !best.is_finite() {
            return Err(Error::SingularSystem);
        }
        if piv != col {
            for c in 0..k {
                m.swap(col * k + c, piv * k + c);
            }
            x.swap(col, piv);
        }
        let d = m[col * k + col];
        for r in (col + 1)..k {
            let f = m[r * k + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                m[r * k + c] -= f * m[col * k + c];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..k).rev() {
        let mut s = x[i];
        for c in (i + 1)..k {
            s -= m[i * k + c] * x[c];
        }
        x[i] = s / m[i * k + i];
    }
    Ok(x)
}
