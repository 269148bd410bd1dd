use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) type CMatrix = DMatrix<Complex64>;
pub(crate) type CVector = DVector<Complex64>;

/// Condition number above which a dense solve is refused.
pub(crate) const MAX_CONDITION: f64 = 1e12;

fn norm1(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` by LU and returns `x` with the 1-norm condition number.
pub(crate) fn solve_checked(a: &CMatrix, b: &CVector) -> Result<(CVector, f64)> {
    let lu = a.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    let cond = norm1(a) * norm1(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let x = lu.solve(b).ok_or(Error::IllConditioned(cond))?;
    Ok((x, cond))
}

/// Relative residual `‖A x − b‖ / ‖b‖` (Euclidean).
pub(crate) fn relative_residual(a: &CMatrix, x: &CVector, b: &CVector) -> f64 {
    let r = a * x - b;
    let nb = b.norm();
    if nb == 0.0 {
        r.norm()
    } else {
        r.norm() / nb
    }
}
