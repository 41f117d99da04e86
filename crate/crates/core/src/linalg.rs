//! Thin helpers over faer shared by the dynamics and observables code.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Accum, Mat, MatMut, MatRef, Par};

use crate::C64;

pub(crate) fn column(v: &[C64]) -> Mat<C64> {
    Mat::from_fn(v.len(), 1, |r, _| v[r])
}

pub(crate) fn lu_solve(lu: &PartialPivLu<C64>, rhs: &[C64]) -> Vec<C64> {
    let mut x = column(rhs);
    lu.solve_in_place(x.as_mut());
    (0..rhs.len()).map(|r| x[(r, 0)]).collect()
}

pub(crate) fn matvec(a: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); a.nrows()];
    faer::linalg::matmul::matmul(
        MatMut::from_column_major_slice_mut(&mut y, a.nrows(), 1),
        Accum::Replace,
        a,
        MatRef::from_column_major_slice(x, x.len(), 1),
        C64::new(1.0, 0.0),
        Par::Seq,
    );
    y
}

/// Column-by-column accumulation in a fixed order.
pub(crate) fn matvec_ordered(a: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    let n = a.nrows();
    let mut y = vec![C64::new(0.0, 0.0); n];
    for (c, xc) in x.iter().enumerate() {
        if *xc == C64::new(0.0, 0.0) {
            continue;
        }
        let col = a.col(c);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += col[r] * xc;
        }
    }
    y
}

pub(crate) fn matmul(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Mat<C64> {
    let mut out = Mat::<C64>::zeros(a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(out.as_mut(), Accum::Replace, a, b, C64::new(1.0, 0.0), Par::Seq);
    out
}

pub(crate) fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Maximum absolute column sum.
pub(crate) fn norm1(a: MatRef<'_, C64>) -> f64 {
    (0..a.ncols())
        .map(|c| a.col(c).iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute row sum.
pub(crate) fn norm_inf(a: MatRef<'_, C64>) -> f64 {
    let mut rows = vec![0.0; a.nrows()];
    for c in 0..a.ncols() {
        for (r, x) in a.col(c).iter().enumerate() {
            rows[r] += x.norm();
        }
    }
    rows.into_iter().fold(0.0, f64::max)
}

/// Hager–Higham lower bound on ‖A⁻¹‖₁ from an existing LU factorization.
pub(crate) fn inverse_norm1_estimate(lu: &PartialPivLu<C64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut x = Mat::from_fn(n, 1, |_, _| C64::new(1.0 / n as f64, 0.0));
    let mut est = 0.0;
    for iter in 0..5 {
        let mut y = x.clone();
        lu.solve_in_place(y.as_mut());
        let y_norm: f64 = (0..n).map(|r| y[(r, 0)].norm()).sum();
        if !y_norm.is_finite() {
            return f64::INFINITY;
        }
        if iter > 0 && y_norm <= est {
            break;
        }
        est = y_norm;
        let mut z = Mat::from_fn(n, 1, |r, _| {
            let v = y[(r, 0)];
            if v.norm() > 0.0 { v / v.norm() } else { C64::new(1.0, 0.0) }
        });
        lu.solve_adjoint_in_place(z.as_mut());
        let (j, zmax) = (0..n)
            .map(|r| (r, z[(r, 0)].norm()))
            .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let ztx: f64 = (0..n).map(|r| (z[(r, 0)].conj() * x[(r, 0)]).re).sum();
        if iter > 0 && zmax <= ztx {
            break;
        }
        x = Mat::zeros(n, 1);
        x[(j, 0)] = C64::new(1.0, 0.0);
    }
    // alternating probe guards against the rare underestimates of the power iteration
    let mut alt = Mat::from_fn(n, 1, |r, _| {
        let s = if r % 2 == 0 { 1.0 } else { -1.0 };
        C64::new(s * (1.0 + r as f64 / (n.max(2) - 1) as f64), 0.0)
    });
    lu.solve_in_place(alt.as_mut());
    let alt_est = 2.0 * (0..n).map(|r| alt[(r, 0)].norm()).sum::<f64>() / (3.0 * n as f64);
    est.max(alt_est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_estimate_on_diagonal_matrix() {
        let a = Mat::from_fn(4, 4, |r, c| if r == c { C64::new(10f64.powi(r as i32), 0.0) } else { C64::new(0.0, 0.0) });
        let lu = a.partial_piv_lu();
        let cond = norm1(a.as_ref()) * inverse_norm1_estimate(&lu, 4);
        assert!((cond - 1000.0).abs() < 1e-9, "{cond}");
    }

    #[test]
    fn condition_estimate_is_a_lower_bound_close_to_exact() {
        let n = 12;
        let a = Mat::from_fn(n, n, |r, c| {
            C64::new(((r * 7 + c * 3) % 11) as f64 - 5.0, ((r + 2 * c) % 5) as f64) + if r == c { C64::new(20.0, 0.0) } else { C64::new(0.0, 0.0) }
        });
        let lu = a.partial_piv_lu();
        let est = inverse_norm1_estimate(&lu, n);
        let inv = {
            let mut id = Mat::from_fn(n, n, |r, c| if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
            lu.solve_in_place(id.as_mut());
            id
        };
        let exact = norm1(inv.as_ref());
        assert!(est <= exact * (1.0 + 1e-12));
        assert!(est >= 0.3 * exact, "{est} vs {exact}");
    }
}
