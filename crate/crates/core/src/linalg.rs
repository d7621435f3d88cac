//! Dense complex linear algebra helpers on top of `faer`.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type CMat = Mat<C64>;

/// `‖M‖_∞`, the largest absolute row sum.
pub fn inf_norm(m: MatRef<'_, C64>) -> f64 {
    let mut sums = vec![0.0; m.nrows()];
    for j in 0..m.ncols() {
        for (i, s) in sums.iter_mut().enumerate() {
            *s += m[(i, j)].norm();
        }
    }
    sums.into_iter().fold(0.0, f64::max)
}

pub fn frobenius(m: MatRef<'_, C64>) -> f64 {
    m.norm_l2()
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn shifted(m: MatRef<'_, C64>, z: C64) -> CMat {
    let mut out = m.to_owned();
    for i in 0..m.nrows() {
        out[(i, i)] -= z;
    }
    out
}

pub fn adjoint(m: MatRef<'_, C64>) -> CMat {
    m.adjoint().to_owned()
}

/// Seeded standard complex normal vector with unit norm.
pub fn random_unit(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            C64::new(a, b)
        })
        .collect();
    normalize(&mut v);
    v
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalize(v: &mut [C64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        for z in v.iter_mut() {
            *z /= n;
        }
    }
    n
}

pub fn matvec(m: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); m.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == C64::new(0.0, 0.0) {
            continue;
        }
        let col = m.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += col[i] * xj;
        }
    }
    y
}

pub fn adjoint_matvec(m: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            (0..m.nrows()).map(|i| col[i].conj() * x[i]).sum()
        })
        .collect()
}

/// Power-iteration estimate of `‖M‖₂`.
pub fn spectral_norm(m: MatRef<'_, C64>, seed: u64) -> f64 {
    let mut x = random_unit(m.ncols(), seed);
    let mut est = 0.0;
    for _ in 0..5000 {
        let y = matvec(m, &x);
        let mut z = adjoint_matvec(m, &y);
        let s = normalize(&mut z);
        if s == 0.0 {
            return 0.0;
        }
        let new = s.sqrt();
        x = z;
        if (new - est).abs() <= 1e-13 * new {
            return new;
        }
        est = new;
    }
    est
}

/// LU factorization of `M - z` that rejects non-finite inputs.
pub fn lu_shifted(m: MatRef<'_, C64>, z: C64) -> Result<PartialPivLu<C64>> {
    let a = shifted(m, z);
    if !a.norm_max().is_finite() {
        return Err(Error::NonFinite("matrix entries".into()));
    }
    Ok(a.partial_piv_lu())
}

/// `(M - z)^{-1} B`.
pub fn solve_shifted(lu: &PartialPivLu<C64>, b: MatRef<'_, C64>) -> Result<CMat> {
    let x = lu.solve(b);
    if !x.norm_max().is_finite() {
        return Err(Error::SolveFailure("non-finite solution".into()));
    }
    Ok(x)
}

/// Eigenvalues and orthonormal eigenvectors of a Hermitian matrix, ascending.
pub fn hermitian_eigen(m: MatRef<'_, C64>) -> Result<(Vec<f64>, CMat)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..m.nrows()).map(|i| s[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Eigenvalues and eigenvectors of a general complex matrix.
pub fn general_eigen(m: MatRef<'_, C64>) -> Result<(Vec<C64>, CMat)> {
    if !m.norm_max().is_finite() {
        return Err(Error::NonFinite("matrix entries".into()));
    }
    let evd = m
        .eigen()
        .map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..m.nrows()).map(|i| s[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Determinant of a small matrix by partial-pivot elimination.
pub fn small_det(m: MatRef<'_, C64>) -> C64 {
    let n = m.nrows();
    let mut a: Vec<Vec<C64>> = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)]).collect())
        .collect();
    let mut det = C64::new(1.0, 0.0);
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| a[x][c].norm().total_cmp(&a[y][c].norm()))
            .unwrap();
        if a[p][c].norm() == 0.0 {
            return C64::new(0.0, 0.0);
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                let t = a[c][k];
                a[r][k] -= f * t;
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_and_det() {
        let m = Mat::from_fn(3, 3, |i, j| {
            C64::new((i * 3 + j) as f64, (i as f64) - (j as f64))
        });
        let direct = m.determinant();
        assert!((small_det(m.as_ref()) - direct).norm() < 1e-10 * (1.0 + direct.norm()));
        let d = Mat::from_fn(4, 4, |i, j| {
            if i == j {
                C64::new(i as f64 + 1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        assert!((spectral_norm(d.as_ref(), 1) - 4.0).abs() < 1e-10);
        assert_eq!(inf_norm(d.as_ref()), 4.0);
    }

    #[test]
    fn hermitian_eigen_orders() {
        let h = Mat::from_fn(5, 5, |i, j| {
            let a = C64::new((i + j) as f64, i as f64 - j as f64);
            if i == j {
                C64::new(a.re, 0.0)
            } else {
                a
            }
        });
        let (vals, vecs) = hermitian_eigen(h.as_ref()).unwrap();
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let r = &h * &vecs
            - &vecs
                * Mat::from_fn(5, 5, |i, j| {
                    if i == j {
                        C64::new(vals[i], 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                });
        assert!(r.norm_max() < 1e-12);
    }
}
