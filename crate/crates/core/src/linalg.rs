//! Dense linear-algebra helpers shared by the solvers.
//!
//! Resonator models mix states whose natural scales differ by ten or more
//! orders of magnitude (positions in metres, velocities in m/s, stiffness
//! entries near 1e11 s⁻²). Everything here that inverts or exponentiates a
//! matrix first applies a diagonal similarity or Jacobi scaling so the
//! floating-point work happens on well-scaled data.

use nalgebra::{Complex, DMatrix, DVector};

pub type Complex64 = Complex<f64>;

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Diagonal balancing (Parlett–Reinsch, radix 2).
///
/// Returns `d` such that `D⁻¹ A D` has rows and columns of comparable norm,
/// with `D = diag(d)`. Scale factors are exact powers of two so the
/// similarity introduces no rounding.
pub fn balance(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut d = DVector::from_element(n, 1.0);
    let mut b = a.clone();
    const RADIX: f64 = 2.0;
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 200 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            while cc < r / RADIX {
                cc *= RADIX * RADIX;
                f *= RADIX;
            }
            while cc > r * RADIX {
                cc /= RADIX * RADIX;
                f /= RADIX;
            }
            if (cc + r) / f < 0.95 * s {
                converged = false;
                d[i] *= f;
                // column i scales by f, row i by 1/f
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    d
}

/// `D⁻¹ A D` for the diagonal `d`.
pub(crate) fn similarity(a: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[j] / d[i])
}

/// `D M D` (congruence), used to move covariances into balanced coordinates.
pub(crate) fn congruence(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i] * d[j])
}

pub(crate) fn congruence_inv(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (d[i] * d[j]))
}

/// Matrix exponential: scaling and squaring with a degree-13 Padé
/// approximant, applied to the balanced matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = balance(a);
    let e = similarity(a, &d).exp();
    // A = D Ã D⁻¹  ⇒  e^A = D e^Ã D⁻¹
    DMatrix::from_fn(e.nrows(), e.ncols(), |i, j| e[(i, j)] * d[i] / d[j])
}

pub(crate) fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = frobenius(a).max(frobenius(b));
    if scale == 0.0 {
        0.0
    } else {
        frobenius(&(a - b)) / scale
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let s = symmetrized(m.clone());
    s.symmetric_eigenvalues().min()
}

fn jacobi_scale(p: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(p.nrows(), |i, _| {
        let v = p[(i, i)];
        if v > 0.0 && v.is_finite() {
            v.sqrt()
        } else {
            1.0
        }
    })
}

/// Solve `P X = rhs` for symmetric positive definite `P`.
///
/// Jacobi-scales `P` to unit diagonal before the Cholesky factorization;
/// falls back to LU when the scaled matrix is not numerically definite.
pub(crate) fn solve_spd(p: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let s = jacobi_scale(p);
    let ps = DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, j)] / (s[i] * s[j]));
    let rs = DMatrix::from_fn(rhs.nrows(), rhs.ncols(), |i, j| rhs[(i, j)] / s[i]);
    let y = match ps.clone().cholesky() {
        Some(ch) => ch.solve(&rs),
        None => ps.lu().solve(&rs)?,
    };
    Some(DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] / s[i]))
}

/// A factor `L` with `L Lᵀ = Q` for symmetric positive semidefinite `Q`.
///
/// Uses the eigendecomposition of the Jacobi-scaled matrix, clipping
/// eigenvalues below zero. Fails when an eigenvalue is negative beyond
/// `1e-10` of the scaled trace.
pub fn psd_factor(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = q.nrows();
    let s = jacobi_scale(q);
    let mut qs = DMatrix::from_fn(n, n, |i, j| q[(i, j)] / (s[i] * s[j]));
    symmetrize(&mut qs);
    let tr = qs.trace().abs().max(f64::MIN_POSITIVE);
    let eig = qs.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-10 * tr {
        return Err(Error::NotPsd {
            context: "psd_factor",
            min_eig: min,
        });
    }
    let mut l = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let r = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(r);
    }
    for i in 0..n {
        l.row_mut(i).scale_mut(s[i]);
    }
    Ok(l)
}

fn kron_sum_solve(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    discrete: bool,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let nn = n * n;
    // column-major vec: vec(A X Bᵀ) = (B ⊗ A) vec X
    let mut k = DMatrix::zeros(nn, nn);
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            for l in 0..n {
                for m in 0..n {
                    let col = l * n + m;
                    let v = if discrete {
                        let id = if row == col { 1.0 } else { 0.0 };
                        id - a[(j, l)] * a[(i, m)]
                    } else {
                        let mut v = 0.0;
                        if j == l {
                            v += a[(i, m)];
                        }
                        if i == m {
                            v += a[(j, l)];
                        }
                        v
                    };
                    k[(row, col)] = v;
                }
            }
        }
    }
    let sign = if discrete { 1.0 } else { -1.0 };
    let rhs = DVector::from_iterator(nn, q.iter().map(|v| sign * v));
    let x = k.lu().solve(&rhs)?;
    Some(symmetrized(DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// Solve the continuous Lyapunov equation `A X + X Aᵀ + Q = 0`.
///
/// Direct solve of the Kronecker-sum system in balanced coordinates
/// (suitable for the n ≲ 20 state dimensions used here).
pub fn lyap_continuous(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = balance(a);
    let ab = similarity(a, &d);
    let qb = congruence_inv(q, &d);
    let xb = kron_sum_solve(&ab, &qb, false).ok_or(Error::Singular("continuous Lyapunov"))?;
    Ok(congruence(&xb, &d))
}

/// Solve the discrete Lyapunov equation `X = A X Aᵀ + Q`.
pub fn lyap_discrete(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = balance(a);
    let ab = similarity(a, &d);
    let qb = congruence_inv(q, &d);
    let xb = kron_sum_solve(&ab, &qb, true).ok_or(Error::Singular("discrete Lyapunov"))?;
    Ok(congruence(&xb, &d))
}

/// Eigenvalues of a general square matrix, computed after balancing.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let d = balance(a);
    similarity(a, &d).complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Numerical rank with tolerance `n·ε·σ_max`, `n` the larger dimension.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}
