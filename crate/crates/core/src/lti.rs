//! Structural tests and exact zero-order-hold discretization.

use nalgebra::{DMatrix, DVector};
use crate::linalg::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, balance, expm, similarity};
use crate::model::{StateLabel, StateSpaceModel};

/// Sampled-data model `x_{k+1} = A_d x_k + B_d u_k + w_k`, `y_k = C x_k + v_k`
/// with `w_k ~ N(0, Q_d)` and `v_k ~ N(0, R_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    #[serde(with = "crate::io::matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub r: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub c: DMatrix<f64>,
    /// Sample period [s].
    pub t_s: f64,
    pub labels: Vec<StateLabel>,
    /// Effective masses of the mechanical modes, in mode order.
    #[serde(default)]
    pub masses: Vec<f64>,
}

impl DiscreteModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn velocity_index(&self, mode: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| *l == StateLabel::Velocity(mode))
    }

    pub fn position_index(&self, mode: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| *l == StateLabel::Position(mode))
    }

    pub fn n_modes(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, StateLabel::Velocity(_)))
            .count()
    }
}

/// Result of a rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankTest {
    pub rank: usize,
    pub full: bool,
}

// Balanced, norm-scaled realization: rank of the Krylov matrices is
// invariant under diagonal similarity and time scaling, but the raw
// resonator matrices span too many decades for a plain SVD.
fn scaled_pair(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
    let d = balance(a);
    let ab = similarity(a, &d);
    let norm = ab.amax();
    let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
    (ab.scale(s), d, s)
}

fn normalized(m: DMatrix<f64>) -> DMatrix<f64> {
    let nrm = m.amax();
    if nrm > 0.0 {
        m / nrm
    } else {
        m
    }
}

/// Dimension of the Krylov space `span{S, AS, A²S, …}` by an orthogonal
/// staircase. Each new block is orthogonalized (twice) against the basis
/// and reduced by Gram–Schmidt with column pivoting; a direction counts
/// when its residual norm exceeds `n·ε·σ_max`, `σ_max` being the largest
/// residual norm seen so far.
fn krylov_dimension(a: &DMatrix<f64>, start: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut block: Vec<DVector<f64>> = start.column_iter().map(|c| c.into_owned()).collect();
    let mut sigma_max: f64 = 0.0;
    let tol_factor = n as f64 * f64::EPSILON;
    let project_out = |v: &mut DVector<f64>, basis: &[DVector<f64>]| {
        for _ in 0..2 {
            for q in basis {
                let p = q.dot(v);
                v.axpy(-p, q, 1.0);
            }
        }
    };
    while !block.is_empty() && basis.len() < n {
        for v in block.iter_mut() {
            project_out(v, &basis);
        }
        let mut added = Vec::new();
        loop {
            let best = block
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.norm()))
                .max_by(|x, y| x.1.total_cmp(&y.1));
            let Some((idx, norm)) = best else { break };
            sigma_max = sigma_max.max(norm);
            if norm <= tol_factor * sigma_max || basis.len() == n {
                break;
            }
            let q = block.swap_remove(idx) / norm;
            for v in block.iter_mut() {
                project_out(v, std::slice::from_ref(&q));
            }
            basis.push(q.clone());
            added.push(q);
        }
        block = added.iter().map(|q| a * q).collect();
    }
    basis.len()
}

/// Rank of the observability matrix `[C; CA; …; CA^{n−1}]`, i.e. the
/// dimension of the observable subspace.
pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<RankTest> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n {
        return Err(Error::Dimension("observability: C must have n columns".into()));
    }
    let (ab, d, _) = scaled_pair(a);
    let cb = normalized(DMatrix::from_fn(c.nrows(), n, |i, j| c[(i, j)] * d[j]));
    let rank = krylov_dimension(&ab.transpose(), &cb.transpose());
    Ok(RankTest { rank, full: rank == n })
}

/// Rank of the controllability matrix `[B, AB, …, A^{n−1}B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<RankTest> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("controllability: B must have n rows".into()));
    }
    let (ab, d, _) = scaled_pair(a);
    let bb = normalized(DMatrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] / d[i]));
    let rank = krylov_dimension(&ab, &bb);
    Ok(RankTest { rank, full: rank == n })
}

/// PBH test: every eigenvalue with `Re λ ≥ 0` must satisfy
/// `rank [A − λI, B] = n`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension("stabilizability: B must have n rows".into()));
    }
    if n == 0 {
        return Ok(true);
    }
    let (ab, d, _) = scaled_pair(a);
    let bb = normalized(DMatrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] / d[i]));
    // marginal eigenvalues count as unstable
    let margin = 1e-12;
    for lam in ab.complex_eigenvalues().iter() {
        if lam.re < -margin {
            continue;
        }
        let m = DMatrix::from_fn(n, n + bb.ncols(), |i, j| {
            if j < n {
                let diag = if i == j { *lam } else { Complex64::new(0.0, 0.0) };
                Complex64::new(ab[(i, j)], 0.0) - diag
            } else {
                Complex64::new(bb[(i, j - n)], 0.0)
            }
        });
        let sv = m.singular_values();
        let smax = sv.max();
        let tol = (n + bb.ncols()) as f64 * f64::EPSILON * smax.max(1.0) * 1e3;
        let rank = sv.iter().filter(|&&s| s > tol).count();
        if rank < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Exact zero-order-hold discretization at sample period `t_s`.
///
/// `A_d`, `B_d` come from `exp([[A, B], [0, 0]] T_s)`, which stays valid
/// for singular `A`. `Q_d = ∫₀^{T_s} e^{Aτ} G Gᵀ e^{Aᵀτ} dτ` is recovered
/// from the Van Loan block exponential `exp([[−A, GGᵀ], [0, Aᵀ]] T_s)`.
/// `R_d = R / T_s`.
pub fn discretize(model: &StateSpaceModel, t_s: f64) -> Result<DiscreteModel> {
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(Error::invalid("t_s", "sample period must be > 0"));
    }
    let n = model.n_states();
    let l = model.n_inputs();

    let mut aug = DMatrix::zeros(n + l, n + l);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&model.a * t_s));
    aug.view_mut((0, n), (n, l)).copy_from(&(&model.b * t_s));
    let e = expm(&aug);
    let a_d = e.view((0, 0), (n, n)).into_owned();
    let b_d = e.view((0, n), (n, l)).into_owned();

    let q_d = van_loan_q(&model.a, &model.noise_intensity(), t_s);
    if !q_d.iter().all(|v| v.is_finite()) || !a_d.iter().all(|v| v.is_finite()) {
        return Err(Error::NoConvergence {
            what: "matrix exponential",
            iterations: 0,
            last_change: f64::NAN,
        });
    }
    Ok(DiscreteModel {
        a: a_d,
        b: b_d,
        q: q_d,
        r: &model.r / t_s,
        c: model.c.clone(),
        t_s,
        labels: model.labels.clone(),
        masses: model.modes.iter().map(|m| m.m_eff_kg).collect(),
    })
}

/// `∫₀^{T} e^{Aτ} W e^{Aᵀτ} dτ` via the Van Loan construction.
pub fn van_loan_q(a: &DMatrix<f64>, w: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a * t));
    m.view_mut((0, n), (n, n)).copy_from(&(w * t));
    m.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * t));
    let e = expm(&m);
    let f22 = e.view((n, n), (n, n));
    let f12 = e.view((0, n), (n, n));
    linalg::symmetrized(f22.transpose() * f12)
}

/// `A⁻¹ (A_d − I) B`, the textbook input matrix for invertible `A`.
pub fn input_matrix_via_inverse(a: &DMatrix<f64>, a_d: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let rhs = (a_d - DMatrix::identity(n, n)) * b;
    a.clone().lu().solve(&rhs).ok_or(Error::Singular("A in A⁻¹(A_d − I)B"))
}
