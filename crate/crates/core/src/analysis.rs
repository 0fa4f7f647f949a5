//! Closed-form solutions and optimality checks.
//!
//! Quadratically regularized PCA,
//! `minimize ||A - XY||_F^2 + gamma ||X||_F^2 + gamma ||Y||_F^2`,
//! is solved exactly by soft-thresholding the singular values of `A`.

use nalgebra::DMatrix;

use crate::error::{GlrmError, Result};
use crate::linalg::{dense_svd, spectral_norm};
use crate::model::{Factors, GlrmProblem};
use crate::regularizers::RegSpec;

/// Analytical minimizer of quadratically regularized PCA: the top `k`
/// singular values shrunk by `gamma` (and floored at 0), split evenly between
/// `X` and `Y`.
pub fn qrpca_solve(a: &DMatrix<f64>, k: usize, gamma: f64) -> Result<Factors> {
    let (m, n) = a.shape();
    if k > m.min(n) {
        return Err(GlrmError::Config(format!("rank {k} exceeds min({m}, {n})")));
    }
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(GlrmError::Config(format!("gamma {gamma} must be finite and >= 0")));
    }
    let svd = dense_svd(a);
    let mut x = DMatrix::zeros(m, k);
    let mut y = DMatrix::zeros(k, n);
    for c in 0..k {
        let s = (svd.s[c] - gamma).max(0.0);
        if s == 0.0 {
            continue;
        }
        let r = s.sqrt();
        x.set_column(c, &(svd.u.column(c) * r));
        y.set_row(c, &(svd.v.column(c).transpose() * r));
    }
    Ok(Factors {
        x,
        y,
        sigma2: vec![1.0; n],
    })
}

/// `||A - XY||_F^2 + gamma (||X||_F^2 + ||Y||_F^2)`.
pub fn qrpca_objective(a: &DMatrix<f64>, f: &Factors, gamma: f64) -> f64 {
    (a - f.product()).norm_squared() + gamma * (f.x.norm_squared() + f.y.norm_squared())
}

/// Objective value of the stationary point that keeps the singular directions
/// in `active` (0-based indices into `sigma`):
/// `sum_{i not in S} s_i^2 + sum_{i in S} (gamma^2 + 2 gamma |s_i - gamma|)`.
pub fn stationary_value(sigma: &[f64], active: &[usize], gamma: f64) -> Result<f64> {
    for &i in active {
        let s = *sigma
            .get(i)
            .ok_or_else(|| GlrmError::Config(format!("active index {i} out of range for {} values", sigma.len())))?;
        if s < gamma {
            return Err(GlrmError::Config(format!(
                "singular value {s} at index {i} is below gamma {gamma}; no stationary point keeps it"
            )));
        }
    }
    Ok(sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if active.contains(&i) {
                gamma * gamma + 2.0 * gamma * (s - gamma).abs()
            } else {
                s * s
            }
        })
        .sum())
}

/// Balanced factorization `X = U S^{1/2}`, `Y = S^{1/2} V'` of `z` truncated to
/// its numerical rank, so `(||X||^2 + ||Y||^2) / 2 = ||Z||_*`. A zero matrix
/// gives `m x 0` and `0 x n` factors.
pub fn nuclear_norm_split(z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = z.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(m, 0), DMatrix::zeros(0, n));
    }
    let svd = dense_svd(z);
    let tol = svd.s[0] * 1e-12 * m.max(n) as f64;
    let r = svd.s.iter().take_while(|&&s| s > tol && s > 0.0).count();
    let mut x = DMatrix::zeros(m, r);
    let mut y = DMatrix::zeros(r, n);
    for c in 0..r {
        let root = svd.s[c].sqrt();
        x.set_column(c, &(svd.u.column(c) * root));
        y.set_row(c, &(svd.v.column(c).transpose() * root));
    }
    (x, y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    /// `||M||_2` with `M = G / gamma' + U V'`.
    pub spectral_norm: f64,
    /// Frobenius norm of the part of `M` that touches the row or column space
    /// of `Z`. A subgradient of the nuclear norm has none.
    pub tangent_residual: f64,
    pub certified: bool,
    /// The norm landed in `(1, 1 + 1e-8]`.
    pub marginal: bool,
}

/// Slack allowed above 1 before a certificate is refused.
pub const CERT_SLACK: f64 = 1e-8;
/// Largest tangent residual accepted.
pub const TANGENT_TOL: f64 = 1e-6;

/// Global optimality check for a fit of convex, differentiable losses with
/// `gamma ||x||^2` on both sides.
///
/// The factored problem with penalty `gamma (||X||^2 + ||Y||^2)` matches the
/// convex problem `L(Z) + 2 gamma ||Z||_*`, so the test uses `gamma' = 2 gamma`:
/// the factors are globally optimal when `-G / gamma'` is a subgradient of the
/// nuclear norm at `Z = XY`: with `G` the loss gradient (zero off the observed
/// set) and `U S V'` the thin SVD of `Z`, `M = G / gamma' + U V'` must satisfy
/// `||M||_2 <= 1` and `U'M = 0`, `MV = 0`. The norm bound alone is not enough:
/// small perturbations of an optimal rank-`r` model keep it below 1.
pub fn certify_global(problem: &GlrmProblem, f: &Factors) -> Result<Certificate> {
    problem.check_shapes(f)?;
    if problem.offset() {
        return Err(GlrmError::Certificate(
            "offset models pair an unpenalized intercept row with the low rank part; certificate undefined".into(),
        ));
    }
    let gamma = common_gamma(problem)?;
    for (j, loss) in problem.losses().iter().enumerate() {
        if !loss.is_convex() {
            return Err(GlrmError::Certificate(format!("loss {loss} on column {} is not convex", j + 1)));
        }
        if loss.embed_dim() != 1 {
            return Err(GlrmError::Certificate(format!(
                "loss {loss} on column {} is multi-dimensional",
                j + 1
            )));
        }
    }
    let (m, n) = (problem.m(), problem.n());
    let z = f.product();
    let mut g = DMatrix::zeros(m, n);
    for i in 0..m {
        for &j in problem.row_obs(i) {
            let a = problem.value(i, j).expect("observed");
            let loss = problem.loss(j);
            let u = [z[(i, j)]];
            if !loss.is_smooth() && !loss.differentiable_at(&u, a, 1e-9) {
                return Err(GlrmError::Certificate(format!(
                    "loss {loss} is not differentiable at entry ({}, {}); some subgradient choices give invalid certificates",
                    i + 1,
                    j + 1
                )));
            }
            let grad = loss
                .grad(&u, a)
                .map_err(|e| GlrmError::Certificate(format!("gradient at ({}, {}): {e}", i + 1, j + 1)))?;
            g[(i, j)] = grad[0] / problem.sigma2()[j];
        }
    }
    let svd = dense_svd(&z);
    let tol = svd.s.first().copied().unwrap_or(0.0) * 1e-10;
    let r = svd.s.iter().take_while(|&&s| s > tol && s > 0.0).count();
    let u: DMatrix<f64> = svd.u.columns(0, r).into_owned();
    let v: DMatrix<f64> = svd.v.columns(0, r).into_owned();
    let mat = g / (2.0 * gamma) + &u * v.transpose();
    let s = spectral_norm(&mat, 1e-9, 1000);
    // P_T(M) = UU'M + MVV' - UU'MVV'
    let ut_m = u.transpose() * &mat;
    let m_v = &mat * &v;
    let tangent = &u * &ut_m + &m_v * v.transpose() - &u * (&ut_m * &v) * v.transpose();
    let tangent_residual = tangent.norm();
    let certified = s <= 1.0 + CERT_SLACK && tangent_residual <= TANGENT_TOL;
    let marginal = certified && s > 1.0;
    if marginal {
        log::warn!("certificate norm {s} exceeds 1 by less than the slack");
    }
    Ok(Certificate {
        spectral_norm: s,
        tangent_residual,
        certified,
        marginal,
    })
}

fn common_gamma(problem: &GlrmProblem) -> Result<f64> {
    let mut gamma = None;
    let regs = (0..problem.m())
        .map(|i| problem.row_reg(i))
        .chain((0..problem.n()).map(|j| problem.col_reg(j)));
    for reg in regs {
        let g = match reg {
            RegSpec::Quadratic(g) if *g > 0.0 => *g,
            other => {
                return Err(GlrmError::Certificate(format!(
                    "regularizer {other} is not a positive quadratic penalty"
                )));
            }
        };
        match gamma {
            None => gamma = Some(g),
            Some(prev) if prev == g => {}
            Some(prev) => {
                return Err(GlrmError::Certificate(format!(
                    "row and column penalties differ ({prev} vs {g})"
                )));
            }
        }
    }
    gamma.ok_or_else(|| GlrmError::Certificate("empty problem".into()))
}
