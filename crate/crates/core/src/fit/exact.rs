//! Exact row and column solves for all-quadratic problems.
//!
//! Each subproblem is `min_x x'Gx - 2b'x + r(x)` with `G = sum w y y'` and
//! `b = sum w a y` over the observed entries.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::Rule;
use super::engine::{Ctx, Outcome, feature_objective, row_loss};
use crate::linalg::cholesky_with_jitter;
use crate::model::GlrmProblem;
use crate::regularizers::RegSpec;

#[derive(Clone, Copy, Debug)]
enum Inner {
    Ridge(f64),
    Unit,
    OneSparse { nonneg: bool },
}

/// How a regularizer reduces to a closed-form solve.
#[derive(Clone, Debug)]
struct Plan {
    fixed: Option<(usize, f64)>,
    free: Option<usize>,
    inner: Inner,
    keep: Vec<usize>,
}

fn plan(reg: &RegSpec, ke: usize) -> Option<Plan> {
    let (fixed, free, inner) = match reg {
        RegSpec::FixedLast { inner, value } => (Some((ke - 1, *value)), None, inner.as_ref()),
        RegSpec::FixedFirst { inner, value } => (Some((0, *value)), None, inner.as_ref()),
        RegSpec::FreeLast { inner } => (None, Some(ke - 1), inner.as_ref()),
        other => (None, None, other),
    };
    let inner = match inner {
        RegSpec::Zero => Inner::Ridge(0.0),
        RegSpec::Quadratic(g) => Inner::Ridge(*g),
        RegSpec::UnitOneSparse if free.is_none() => Inner::Unit,
        RegSpec::OneSparse if free.is_none() => Inner::OneSparse { nonneg: false },
        RegSpec::OneSparseNonneg if free.is_none() => Inner::OneSparse { nonneg: true },
        _ => return None,
    };
    let keep = (0..ke).filter(|&c| fixed.map_or(true, |(q, _)| q != c)).collect();
    Some(Plan {
        fixed,
        free,
        inner,
        keep,
    })
}

impl Plan {
    fn reduce_gram(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.keep.len();
        DMatrix::from_fn(r, r, |a, b| g[(self.keep[a], self.keep[b])])
    }

    fn reduce_rhs(&self, g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.keep.len(), |a, _| {
            let c = self.keep[a];
            match self.fixed {
                Some((q, v)) => b[c] - v * g[(c, q)],
                None => b[c],
            }
        })
    }

    /// Factor of the reduced ridge system, `G_s + diag(gamma)`.
    fn factor(&self, g: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
        let Inner::Ridge(gamma) = self.inner else {
            return None;
        };
        let mut gs = self.reduce_gram(g);
        for a in 0..self.keep.len() {
            if self.free != Some(self.keep[a]) {
                gs[(a, a)] += gamma;
            }
        }
        Some(cholesky_with_jitter(&gs))
    }

    fn solve(&self, g: &DMatrix<f64>, b: &DVector<f64>, factor: Option<&Cholesky<f64, Dyn>>) -> Vec<f64> {
        let ke = g.nrows();
        let bs = self.reduce_rhs(g, b);
        let z: Vec<f64> = match self.inner {
            Inner::Ridge(_) => {
                let sol = match factor {
                    Some(f) => f.solve(&bs),
                    None => self.factor(g).expect("ridge").solve(&bs),
                };
                sol.iter().copied().collect()
            }
            Inner::Unit => {
                let mut best = 0;
                let mut best_val = f64::INFINITY;
                for (a, &c) in self.keep.iter().enumerate() {
                    let val = g[(c, c)] - 2.0 * bs[a];
                    if val < best_val {
                        best_val = val;
                        best = a;
                    }
                }
                let mut z = vec![0.0; self.keep.len()];
                z[best] = 1.0;
                z
            }
            Inner::OneSparse { nonneg } => {
                let mut z = vec![0.0; self.keep.len()];
                let mut best_val = 0.0;
                let mut best = None;
                for (a, &c) in self.keep.iter().enumerate() {
                    let gll = g[(c, c)];
                    if gll <= 0.0 {
                        continue;
                    }
                    let mut t = bs[a] / gll;
                    if nonneg {
                        t = t.max(0.0);
                    }
                    let val = gll * t * t - 2.0 * bs[a] * t;
                    if val < best_val {
                        best_val = val;
                        best = Some((a, t));
                    }
                }
                if let Some((a, t)) = best {
                    z[a] = t;
                }
                z
            }
        };
        let mut x = vec![0.0; ke];
        for (a, &c) in self.keep.iter().enumerate() {
            x[c] = z[a];
        }
        if let Some((q, v)) = self.fixed {
            x[q] = v;
        }
        x
    }
}

/// Gram matrices and factors shared by fully observed rows (columns) within a
/// pass.
#[derive(Default)]
pub(super) struct ExactCache {
    row_gram: Option<DMatrix<f64>>,
    row_factor: Option<Cholesky<f64, Dyn>>,
    /// `X'X`, unweighted.
    col_gram: Option<DMatrix<f64>>,
    /// Factors of `X'X + D / w`, keyed by the bits of `w`.
    col_factors: Vec<(u64, Cholesky<f64, Dyn>)>,
}

fn shared_row_reg(p: &GlrmProblem) -> bool {
    (1..p.m()).all(|i| std::ptr::eq(p.row_reg(i), p.row_reg(0)))
}

fn shared_col_reg(p: &GlrmProblem) -> bool {
    (1..p.n()).all(|j| std::ptr::eq(p.col_reg(j), p.col_reg(0)))
}

/// `a` for a quadratic loss `(u - a)^2`, read off its gradient at zero.
fn target(p: &GlrmProblem, i: usize, j: usize) -> f64 {
    let a = p.value(i, j).expect("observed");
    let g = p.loss(j).grad(&[0.0], a).expect("quadratic gradient");
    -0.5 * g[0]
}

fn weight(p: &GlrmProblem, j: usize) -> f64 {
    1.0 / p.sigma2()[j]
}

impl ExactCache {
    pub fn prepare_rows(&mut self, ctx: &Ctx, yt: &[f64]) {
        let p = ctx.p;
        let ke = ctx.ke;
        self.row_gram = None;
        self.row_factor = None;
        if p.m() == 0 || !(0..p.m()).any(|i| p.row_obs(i).len() == p.n()) {
            return;
        }
        let mut g = DMatrix::zeros(ke, ke);
        for j in 0..p.n() {
            let y = DVector::from_column_slice(&yt[j * ke..(j + 1) * ke]);
            g.ger(weight(p, j), &y, &y, 1.0);
        }
        if shared_row_reg(p) {
            self.row_factor = plan(p.row_reg(0), ke).and_then(|pl| pl.factor(&g));
        }
        self.row_gram = Some(g);
    }

    pub fn prepare_cols(&mut self, ctx: &Ctx, x: &[f64]) {
        let p = ctx.p;
        let ke = ctx.ke;
        self.col_gram = None;
        self.col_factors.clear();
        if p.n() == 0 || !(0..p.n()).any(|j| p.col_obs(j).len() == p.m()) {
            return;
        }
        let xm = DMatrix::from_row_slice(p.m(), ke, x);
        let g0 = xm.transpose() * &xm;
        if shared_col_reg(p) {
            if let Some(pl) = plan(p.col_reg(0), ke) {
                if let Inner::Ridge(gamma) = pl.inner {
                    for j in 0..p.n() {
                        if p.col_obs(j).len() != p.m() {
                            continue;
                        }
                        let w = weight(p, j);
                        if self.col_factors.iter().any(|(bits, _)| *bits == w.to_bits()) {
                            continue;
                        }
                        let scaled = Plan {
                            inner: Inner::Ridge(gamma / w),
                            ..pl.clone()
                        };
                        self.col_factors.push((w.to_bits(), scaled.factor(&g0).expect("ridge")));
                    }
                }
            }
        }
        self.col_gram = Some(g0);
    }
}

/// Prox-prox fallback: `inner_iters` rounds of `x <- prox_r(prox_f(x))`.
fn prox_prox(reg: &RegSpec, g: &DMatrix<f64>, b: &DVector<f64>, x0: &[f64], step: f64, iters: usize) -> Vec<f64> {
    let ke = g.nrows();
    let mut m = g * 2.0;
    for c in 0..ke {
        m[(c, c)] += 1.0 / step;
    }
    let chol = cholesky_with_jitter(&m);
    let mut x = DVector::from_column_slice(x0);
    for _ in 0..iters.max(1) {
        let rhs = b * 2.0 + &x / step;
        let mut next: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
        reg.prox_in_place(&mut next, step);
        x = DVector::from_vec(next);
    }
    x.iter().copied().collect()
}

pub(super) fn exact_row(ctx: &Ctx, cache: &ExactCache, i: usize, xi: &mut [f64], alpha: &mut f64, yt: &[f64]) -> Outcome {
    debug_assert!(matches!(ctx.rule, Rule::Exact));
    let p = ctx.p;
    let ke = ctx.ke;
    let obs = p.row_obs(i);
    if obs.is_empty() {
        return ctx.update_row(1, i, xi, alpha, yt);
    }
    let full = obs.len() == p.n();
    let mut b = DVector::zeros(ke);
    let local;
    let g = match (&cache.row_gram, full) {
        (Some(g), true) => g,
        _ => {
            let mut g = DMatrix::zeros(ke, ke);
            for &j in obs {
                let y = DVector::from_column_slice(&yt[j * ke..(j + 1) * ke]);
                g.ger(weight(p, j), &y, &y, 1.0);
            }
            local = g;
            &local
        }
    };
    for &j in obs {
        let w = weight(p, j) * target(p, i, j);
        for (bk, yk) in b.iter_mut().zip(&yt[j * ke..(j + 1) * ke]) {
            *bk += w * yk;
        }
    }
    let reg = p.row_reg(i);
    match plan(reg, ke) {
        Some(pl) => {
            let factor = if full && shared_row_reg(p) { cache.row_factor.as_ref() } else { None };
            let x = pl.solve(g, &b, factor);
            xi.copy_from_slice(&x);
            Outcome::Accepted
        }
        None => {
            let step = *alpha / obs.len() as f64;
            let cand = prox_prox(reg, g, &b, xi, step, ctx.cfg.inner_iters);
            let old = row_loss(p, ke, i, obs, xi, yt) + reg.value(xi);
            let new = row_loss(p, ke, i, obs, &cand, yt) + reg.value(&cand);
            accept(ctx, alpha, old, new, xi, &cand)
        }
    }
}

pub(super) fn exact_col(ctx: &Ctx, cache: &ExactCache, j: usize, x: &[f64], yb: &mut [f64], alpha: &mut f64) -> Outcome {
    let p = ctx.p;
    let ke = ctx.ke;
    let obs = p.col_obs(j);
    if obs.is_empty() {
        return ctx.update_feature(1, j, x, yb, alpha);
    }
    let w = weight(p, j);
    let full = obs.len() == p.m();
    let mut b = DVector::zeros(ke);
    for &i in obs {
        let coef = target(p, i, j);
        for (bk, xk) in b.iter_mut().zip(&x[i * ke..(i + 1) * ke]) {
            *bk += coef * xk;
        }
    }
    // Work with the unweighted Gram matrix; the weight divides the ridge.
    let local;
    let g0 = match (&cache.col_gram, full) {
        (Some(g), true) => g,
        _ => {
            let mut g = DMatrix::zeros(ke, ke);
            for &i in obs {
                let xi = DVector::from_column_slice(&x[i * ke..(i + 1) * ke]);
                g.ger(1.0, &xi, &xi, 1.0);
            }
            local = g;
            &local
        }
    };
    let reg = p.col_reg(j);
    match plan(reg, ke) {
        Some(pl) => {
            let pl = match pl.inner {
                Inner::Ridge(gamma) => Plan {
                    inner: Inner::Ridge(gamma / w),
                    ..pl
                },
                _ => pl,
            };
            let factor = if full && shared_col_reg(p) {
                cache
                    .col_factors
                    .iter()
                    .find(|(bits, _)| *bits == w.to_bits())
                    .map(|(_, f)| f)
            } else {
                None
            };
            // One-sparse objectives scale uniformly in w, so the unweighted
            // system has the same minimizer.
            let y = pl.solve(g0, &b, factor);
            yb.copy_from_slice(&y);
            Outcome::Accepted
        }
        None => {
            let step = *alpha / obs.len() as f64;
            let g = g0 * w;
            let bw = &b * w;
            let cand = prox_prox(reg, &g, &bw, yb, step, ctx.cfg.inner_iters);
            let old = feature_objective(p, ke, j, obs, x, yb);
            let new = feature_objective(p, ke, j, obs, x, &cand);
            accept(ctx, alpha, old, new, yb, &cand)
        }
    }
}

fn accept(ctx: &Ctx, alpha: &mut f64, old: f64, new: f64, dst: &mut [f64], cand: &[f64]) -> Outcome {
    if new <= old {
        if new < old {
            *alpha *= ctx.cfg.step_increase;
        }
        dst.copy_from_slice(cand);
        Outcome::Accepted
    } else {
        *alpha *= ctx.cfg.step_decrease;
        Outcome::Rejected
    }
}
