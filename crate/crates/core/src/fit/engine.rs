use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::exact::{ExactCache, exact_col, exact_row};
use super::{FitConfig, FitReport, Rule, Termination, rng_for};
use crate::error::{GlrmError, Result};
use crate::model::{Factors, GlrmProblem};

/// Step used to reach `argmin r` for rows or columns with no observations.
const EMPTY_STEP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Outcome {
    Accepted,
    Rejected,
}

pub(super) struct Ctx<'p> {
    pub p: &'p GlrmProblem,
    pub cfg: &'p FitConfig,
    pub rule: Rule,
    pub ke: usize,
}

#[inline]
pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Writes `u_l = x . y_{c0 + l}` for the embedded columns of feature `j`.
#[inline]
fn embed(p: &GlrmProblem, ke: usize, j: usize, x: &[f64], yt: &[f64], u: &mut Vec<f64>) {
    u.clear();
    for c in p.block(j) {
        u.push(dot(x, &yt[c * ke..(c + 1) * ke]));
    }
}

fn scaled_loss(p: &GlrmProblem, i: usize, j: usize, u: &[f64]) -> f64 {
    let a = p.value(i, j).expect("observed");
    p.loss(j).value(u, a).unwrap_or(f64::INFINITY) / p.sigma2()[j]
}

/// Row `i`'s loss over `entries` (a subset of its observations).
pub(super) fn row_loss(p: &GlrmProblem, ke: usize, i: usize, entries: &[usize], x: &[f64], yt: &[f64]) -> f64 {
    let mut u = Vec::new();
    let mut total = 0.0;
    for &j in entries {
        embed(p, ke, j, x, yt, &mut u);
        total += scaled_loss(p, i, j, &u);
    }
    total
}

/// Accumulates `scale * sum_j grad L_ij(x Y_j) Y_j'` into `g`.
fn row_grad(p: &GlrmProblem, ke: usize, i: usize, entries: &[usize], x: &[f64], yt: &[f64], scale: f64, g: &mut [f64]) {
    let mut u = Vec::new();
    let mut du = Vec::new();
    for &j in entries {
        embed(p, ke, j, x, yt, &mut u);
        du.clear();
        du.resize(u.len(), 0.0);
        let a = p.value(i, j).expect("observed");
        if p.loss(j).grad_into(&u, a, &mut du).is_err() {
            continue;
        }
        let w = scale / p.sigma2()[j];
        for (l, c) in p.block(j).enumerate() {
            let coef = w * du[l];
            if coef != 0.0 {
                for (gk, yk) in g.iter_mut().zip(&yt[c * ke..(c + 1) * ke]) {
                    *gk += coef * yk;
                }
            }
        }
    }
}

/// Feature `j`'s share of the objective: its losses plus the regularizer of
/// each of its embedded columns. `yb` holds the block, column by column.
pub(super) fn feature_objective(p: &GlrmProblem, ke: usize, j: usize, entries: &[usize], x: &[f64], yb: &[f64]) -> f64 {
    let reg = p.col_reg(j);
    let mut total: f64 = yb.chunks(ke).map(|y| reg.value(y)).sum();
    let mut u = Vec::new();
    for &i in entries {
        let xi = &x[i * ke..(i + 1) * ke];
        u.clear();
        u.extend(yb.chunks(ke).map(|y| dot(xi, y)));
        total += scaled_loss(p, i, j, &u);
    }
    total
}

fn feature_grad(p: &GlrmProblem, ke: usize, j: usize, entries: &[usize], x: &[f64], yb: &[f64], scale: f64, g: &mut [f64]) {
    let mut u = Vec::new();
    let mut du = Vec::new();
    let w = scale / p.sigma2()[j];
    for &i in entries {
        let xi = &x[i * ke..(i + 1) * ke];
        u.clear();
        u.extend(yb.chunks(ke).map(|y| dot(xi, y)));
        du.clear();
        du.resize(u.len(), 0.0);
        let a = p.value(i, j).expect("observed");
        if p.loss(j).grad_into(&u, a, &mut du).is_err() {
            continue;
        }
        for (l, gl) in g.chunks_mut(ke).enumerate() {
            let coef = w * du[l];
            if coef != 0.0 {
                for (gk, xk) in gl.iter_mut().zip(xi) {
                    *gk += coef * xk;
                }
            }
        }
    }
}

/// Uniform sample of `fraction` of `all` (at least one entry), kept in order.
fn sample_entries(all: &[usize], fraction: f64, rng: &mut impl Rng) -> Vec<usize> {
    let n = all.len();
    let s = ((fraction * n as f64).round() as usize).clamp(1, n);
    if s == n {
        return all.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, n, s).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|t| all[t]).collect()
}

fn adapt(cfg: &FitConfig, alpha: &mut f64, old: f64, new: f64) -> bool {
    if new <= old {
        if new < old {
            *alpha *= cfg.step_increase;
        }
        true
    } else {
        *alpha *= cfg.step_decrease;
        false
    }
}

impl Ctx<'_> {
    fn stochastic(&self) -> Option<(f64, bool)> {
        match self.rule {
            Rule::Stochastic { fraction, acceptance } => Some((fraction, acceptance)),
            _ => None,
        }
    }

    pub(super) fn update_row(&self, t: usize, i: usize, xi: &mut [f64], alpha: &mut f64, yt: &[f64]) -> Outcome {
        let p = self.p;
        let ke = self.ke;
        let reg = p.row_reg(i);
        let obs = p.row_obs(i);
        if obs.is_empty() {
            let target = reg.prox(&vec![0.0; ke], EMPTY_STEP);
            xi.copy_from_slice(&target);
            return Outcome::Accepted;
        }
        let n_i = obs.len() as f64;
        let mut g = vec![0.0; ke];
        let (step, check) = match self.stochastic() {
            Some((fraction, acceptance)) => {
                let mut rng = rng_for(self.cfg.seed, t, i, 1);
                let sample = sample_entries(obs, fraction, &mut rng);
                row_grad(p, ke, i, &sample, xi, yt, n_i / sample.len() as f64, &mut g);
                if acceptance {
                    (*alpha / n_i, true)
                } else {
                    (self.cfg.step_init / (n_i * (t as f64).sqrt()), false)
                }
            }
            None => {
                row_grad(p, ke, i, obs, xi, yt, 1.0, &mut g);
                (*alpha / n_i, true)
            }
        };
        let mut cand: Vec<f64> = xi.iter().zip(&g).map(|(x, gk)| x - step * gk).collect();
        reg.prox_in_place(&mut cand, step);
        if !check {
            xi.copy_from_slice(&cand);
            return Outcome::Accepted;
        }
        let old = row_loss(p, ke, i, obs, xi, yt) + reg.value(xi);
        let new = row_loss(p, ke, i, obs, &cand, yt) + reg.value(&cand);
        if adapt(self.cfg, alpha, old, new) {
            xi.copy_from_slice(&cand);
            Outcome::Accepted
        } else {
            Outcome::Rejected
        }
    }

    pub(super) fn update_feature(&self, t: usize, j: usize, x: &[f64], yb: &mut [f64], alpha: &mut f64) -> Outcome {
        let p = self.p;
        let ke = self.ke;
        let reg = p.col_reg(j);
        let obs = p.col_obs(j);
        if obs.is_empty() {
            let target = reg.prox(&vec![0.0; ke], EMPTY_STEP);
            yb.chunks_mut(ke).for_each(|y| y.copy_from_slice(&target));
            return Outcome::Accepted;
        }
        let m_j = obs.len() as f64;
        let mut g = vec![0.0; yb.len()];
        let (step, check) = match self.stochastic() {
            Some((fraction, acceptance)) => {
                let mut rng = rng_for(self.cfg.seed, t, j, 2);
                let sample = sample_entries(obs, fraction, &mut rng);
                feature_grad(p, ke, j, &sample, x, yb, m_j / sample.len() as f64, &mut g);
                if acceptance {
                    (*alpha / m_j, true)
                } else {
                    (self.cfg.step_init / (m_j * (t as f64).sqrt()), false)
                }
            }
            None => {
                feature_grad(p, ke, j, obs, x, yb, 1.0, &mut g);
                (*alpha / m_j, true)
            }
        };
        let mut cand: Vec<f64> = yb.iter().zip(&g).map(|(y, gk)| y - step * gk).collect();
        cand.chunks_mut(ke).for_each(|y| reg.prox_in_place(y, step));
        if !check {
            yb.copy_from_slice(&cand);
            return Outcome::Accepted;
        }
        let old = feature_objective(p, ke, j, obs, x, yb);
        let new = feature_objective(p, ke, j, obs, x, &cand);
        if adapt(self.cfg, alpha, old, new) {
            yb.copy_from_slice(&cand);
            Outcome::Accepted
        } else {
            Outcome::Rejected
        }
    }
}

/// Splits `yt` into the per-feature blocks.
fn feature_blocks<'a>(p: &GlrmProblem, ke: usize, yt: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let mut rest = yt;
    let mut out = Vec::with_capacity(p.n());
    for j in 0..p.n() {
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(p.block(j).len() * ke);
        out.push(head);
        rest = tail;
    }
    out
}

pub(crate) struct Engine<'p> {
    ctx: Ctx<'p>,
    x: Vec<f64>,
    yt: Vec<f64>,
    row_alpha: Vec<f64>,
    col_alpha: Vec<f64>,
    sigma2: Vec<f64>,
}

impl<'p> Engine<'p> {
    pub fn new(p: &'p GlrmProblem, mut init: Factors, cfg: &'p FitConfig, rule: Rule) -> Result<Self> {
        p.pin_offset(&mut init);
        let ke = p.k_eff();
        let x: Vec<f64> = (0..p.m()).flat_map(|i| init.x.row(i).iter().copied().collect::<Vec<_>>()).collect();
        let yt: Vec<f64> = init.y.as_slice().to_vec();
        Ok(Engine {
            ctx: Ctx { p, cfg, rule, ke },
            x,
            yt,
            row_alpha: vec![cfg.step_init; p.m()],
            col_alpha: vec![cfg.step_init; p.n()],
            sigma2: p.sigma2().to_vec(),
        })
    }

    fn objective(&self) -> f64 {
        let p = self.ctx.p;
        let ke = self.ctx.ke;
        let x = &self.x;
        let yt = &self.yt;
        let cols: Vec<f64> = (0..p.n())
            .into_par_iter()
            .map(|j| {
                let b = p.block(j);
                feature_objective(p, ke, j, p.col_obs(j), x, &yt[b.start * ke..b.end * ke])
            })
            .collect();
        let rows: Vec<f64> = (0..p.m())
            .into_par_iter()
            .map(|i| p.row_reg(i).value(&x[i * ke..(i + 1) * ke]))
            .collect();
        cols.iter().sum::<f64>() + rows.iter().sum::<f64>()
    }

    fn x_pass(&mut self, t: usize, cache: &mut ExactCache) -> (usize, usize) {
        let ctx = &self.ctx;
        let ke = ctx.ke;
        let yt = &self.yt;
        if let Rule::Exact = ctx.rule {
            cache.prepare_rows(ctx, yt);
        }
        let cache = &*cache;
        let outcomes: Vec<Outcome> = self
            .x
            .par_chunks_mut(ke)
            .zip(self.row_alpha.par_iter_mut())
            .enumerate()
            .map(|(i, (xi, alpha))| match ctx.rule {
                Rule::Exact => exact_row(ctx, cache, i, xi, alpha, yt),
                _ => ctx.update_row(t, i, xi, alpha, yt),
            })
            .collect();
        tally(&outcomes)
    }

    fn y_pass(&mut self, t: usize, cache: &mut ExactCache) -> (usize, usize) {
        let ctx = &self.ctx;
        let ke = ctx.ke;
        let x = &self.x;
        if let Rule::Exact = ctx.rule {
            cache.prepare_cols(ctx, x);
        }
        let cache = &*cache;
        let blocks = feature_blocks(ctx.p, ke, &mut self.yt);
        let outcomes: Vec<Outcome> = blocks
            .into_par_iter()
            .zip(self.col_alpha.par_iter_mut())
            .enumerate()
            .map(|(j, (yb, alpha))| match ctx.rule {
                Rule::Exact => exact_col(ctx, cache, j, x, yb, alpha),
                _ => ctx.update_feature(t, j, x, yb, alpha),
            })
            .collect();
        tally(&outcomes)
    }

    pub fn run(mut self) -> Result<(Factors, FitReport)> {
        let cfg = self.ctx.cfg;
        let first = self.objective();
        if !first.is_finite() {
            return Err(GlrmError::Infeasible(format!(
                "initial objective is {first}; the starting point violates a constraint or a loss domain"
            )));
        }
        let mut objective = vec![first];
        let mut seconds = Vec::new();
        let mut termination = Termination::MaxIters;
        let mut cache = ExactCache::default();
        let strict = matches!(self.ctx.rule, Rule::Stochastic { acceptance: false, .. });
        for t in 1..=cfg.max_iters {
            let start = Instant::now();
            let (acc_x, rej_x) = self.x_pass(t, &mut cache);
            let (acc_y, rej_y) = self.y_pass(t, &mut cache);
            let cur = self.objective();
            seconds.push(start.elapsed().as_secs_f64());
            let prev = *objective.last().unwrap();
            objective.push(cur);
            let accepted = acc_x + acc_y;
            let rejected = rej_x + rej_y;
            log::debug!("iteration {t}: objective {cur:.6e}, {rejected} of {} updates rejected", accepted + rejected);
            let rel = (prev - cur) / cur.abs().max(1.0);
            // Passes dominated by rejected steps only mean alpha is still too
            // large, not that the iterate is stationary.
            let settled = 2 * rejected < accepted + rejected;
            if settled && rel < cfg.rel_tol && !(strict && rel < 0.0) {
                termination = Termination::Converged;
                break;
            }
        }
        let p = self.ctx.p;
        let ke = self.ctx.ke;
        let x = DMatrix::from_row_slice(p.m(), ke, &self.x);
        let y = DMatrix::from_column_slice(ke, p.d(), &self.yt);
        let report = FitReport {
            objective,
            seconds,
            termination,
            row_steps: self.row_alpha,
            col_steps: self.col_alpha,
        };
        Ok((Factors { x, y, sigma2: self.sigma2 }, report))
    }
}

fn tally(outcomes: &[Outcome]) -> (usize, usize) {
    let rejected = outcomes.iter().filter(|&&o| o == Outcome::Rejected).count();
    (outcomes.len() - rejected, rejected)
}

fn row_vec(f: &Factors, i: usize) -> Vec<f64> {
    f.x.row(i).iter().copied().collect()
}

/// Full gradient of row `i`'s scaled loss with respect to `x_i`.
pub fn row_gradient(problem: &GlrmProblem, f: &Factors, i: usize) -> Vec<f64> {
    let ke = problem.k_eff();
    let mut g = vec![0.0; ke];
    row_grad(problem, ke, i, problem.row_obs(i), &row_vec(f, i), f.y.as_slice(), 1.0, &mut g);
    g
}

/// Unbiased estimate of [`row_gradient`] from a uniform sample of `fraction`
/// of the row's observed entries.
pub fn stochastic_row_gradient(problem: &GlrmProblem, f: &Factors, i: usize, fraction: f64, rng: &mut impl Rng) -> Vec<f64> {
    let ke = problem.k_eff();
    let mut g = vec![0.0; ke];
    let obs = problem.row_obs(i);
    if obs.is_empty() {
        return g;
    }
    let sample = sample_entries(obs, fraction, rng);
    let scale = obs.len() as f64 / sample.len() as f64;
    row_grad(problem, ke, i, &sample, &row_vec(f, i), f.y.as_slice(), scale, &mut g);
    g
}

pub(super) fn solve_row(p: &GlrmProblem, f: &Factors, i: usize, x0: &[f64], cfg: &FitConfig) -> Result<Vec<f64>> {
    if i >= p.m() {
        return Err(GlrmError::Shape(format!("row {i} out of range for {} rows", p.m())));
    }
    let ctx = Ctx {
        p,
        cfg,
        rule: Rule::ProxGrad,
        ke: p.k_eff(),
    };
    let yt = f.y.as_slice();
    let mut x = x0.to_vec();
    let mut alpha = cfg.step_init;
    let obs = p.row_obs(i);
    for t in 1..=cfg.max_iters {
        let before = x.clone();
        let outcome = ctx.update_row(t, i, &mut x, &mut alpha, yt);
        if obs.is_empty() {
            break;
        }
        if outcome == Outcome::Accepted {
            // Objective decrease shrinks quadratically near the optimum, so
            // the row loop stops on the size of the move instead.
            let moved: f64 = x.iter().zip(&before).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            if moved / scale < cfg.rel_tol {
                break;
            }
        }
    }
    Ok(x)
}
