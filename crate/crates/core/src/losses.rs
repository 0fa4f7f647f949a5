//! Per-entry loss functions `L(u, a)`.
//!
//! `u` is the embedded value (a slice of length [`LossSpec::embed_dim`]) and
//! `a` is the observed feature value. Every loss exposes its value, a
//! subgradient in `u`, the imputation `argmin_a L(u, a)`, and generalized
//! column statistics used for scaling and offsets.
//!
//! Subgradient conventions at kinks: hinge-type terms that are exactly zero
//! are treated as inactive (contribute 0), `l1` and `quantile` return 0 when
//! `u == a`, `fractional` returns 0 at `u == a`, and `interval` returns 0 on
//! the closed interval.

use std::fmt;

use crate::data::{FeatureKind, Value};
use crate::error::{GlrmError, Result};

/// Box for the location parameter when a column's minimizer is unbounded.
pub const MU_MAX: f64 = 1e3;
/// Floor for the generalized column variance.
pub const VAR_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    Quadratic,
    L1,
    Huber,
    Quantile(f64),
    Fractional,
    Logarithmic,
    /// `exp(u) - a u + a log a - a`.
    Poisson,
    KlDivergence,
    ItakuraSaito,
    BetaDivergence(f64),
    Hinge,
    Logistic,
    OrdinalHinge(usize),
    Interval,
    OneVsAll(usize),
    CrammerSinger(usize),
    MultiOrdinal(usize),
    Permutation(usize),
    RankingFull(usize),
    RankingPairwise(usize),
}

/// Location and spread of one column under its loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnStats {
    pub mu: Vec<f64>,
    pub sigma2: f64,
    /// The minimizer ran into the `[-MU_MAX, MU_MAX]` box.
    pub clamped: bool,
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LossSpec {
    /// Catalog name, without parameters.
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Quadratic => "quadratic",
            LossSpec::L1 => "l1",
            LossSpec::Huber => "huber",
            LossSpec::Quantile(_) => "quantile",
            LossSpec::Fractional => "fractional",
            LossSpec::Logarithmic => "log",
            LossSpec::Poisson => "poisson",
            LossSpec::KlDivergence => "kl",
            LossSpec::ItakuraSaito => "is",
            LossSpec::BetaDivergence(_) => "beta",
            LossSpec::Hinge => "hinge",
            LossSpec::Logistic => "logistic",
            LossSpec::OrdinalHinge(_) => "ordinal_hinge",
            LossSpec::Interval => "interval",
            LossSpec::OneVsAll(_) => "onevsall",
            LossSpec::CrammerSinger(_) => "crammer_singer",
            LossSpec::MultiOrdinal(_) => "multi_ordinal",
            LossSpec::Permutation(_) => "permutation",
            LossSpec::RankingFull(_) => "ranking",
            LossSpec::RankingPairwise(_) => "ranking_pairs",
        }
    }

    /// Parses a catalog name with an optional `:param` suffix. Level counts
    /// default to the column kind's when omitted.
    pub fn parse(s: &str, kind: Option<&FeatureKind>) -> Result<LossSpec> {
        let (name, arg) = match s.trim().split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.trim(), None),
        };
        let real_arg = |default: f64| -> Result<f64> {
            match arg {
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|e| GlrmError::Parse(format!("loss `{s}`: {e}"))),
                None => Ok(default),
            }
        };
        let levels = || -> Result<usize> {
            if let Some(a) = arg {
                return a
                    .parse::<usize>()
                    .map_err(|e| GlrmError::Parse(format!("loss `{s}`: {e}")));
            }
            match kind {
                Some(
                    FeatureKind::Ordinal(d)
                    | FeatureKind::Categorical(d)
                    | FeatureKind::Permutation(d)
                    | FeatureKind::Comparisons(d),
                ) => Ok(*d),
                Some(FeatureKind::Boolean) => Ok(2),
                _ => Err(GlrmError::Parse(format!(
                    "loss `{s}` needs a level count (e.g. `{name}:5`)"
                ))),
            }
        };
        let loss = match name {
            "quadratic" => LossSpec::Quadratic,
            "l1" => LossSpec::L1,
            "huber" => LossSpec::Huber,
            "quantile" => LossSpec::Quantile(real_arg(0.5)?),
            "fractional" => LossSpec::Fractional,
            "log" => LossSpec::Logarithmic,
            "poisson" => LossSpec::Poisson,
            "kl" => LossSpec::KlDivergence,
            "is" => LossSpec::ItakuraSaito,
            "beta" => LossSpec::BetaDivergence(real_arg(1.5)?),
            "hinge" => LossSpec::Hinge,
            "logistic" => LossSpec::Logistic,
            "ordinal_hinge" => LossSpec::OrdinalHinge(levels()?),
            "interval" => LossSpec::Interval,
            "onevsall" => LossSpec::OneVsAll(levels()?),
            "crammer_singer" => LossSpec::CrammerSinger(levels()?),
            "multi_ordinal" => LossSpec::MultiOrdinal(levels()?),
            "permutation" => LossSpec::Permutation(levels()?),
            "ranking" => LossSpec::RankingFull(levels()?),
            "ranking_pairs" => LossSpec::RankingPairwise(levels()?),
            _ => return Err(GlrmError::Parse(format!("unknown loss `{s}`"))),
        };
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlrmError::Config(format!("{}: {m}", self.name())));
        match self {
            LossSpec::Quantile(a) if !(*a > 0.0 && *a < 1.0) => bad(format!("alpha {a} not in (0, 1)")),
            LossSpec::BetaDivergence(b) if !b.is_finite() || *b == 0.0 || *b == 1.0 => {
                bad(format!("beta {b} must be finite and not 0 or 1"))
            }
            LossSpec::OrdinalHinge(d)
            | LossSpec::OneVsAll(d)
            | LossSpec::CrammerSinger(d)
            | LossSpec::MultiOrdinal(d)
            | LossSpec::Permutation(d)
            | LossSpec::RankingFull(d)
            | LossSpec::RankingPairwise(d)
                if *d < 2 =>
            {
                bad(format!("needs at least 2 levels, got {d}"))
            }
            _ => Ok(()),
        }
    }

    /// Embedding dimension `d_j`.
    pub fn embed_dim(&self) -> usize {
        match self {
            LossSpec::OneVsAll(d)
            | LossSpec::CrammerSinger(d)
            | LossSpec::Permutation(d)
            | LossSpec::RankingFull(d)
            | LossSpec::RankingPairwise(d) => *d,
            LossSpec::MultiOrdinal(d) => d - 1,
            _ => 1,
        }
    }

    /// Convexity in `u`.
    pub fn is_convex(&self) -> bool {
        match self {
            LossSpec::Logarithmic | LossSpec::ItakuraSaito => false,
            LossSpec::BetaDivergence(b) => (1.0..=2.0).contains(b),
            _ => true,
        }
    }

    /// Differentiable in `u` everywhere on its domain.
    pub fn is_smooth(&self) -> bool {
        matches!(
            self,
            LossSpec::Quadratic
                | LossSpec::Huber
                | LossSpec::Logarithmic
                | LossSpec::Poisson
                | LossSpec::KlDivergence
                | LossSpec::ItakuraSaito
                | LossSpec::BetaDivergence(_)
                | LossSpec::Logistic
        )
    }

    /// Whether the loss can be attached to a column of this kind.
    pub fn accepts(&self, kind: &FeatureKind) -> bool {
        use FeatureKind as K;
        match self {
            LossSpec::Quadratic | LossSpec::L1 | LossSpec::Huber | LossSpec::Quantile(_) => {
                matches!(kind, K::Real | K::Boolean | K::Ordinal(_) | K::Categorical(_))
            }
            LossSpec::Fractional
            | LossSpec::Logarithmic
            | LossSpec::Poisson
            | LossSpec::KlDivergence
            | LossSpec::ItakuraSaito
            | LossSpec::BetaDivergence(_) => matches!(kind, K::Real | K::Ordinal(_)),
            LossSpec::Hinge | LossSpec::Logistic => matches!(kind, K::Boolean),
            LossSpec::OrdinalHinge(d) | LossSpec::MultiOrdinal(d) => kind == &K::Ordinal(*d),
            LossSpec::Interval => matches!(kind, K::Interval | K::Real),
            LossSpec::OneVsAll(d) | LossSpec::CrammerSinger(d) => {
                kind == &K::Categorical(*d) || kind == &K::Ordinal(*d)
            }
            LossSpec::Permutation(d) | LossSpec::RankingFull(d) => kind == &K::Permutation(*d),
            LossSpec::RankingPairwise(d) => kind == &K::Comparisons(*d),
        }
    }

    fn domain_err(&self, message: impl Into<String>) -> GlrmError {
        GlrmError::Domain {
            loss: self.name(),
            message: message.into(),
        }
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() == self.embed_dim() {
            Ok(())
        } else {
            Err(GlrmError::Shape(format!(
                "{} expects u of length {}, got {}",
                self.name(),
                self.embed_dim(),
                u.len()
            )))
        }
    }

    fn scalar_a(&self, a: &Value) -> Result<f64> {
        a.as_f64()
            .ok_or_else(|| self.domain_err(format!("expected a scalar value, got {a:?}")))
    }

    fn positive_a(&self, a: &Value) -> Result<f64> {
        let x = self.scalar_a(a)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.domain_err(format!("data must be positive, got {x}")))
        }
    }

    fn positive_u(&self, u: f64) -> Result<f64> {
        if u > 0.0 {
            Ok(u)
        } else {
            Err(self.domain_err(format!("u must be positive, got {u}")))
        }
    }

    fn sign_a(&self, a: &Value) -> Result<f64> {
        match a {
            Value::Bool(b) => Ok(if *b { 1.0 } else { -1.0 }),
            Value::Real(x) if *x == 1.0 || *x == -1.0 => Ok(*x),
            _ => Err(self.domain_err(format!("expected a -1/+1 value, got {a:?}"))),
        }
    }

    fn level_a(&self, a: &Value, d: usize) -> Result<usize> {
        match a {
            Value::Level(l) if (1..=d).contains(l) => Ok(*l),
            _ => Err(self.domain_err(format!("expected a level in 1..={d}, got {a:?}"))),
        }
    }

    fn perm_a<'a>(&self, a: &'a Value, d: usize) -> Result<&'a [usize]> {
        match a {
            Value::Perm(p) if p.len() == d && p.iter().all(|&i| (1..=d).contains(&i)) => Ok(p),
            _ => Err(self.domain_err(format!("expected a permutation of 1..={d}, got {a:?}"))),
        }
    }

    fn pairs_a<'a>(&self, a: &'a Value, d: usize) -> Result<&'a [(usize, usize)]> {
        match a {
            Value::Pairs(p) if p.iter().all(|&(x, y)| (1..=d).contains(&x) && (1..=d).contains(&y)) => Ok(p),
            _ => Err(self.domain_err(format!("expected comparisons over 1..={d}, got {a:?}"))),
        }
    }

    fn interval_a(&self, a: &Value) -> Result<(f64, f64)> {
        match a {
            Value::Interval(lo, hi) => Ok((*lo, *hi)),
            Value::Real(x) => Ok((*x, *x)),
            _ => Err(self.domain_err(format!("expected an interval, got {a:?}"))),
        }
    }

    /// `L(u, a)`.
    pub fn value(&self, u: &[f64], a: &Value) -> Result<f64> {
        self.check_len(u)?;
        let v = match self {
            LossSpec::Quadratic => {
                let r = u[0] - self.scalar_a(a)?;
                r * r
            }
            LossSpec::L1 => (u[0] - self.scalar_a(a)?).abs(),
            LossSpec::Huber => {
                let r = (u[0] - self.scalar_a(a)?).abs();
                if r <= 1.0 {
                    0.5 * r * r
                } else {
                    r - 0.5
                }
            }
            LossSpec::Quantile(alpha) => {
                let a = self.scalar_a(a)?;
                alpha * pos(a - u[0]) + (1.0 - alpha) * pos(u[0] - a)
            }
            LossSpec::Fractional => {
                let a = self.positive_a(a)?;
                let u = self.positive_u(u[0])?;
                ((a - u) / u).max((u - a) / a)
            }
            LossSpec::Logarithmic => {
                let a = self.positive_a(a)?;
                let l = (self.positive_u(u[0])? / a).ln();
                l * l
            }
            LossSpec::Poisson => {
                let a = self.scalar_a(a)?;
                if a < 0.0 {
                    return Err(self.domain_err(format!("data must be nonnegative, got {a}")));
                }
                let alog = if a > 0.0 { a * a.ln() } else { 0.0 };
                u[0].exp() - a * u[0] + alog - a
            }
            LossSpec::KlDivergence => {
                let a = self.positive_a(a)?;
                let u = self.positive_u(u[0])?;
                a * (a / u).ln() - a + u
            }
            LossSpec::ItakuraSaito => {
                let a = self.positive_a(a)?;
                let t = a / self.positive_u(u[0])?;
                t - t.ln() - 1.0
            }
            LossSpec::BetaDivergence(b) => {
                let a = self.positive_a(a)?;
                let u = self.positive_u(u[0])?;
                a.powf(*b) / (b * (b - 1.0)) + u.powf(*b) / b - a * u.powf(b - 1.0) / (b - 1.0)
            }
            LossSpec::Hinge => pos(1.0 - self.sign_a(a)? * u[0]),
            LossSpec::Logistic => softplus(-self.sign_a(a)? * u[0]),
            LossSpec::OrdinalHinge(d) => {
                let a = self.level_a(a, *d)?;
                let mut s = 0.0;
                for lower in 1..a {
                    s += pos(1.0 - u[0] + lower as f64);
                }
                for upper in a + 1..=*d {
                    s += pos(1.0 + u[0] - upper as f64);
                }
                s
            }
            LossSpec::Interval => {
                let (lo, hi) = self.interval_a(a)?;
                pos(lo - u[0]).max(pos(u[0] - hi))
            }
            LossSpec::OneVsAll(d) => {
                let a = self.level_a(a, *d)?;
                u.iter()
                    .enumerate()
                    .map(|(l, &v)| if l + 1 == a { pos(1.0 - v) } else { pos(1.0 + v) })
                    .sum()
            }
            LossSpec::CrammerSinger(d) => {
                let a = self.level_a(a, *d)?;
                let other = u
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| l + 1 != a)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                pos(1.0 - u[a - 1] + other)
            }
            LossSpec::MultiOrdinal(d) => {
                let a = self.level_a(a, *d)?;
                u.iter()
                    .enumerate()
                    .map(|(l, &v)| pos(1.0 - threshold_sign(a, l) * v))
                    .sum()
            }
            LossSpec::Permutation(d) => {
                let p = self.perm_a(a, *d)?;
                p.windows(2).map(|w| pos(1.0 - u[w[0] - 1] + u[w[1] - 1])).sum()
            }
            LossSpec::RankingFull(d) => {
                let p = self.perm_a(a, *d)?;
                let mut s = 0.0;
                for i in 0..p.len() {
                    for j in i + 1..p.len() {
                        s += pos(1.0 - u[p[i] - 1] + u[p[j] - 1]);
                    }
                }
                s
            }
            LossSpec::RankingPairwise(d) => self
                .pairs_a(a, *d)?
                .iter()
                .map(|&(p, q)| pos(1.0 - u[p - 1] + u[q - 1]))
                .sum(),
        };
        Ok(v)
    }

    /// A subgradient of `u -> L(u, a)`, written into `g`.
    pub fn grad_into(&self, u: &[f64], a: &Value, g: &mut [f64]) -> Result<()> {
        self.check_len(u)?;
        g.iter_mut().for_each(|x| *x = 0.0);
        match self {
            LossSpec::Quadratic => g[0] = 2.0 * (u[0] - self.scalar_a(a)?),
            LossSpec::L1 => g[0] = sign0(u[0] - self.scalar_a(a)?),
            LossSpec::Huber => {
                let r = u[0] - self.scalar_a(a)?;
                g[0] = r.clamp(-1.0, 1.0);
            }
            LossSpec::Quantile(alpha) => {
                let a = self.scalar_a(a)?;
                g[0] = if u[0] > a {
                    1.0 - alpha
                } else if u[0] < a {
                    -alpha
                } else {
                    0.0
                };
            }
            LossSpec::Fractional => {
                let a = self.positive_a(a)?;
                let u = self.positive_u(u[0])?;
                g[0] = if u < a {
                    -a / (u * u)
                } else if u > a {
                    1.0 / a
                } else {
                    0.0
                };
            }
            LossSpec::Logarithmic => {
                let a = self.positive_a(a)?;
                let u = self.positive_u(u[0])?;
                g[0] = 2.0 * (u / a).ln() / u;
            }
            LossSpec::Poisson => g[0] = u[0].exp() - self.scalar_a(a)?,
            LossSpec::KlDivergence => {
                let a = self.positive_a(a)?;
                g[0] = 1.0 - a / self.positive_u(u[0])?;
            }
            LossSpec::ItakuraSaito => {
                let a = self.positive_a(a)?;
                let u = self.positive_u(u[0])?;
                g[0] = (u - a) / (u * u);
            }
            LossSpec::BetaDivergence(b) => {
                let a = self.positive_a(a)?;
                let u = self.positive_u(u[0])?;
                g[0] = u.powf(b - 2.0) * (u - a);
            }
            LossSpec::Hinge => {
                let s = self.sign_a(a)?;
                if 1.0 - s * u[0] > 0.0 {
                    g[0] = -s;
                }
            }
            LossSpec::Logistic => {
                let s = self.sign_a(a)?;
                g[0] = -s * logistic_sigmoid(-s * u[0]);
            }
            LossSpec::OrdinalHinge(d) => {
                let a = self.level_a(a, *d)?;
                for lower in 1..a {
                    if 1.0 - u[0] + lower as f64 > 0.0 {
                        g[0] -= 1.0;
                    }
                }
                for upper in a + 1..=*d {
                    if 1.0 + u[0] - upper as f64 > 0.0 {
                        g[0] += 1.0;
                    }
                }
            }
            LossSpec::Interval => {
                let (lo, hi) = self.interval_a(a)?;
                if u[0] < lo {
                    g[0] = -1.0;
                } else if u[0] > hi {
                    g[0] = 1.0;
                }
            }
            LossSpec::OneVsAll(d) => {
                let a = self.level_a(a, *d)?;
                for (l, (gl, &v)) in g.iter_mut().zip(u).enumerate() {
                    if l + 1 == a {
                        if 1.0 - v > 0.0 {
                            *gl = -1.0;
                        }
                    } else if 1.0 + v > 0.0 {
                        *gl = 1.0;
                    }
                }
            }
            LossSpec::CrammerSinger(d) => {
                let a = self.level_a(a, *d)?;
                let mut best = usize::MAX;
                for l in 0..*d {
                    if l + 1 != a && (best == usize::MAX || u[l] > u[best]) {
                        best = l;
                    }
                }
                if 1.0 - u[a - 1] + u[best] > 0.0 {
                    g[a - 1] = -1.0;
                    g[best] = 1.0;
                }
            }
            LossSpec::MultiOrdinal(d) => {
                let a = self.level_a(a, *d)?;
                for (l, (gl, &v)) in g.iter_mut().zip(u).enumerate() {
                    let s = threshold_sign(a, l);
                    if 1.0 - s * v > 0.0 {
                        *gl = -s;
                    }
                }
            }
            LossSpec::Permutation(d) => {
                let p = self.perm_a(a, *d)?;
                for w in p.windows(2) {
                    if 1.0 - u[w[0] - 1] + u[w[1] - 1] > 0.0 {
                        g[w[0] - 1] -= 1.0;
                        g[w[1] - 1] += 1.0;
                    }
                }
            }
            LossSpec::RankingFull(d) => {
                let p = self.perm_a(a, *d)?;
                for i in 0..p.len() {
                    for j in i + 1..p.len() {
                        if 1.0 - u[p[i] - 1] + u[p[j] - 1] > 0.0 {
                            g[p[i] - 1] -= 1.0;
                            g[p[j] - 1] += 1.0;
                        }
                    }
                }
            }
            LossSpec::RankingPairwise(d) => {
                for &(p, q) in self.pairs_a(a, *d)? {
                    if 1.0 - u[p - 1] + u[q - 1] > 0.0 {
                        g[p - 1] -= 1.0;
                        g[q - 1] += 1.0;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn grad(&self, u: &[f64], a: &Value) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.embed_dim()];
        self.grad_into(u, a, &mut g)?;
        Ok(g)
    }

    /// Whether `u -> L(u, a)` is differentiable at `u`, up to `tol`.
    pub fn differentiable_at(&self, u: &[f64], a: &Value, tol: f64) -> bool {
        if self.is_smooth() {
            return true;
        }
        let near = |x: f64| x.abs() <= tol;
        let s = |v: &Value| v.as_f64().unwrap_or(0.0);
        match self {
            LossSpec::L1 | LossSpec::Quantile(_) => !near(u[0] - s(a)),
            LossSpec::Fractional => !near(u[0] - s(a)),
            LossSpec::Hinge => !near(1.0 - s(a) * u[0]),
            LossSpec::OrdinalHinge(d) => {
                let a = s(a) as usize;
                (1..a).all(|l| !near(1.0 - u[0] + l as f64))
                    && (a + 1..=*d).all(|l| !near(1.0 + u[0] - l as f64))
            }
            LossSpec::Interval => match a {
                Value::Interval(lo, hi) => !near(u[0] - lo) && !near(u[0] - hi),
                other => !near(u[0] - s(other)),
            },
            // Multi-dimensional hinge losses: any term sitting on its kink.
            _ => {
                let mut probe = u.to_vec();
                let base = self.value(u, a).unwrap_or(f64::NAN);
                let g = match self.grad(u, a) {
                    Ok(g) => g,
                    Err(_) => return false,
                };
                let h = tol.max(1e-9) * 10.0;
                (0..u.len()).all(|l| {
                    probe[l] = u[l] + h;
                    let up = self.value(&probe, a).unwrap_or(f64::NAN);
                    probe[l] = u[l] - h;
                    let down = self.value(&probe, a).unwrap_or(f64::NAN);
                    probe[l] = u[l];
                    let right = (up - base) / h;
                    let left = (base - down) / h;
                    (right - left).abs() < 1e-6 && (right - g[l]).abs() < 1e-6
                })
            }
        }
    }

    /// `argmin_a L(u, a)` over the values admissible for `kind`. Finite
    /// domains are enumerated with ties going to the smallest level; hinge
    /// and logistic losses impute `sign(u)` with `sign(0) = +1`.
    pub fn impute(&self, u: &[f64], kind: &FeatureKind) -> Value {
        if matches!(self, LossSpec::Hinge | LossSpec::Logistic) {
            // Both are decreasing in a*u, so the sign rule is exact; sign(0) = +1.
            return Value::from_sign(u[0]);
        }
        if let Some(domain) = kind.domain() {
            let mut best = domain[0].clone();
            let mut best_val = f64::INFINITY;
            for a in domain {
                let v = self.value(u, &a).unwrap_or(f64::INFINITY);
                if v < best_val {
                    best_val = v;
                    best = a;
                }
            }
            if best_val.is_finite() {
                return best;
            }
            // Nothing finite: fall back on a neutral reading of u.
            return match kind {
                FeatureKind::Boolean => Value::from_sign(u[0]),
                _ => {
                    let d = kind.levels().unwrap_or(1);
                    Value::Level((u[0].round().max(1.0) as usize).min(d))
                }
            };
        }
        match (self, kind) {
            (LossSpec::Poisson, _) => Value::Real(u[0].exp()),
            (_, FeatureKind::Interval) => Value::Interval(u[0], u[0]),
            (_, FeatureKind::Permutation(_)) => Value::Perm(sort_desc(u)),
            (_, FeatureKind::Comparisons(_)) => {
                let order = sort_desc(u);
                Value::Pairs(order.windows(2).map(|w| (w[0], w[1])).collect())
            }
            _ => Value::Real(u[0]),
        }
    }

    /// Generalized column mean `mu = argmin sum_i L(mu, a_i)` and variance
    /// `sigma2 = sum_i L(mu, a_i) / (n - 1)`.
    ///
    /// Scalar losses use golden-section search; when the minimizer set is an
    /// interval its midpoint is returned. Multi-dimensional losses minimize one
    /// coordinate at a time.
    pub fn column_stats(&self, values: &[&Value]) -> Result<ColumnStats> {
        let n = values.len();
        if n < 2 {
            return Err(GlrmError::Config(format!(
                "{}: column statistics need at least 2 observations, got {n}",
                self.name()
            )));
        }
        let probe = vec![if self.positive_domain() { 1.0 } else { 0.0 }; self.embed_dim()];
        for a in values {
            self.value(&probe, a)?;
        }
        let total = |mu: &[f64]| -> f64 {
            values
                .iter()
                .map(|a| self.value(mu, a).unwrap_or(f64::INFINITY))
                .sum()
        };
        let (lo, hi) = self.search_box(values);
        let dim = self.embed_dim();
        let mut mu = vec![0.0; dim];
        let mut clamped = false;
        if dim == 1 {
            let (m, c) = minimize_1d(|t| total(&[t]), lo, hi);
            mu[0] = m;
            clamped = c;
        } else {
            for _sweep in 0..50 {
                let mut moved = 0.0f64;
                for l in 0..dim {
                    let mut trial = mu.clone();
                    let (m, c) = minimize_1d(
                        |t| {
                            trial[l] = t;
                            total(&trial)
                        },
                        lo,
                        hi,
                    );
                    let before = total(&mu);
                    let mut cand = mu.clone();
                    cand[l] = m;
                    if total(&cand) <= before {
                        moved = moved.max((m - mu[l]).abs());
                        mu[l] = m;
                        clamped |= c;
                    }
                }
                if moved < 1e-10 {
                    break;
                }
            }
        }
        if clamped {
            log::warn!(
                "{}: column minimizer is unbounded; location clamped at {:?}",
                self.name(),
                mu
            );
        }
        let sigma2 = (total(&mu) / (n as f64 - 1.0)).max(VAR_EPS);
        Ok(ColumnStats { mu, sigma2, clamped })
    }

    fn positive_domain(&self) -> bool {
        matches!(
            self,
            LossSpec::Fractional
                | LossSpec::Logarithmic
                | LossSpec::KlDivergence
                | LossSpec::ItakuraSaito
                | LossSpec::BetaDivergence(_)
        )
    }

    fn search_box(&self, values: &[&Value]) -> (f64, f64) {
        if self.positive_domain() {
            // The minimizer of these divergences lies within the data range.
            let xs: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                return (lo, hi);
            }
            return (lo * 0.5, lo * 2.0);
        }
        (-MU_MAX, MU_MAX)
    }
}

/// `+1` when level `a` lies above threshold `l + 1`, else `-1`.
fn threshold_sign(a: usize, l: usize) -> f64 {
    if a > l + 1 {
        1.0
    } else {
        -1.0
    }
}

/// 1-based item indices ordered by decreasing `u`, ties keeping index order.
fn sort_desc(u: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..u.len()).collect();
    idx.sort_by(|&i, &j| u[j].partial_cmp(&u[i]).unwrap_or(std::cmp::Ordering::Equal));
    idx.into_iter().map(|i| i + 1).collect()
}

/// Minimizes a unimodal function on `[lo, hi]`. Returns the midpoint of the
/// (numerically) flat minimizer set, and whether that set reaches the box.
fn minimize_1d(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> (f64, bool) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..400 {
        if (b - a) <= 1e-10 * (1.0 + c.abs().max(d.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut x = 0.5 * (a + b);
    let mut fx = f(x);
    // Box endpoints can beat the interior when the objective is monotone.
    for edge in [lo, hi] {
        let fe = f(edge);
        if fe < fx {
            x = edge;
            fx = fe;
        }
    }
    let thr = fx + 1e-12 * fx.abs().max(1.0);
    let edge_of = |f: &mut dyn FnMut(f64) -> f64, inside: f64, outside: f64| -> (f64, bool) {
        if f(outside) <= thr {
            return (outside, true);
        }
        let (mut i, mut o) = (inside, outside);
        for _ in 0..200 {
            let mid = 0.5 * (i + o);
            if f(mid) <= thr {
                i = mid;
            } else {
                o = mid;
            }
            if (o - i).abs() <= 1e-13 * (1.0 + i.abs()) {
                break;
            }
        }
        (i, false)
    };
    let (left, left_hit) = edge_of(&mut f, x, lo);
    let (right, right_hit) = edge_of(&mut f, x, hi);
    match (left_hit, right_hit) {
        (false, false) => (0.5 * (left + right), false),
        (true, false) => (right, true),
        (false, true) => (left, true),
        (true, true) => (0.5 * (lo + hi), true),
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Quantile(a) => write!(f, "quantile:{a}"),
            LossSpec::BetaDivergence(b) => write!(f, "beta:{b}"),
            LossSpec::OrdinalHinge(d)
            | LossSpec::OneVsAll(d)
            | LossSpec::CrammerSinger(d)
            | LossSpec::MultiOrdinal(d)
            | LossSpec::Permutation(d)
            | LossSpec::RankingFull(d)
            | LossSpec::RankingPairwise(d) => write!(f, "{}:{d}", self.name()),
            other => write!(f, "{}", other.name()),
        }
    }
}

/// Default loss for a column kind.
pub fn default_loss(kind: &FeatureKind) -> LossSpec {
    match kind {
        FeatureKind::Real => LossSpec::Huber,
        FeatureKind::Boolean => LossSpec::Hinge,
        FeatureKind::Ordinal(d) => LossSpec::OrdinalHinge(*d),
        FeatureKind::Categorical(d) => LossSpec::OneVsAll(*d),
        FeatureKind::Interval => LossSpec::Interval,
        FeatureKind::Permutation(d) => LossSpec::Permutation(*d),
        FeatureKind::Comparisons(d) => LossSpec::RankingPairwise(*d),
    }
}
