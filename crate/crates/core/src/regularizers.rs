//! Row and column regularizers with values and proximal operators.
//!
//! Regularizers act on vectors: a row `x_i` of `X`, or one embedded column of
//! `Y`. A column block `Y_j` with several embedded columns is regularized
//! column by column.

use std::fmt;

use crate::error::{GlrmError, Result};

const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum RegSpec {
    Zero,
    /// `gamma * ||x||^2`.
    Quadratic(f64),
    /// `gamma * ||x||_1`.
    L1(f64),
    Nonneg,
    Box(f64, f64),
    /// At most one nonzero entry.
    OneSparse,
    /// `x = e_l` for some `l`.
    UnitOneSparse,
    /// Probability simplex.
    Simplex,
    /// Nonzeros confined to one block; the sizes partition the vector.
    BlockSparse(Vec<usize>),
    /// `||x||^2 <= mu`.
    MaxNorm(f64),
    /// `gamma * ||x||_2` (not squared).
    L2(f64),
    OneSparseNonneg,
    /// `gamma * ||x||_1` plus nonnegativity.
    L1Nonneg(f64),
    /// First entry pinned to `value`, `inner` on the rest.
    FixedFirst { inner: Box<RegSpec>, value: f64 },
    /// Last entry pinned to `value`, `inner` on the rest.
    FixedLast { inner: Box<RegSpec>, value: f64 },
    /// Last entry free and unpenalized, `inner` on the rest.
    FreeLast { inner: Box<RegSpec> },
}

impl RegSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RegSpec::Zero => "zero",
            RegSpec::Quadratic(_) => "quadreg",
            RegSpec::L1(_) => "l1reg",
            RegSpec::Nonneg => "nonneg",
            RegSpec::Box(..) => "box",
            RegSpec::OneSparse => "onesparse",
            RegSpec::UnitOneSparse => "unitonesparse",
            RegSpec::Simplex => "simplex",
            RegSpec::BlockSparse(_) => "blocksparse",
            RegSpec::MaxNorm(_) => "maxnorm",
            RegSpec::L2(_) => "l2",
            RegSpec::OneSparseNonneg => "onesparse_nonneg",
            RegSpec::L1Nonneg(_) => "l1_nonneg",
            RegSpec::FixedFirst { .. } => "fixed_first",
            RegSpec::FixedLast { .. } => "fixed_last",
            RegSpec::FreeLast { .. } => "free_last",
        }
    }

    /// Parses a catalog name. Parametric regularizers given without a
    /// parameter take `gamma` (or 1.0 for `maxnorm`).
    ///
    /// Syntax: `quadreg[:g]`, `l1reg[:g]`, `l2[:g]`, `l1_nonneg[:g]`,
    /// `box:lo:hi`, `maxnorm[:mu]`, `blocksparse:s1,s2,...`,
    /// `fixed_first:value:<inner>`.
    pub fn parse(s: &str, gamma: f64) -> Result<RegSpec> {
        let s = s.trim();
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (s, None),
        };
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|e| GlrmError::Parse(format!("regularizer `{s}`: {e}")))
        };
        let param = |default: f64| -> Result<f64> {
            match rest {
                Some(r) => num(r),
                None => Ok(default),
            }
        };
        let reg = match name {
            "zero" => RegSpec::Zero,
            "quadreg" => RegSpec::Quadratic(param(gamma)?),
            "l1reg" => RegSpec::L1(param(gamma)?),
            "nonneg" => RegSpec::Nonneg,
            "box" => {
                let r = rest.ok_or_else(|| GlrmError::Parse(format!("`{s}`: expected box:lo:hi")))?;
                let (lo, hi) = r
                    .split_once(':')
                    .ok_or_else(|| GlrmError::Parse(format!("`{s}`: expected box:lo:hi")))?;
                RegSpec::Box(num(lo)?, num(hi)?)
            }
            "onesparse" => RegSpec::OneSparse,
            "unitonesparse" => RegSpec::UnitOneSparse,
            "simplex" => RegSpec::Simplex,
            "blocksparse" => {
                let r = rest.ok_or_else(|| GlrmError::Parse(format!("`{s}`: expected blocksparse:s1,s2")))?;
                let sizes = r
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| GlrmError::Parse(format!("regularizer `{s}`: {e}")))?;
                RegSpec::BlockSparse(sizes)
            }
            "maxnorm" => RegSpec::MaxNorm(param(1.0)?),
            "l2" => RegSpec::L2(param(gamma)?),
            "onesparse_nonneg" => RegSpec::OneSparseNonneg,
            "l1_nonneg" => RegSpec::L1Nonneg(param(gamma)?),
            "fixed_first" => {
                let r = rest.ok_or_else(|| {
                    GlrmError::Parse(format!("`{s}`: expected fixed_first:value:inner"))
                })?;
                let (value, inner) = r.split_once(':').unwrap_or((r, "zero"));
                RegSpec::FixedFirst {
                    inner: Box::new(RegSpec::parse(inner, gamma)?),
                    value: num(value)?,
                }
            }
            _ => return Err(GlrmError::Parse(format!("unknown regularizer `{s}`"))),
        };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlrmError::Config(format!("{}: {m}", self.name())));
        match self {
            RegSpec::Quadratic(g) | RegSpec::L1(g) | RegSpec::L2(g) | RegSpec::L1Nonneg(g)
                if !(*g >= 0.0 && g.is_finite()) =>
            {
                bad(format!("gamma {g} must be finite and >= 0"))
            }
            RegSpec::MaxNorm(mu) if !(*mu > 0.0) => bad(format!("mu {mu} must be > 0")),
            RegSpec::Box(lo, hi) if !(lo <= hi) => bad(format!("lo {lo} > hi {hi}")),
            RegSpec::BlockSparse(sizes) if sizes.is_empty() || sizes.contains(&0) => {
                bad("block sizes must be positive".into())
            }
            RegSpec::FixedFirst { inner, .. }
            | RegSpec::FixedLast { inner, .. }
            | RegSpec::FreeLast { inner } => inner.validate(),
            _ => Ok(()),
        }
    }

    /// Indicator regularizers take only the values 0 and +inf.
    pub fn is_indicator(&self) -> bool {
        match self {
            RegSpec::Nonneg
            | RegSpec::Box(..)
            | RegSpec::OneSparse
            | RegSpec::UnitOneSparse
            | RegSpec::Simplex
            | RegSpec::BlockSparse(_)
            | RegSpec::MaxNorm(_)
            | RegSpec::OneSparseNonneg => true,
            RegSpec::FixedFirst { inner, .. } | RegSpec::FixedLast { inner, .. } => inner.is_indicator(),
            _ => false,
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            RegSpec::OneSparse | RegSpec::UnitOneSparse | RegSpec::BlockSparse(_) | RegSpec::OneSparseNonneg => {
                false
            }
            RegSpec::FixedFirst { inner, .. }
            | RegSpec::FixedLast { inner, .. }
            | RegSpec::FreeLast { inner } => inner.is_convex(),
            _ => true,
        }
    }

    /// `r(xT) = r(x)` for every orthogonal `T`.
    pub fn is_orthogonally_invariant(&self) -> bool {
        match self {
            RegSpec::Zero | RegSpec::Quadratic(_) | RegSpec::MaxNorm(_) | RegSpec::L2(_) => true,
            RegSpec::FixedFirst { inner, .. }
            | RegSpec::FixedLast { inner, .. }
            | RegSpec::FreeLast { inner } => inner.is_orthogonally_invariant(),
            _ => false,
        }
    }

    /// Strength parameter of the parametric regularizers.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            RegSpec::Quadratic(g) | RegSpec::L1(g) | RegSpec::L2(g) | RegSpec::L1Nonneg(g) => Some(*g),
            RegSpec::FixedFirst { inner, .. }
            | RegSpec::FixedLast { inner, .. }
            | RegSpec::FreeLast { inner } => inner.gamma(),
            _ => None,
        }
    }

    /// Same regularizer with its strength replaced by `gamma`; non-parametric
    /// regularizers are returned unchanged.
    pub fn with_gamma(&self, gamma: f64) -> RegSpec {
        match self {
            RegSpec::Quadratic(_) => RegSpec::Quadratic(gamma),
            RegSpec::L1(_) => RegSpec::L1(gamma),
            RegSpec::L2(_) => RegSpec::L2(gamma),
            RegSpec::L1Nonneg(_) => RegSpec::L1Nonneg(gamma),
            RegSpec::FixedFirst { inner, value } => RegSpec::FixedFirst {
                inner: Box::new(inner.with_gamma(gamma)),
                value: *value,
            },
            RegSpec::FixedLast { inner, value } => RegSpec::FixedLast {
                inner: Box::new(inner.with_gamma(gamma)),
                value: *value,
            },
            RegSpec::FreeLast { inner } => RegSpec::FreeLast {
                inner: Box::new(inner.with_gamma(gamma)),
            },
            other => other.clone(),
        }
    }

    /// Strips the offset wrappers.
    pub fn base(&self) -> &RegSpec {
        match self {
            RegSpec::FixedLast { inner, .. } | RegSpec::FreeLast { inner } => inner.base(),
            other => other,
        }
    }

    /// `r(v)`, `+inf` outside the feasible set of an indicator.
    pub fn value(&self, v: &[f64]) -> f64 {
        let feasible = |ok: bool| if ok { 0.0 } else { f64::INFINITY };
        match self {
            RegSpec::Zero => 0.0,
            RegSpec::Quadratic(g) => g * v.iter().map(|x| x * x).sum::<f64>(),
            RegSpec::L1(g) => g * v.iter().map(|x| x.abs()).sum::<f64>(),
            RegSpec::Nonneg => feasible(v.iter().all(|&x| x >= 0.0)),
            RegSpec::Box(lo, hi) => feasible(v.iter().all(|&x| x >= *lo && x <= *hi)),
            RegSpec::OneSparse => feasible(v.iter().filter(|&&x| x != 0.0).count() <= 1),
            RegSpec::UnitOneSparse => feasible(
                v.iter().filter(|&&x| x == 1.0).count() == 1 && v.iter().all(|&x| x == 0.0 || x == 1.0),
            ),
            RegSpec::Simplex => feasible(
                v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= FEAS_TOL,
            ),
            RegSpec::BlockSparse(sizes) => {
                if sizes.iter().sum::<usize>() != v.len() {
                    return f64::INFINITY;
                }
                let mut start = 0;
                let mut active = 0;
                for &s in sizes {
                    if v[start..start + s].iter().any(|&x| x != 0.0) {
                        active += 1;
                    }
                    start += s;
                }
                feasible(active <= 1)
            }
            RegSpec::MaxNorm(mu) => feasible(v.iter().map(|x| x * x).sum::<f64>() <= mu * (1.0 + FEAS_TOL)),
            RegSpec::L2(g) => g * v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            RegSpec::OneSparseNonneg => {
                feasible(v.iter().all(|&x| x >= 0.0) && v.iter().filter(|&&x| x != 0.0).count() <= 1)
            }
            RegSpec::L1Nonneg(g) => {
                if v.iter().all(|&x| x >= 0.0) {
                    g * v.iter().sum::<f64>()
                } else {
                    f64::INFINITY
                }
            }
            RegSpec::FixedFirst { inner, value } => match v.split_first() {
                Some((first, rest)) if first == value => inner.value(rest),
                Some(_) => f64::INFINITY,
                None => 0.0,
            },
            RegSpec::FixedLast { inner, value } => match v.split_last() {
                Some((last, rest)) if last == value => inner.value(rest),
                Some(_) => f64::INFINITY,
                None => 0.0,
            },
            RegSpec::FreeLast { inner } => match v.split_last() {
                Some((_, rest)) => inner.value(rest),
                None => 0.0,
            },
        }
    }

    /// `prox_{alpha r}(v)` in place.
    pub fn prox_in_place(&self, v: &mut [f64], alpha: f64) {
        match self {
            RegSpec::Zero => {}
            RegSpec::Quadratic(g) => {
                let s = 1.0 / (1.0 + 2.0 * alpha * g);
                v.iter_mut().for_each(|x| *x *= s);
            }
            RegSpec::L1(g) => {
                let t = alpha * g;
                v.iter_mut().for_each(|x| *x = x.signum() * (x.abs() - t).max(0.0));
            }
            RegSpec::Nonneg => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            RegSpec::Box(lo, hi) => v.iter_mut().for_each(|x| *x = x.clamp(*lo, *hi)),
            RegSpec::OneSparse => {
                let keep = argmax_by(v, |x| x.abs());
                for (l, x) in v.iter_mut().enumerate() {
                    if Some(l) != keep {
                        *x = 0.0;
                    }
                }
            }
            RegSpec::UnitOneSparse => {
                let keep = argmax_by(v, |x| x);
                for (l, x) in v.iter_mut().enumerate() {
                    *x = if Some(l) == keep { 1.0 } else { 0.0 };
                }
            }
            RegSpec::Simplex => project_simplex(v),
            RegSpec::BlockSparse(sizes) => {
                let mut best = 0;
                let mut best_norm = f64::NEG_INFINITY;
                let mut start = 0;
                for (b, &s) in sizes.iter().enumerate() {
                    let end = (start + s).min(v.len());
                    let norm: f64 = v[start..end].iter().map(|x| x * x).sum();
                    if norm > best_norm {
                        best_norm = norm;
                        best = b;
                    }
                    start = end;
                }
                let mut start = 0;
                for (b, &s) in sizes.iter().enumerate() {
                    let end = (start + s).min(v.len());
                    if b != best {
                        v[start..end].iter_mut().for_each(|x| *x = 0.0);
                    }
                    start = end;
                }
                v[start..].iter_mut().for_each(|x| *x = 0.0);
            }
            RegSpec::MaxNorm(mu) => {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let radius = mu.sqrt();
                if norm > radius {
                    let s = radius / norm;
                    v.iter_mut().for_each(|x| *x *= s);
                }
            }
            RegSpec::L2(g) => {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let s = if norm > 0.0 { (1.0 - alpha * g / norm).max(0.0) } else { 0.0 };
                v.iter_mut().for_each(|x| *x *= s);
            }
            RegSpec::OneSparseNonneg => {
                let keep = argmax_by(v, |x| x).filter(|&l| v[l] > 0.0);
                for (l, x) in v.iter_mut().enumerate() {
                    if Some(l) != keep {
                        *x = 0.0;
                    }
                }
            }
            RegSpec::L1Nonneg(g) => {
                let t = alpha * g;
                v.iter_mut().for_each(|x| *x = (*x - t).max(0.0));
            }
            RegSpec::FixedFirst { inner, value } => {
                if let Some((first, rest)) = v.split_first_mut() {
                    *first = *value;
                    inner.prox_in_place(rest, alpha);
                }
            }
            RegSpec::FixedLast { inner, value } => {
                if let Some((last, rest)) = v.split_last_mut() {
                    *last = *value;
                    inner.prox_in_place(rest, alpha);
                }
            }
            RegSpec::FreeLast { inner } => {
                if let Some((_, rest)) = v.split_last_mut() {
                    inner.prox_in_place(rest, alpha);
                }
            }
        }
    }

    pub fn prox(&self, v: &[f64], alpha: f64) -> Vec<f64> {
        let mut out = v.to_vec();
        self.prox_in_place(&mut out, alpha);
        out
    }
}

/// Index of the largest `key`, lowest index on ties.
fn argmax_by(v: &[f64], key: impl Fn(f64) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (l, &x) in v.iter().enumerate() {
        let k = key(x);
        if best.is_none_or(|(_, b)| k > b) {
            best = Some((l, k));
        }
    }
    best.map(|(l, _)| l)
}

/// Euclidean projection onto the probability simplex (sort-based).
fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

impl fmt::Display for RegSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegSpec::Quadratic(g) | RegSpec::L1(g) | RegSpec::L2(g) | RegSpec::L1Nonneg(g) => {
                write!(f, "{}:{g}", self.name())
            }
            RegSpec::MaxNorm(mu) => write!(f, "maxnorm:{mu}"),
            RegSpec::Box(lo, hi) => write!(f, "box:{lo}:{hi}"),
            RegSpec::BlockSparse(sizes) => {
                let s: Vec<String> = sizes.iter().map(|x| x.to_string()).collect();
                write!(f, "blocksparse:{}", s.join(","))
            }
            RegSpec::FixedFirst { inner, value } => write!(f, "fixed_first:{value}:{inner}"),
            RegSpec::FixedLast { inner, value } => write!(f, "fixed_last:{value}:{inner}"),
            RegSpec::FreeLast { inner } => write!(f, "free_last:{inner}"),
            other => write!(f, "{}", other.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        assert!((RegSpec::Quadratic(0.1).value(&[1.0, 2.0]) - 0.5).abs() < 1e-15);
        assert_eq!(RegSpec::UnitOneSparse.value(&[0.0, 1.0, 0.0]), 0.0);
        assert_eq!(RegSpec::UnitOneSparse.value(&[0.0, 2.0, 0.0]), f64::INFINITY);
        assert_eq!(RegSpec::Simplex.value(&[0.3, 0.7]), 0.0);
    }

    #[test]
    fn prox_examples() {
        assert_eq!(RegSpec::L1(1.0).prox(&[2.0, -0.5], 1.0), vec![1.0, 0.0]);
        let p = RegSpec::Simplex.prox(&[0.5, 0.5, 0.5], 1.0);
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(RegSpec::UnitOneSparse.prox(&[0.2, 0.9, 0.1], 1.0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_sparse_matches_candidate_search() {
        // Nearest 1-sparse vector: keep coordinate l at v_l, distance ||v||^2 - v_l^2.
        let v = [3.0, -4.0];
        let mut best = (f64::INFINITY, vec![]);
        for l in 0..v.len() {
            let mut cand = vec![0.0; v.len()];
            cand[l] = v[l];
            let dist: f64 = cand.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, cand);
            }
        }
        assert_eq!(RegSpec::OneSparse.prox(&v, 0.7), best.1);
        assert_eq!(best.1, vec![0.0, -4.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(RegSpec::UnitOneSparse.prox(&[0.5, 0.5], 1.0), vec![1.0, 0.0]);
        assert_eq!(RegSpec::OneSparse.prox(&[-2.0, 2.0], 1.0), vec![-2.0, 0.0]);
    }

    #[test]
    fn fixed_wrappers() {
        let r = RegSpec::FixedLast {
            inner: Box::new(RegSpec::Quadratic(1.0)),
            value: 1.0,
        };
        assert_eq!(r.value(&[1.0, 1.0]), 1.0);
        assert_eq!(r.value(&[1.0, 2.0]), f64::INFINITY);
        assert_eq!(r.prox(&[3.0, 7.0], 0.5), vec![1.5, 1.0]);
        let f = RegSpec::FreeLast {
            inner: Box::new(RegSpec::Nonneg),
        };
        assert_eq!(f.prox(&[-1.0, -3.0], 1.0), vec![0.0, -3.0]);
        let first = RegSpec::FixedFirst {
            inner: Box::new(RegSpec::Zero),
            value: 1.0,
        };
        assert_eq!(first.prox(&[5.0, 2.0], 1.0), vec![1.0, 2.0]);
    }

    #[test]
    fn l2_block_soft_threshold() {
        let p = RegSpec::L2(1.0).prox(&[3.0, 4.0], 1.0);
        assert!((p[0] - 2.4).abs() < 1e-14 && (p[1] - 3.2).abs() < 1e-14);
        assert_eq!(RegSpec::L2(10.0).prox(&[3.0, 4.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn parse_round_trip() {
        let all = [
            RegSpec::Zero,
            RegSpec::Quadratic(0.25),
            RegSpec::L1(2.0),
            RegSpec::Nonneg,
            RegSpec::Box(-1.0, 2.5),
            RegSpec::OneSparse,
            RegSpec::UnitOneSparse,
            RegSpec::Simplex,
            RegSpec::BlockSparse(vec![2, 3]),
            RegSpec::MaxNorm(4.0),
            RegSpec::L2(0.5),
            RegSpec::OneSparseNonneg,
            RegSpec::L1Nonneg(0.1),
            RegSpec::FixedFirst {
                inner: Box::new(RegSpec::Quadratic(0.1)),
                value: 1.0,
            },
        ];
        for r in all {
            assert_eq!(RegSpec::parse(&r.to_string(), 9.0).unwrap(), r);
        }
        assert_eq!(RegSpec::parse("quadreg", 0.3).unwrap(), RegSpec::Quadratic(0.3));
        assert!(RegSpec::parse("box:2:1", 0.0).is_err());
        assert!(RegSpec::parse("what", 0.0).is_err());
    }

    #[test]
    fn with_gamma_rescales() {
        let r = RegSpec::FreeLast {
            inner: Box::new(RegSpec::Quadratic(1.0)),
        };
        assert_eq!(r.with_gamma(0.2).gamma(), Some(0.2));
        assert_eq!(RegSpec::Nonneg.with_gamma(3.0), RegSpec::Nonneg);
    }
}
