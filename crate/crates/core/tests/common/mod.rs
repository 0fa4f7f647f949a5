//! Catalogs and samplers shared by the property suites and the acceptance run.
#![allow(dead_code)]

use glrm::{FeatureKind, LossSpec, RegSpec, Value};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const K: usize = 5;

pub fn catalog() -> Vec<LossSpec> {
    use LossSpec::*;
    vec![
        Quadratic,
        L1,
        Huber,
        Quantile(0.3),
        Quantile(0.8),
        Fractional,
        Logarithmic,
        Poisson,
        KlDivergence,
        ItakuraSaito,
        BetaDivergence(0.5),
        BetaDivergence(1.5),
        BetaDivergence(2.0),
        BetaDivergence(3.0),
        Hinge,
        Logistic,
        OrdinalHinge(5),
        Interval,
        OneVsAll(4),
        CrammerSinger(4),
        MultiOrdinal(5),
        Permutation(4),
        RankingFull(4),
        RankingPairwise(4),
    ]
}

pub fn perm(d: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (1..=d).collect();
    p.shuffle(rng);
    p
}

/// A random in-domain `(u, a)`.
pub fn sample(loss: &LossSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Value) {
    use LossSpec::*;
    let d = loss.embed_dim();
    let mut uni = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    match loss {
        Quadratic | L1 | Huber | Quantile(_) => (vec![uni(-5.0, 5.0)], Value::Real(uni(-5.0, 5.0))),
        Fractional | Logarithmic | KlDivergence | ItakuraSaito | BetaDivergence(_) => {
            (vec![uni(0.2, 5.0)], Value::Real(uni(0.2, 5.0)))
        }
        Poisson => (vec![uni(-3.0, 3.0)], Value::Real(uni(0.0, 10.0).floor())),
        Hinge | Logistic => (vec![uni(-3.0, 3.0)], Value::Bool(uni(0.0, 1.0) < 0.5)),
        OrdinalHinge(levels) => (vec![uni(0.0, *levels as f64 + 1.0)], Value::Level(rng.random_range(1..=*levels))),
        Interval => {
            let lo = uni(-3.0, 3.0);
            let w = uni(0.0, 2.0);
            (vec![uni(-5.0, 5.0)], Value::Interval(lo, lo + w))
        }
        OneVsAll(levels) | CrammerSinger(levels) | MultiOrdinal(levels) => {
            let u = (0..d).map(|_| uni(-2.0, 2.0)).collect();
            (u, Value::Level(rng.random_range(1..=*levels)))
        }
        Permutation(items) | RankingFull(items) => {
            let u = (0..d).map(|_| uni(-2.0, 2.0)).collect();
            (u, Value::Perm(perm(*items, rng)))
        }
        RankingPairwise(items) => {
            let u = (0..d).map(|_| uni(-2.0, 2.0)).collect();
            let n_pairs = rng.random_range(0..6);
            let pairs = (0..n_pairs)
                .map(|_| {
                    let p = perm(*items, rng);
                    (p[0], p[1])
                })
                .collect();
            (u, Value::Pairs(pairs))
        }
    }
}

pub fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d);
            out.push(q);
        }
    }
    out
}

/// Every finite-domain loss with its column kind, up to five levels.
pub fn finite_cases() -> Vec<(LossSpec, FeatureKind, Vec<Value>)> {
    let mut cases = Vec::new();
    let boolean = vec![Value::Bool(false), Value::Bool(true)];
    for loss in [LossSpec::Hinge, LossSpec::Logistic, LossSpec::Quadratic, LossSpec::L1, LossSpec::Huber] {
        cases.push((loss, FeatureKind::Boolean, boolean.clone()));
    }
    for d in 2..=5 {
        let levels: Vec<Value> = (1..=d).map(Value::Level).collect();
        for loss in [
            LossSpec::OrdinalHinge(d),
            LossSpec::MultiOrdinal(d),
            LossSpec::Quadratic,
            LossSpec::L1,
            LossSpec::Huber,
            LossSpec::Quantile(0.3),
        ] {
            cases.push((loss, FeatureKind::Ordinal(d), levels.clone()));
        }
        for loss in [LossSpec::OneVsAll(d), LossSpec::CrammerSinger(d)] {
            cases.push((loss, FeatureKind::Categorical(d), levels.clone()));
        }
        let perms: Vec<Value> = permutations(d).into_iter().map(Value::Perm).collect();
        for loss in [LossSpec::Permutation(d), LossSpec::RankingFull(d)] {
            cases.push((loss, FeatureKind::Permutation(d), perms.clone()));
        }
    }
    cases
}

pub fn convex() -> Vec<RegSpec> {
    vec![
        RegSpec::Zero,
        RegSpec::Quadratic(0.7),
        RegSpec::L1(0.5),
        RegSpec::Nonneg,
        RegSpec::Box(-0.5, 1.0),
        RegSpec::Simplex,
        RegSpec::MaxNorm(2.0),
        RegSpec::L2(0.8),
        RegSpec::L1Nonneg(0.3),
        RegSpec::FixedFirst {
            inner: Box::new(RegSpec::Quadratic(0.4)),
            value: 1.0,
        },
        RegSpec::FixedLast {
            inner: Box::new(RegSpec::L1(0.2)),
            value: 1.0,
        },
        RegSpec::FreeLast {
            inner: Box::new(RegSpec::Nonneg),
        },
    ]
}

pub fn nonconvex() -> Vec<RegSpec> {
    vec![
        RegSpec::OneSparse,
        RegSpec::UnitOneSparse,
        RegSpec::OneSparseNonneg,
        RegSpec::BlockSparse(vec![2, 1, 2]),
    ]
}

pub fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..K).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

pub fn prox_objective(r: &RegSpec, x: &[f64], v: &[f64], alpha: f64) -> f64 {
    let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    alpha * r.value(x) + 0.5 * dist
}

/// Every point of the finite structure the nonconvex sets are built from,
/// each with its best free coordinates for `v`.
pub fn structured_candidates(r: &RegSpec, v: &[f64]) -> Vec<Vec<f64>> {
    let unit = |l: usize, val: f64| {
        let mut e = vec![0.0; K];
        e[l] = val;
        e
    };
    match r {
        RegSpec::OneSparse => {
            let mut c: Vec<Vec<f64>> = (0..K).map(|l| unit(l, v[l])).collect();
            c.push(vec![0.0; K]);
            c
        }
        RegSpec::OneSparseNonneg => {
            let mut c: Vec<Vec<f64>> = (0..K).map(|l| unit(l, v[l].max(0.0))).collect();
            c.push(vec![0.0; K]);
            c
        }
        RegSpec::UnitOneSparse => (0..K).map(|l| unit(l, 1.0)).collect(),
        RegSpec::BlockSparse(sizes) => {
            let mut c = vec![vec![0.0; K]];
            let mut start = 0;
            for &s in sizes {
                let mut x = vec![0.0; K];
                x[start..start + s].copy_from_slice(&v[start..start + s]);
                c.push(x);
                start += s;
            }
            c
        }
        other => panic!("no structure for {other}"),
    }
}
