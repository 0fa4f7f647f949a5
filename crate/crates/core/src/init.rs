//! Starting points for the alternating solvers.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureKind, Value};
use crate::error::{GlrmError, Result};
use crate::linalg::{gaussian_matrix, top_k_svd};
use crate::losses::LossSpec;
use crate::model::{Factors, GlrmProblem};

const SVD_TOL: f64 = 1e-8;
const SVD_MAX_ITER: usize = 300;
/// Seed for the parts of the SVD initialization that are not data driven.
const SVD_FILL_SEED: u64 = 0x9e37_79b9;

/// Standardized numeric view of a table used by [`init_svd`].
#[derive(Clone, Debug)]
pub struct ScaledMatrix {
    /// m × d', missing entries zero.
    pub a: DMatrix<f64>,
    /// Feature owning each expanded column.
    pub feature: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// i.i.d. standard normal factors; the offset column is set to ones.
pub fn init_random(problem: &GlrmProblem, seed: u64) -> Factors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(problem.m(), problem.k_eff(), &mut rng);
    let y = gaussian_matrix(problem.k_eff(), problem.d(), &mut rng);
    let mut f = Factors {
        x,
        y,
        sigma2: problem.sigma2().to_vec(),
    };
    problem.pin_offset(&mut f);
    f
}

/// Numeric columns for one feature: categorical features become one
/// indicator column per level, other scalar kinds are read as numbers.
fn expand(kind: &FeatureKind, value: &Value) -> Option<Vec<f64>> {
    match (kind, value) {
        (FeatureKind::Categorical(d), Value::Level(l)) => {
            Some((1..=*d).map(|c| if c == *l { 1.0 } else { 0.0 }).collect())
        }
        (FeatureKind::Interval, Value::Interval(lo, hi)) => Some(vec![0.5 * (lo + hi)]),
        (_, v) => v.as_f64().map(|x| vec![x]),
    }
}

fn expanded_width(kind: &FeatureKind) -> usize {
    match kind {
        FeatureKind::Categorical(d) => *d,
        FeatureKind::Permutation(_) | FeatureKind::Comparisons(_) => 0,
        _ => 1,
    }
}

/// Builds `Ã` with `Ã_ij = (m / (σ_j m_j)) (A_ij - μ_j)` on observed entries
/// and 0 elsewhere, after expanding categorical columns.
pub fn build_scaled_matrix(problem: &GlrmProblem) -> Result<ScaledMatrix> {
    let table = problem.table();
    let m = table.m();
    let mut feature = Vec::new();
    for (j, col) in table.columns().iter().enumerate() {
        feature.extend(std::iter::repeat_n(j, expanded_width(&col.kind)));
    }
    let width = feature.len();
    let mut a = DMatrix::zeros(m, width);
    let mut mean = vec![0.0; width];
    let mut std = vec![1.0; width];
    let mut start = 0;
    for (j, col) in table.columns().iter().enumerate() {
        let w = expanded_width(&col.kind);
        if w == 0 {
            continue;
        }
        let rows = problem.col_obs(j);
        if rows.len() < 2 {
            return Err(GlrmError::Config(format!(
                "column {} `{}` has {} observations; at least 2 are needed",
                j + 1,
                col.name,
                rows.len()
            )));
        }
        let values: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| expand(&col.kind, table.get(i, j).unwrap()).unwrap_or_else(|| vec![0.0; w]))
            .collect();
        let mj = rows.len() as f64;
        for c in 0..w {
            let mu = values.iter().map(|v| v[c]).sum::<f64>() / mj;
            let var = values.iter().map(|v| (v[c] - mu).powi(2)).sum::<f64>() / (mj - 1.0);
            let sd = var.sqrt();
            mean[start + c] = mu;
            std[start + c] = sd;
            if sd <= 1e-12 {
                continue;
            }
            let scale = m as f64 / (sd * mj);
            for (v, &i) in values.iter().zip(rows) {
                a[(i, start + c)] = scale * (v[c] - mu);
            }
        }
        start += w;
    }
    Ok(ScaledMatrix { a, feature, mean, std })
}

/// SVD initialization: `X = U Σ^{1/2}`, `Y = Σ^{1/2} V' diag(σ)` from the top
/// `k` singular triples of the standardized matrix. With an offset the ones
/// column and a row of generalized column means are appended.
///
/// Embedded blocks whose width differs from the expanded width (for example a
/// multi-dimensional ordinal loss, or permutation data) are filled randomly.
pub fn init_svd(problem: &GlrmProblem) -> Result<Factors> {
    let scaled = build_scaled_matrix(problem)?;
    let k = problem.k();
    if k > scaled.a.nrows().min(scaled.a.ncols()) {
        log::warn!("rank {k} exceeds the standardized matrix dimensions; padding with zero directions");
    }
    let svd = top_k_svd(&scaled.a, k, SVD_TOL, SVD_MAX_ITER, SVD_FILL_SEED);
    if svd.s.iter().any(|&s| s == 0.0) {
        log::warn!("standardized matrix has rank below {k}; padding with zero directions");
    }
    let mut f = Factors::zeros(problem);
    for c in 0..k {
        let root = svd.s[c].sqrt();
        for i in 0..problem.m() {
            f.x[(i, c)] = svd.u[(i, c)] * root;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SVD_FILL_SEED);
    let mut start = 0;
    for j in 0..problem.n() {
        let w = expanded_width(problem.table().kind(j));
        let block = problem.block(j);
        if w == block.len() {
            for (e, col) in (start..start + w).zip(block) {
                for c in 0..k {
                    f.y[(c, col)] = svd.s[c].sqrt() * svd.v[(e, c)] * scaled.std[e];
                }
            }
        } else {
            for col in block {
                for c in 0..k {
                    f.y[(c, col)] = rng.sample(rand_distr::StandardNormal);
                }
            }
        }
        start += w;
    }
    if problem.offset() {
        let last = problem.k_eff() - 1;
        for j in 0..problem.n() {
            for (col, &mu) in problem.block(j).zip(&problem.mu()[j]) {
                f.y[(last, col)] = mu;
            }
        }
    }
    Ok(f)
}

/// A canonical embedded point for an observed value: the `u` that a perfect
/// model would produce for it. Missing values map to the column mean.
fn canonical_embedding(loss: &LossSpec, value: Option<&Value>, mu: &[f64]) -> Vec<f64> {
    let Some(value) = value else {
        return mu.to_vec();
    };
    let dim = loss.embed_dim();
    match (loss, value) {
        (LossSpec::OneVsAll(_) | LossSpec::CrammerSinger(_), Value::Level(l)) => {
            (1..=dim).map(|c| if c == *l { 1.0 } else { -1.0 }).collect()
        }
        (LossSpec::MultiOrdinal(_), Value::Level(l)) => {
            (0..dim).map(|c| if *l > c + 1 { 1.0 } else { -1.0 }).collect()
        }
        (_, Value::Perm(p)) => {
            let mut u = vec![0.0; dim];
            for (rank, &item) in p.iter().enumerate() {
                u[item - 1] = (dim - rank) as f64;
            }
            u
        }
        (_, Value::Interval(lo, hi)) => vec![0.5 * (lo + hi)],
        (LossSpec::Poisson, v) => vec![v.as_f64().map(|a| a.max(1e-3).ln()).unwrap_or(mu[0])],
        (_, v) => match (dim, v.as_f64()) {
            (1, Some(x)) => vec![x],
            _ => mu.to_vec(),
        },
    }
}

/// k-means++ seeding: centroids are data rows drawn with probability
/// proportional to the squared distance from the nearest chosen centroid;
/// `X` assigns each row to its nearest centroid.
pub fn init_kmeanspp(problem: &GlrmProblem, seed: u64) -> Result<Factors> {
    let (m, k) = (problem.m(), problem.k());
    if k > m {
        return Err(GlrmError::Config(format!("k-means++ needs k <= m, got k={k}, m={m}")));
    }
    let d = problem.d();
    let points: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = Vec::with_capacity(d);
            for j in 0..problem.n() {
                row.extend(canonical_embedding(
                    problem.loss(j),
                    problem.value(i, j),
                    &problem.mu()[j],
                ));
            }
            row
        })
        .collect();
    let dist2 = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..m)];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if nearest[pick] == 0.0 {
                pick = (0..m).rev().find(|&i| nearest[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every remaining point duplicates a centroid; draw among the unchosen.
            let free: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &points[next]));
        }
    }

    let mut f = Factors::zeros(problem);
    for (c, &i) in chosen.iter().enumerate() {
        for (col, &v) in points[i].iter().enumerate() {
            f.y[(c, col)] = v;
        }
    }
    for (i, p) in points.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, &ci) in chosen.iter().enumerate() {
            let dd = dist2(p, &points[ci]);
            if dd < best_d {
                best_d = dd;
                best = c;
            }
        }
        f.x[(i, best)] = 1.0;
    }
    Ok(f)
}

/// Named initialization strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Svd,
    Random,
    KmeansPP,
}

impl std::str::FromStr for InitMethod {
    type Err = GlrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(InitMethod::Svd),
            "random" => Ok(InitMethod::Random),
            "kmeanspp" => Ok(InitMethod::KmeansPP),
            other => Err(GlrmError::Parse(format!("unknown init `{other}` (svd, random, kmeanspp)"))),
        }
    }
}

impl std::fmt::Display for InitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMethod::Svd => "svd",
            InitMethod::Random => "random",
            InitMethod::KmeansPP => "kmeanspp",
        })
    }
}

/// Runs `method`; an SVD initialization that cannot be built (too few
/// observations in some column) falls back to a random start.
pub fn initialize(problem: &GlrmProblem, method: InitMethod, seed: u64) -> Result<Factors> {
    match method {
        InitMethod::Svd => match init_svd(problem) {
            Ok(f) => Ok(f),
            Err(e) => {
                log::warn!("svd initialization failed ({e}); using a random start");
                Ok(init_random(problem, seed))
            }
        },
        InitMethod::Random => Ok(init_random(problem, seed)),
        InitMethod::KmeansPP => init_kmeanspp(problem, seed),
    }
}
